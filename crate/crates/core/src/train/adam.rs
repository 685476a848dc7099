use crate::field::{FieldGrads, FieldModel};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one model.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub params: AdamParams,
    m: FieldGrads<S>,
    v: FieldGrads<S>,
    step: u64,
}

impl<S: Real> Adam<S> {
    pub fn new(model: &FieldModel<S>, params: AdamParams) -> Self {
        Adam {
            params,
            m: model.zero_grads(),
            v: model.zero_grads(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, model: &mut FieldModel<S>, grads: &FieldGrads<S>, lr: f64) {
        self.step += 1;
        let AdamParams { beta1, beta2, eps } = self.params;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let step_size = S::of(lr * bc2.sqrt() / bc1);
        let (b1, b2) = (S::of(beta1), S::of(beta2));
        let (one_b1, one_b2) = (S::of(1.0 - beta1), S::of(1.0 - beta2));
        let eps_hat = S::of(eps * bc2.sqrt());
        for (li, layer) in model.layers.iter_mut().enumerate() {
            let g = &grads.layers[li];
            let m = &mut self.m.layers[li];
            let v = &mut self.v.layers[li];
            let blocks = [
                (&mut layer.weight, &g.weight, &mut m.weight, &mut v.weight),
                (&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias),
            ];
            for (p, g, m, v) in blocks {
                for i in 0..p.len() {
                    m[i] = b1 * m[i] + one_b1 * g[i];
                    v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                    p[i] = p[i] - step_size * m[i] / (v[i].sqrt() + eps_hat);
                }
            }
        }
        model.bump_version();
    }
}
