use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::real::{mat, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    Relu,
    Softplus,
    Sigmoid,
}

impl Activation {
    fn apply<S: Real>(self, z: S) -> S {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(S::zero()),
            Activation::Softplus => {
                if z > S::of(20.0) {
                    z
                } else {
                    z.exp().ln_1p()
                }
            }
            Activation::Sigmoid => S::one() / (S::one() + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output<S: Real>(self, y: S) -> S {
        match self {
            Activation::Linear => S::one(),
            Activation::Relu => {
                if y > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            // softplus'(z) = sigmoid(z) = 1 - exp(-softplus(z))
            Activation::Softplus => -(-y).exp_m1(),
            Activation::Sigmoid => y * (S::one() - y),
        }
    }
}

/// Fully connected layer. `weight` is `in_dim x out_dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<S> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<S>,
    pub bias: Vec<S>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad<S> {
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Real> DenseGrad<S> {
    pub fn zeros_like(layer: &Dense<S>) -> Self {
        DenseGrad {
            weight: vec![S::zero(); layer.weight.len()],
            bias: vec![S::zero(); layer.bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &DenseGrad<S>) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a = *a + *b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a = *a + *b;
        }
    }
}

impl<S: Real> Dense<S> {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Dense {
            in_dim,
            out_dim,
            weight: vec![S::zero(); in_dim * out_dim],
            bias: vec![S::zero(); out_dim],
            activation,
        }
    }

    /// Uniform weights in `[-bound, bound]`, zero bias.
    pub fn uniform<R: Rng>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        bound: f64,
        rng: &mut R,
    ) -> Self {
        let weight = (0..in_dim * out_dim)
            .map(|_| S::of(rng.gen_range(-bound..=bound)))
            .collect();
        Dense {
            in_dim,
            out_dim,
            weight,
            bias: vec![S::zero(); out_dim],
            activation,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// `y = act(x W + b)` for `n` rows of `x`.
    pub fn forward(&self, x: &[S], n: usize) -> Vec<S> {
        let mut y = vec![S::zero(); n * self.out_dim];
        mat::mul(x, &self.weight, &mut y, n, self.in_dim, self.out_dim);
        for row in y.chunks_exact_mut(self.out_dim) {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v = self.activation.apply(*v + *b);
            }
        }
        y
    }

    /// Back-propagates `d_out` (gradient w.r.t. this layer's activated output).
    ///
    /// `d_out` is overwritten with the pre-activation gradient. Parameter
    /// gradients are accumulated into `grad`; the input gradient is returned
    /// when `want_input` is set.
    pub fn backward(
        &self,
        x: &[S],
        y: &[S],
        d_out: &mut [S],
        n: usize,
        grad: &mut DenseGrad<S>,
        want_input: bool,
    ) -> Option<Vec<S>> {
        if self.activation != Activation::Linear {
            for (d, &out) in d_out.iter_mut().zip(y) {
                *d = *d * self.activation.derivative_from_output(out);
            }
        }
        mat::mul_at_b_acc(x, d_out, &mut grad.weight, n, self.in_dim, self.out_dim);
        for row in d_out.chunks_exact(self.out_dim) {
            for (g, d) in grad.bias.iter_mut().zip(row) {
                *g = *g + *d;
            }
        }
        want_input.then(|| {
            let mut dx = vec![S::zero(); n * self.in_dim];
            mat::mul_a_bt(d_out, &self.weight, &mut dx, n, self.out_dim, self.in_dim);
            dx
        })
    }

    pub fn cast<T: Real>(&self) -> Dense<T> {
        Dense {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weight: self.weight.iter().map(|v| T::of(v.as_f64())).collect(),
            bias: self.bias.iter().map(|v| T::of(v.as_f64())).collect(),
            activation: self.activation,
        }
    }
}
