//! Time-conditioned radiance field MLP with manual reverse-mode gradients.
//!
//! The trunk is eight ReLU layers fed with the encoded position and the raw
//! time scalar. A softplus head reads density off the trunk; the color branch
//! concatenates the trunk output with the encoded view direction and runs two
//! more ReLU layers (the second at half width) before a sigmoid RGB head.

mod dense;
pub mod encoding;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use dense::{Activation, Dense, DenseGrad};
pub use encoding::{encode, encode_backward, encode_jacobian, encoded_width, EncodingConfig};

use crate::error::{Error, Result};
use crate::real::Real;

pub const TRUNK_DEPTH: usize = 8;
/// Trunk layer that receives the concatenated network input when skips are on.
pub const SKIP_LAYER: usize = 5;

const DENSITY_HEAD: usize = TRUNK_DEPTH;
const COLOR_1: usize = TRUNK_DEPTH + 1;
const COLOR_2: usize = TRUNK_DEPTH + 2;
const COLOR_HEAD: usize = TRUNK_DEPTH + 3;
const LAYER_COUNT: usize = TRUNK_DEPTH + 4;

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldArch {
    pub width: usize,
    pub encoding: EncodingConfig,
    /// When false the time input is held at zero, which turns the model into a
    /// static field without changing its parameter layout.
    pub use_time: bool,
    pub skip: bool,
}

impl Default for FieldArch {
    fn default() -> Self {
        FieldArch {
            width: 64,
            encoding: EncodingConfig::default(),
            use_time: true,
            skip: false,
        }
    }
}

impl FieldArch {
    pub fn input_width(&self) -> usize {
        self.encoding.position_width() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || !self.width.is_multiple_of(2) {
            return Err(Error::Validation(format!(
                "network width must be an even number >= 2, got {}",
                self.width
            )));
        }
        Ok(())
    }

    fn layer_shapes(&self) -> Vec<(usize, usize, Activation)> {
        let w = self.width;
        let input = self.input_width();
        let mut shapes = Vec::with_capacity(LAYER_COUNT);
        for i in 0..TRUNK_DEPTH {
            let in_dim = match i {
                0 => input,
                SKIP_LAYER if self.skip => w + input,
                _ => w,
            };
            shapes.push((in_dim, w, Activation::Relu));
        }
        shapes.push((w, 1, Activation::Softplus));
        shapes.push((w + self.encoding.direction_width(), w, Activation::Relu));
        shapes.push((w, w / 2, Activation::Relu));
        shapes.push((w / 2, 3, Activation::Sigmoid));
        shapes
    }
}

/// Single-sample output of the field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldOutput {
    pub rgb: [f64; 3],
    pub sigma: f64,
}

/// Batched field evaluation result.
#[derive(Clone, Debug, Default)]
pub struct FieldBatch<S> {
    pub sigma: Vec<S>,
    pub rgb: Vec<[S; 3]>,
}

/// Sample inputs for a batched evaluation. Directions must be unit length.
#[derive(Clone, Copy, Debug)]
pub struct FieldInput<'a> {
    pub positions: &'a [[f64; 3]],
    pub directions: &'a [[f64; 3]],
    pub times: &'a [f64],
}

impl FieldInput<'_> {
    fn len(&self) -> Result<usize> {
        let n = self.positions.len();
        if self.directions.len() != n || self.times.len() != n {
            return Err(Error::Shape(format!(
                "field input lengths differ: {} positions, {} directions, {} times",
                n,
                self.directions.len(),
                self.times.len()
            )));
        }
        Ok(n)
    }
}

/// Activations recorded by [`FieldModel::forward`] for the backward pass.
#[derive(Debug)]
pub struct FieldCache<S> {
    model_id: u64,
    version: u64,
    n: usize,
    x0: Vec<S>,
    skip_in: Vec<S>,
    color_in: Vec<S>,
    outputs: Vec<Vec<S>>,
}

impl<S> FieldCache<S> {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Parameter gradients, one entry per layer in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrads<S> {
    pub layers: Vec<DenseGrad<S>>,
}

impl<S: Real> FieldGrads<S> {
    pub fn add_assign(&mut self, other: &FieldGrads<S>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: S) {
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v = *v * k);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &S> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug)]
pub struct FieldModel<S> {
    pub arch: FieldArch,
    /// Trunk layers, density head, two color layers and the color head, in
    /// that order.
    pub layers: Vec<Dense<S>>,
    id: u64,
    version: u64,
}

impl<S: Clone> Clone for FieldModel<S> {
    fn clone(&self) -> Self {
        FieldModel {
            arch: self.arch,
            layers: self.layers.clone(),
            id: self.id,
            version: self.version,
        }
    }
}

/// Parameter equality; cache bookkeeping is ignored.
impl<S: PartialEq> PartialEq for FieldModel<S> {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.layers == other.layers
    }
}

fn next_id() -> u64 {
    NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed)
}

impl<S: Real> FieldModel<S> {
    /// Seeded initialization: hidden layers use He-uniform bounds, heads use
    /// `1 / sqrt(fan_in)`. Biases and the weights reading the time input start
    /// at zero, so an untrained field is the same at every t.
    pub fn init(arch: FieldArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers: Vec<Dense<S>> = arch
            .layer_shapes()
            .into_iter()
            .map(|(i, o, act)| {
                let bound = match act {
                    Activation::Relu => (6.0 / i as f64).sqrt(),
                    _ => (1.0 / i as f64).sqrt(),
                };
                Dense::uniform(i, o, act, bound, &mut rng)
            })
            .collect();
        let (w, t_col) = (arch.width, arch.encoding.position_width());
        layers[0].weight[t_col * w..(t_col + 1) * w].fill(S::zero());
        if arch.skip {
            let row = w + t_col;
            layers[SKIP_LAYER].weight[row * w..(row + 1) * w].fill(S::zero());
        }
        Ok(Self::from_layers(arch, layers))
    }

    pub fn zeros(arch: FieldArch) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(i, o, act)| Dense::zeros(i, o, act))
            .collect();
        Ok(Self::from_layers(arch, layers))
    }

    pub(crate) fn from_layers(arch: FieldArch, layers: Vec<Dense<S>>) -> Self {
        FieldModel {
            arch,
            layers,
            id: next_id(),
            version: 0,
        }
    }

    /// Checks that `layers` matches the architecture's shapes.
    pub fn check_layout(&self) -> Result<()> {
        let shapes = self.arch.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "expected {} layers, found {}",
                shapes.len(),
                self.layers.len()
            )));
        }
        for (k, ((i, o, act), l)) in shapes.iter().zip(&self.layers).enumerate() {
            if l.in_dim != *i
                || l.out_dim != *o
                || l.activation != *act
                || l.weight.len() != i * o
                || l.bias.len() != *o
            {
                return Err(Error::Shape(format!("layer {k} does not match the architecture")));
            }
        }
        Ok(())
    }

    pub fn trunk(&self) -> &[Dense<S>] {
        &self.layers[..TRUNK_DEPTH]
    }

    pub fn density_head(&self) -> &Dense<S> {
        &self.layers[DENSITY_HEAD]
    }

    /// Mutable access; call [`Self::bump_version`] after editing.
    pub fn density_head_mut(&mut self) -> &mut Dense<S> {
        &mut self.layers[DENSITY_HEAD]
    }

    pub fn color_branch(&self) -> &[Dense<S>] {
        &self.layers[COLOR_1..=COLOR_2]
    }

    pub fn color_head(&self) -> &Dense<S> {
        &self.layers[COLOR_HEAD]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Dense::parameter_count).sum()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn zero_grads(&self) -> FieldGrads<S> {
        FieldGrads {
            layers: self.layers.iter().map(DenseGrad::zeros_like).collect(),
        }
    }

    /// Marks the parameters as changed, invalidating outstanding caches.
    pub fn bump_version(&mut self) {
        self.version += 1;
    }

    pub fn cast<T: Real>(&self) -> FieldModel<T> {
        FieldModel {
            arch: self.arch,
            layers: self.layers.iter().map(Dense::cast).collect(),
            id: next_id(),
            version: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn build_inputs(&self, input: &FieldInput<'_>, n: usize) -> (Vec<S>, Vec<S>) {
        let enc = self.arch.encoding;
        let pw = enc.position_width();
        let xw = pw + 1;
        let dw = enc.direction_width();
        let mut x0 = vec![S::zero(); n * xw];
        let mut d = vec![S::zero(); n * dw];
        for i in 0..n {
            let row = &mut x0[i * xw..(i + 1) * xw];
            encoding::encode_into(input.positions[i], enc.n_freq_pos, enc.include_input, &mut row[..pw]);
            row[pw] = if self.arch.use_time {
                S::of(input.times[i])
            } else {
                S::zero()
            };
            encoding::encode_into(
                input.directions[i],
                enc.n_freq_dir,
                enc.include_input,
                &mut d[i * dw..(i + 1) * dw],
            );
        }
        (x0, d)
    }

    fn run(&self, input: &FieldInput<'_>) -> Result<(FieldBatch<S>, FieldCache<S>)> {
        let n = input.len()?;
        // ReLU's max() drops NaNs, so check parameters up front.
        if !self.is_finite() {
            return Err(Error::Numeric("field parameters contain non-finite values".into()));
        }
        let (x0, denc) = self.build_inputs(input, n);
        let w = self.arch.width;
        let dw = self.arch.encoding.direction_width();
        let xw = self.arch.input_width();

        let mut outputs: Vec<Vec<S>> = Vec::with_capacity(LAYER_COUNT);
        let mut skip_in = Vec::new();
        for i in 0..TRUNK_DEPTH {
            let y = if i == 0 {
                self.layers[0].forward(&x0, n)
            } else if i == SKIP_LAYER && self.arch.skip {
                skip_in = concat_rows(&outputs[i - 1], w, &x0, xw, n);
                self.layers[i].forward(&skip_in, n)
            } else {
                self.layers[i].forward(&outputs[i - 1], n)
            };
            outputs.push(y);
        }
        let trunk_out = &outputs[TRUNK_DEPTH - 1];
        let sigma = self.layers[DENSITY_HEAD].forward(trunk_out, n);
        let color_in = concat_rows(trunk_out, w, &denc, dw, n);
        outputs.push(sigma);
        let c1 = self.layers[COLOR_1].forward(&color_in, n);
        let c2 = self.layers[COLOR_2].forward(&c1, n);
        let rgb = self.layers[COLOR_HEAD].forward(&c2, n);
        outputs.push(c1);
        outputs.push(c2);
        outputs.push(rgb);

        let sigma = outputs[DENSITY_HEAD].clone();
        let rgb: Vec<[S; 3]> = outputs[COLOR_HEAD]
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        if let Some(k) = sigma
            .iter()
            .zip(&rgb)
            .position(|(s, c)| !s.is_finite() || c.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Numeric(format!(
                "field produced a non-finite output at sample {k}"
            )));
        }
        let cache = FieldCache {
            model_id: self.id,
            version: self.version,
            n,
            x0,
            skip_in,
            color_in,
            outputs,
        };
        Ok((FieldBatch { sigma, rgb }, cache))
    }

    /// Batched forward pass recording activations for [`FieldModel::backward`].
    pub fn forward(&self, input: &FieldInput<'_>) -> Result<(FieldBatch<S>, FieldCache<S>)> {
        self.run(input)
    }

    /// Batched forward pass without keeping the cache.
    pub fn evaluate(&self, input: &FieldInput<'_>) -> Result<FieldBatch<S>> {
        self.run(input).map(|(out, _)| out)
    }

    /// Evaluates a single sample.
    pub fn forward_one(&self, pos: [f64; 3], dir: [f64; 3], t: f64) -> Result<FieldOutput> {
        let out = self.evaluate(&FieldInput {
            positions: &[pos],
            directions: &[dir],
            times: &[t],
        })?;
        let c = out.rgb[0];
        Ok(FieldOutput {
            rgb: [c[0].as_f64(), c[1].as_f64(), c[2].as_f64()],
            sigma: out.sigma[0].as_f64(),
        })
    }

    /// Accumulates parameter gradients for upstream gradients on the batch
    /// outputs (density after softplus, color after sigmoid).
    pub fn backward(
        &self,
        cache: &FieldCache<S>,
        d_sigma: &[S],
        d_rgb: &[[S; 3]],
        grads: &mut FieldGrads<S>,
    ) -> Result<()> {
        if cache.model_id != self.id || cache.version != self.version {
            return Err(Error::Contract(
                "activation cache was recorded for different parameters".into(),
            ));
        }
        let n = cache.n;
        if d_sigma.len() != n || d_rgb.len() != n {
            return Err(Error::Contract(format!(
                "upstream gradients cover {} / {} samples but the cache holds {n}",
                d_sigma.len(),
                d_rgb.len()
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Shape("gradient buffer does not match the model".into()));
        }
        let w = self.arch.width;
        let out = &cache.outputs;
        let g = &mut grads.layers;

        let mut d_head: Vec<S> = d_rgb.iter().flat_map(|c| c.iter().copied()).collect();
        let d_c2 = self.layers[COLOR_HEAD]
            .backward(&out[COLOR_2], &out[COLOR_HEAD], &mut d_head, n, &mut g[COLOR_HEAD], true)
            .unwrap();
        let mut d_c2 = d_c2;
        let mut d_c1 = self.layers[COLOR_2]
            .backward(&out[COLOR_1], &out[COLOR_2], &mut d_c2, n, &mut g[COLOR_2], true)
            .unwrap();
        let d_color_in = self.layers[COLOR_1]
            .backward(&cache.color_in, &out[COLOR_1], &mut d_c1, n, &mut g[COLOR_1], true)
            .unwrap();
        let cw = self.layers[COLOR_1].in_dim;
        let mut d_h: Vec<S> = d_color_in
            .chunks_exact(cw)
            .flat_map(|row| row[..w].iter().copied())
            .collect();

        let mut d_s = d_sigma.to_vec();
        let trunk_out = &out[TRUNK_DEPTH - 1];
        let d_from_sigma = self.layers[DENSITY_HEAD]
            .backward(trunk_out, &out[DENSITY_HEAD], &mut d_s, n, &mut g[DENSITY_HEAD], true)
            .unwrap();
        for (a, b) in d_h.iter_mut().zip(&d_from_sigma) {
            *a = *a + *b;
        }

        for i in (0..TRUNK_DEPTH).rev() {
            let want_input = i > 0;
            if i == 0 {
                self.layers[0].backward(&cache.x0, &out[0], &mut d_h, n, &mut g[0], false);
            } else if i == SKIP_LAYER && self.arch.skip {
                let d_in = self.layers[i]
                    .backward(&cache.skip_in, &out[i], &mut d_h, n, &mut g[i], want_input)
                    .unwrap();
                let iw = self.layers[i].in_dim;
                d_h = d_in
                    .chunks_exact(iw)
                    .flat_map(|row| row[..w].iter().copied())
                    .collect();
            } else {
                d_h = self.layers[i]
                    .backward(&out[i - 1], &out[i], &mut d_h, n, &mut g[i], want_input)
                    .unwrap();
            }
        }
        Ok(())
    }
}

/// Coarse and fine models: same architecture, independent parameters.
#[derive(Clone, Debug)]
pub struct FieldPair<S> {
    pub coarse: FieldModel<S>,
    pub fine: FieldModel<S>,
}

impl<S: PartialEq> PartialEq for FieldPair<S> {
    fn eq(&self, other: &Self) -> bool {
        self.coarse == other.coarse && self.fine == other.fine
    }
}

impl<S: Real> FieldPair<S> {
    pub fn init(arch: FieldArch, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coarse_seed = rng.next_u64();
        let fine_seed = rng.next_u64();
        Ok(FieldPair {
            coarse: FieldModel::init(arch, coarse_seed)?,
            fine: FieldModel::init(arch, fine_seed)?,
        })
    }

    pub fn arch(&self) -> FieldArch {
        self.coarse.arch
    }

    pub fn cast<T: Real>(&self) -> FieldPair<T> {
        FieldPair {
            coarse: self.coarse.cast(),
            fine: self.fine.cast(),
        }
    }
}

fn concat_rows<S: Real>(a: &[S], aw: usize, b: &[S], bw: usize, n: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(n * (aw + bw));
    for i in 0..n {
        out.extend_from_slice(&a[i * aw..(i + 1) * aw]);
        out.extend_from_slice(&b[i * bw..(i + 1) * bw]);
    }
    out
}
