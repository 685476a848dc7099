//! Quadrature volume rendering: sampling along rays, compositing and its
//! reverse-mode derivative.
//!
//! For samples at depths `t_k` with interval lengths `delta_k`, densities
//! `sigma_k` and colors `c_k`:
//!
//! ```text
//! T_k = exp(-sum_{j<k} sigma_j delta_j)
//! w_k = T_k (1 - exp(-sigma_k delta_k))
//! rgb = sum w_k c_k,  opacity = sum w_k,  depth = sum w_k t_k / max(opacity, 1e-10)
//! ```
//!
//! The last interval runs to the ray's far bound. The background is black.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldCache, FieldInput, FieldModel, FieldPair};
use crate::geometry::{Camera, Ray};
use crate::raster::{DepthMap, RgbImage};
use crate::real::Real;

/// Opacity floor used when normalizing the expected depth.
pub const DEPTH_EPS: f64 = 1e-10;

/// Samples along one ray together with the compositing state.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySampleBatch {
    pub t_near: f64,
    pub t_far: f64,
    pub depths: Vec<f64>,
    pub deltas: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
    /// Filled by [`composite`].
    pub weights: Vec<f64>,
    /// `T_1 ..= T_{n+1}`, filled by [`composite`]. The final entry is the
    /// probability of passing through every sample.
    pub transmittance: Vec<f64>,
    pub n_coarse: usize,
    pub n_fine: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderResult {
    pub rgb: [f64; 3],
    /// Opacity-normalized expected termination distance along the ray.
    pub depth: f64,
    pub opacity: f64,
}

/// Upstream gradient of a loss w.r.t. a [`RenderResult`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RenderGrad {
    pub rgb: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
}

impl RaySampleBatch {
    /// Builds the interval structure for ascending `depths` inside `[t_near, t_far]`.
    pub fn new(t_near: f64, t_far: f64, depths: Vec<f64>) -> Result<Self> {
        if depths.is_empty() {
            return Err(Error::Contract("a ray needs at least one sample".into()));
        }
        if depths.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Contract("sample depths must be sorted ascending".into()));
        }
        if depths[0] < t_near || depths[depths.len() - 1] > t_far {
            return Err(Error::Contract(format!(
                "sample depths must lie inside [{t_near}, {t_far}]"
            )));
        }
        let n = depths.len();
        let mut deltas = Vec::with_capacity(n);
        for k in 0..n {
            let next = if k + 1 < n { depths[k + 1] } else { t_far };
            deltas.push(next - depths[k]);
        }
        Ok(RaySampleBatch {
            t_near,
            t_far,
            deltas,
            sigmas: vec![0.0; n],
            colors: vec![[0.0; 3]; n],
            weights: vec![0.0; n],
            transmittance: vec![1.0; n + 1],
            n_coarse: n,
            n_fine: 0,
            depths,
        })
    }

    pub fn for_ray(ray: &Ray, depths: Vec<f64>) -> Result<Self> {
        Self::new(ray.t_near, ray.t_far, depths)
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    /// Upper edge of sample `k`'s interval.
    pub fn interval_end(&self, k: usize) -> f64 {
        self.depths[k] + self.deltas[k]
    }

    pub fn set_field(&mut self, sigmas: Vec<f64>, colors: Vec<[f64; 3]>) -> Result<()> {
        if sigmas.len() != self.len() || colors.len() != self.len() {
            return Err(Error::Shape("field values do not match the sample count".into()));
        }
        self.sigmas = sigmas;
        self.colors = colors;
        Ok(())
    }
}

/// `n` depths over `[t_near, t_far]`: one uniform draw per equal-width bin when
/// `stratified`, otherwise the bin midpoints.
pub fn sample_coarse<R: Rng + ?Sized>(
    ray: &Ray,
    n: usize,
    stratified: bool,
    rng: &mut R,
) -> Vec<f64> {
    assert!(n >= 1, "need at least one coarse sample");
    let width = (ray.t_far - ray.t_near) / n as f64;
    (0..n)
        .map(|i| {
            let offset = if stratified { rng.gen::<f64>() } else { 0.5 };
            ray.t_near + (i as f64 + offset) * width
        })
        .collect()
}

/// Draws `n` depths from the piecewise-constant density given by the coarse
/// weights over their intervals (inverse CDF). Falls back to uniform over
/// `[t_near, t_far]` when the weights vanish.
///
/// With `rng = None` the quantiles are the deterministic midpoints
/// `(i + 0.5) / n`; otherwise each quantile is jittered within its stratum.
pub fn sample_fine<R: Rng + ?Sized>(
    coarse: &RaySampleBatch,
    n: usize,
    mut rng: Option<&mut R>,
) -> Vec<f64> {
    let mut u: Vec<f64> = (0..n)
        .map(|i| {
            let j = match rng.as_deref_mut() {
                Some(r) => r.gen::<f64>(),
                None => 0.5,
            };
            (i as f64 + j) / n as f64
        })
        .collect();
    let total: f64 = coarse.weights.iter().sum();
    if !(total > 1e-10) {
        let span = coarse.t_far - coarse.t_near;
        return u.iter().map(|&q| coarse.t_near + q * span).collect();
    }
    let mut cdf = Vec::with_capacity(coarse.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for w in &coarse.weights {
        acc += w.max(0.0) / total;
        cdf.push(acc);
    }
    let last = coarse.len() - 1;
    let mut k = 0;
    for q in u.iter_mut() {
        // quantiles are ascending, so the bin search can resume
        while k < last && cdf[k + 1] <= *q {
            k += 1;
        }
        let lo = coarse.depths[k];
        let hi = coarse.interval_end(k);
        let mass = cdf[k + 1] - cdf[k];
        let frac = if mass > 0.0 {
            ((*q - cdf[k]) / mass).clamp(0.0, 1.0)
        } else {
            0.5
        };
        *q = lo + frac * (hi - lo);
    }
    u
}

/// Sorted union of two ascending depth lists.
pub fn merge_depths(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Computes transmittance and weights in place and returns the composited
/// color, expected depth and opacity.
pub fn composite(samples: &mut RaySampleBatch) -> Result<RenderResult> {
    if samples.depths.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Contract("sample depths must be sorted ascending".into()));
    }
    let n = samples.len();
    samples.weights.resize(n, 0.0);
    samples.transmittance.resize(n + 1, 0.0);
    let mut optical = 0.0f64;
    let mut result = RenderResult::default();
    let mut weighted_t = 0.0;
    for k in 0..n {
        let t_k = (-optical).exp();
        let tau = samples.sigmas[k] * samples.deltas[k];
        let w = t_k * -(-tau).exp_m1();
        samples.transmittance[k] = t_k;
        samples.weights[k] = w;
        optical += tau;
        for c in 0..3 {
            result.rgb[c] += w * samples.colors[k][c];
        }
        result.opacity += w;
        weighted_t += w * samples.depths[k];
    }
    samples.transmittance[n] = (-optical).exp();
    result.depth = weighted_t / result.opacity.max(DEPTH_EPS);
    Ok(result)
}

/// Un-normalized expected depth `sum w_k t_k`.
pub fn expected_depth_unnormalized(samples: &RaySampleBatch) -> f64 {
    samples
        .weights
        .iter()
        .zip(&samples.depths)
        .map(|(w, t)| w * t)
        .sum()
}

/// Maps gradients w.r.t. the weights `w_k` to gradients w.r.t. the densities.
///
/// `dw_k/dsigma_m` is `delta_m T_{m+1}` for `m = k`, `-delta_m w_k` for
/// `m < k` and zero otherwise.
pub fn weights_backward(samples: &RaySampleBatch, d_weights: &[f64]) -> Vec<f64> {
    let n = samples.len();
    let mut d_sigma = vec![0.0; n];
    let mut suffix = 0.0;
    for m in (0..n).rev() {
        d_sigma[m] =
            samples.deltas[m] * (d_weights[m] * samples.transmittance[m + 1] - suffix);
        suffix += d_weights[m] * samples.weights[m];
    }
    d_sigma
}

/// Reverse-mode derivative of [`composite`].
///
/// `extra_weight_grad`, when given, is added to the weight gradients before
/// they are propagated to the densities; the depth loss enters here.
pub fn composite_backward(
    samples: &RaySampleBatch,
    result: &RenderResult,
    grad: &RenderGrad,
    extra_weight_grad: Option<&[f64]>,
) -> (Vec<f64>, Vec<[f64; 3]>) {
    let n = samples.len();
    let opacity = result.opacity;
    let mut d_w = vec![0.0; n];
    let mut d_color = vec![[0.0; 3]; n];
    for k in 0..n {
        let c = samples.colors[k];
        let mut g = grad.rgb[0] * c[0] + grad.rgb[1] * c[1] + grad.rgb[2] * c[2] + grad.opacity;
        if grad.depth != 0.0 {
            g += if opacity > DEPTH_EPS {
                grad.depth * (samples.depths[k] - result.depth) / opacity
            } else {
                grad.depth * samples.depths[k] / DEPTH_EPS
            };
        }
        if let Some(extra) = extra_weight_grad {
            g += extra[k];
        }
        d_w[k] = g;
        let w = samples.weights[k];
        d_color[k] = [w * grad.rgb[0], w * grad.rgb[1], w * grad.rgb[2]];
    }
    (weights_backward(samples, &d_w), d_color)
}

/// Sampling counts for the two-pass renderer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub n_coarse: usize,
    pub n_fine: usize,
    /// Rays evaluated per network batch.
    pub chunk_rays: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            n_coarse: 32,
            n_fine: 32,
            chunk_rays: 512,
        }
    }
}

/// Output of one network pass over a set of rays.
pub(crate) struct PassOutput<S> {
    pub samples: Vec<RaySampleBatch>,
    pub results: Vec<RenderResult>,
    pub cache: Option<FieldCache<S>>,
}

/// Evaluates `model` at the given sample depths of every ray and composites.
pub(crate) fn run_pass<S: Real>(
    model: &FieldModel<S>,
    rays: &[Ray],
    times: &[f64],
    depths: Vec<Vec<f64>>,
    keep_cache: bool,
) -> Result<PassOutput<S>> {
    let total: usize = depths.iter().map(Vec::len).sum();
    let mut positions = Vec::with_capacity(total);
    let mut directions = Vec::with_capacity(total);
    let mut sample_times = Vec::with_capacity(total);
    for ((ray, &t), ds) in rays.iter().zip(times).zip(&depths) {
        let d = [ray.direction.x, ray.direction.y, ray.direction.z];
        for &s in ds {
            let p = ray.at(s);
            positions.push([p.x, p.y, p.z]);
            directions.push(d);
            sample_times.push(t);
        }
    }
    let input = FieldInput {
        positions: &positions,
        directions: &directions,
        times: &sample_times,
    };
    let (out, cache) = if keep_cache {
        let (o, c) = model.forward(&input)?;
        (o, Some(c))
    } else {
        (model.evaluate(&input)?, None)
    };
    let mut samples = Vec::with_capacity(rays.len());
    let mut results = Vec::with_capacity(rays.len());
    let mut offset = 0;
    for (ray, ds) in rays.iter().zip(depths) {
        let n = ds.len();
        let mut batch = RaySampleBatch::for_ray(ray, ds)?;
        let sig = out.sigma[offset..offset + n].iter().map(|v| v.as_f64()).collect();
        let col = out.rgb[offset..offset + n]
            .iter()
            .map(|c| [c[0].as_f64(), c[1].as_f64(), c[2].as_f64()])
            .collect();
        batch.set_field(sig, col)?;
        results.push(composite(&mut batch)?);
        samples.push(batch);
        offset += n;
    }
    Ok(PassOutput {
        samples,
        results,
        cache,
    })
}

/// Coarse and fine renderings of one ray.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PixelRender {
    pub coarse: RenderResult,
    pub fine: RenderResult,
}

/// Deterministic two-pass rendering of a set of rays (midpoint coarse samples,
/// midpoint-quantile importance samples).
pub fn render_rays<S: Real>(
    models: &FieldPair<S>,
    rays: &[Ray],
    times: &[f64],
    config: &RenderConfig,
) -> Result<Vec<PixelRender>> {
    let mut out = Vec::with_capacity(rays.len());
    for (chunk, tchunk) in rays
        .chunks(config.chunk_rays.max(1))
        .zip(times.chunks(config.chunk_rays.max(1)))
    {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let coarse_depths = chunk
            .iter()
            .map(|r| sample_coarse(r, config.n_coarse, false, &mut rng))
            .collect();
        let coarse = run_pass(&models.coarse, chunk, tchunk, coarse_depths, false)?;
        let fine_depths = coarse
            .samples
            .iter()
            .map(|s| {
                let extra = sample_fine::<rand::rngs::mock::StepRng>(s, config.n_fine, None);
                merge_depths(&s.depths, &extra)
            })
            .collect();
        let fine = run_pass(&models.fine, chunk, tchunk, fine_depths, false)?;
        out.extend(
            coarse
                .results
                .into_iter()
                .zip(fine.results)
                .map(|(coarse, fine)| PixelRender { coarse, fine }),
        );
    }
    Ok(out)
}

pub fn render_pixel<S: Real>(
    models: &FieldPair<S>,
    ray: &Ray,
    t: f64,
    config: &RenderConfig,
) -> Result<PixelRender> {
    Ok(render_rays(models, std::slice::from_ref(ray), &[t], config)?[0])
}

/// A rendered camera view. Depth is camera-frame z in meters, like dataset
/// depth maps.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub opacity: Vec<f64>,
}

/// Renders every pixel of `camera` at time `t` (fine pass), in parallel over
/// ray chunks.
pub fn render_view<S: Real>(
    models: &FieldPair<S>,
    camera: &Camera,
    t: f64,
    config: &RenderConfig,
) -> Result<RenderedView> {
    let (w, h) = (camera.width, camera.height);
    let pixels: Vec<(u32, u32)> = (0..h).flat_map(|j| (0..w).map(move |i| (i, j))).collect();
    let chunk = config.chunk_rays.max(1);
    let parts: Vec<Result<Vec<PixelRender>>> = pixels
        .par_chunks(chunk)
        .map(|px| {
            let rays: Vec<Ray> = px.iter().map(|&(i, j)| camera.pixel_ray(i, j)).collect();
            render_rays(models, &rays, &vec![t; rays.len()], config)
        })
        .collect();
    let mut rgb = RgbImage::new(w, h);
    let mut depth = DepthMap::new(w, h);
    let mut opacity = vec![0.0; pixels.len()];
    let mut k = 0;
    for part in parts {
        for r in part? {
            let (i, j) = pixels[k];
            rgb.set(i, j, r.fine.rgb);
            depth.set(i, j, r.fine.depth / camera.ray_length_per_depth(i, j));
            opacity[k] = r.fine.opacity;
            k += 1;
        }
    }
    Ok(RenderedView {
        rgb,
        depth,
        opacity,
    })
}
