//! Optimization of the coarse/fine field pair from RGB-D frames.
//!
//! Each step draws a batch of pixel rays, renders both passes, and minimizes
//! the color MSE plus `lambda_depth` times the mean KL depth loss over the
//! batch's keypoint rays.

mod adam;
pub mod depth;

use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamParams};
pub use depth::{depth_loss, select_depth_keypoints, DepthKeypoint, DepthLoss};

use crate::dataset::{Dataset, RgbdFrame};
use crate::error::{Error, Result};
use crate::field::{EncodingConfig, FieldArch, FieldGrads, FieldModel, FieldPair};
use crate::geometry::{Camera, Ray};
use crate::real::Real;
use crate::render::{
    composite_backward, merge_depths, run_pass, sample_coarse, sample_fine, RenderConfig,
    RenderGrad,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub width: usize,
    pub encoding: EncodingConfig,
    pub skip: bool,
    pub rays_per_batch: usize,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub iterations: usize,
    pub lambda_depth: f64,
    pub keypoints_per_image: usize,
    /// Standard deviation of the depth target, meters.
    pub sigma_hat: f64,
    /// Minimum share of each batch drawn from depth keypoints.
    pub keypoint_fraction: f64,
    /// Frames with other time values are ignored; empty means all.
    pub t_values: Vec<f64>,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    pub use_depth_loss: bool,
    pub use_time: bool,
    pub depth_loss_on_coarse: bool,
    /// Rays per gradient work unit.
    pub chunk_rays: usize,
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => TrainConfig {
                width: 64,
                encoding: EncodingConfig::default(),
                skip: false,
                rays_per_batch: 1024,
                n_coarse: 32,
                n_fine: 32,
                iterations: 3000,
                lambda_depth: 0.1,
                keypoints_per_image: 2000,
                sigma_hat: 1.0,
                keypoint_fraction: 0.25,
                t_values: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
                lr_start: 5e-4,
                lr_end: 5e-5,
                seed: 0,
                use_depth_loss: true,
                use_time: true,
                depth_loss_on_coarse: true,
                chunk_rays: 256,
            },
            Preset::Paper => TrainConfig {
                width: 768,
                rays_per_batch: 4096,
                n_coarse: 96,
                n_fine: 96,
                iterations: 50_000,
                keypoints_per_image: 100_000,
                ..Self::preset(Preset::Desk)
            },
        }
    }

    pub fn arch(&self) -> FieldArch {
        FieldArch {
            width: self.width,
            encoding: self.encoding,
            use_time: self.use_time,
            skip: self.skip,
        }
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            n_coarse: self.n_coarse,
            n_fine: self.n_fine,
            chunk_rays: self.chunk_rays,
        }
    }

    /// Weight of the depth term actually applied.
    pub fn effective_lambda(&self) -> f64 {
        if self.use_depth_loss {
            self.lambda_depth
        } else {
            0.0
        }
    }

    pub fn learning_rate(&self, iteration: usize) -> f64 {
        if self.iterations == 0 {
            return self.lr_start;
        }
        let frac = iteration as f64 / self.iterations as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(frac)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("rays_per_batch", self.rays_per_batch),
            ("n_coarse", self.n_coarse),
            ("n_fine", self.n_fine),
            ("keypoints_per_image", self.keypoints_per_image),
            ("chunk_rays", self.chunk_rays),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Validation(format!("{name} must be at least 1")));
        }
        if self.n_coarse < 2 {
            return Err(Error::Validation("n_coarse must be at least 2".into()));
        }
        if !(self.lambda_depth >= 0.0) || !(self.sigma_hat > 0.0) {
            return Err(Error::Validation(
                "lambda_depth must be >= 0 and sigma_hat > 0".into(),
            ));
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0) {
            return Err(Error::Validation("learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.keypoint_fraction) {
            return Err(Error::Validation("keypoint_fraction must lie in [0, 1]".into()));
        }
        self.arch().validate()
    }
}

/// A training frame with its camera resolved.
#[derive(Clone, Debug)]
pub struct TrainFrame {
    pub camera: Camera,
    pub frame: RgbdFrame,
}

/// Frames, cameras and depth keypoints prepared for batch sampling.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub frames: Vec<TrainFrame>,
    pub keypoints: Vec<DepthKeypoint>,
    pixel_offsets: Vec<usize>,
}

impl TrainingData {
    /// Resolves cameras, filters frames by the configured time values, and
    /// selects the depth keypoints (seeded from `config.seed`).
    pub fn prepare(dataset: &Dataset, config: &TrainConfig) -> Result<Self> {
        dataset.validate()?;
        let mut frames = Vec::new();
        for f in &dataset.frames {
            if !config.t_values.is_empty() && !config.t_values.contains(&f.t) {
                continue;
            }
            frames.push(TrainFrame {
                camera: *dataset.camera(&f.camera_id)?,
                frame: f.clone(),
            });
        }
        if frames.is_empty() {
            return Err(Error::Validation(
                "no training frames match the configured time values".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6b65_7970_6f69_6e74);
        let mut keypoints = Vec::new();
        if config.use_depth_loss {
            for (k, f) in frames.iter().enumerate() {
                keypoints.extend(select_depth_keypoints(
                    &f.frame,
                    k,
                    config.keypoints_per_image,
                    config.sigma_hat,
                    &mut rng,
                ));
            }
        }
        let mut pixel_offsets = Vec::with_capacity(frames.len() + 1);
        let mut acc = 0;
        for f in &frames {
            pixel_offsets.push(acc);
            acc += f.camera.pixel_count();
        }
        pixel_offsets.push(acc);
        Ok(TrainingData {
            frames,
            keypoints,
            pixel_offsets,
        })
    }

    pub fn pixel_total(&self) -> usize {
        *self.pixel_offsets.last().unwrap_or(&0)
    }

    fn ray_target(&self, frame: usize, u: u32, v: u32, depth: Option<(f64, f64)>) -> RayTarget {
        let f = &self.frames[frame];
        let ray = f.camera.pixel_ray(u, v);
        RayTarget {
            ray,
            t: f.frame.t,
            rgb: f.frame.color.get(u, v),
            // measured depth is camera z; the loss works in ray distance
            depth: depth.map(|(z, s)| (z * f.camera.ray_length_per_depth(u, v), s)),
            source: (frame, u, v),
        }
    }

    fn pixel_by_index(&self, k: usize) -> (usize, u32, u32) {
        let frame = self.pixel_offsets.partition_point(|&o| o <= k) - 1;
        let local = k - self.pixel_offsets[frame];
        let w = self.frames[frame].camera.width as usize;
        (frame, (local % w) as u32, (local / w) as u32)
    }

    /// Draws a batch: a `keypoint_fraction` share of keypoint rays (when the
    /// depth loss is on), the rest uniform over all (frame, pixel) pairs.
    pub fn sample_batch<R: Rng + ?Sized>(&self, config: &TrainConfig, rng: &mut R) -> Vec<RayTarget> {
        let b = config.rays_per_batch;
        let n_kp = if config.use_depth_loss && !self.keypoints.is_empty() {
            ((b as f64 * config.keypoint_fraction).ceil() as usize).min(b)
        } else {
            0
        };
        let mut batch = Vec::with_capacity(b);
        for _ in 0..n_kp {
            let kp = self.keypoints[rng.gen_range(0..self.keypoints.len())];
            batch.push(self.ray_target(kp.frame, kp.u, kp.v, Some((kp.depth, kp.sigma_hat))));
        }
        let total = self.pixel_total();
        for _ in n_kp..b {
            let (f, u, v) = self.pixel_by_index(rng.gen_range(0..total));
            batch.push(self.ray_target(f, u, v, None));
        }
        batch
    }
}

/// One supervised ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayTarget {
    pub ray: Ray,
    pub t: f64,
    pub rgb: [f64; 3],
    /// Measured termination distance along the ray and its sigma-hat.
    pub depth: Option<(f64, f64)>,
    /// (frame, u, v) the ray was drawn from.
    pub source: (usize, u32, u32),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: usize,
    pub color_mse_coarse: f64,
    pub color_mse_fine: f64,
    pub depth_kl_coarse: f64,
    pub depth_kl_fine: f64,
    /// Sum of the supervised passes' mean KL terms.
    pub depth_kl: f64,
    pub total: f64,
    pub lr: f64,
    pub keypoint_rays: usize,
    pub skipped_keypoints: usize,
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub color_mse_coarse: f64,
    pub color_mse_fine: f64,
    pub depth_kl: f64,
    pub total: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

impl LogRecord {
    pub fn new(report: &LossReport, wall_ms: u64) -> Self {
        LogRecord {
            iter: report.iteration,
            color_mse_coarse: report.color_mse_coarse,
            color_mse_fine: report.color_mse_fine,
            depth_kl: report.depth_kl,
            total: report.total,
            lr: report.lr,
            wall_ms,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState<S> {
    pub coarse: Adam<S>,
    pub fine: Adam<S>,
}

impl<S: Real> OptimizerState<S> {
    pub fn new(models: &FieldPair<S>) -> Self {
        OptimizerState {
            coarse: Adam::new(&models.coarse, AdamParams::default()),
            fine: Adam::new(&models.fine, AdamParams::default()),
        }
    }
}

struct ChunkOutcome<S> {
    coarse: FieldGrads<S>,
    fine: FieldGrads<S>,
    sums: LossSums,
}

#[derive(Default, Clone, Copy)]
struct LossSums {
    sq_coarse: f64,
    sq_fine: f64,
    kl_coarse: f64,
    kl_fine: f64,
    skipped: usize,
}

/// Losses and parameter gradients for one batch, without updating anything.
pub fn batch_gradients<S: Real>(
    models: &FieldPair<S>,
    batch: &[RayTarget],
    config: &TrainConfig,
    seed: u64,
) -> Result<(LossReport, FieldGrads<S>, FieldGrads<S>)> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::Validation("empty training batch".into()));
    }
    let n_kp = batch.iter().filter(|r| r.depth.is_some()).count();
    let lambda = config.effective_lambda();
    let color_scale = 1.0 / (3.0 * b as f64);
    let kl_scale = if n_kp > 0 { 1.0 / n_kp as f64 } else { 0.0 };

    let chunks: Vec<&[RayTarget]> = batch.chunks(config.chunk_rays.max(1)).collect();
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = chunks.iter().map(|_| seeder.next_u64()).collect();

    let outcomes: Vec<Result<ChunkOutcome<S>>> = chunks
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(chunk, &s)| {
            chunk_gradients(models, chunk, config, s, color_scale, kl_scale, lambda)
        })
        .collect();

    let mut grads_c = models.coarse.zero_grads();
    let mut grads_f = models.fine.zero_grads();
    let mut sums = LossSums::default();
    for o in outcomes {
        let o = o?;
        grads_c.add_assign(&o.coarse);
        grads_f.add_assign(&o.fine);
        sums.sq_coarse += o.sums.sq_coarse;
        sums.sq_fine += o.sums.sq_fine;
        sums.kl_coarse += o.sums.kl_coarse;
        sums.kl_fine += o.sums.kl_fine;
        sums.skipped += o.sums.skipped;
    }
    let depth_kl_coarse = sums.kl_coarse * kl_scale;
    let depth_kl_fine = sums.kl_fine * kl_scale;
    let depth_kl = if config.depth_loss_on_coarse {
        depth_kl_coarse + depth_kl_fine
    } else {
        depth_kl_fine
    };
    let color_mse_coarse = sums.sq_coarse * color_scale;
    let color_mse_fine = sums.sq_fine * color_scale;
    let report = LossReport {
        iteration: 0,
        color_mse_coarse,
        color_mse_fine,
        depth_kl_coarse,
        depth_kl_fine,
        depth_kl,
        total: color_mse_coarse + color_mse_fine + lambda * depth_kl,
        lr: 0.0,
        keypoint_rays: n_kp,
        skipped_keypoints: sums.skipped,
    };
    Ok((report, grads_c, grads_f))
}

fn chunk_gradients<S: Real>(
    models: &FieldPair<S>,
    chunk: &[RayTarget],
    config: &TrainConfig,
    seed: u64,
    color_scale: f64,
    kl_scale: f64,
    lambda: f64,
) -> Result<ChunkOutcome<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rays: Vec<Ray> = chunk.iter().map(|r| r.ray).collect();
    let times: Vec<f64> = chunk.iter().map(|r| r.t).collect();
    let coarse_depths = rays
        .iter()
        .map(|r| sample_coarse(r, config.n_coarse, true, &mut rng))
        .collect();
    let coarse = run_pass(&models.coarse, &rays, &times, coarse_depths, true)?;
    let fine_depths = coarse
        .samples
        .iter()
        .map(|s| merge_depths(&s.depths, &sample_fine(s, config.n_fine, Some(&mut rng))))
        .collect();
    let fine = run_pass(&models.fine, &rays, &times, fine_depths, true)?;

    let mut sums = LossSums::default();
    let mut pass_grads = |pass: &crate::render::PassOutput<S>,
                          model: &FieldModel<S>,
                          supervise_depth: bool,
                          is_coarse: bool|
     -> Result<FieldGrads<S>> {
        let mut d_sigma = Vec::new();
        let mut d_rgb = Vec::new();
        for ((target, samples), result) in chunk.iter().zip(&pass.samples).zip(&pass.results) {
            let mut grad = RenderGrad::default();
            let mut sq = 0.0;
            for c in 0..3 {
                let diff = result.rgb[c] - target.rgb[c];
                sq += diff * diff;
                grad.rgb[c] = 2.0 * diff * color_scale;
            }
            let mut extra = None;
            if let Some((d, sigma_hat)) = target.depth {
                match depth_loss(samples, d, sigma_hat) {
                    Some(l) => {
                        if is_coarse {
                            sums.kl_coarse += l.value;
                        } else {
                            sums.kl_fine += l.value;
                        }
                        if supervise_depth && lambda > 0.0 {
                            let k = lambda * kl_scale;
                            extra = Some(l.d_weights.iter().map(|g| g * k).collect::<Vec<_>>());
                        }
                    }
                    None => {
                        if !is_coarse {
                            sums.skipped += 1;
                        }
                    }
                }
            }
            if is_coarse {
                sums.sq_coarse += sq;
            } else {
                sums.sq_fine += sq;
            }
            let (ds, dc) = composite_backward(samples, result, &grad, extra.as_deref());
            d_sigma.extend(ds.into_iter().map(S::of));
            d_rgb.extend(dc.into_iter().map(|c| [S::of(c[0]), S::of(c[1]), S::of(c[2])]));
        }
        let mut grads = model.zero_grads();
        model.backward(pass.cache.as_ref().expect("training pass keeps its cache"), &d_sigma, &d_rgb, &mut grads)?;
        Ok(grads)
    };
    let coarse_grads = pass_grads(&coarse, &models.coarse, config.depth_loss_on_coarse, true)?;
    let fine_grads = pass_grads(&fine, &models.fine, true, false)?;
    Ok(ChunkOutcome {
        coarse: coarse_grads,
        fine: fine_grads,
        sums,
    })
}

/// One Adam update of both models on `batch`.
pub fn train_step<S: Real>(
    models: &mut FieldPair<S>,
    batch: &[RayTarget],
    config: &TrainConfig,
    optimizer: &mut OptimizerState<S>,
    iteration: usize,
    seed: u64,
) -> Result<LossReport> {
    let (mut report, grads_c, grads_f) = batch_gradients(models, batch, config, seed)?;
    report.iteration = iteration;
    report.lr = config.learning_rate(iteration);
    let finite = [report.color_mse_coarse, report.color_mse_fine, report.depth_kl, report.total]
        .iter()
        .all(|v| v.is_finite());
    if !finite || !grads_c.is_finite() || !grads_f.is_finite() {
        let rays: Vec<String> = batch
            .iter()
            .take(8)
            .map(|r| format!("{}:{}:{}", r.source.0, r.source.1, r.source.2))
            .collect();
        return Err(Error::Numeric(format!(
            "non-finite loss or gradient at iteration {iteration} (batch rays {}...)",
            rays.join(",")
        )));
    }
    optimizer.coarse.update(&mut models.coarse, &grads_c, report.lr);
    optimizer.fine.update(&mut models.fine, &grads_f, report.lr);
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub models: FieldPair<f32>,
    pub log: Vec<LogRecord>,
}

/// Runs `config.iterations` steps. `on_step` sees every report as it is
/// produced.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_step: impl FnMut(&LossReport),
) -> Result<TrainOutcome> {
    config.validate()?;
    let data = TrainingData::prepare(dataset, config)?;
    let mut models = FieldPair::<f32>::init(config.arch(), config.seed)?;
    let mut optimizer = OptimizerState::new(&models);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let start = Instant::now();
    let mut log = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let batch = data.sample_batch(config, &mut rng);
        let step_seed = rng.next_u64();
        let report = train_step(&mut models, &batch, config, &mut optimizer, it, step_seed)?;
        on_step(&report);
        log.push(LogRecord::new(&report, start.elapsed().as_millis() as u64));
    }
    Ok(TrainOutcome { models, log })
}
