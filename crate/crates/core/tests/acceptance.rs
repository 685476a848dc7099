//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Pass criterion numbers as arguments to run a subset. Set
//! `RFE_ACCEPTANCE_CACHE` to a directory to reuse trained checkpoints.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfe_core::baseline::{fuse, reproject, splat};
use rfe_core::checkpoint::Checkpoint;
use rfe_core::dataset::{Dataset, RgbdFrame};
use rfe_core::field::{encode, encode_backward, EncodingConfig, FieldArch, FieldInput, FieldModel, FieldPair};
use rfe_core::geometry::{camera_path, Camera, Ray, Vec3};
use rfe_core::metrics::{depth_metrics, psnr, ssim, MetricReport, SSIM_C1};
use rfe_core::oracle::{arc_cameras, OracleScene};
use rfe_core::raster::{DepthMap, RgbImage};
use rfe_core::render::{
    composite, composite_backward, render_view, sample_coarse, RaySampleBatch, RenderGrad,
};
use rfe_core::segment::{segment_view, ResidualMode};
use rfe_core::train::depth::{depth_loss, target_distribution, KL_EPS};
use rfe_core::train::{train, LogRecord, Preset, TrainConfig};

const T_VALUES: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];
const HOLDOUT: &str = "cam2";
const WIDTH: u32 = 64;
const HEIGHT: u32 = 48;

const GRAD_REL_TOL: f64 = 1e-4;
/// Denominator floor for relative errors of near-zero derivatives.
const GRAD_FLOOR: f64 = 1e-6;
const FD_STEP: f64 = 1e-4;

type Outcome = Result<String, String>;

struct Suite {
    only: BTreeSet<u32>,
    failures: Vec<u32>,
}

impl Suite {
    fn wants(&self, id: u32) -> bool {
        self.only.is_empty() || self.only.contains(&id)
    }

    fn report(&mut self, id: u32, name: &str, start: Instant, outcome: Outcome) {
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                self.failures.push(id);
                println!("criterion {id:>2} FAIL {name} ({secs:.1}s): {detail}");
            }
        }
    }
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_FLOOR)
}

/// Five-point central difference.
fn central_difference(f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    central_difference_step(f, x, FD_STEP)
}

fn central_difference_step(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (8.0 * (f(x + h) - f(x - h)) - (f(x + 2.0 * h) - f(x - 2.0 * h))) / (12.0 * h)
}

fn unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let d: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if n > 0.1 {
            return [d[0] / n, d[1] / n, d[2] / n];
        }
    }
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, max_sigma: f64) -> RaySampleBatch {
    let near = rng.gen_range(0.05..1.0);
    let ray = Ray {
        origin: Vec3::zeros(),
        direction: Vec3::z(),
        t_near: near,
        t_far: near + rng.gen_range(0.5..6.0),
    };
    let mut b = RaySampleBatch::for_ray(&ray, sample_coarse(&ray, n, true, rng)).unwrap();
    let sig = (0..n).map(|_| rng.gen_range(0.0..max_sigma)).collect();
    let col = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    b.set_field(sig, col).unwrap();
    b
}

// ---------------------------------------------------------------- criterion 1

fn field_loss(m: &FieldModel<f64>, input: &FieldInput<'_>, ws: &[f64], wc: &[[f64; 3]]) -> f64 {
    let out = m.evaluate(input).unwrap();
    let mut l = 0.0;
    for i in 0..ws.len() {
        l += ws[i] * out.sigma[i];
        for c in 0..3 {
            l += wc[i][c] * out.rgb[i][c];
        }
    }
    l
}

fn field_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = FieldArch {
        width: 8,
        encoding: EncodingConfig { n_freq_pos: 3, n_freq_dir: 2, include_input: true },
        use_time: true,
        skip: seed.is_multiple_of(2),
    };
    let mut model = FieldModel::<f64>::init(arch, seed).unwrap();
    // nonzero biases keep pre-activations off the ReLU kink when a whole
    // layer is inactive
    for layer in &mut model.layers {
        layer.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.2..0.2));
    }
    model.bump_version();
    let n = 5;
    let pos: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(0.0..2.0)]).collect();
    let dir: Vec<[f64; 3]> = (0..n).map(|_| unit(&mut rng)).collect();
    let times: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let ws: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let wc: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
    let input = FieldInput { positions: &pos, directions: &dir, times: &times };

    let (_, cache) = model.forward(&input).unwrap();
    let mut grads = model.zero_grads();
    model.backward(&cache, &ws, &wc, &mut grads).unwrap();

    let mut worst: f64 = 0.0;
    for layer in 0..model.layers.len() {
        let nw = model.layers[layer].weight.len();
        let nb = model.layers[layer].bias.len();
        for _ in 0..4 {
            let k = rng.gen_range(0..nw + nb);
            let analytic = if k < nw { grads.layers[layer].weight[k] } else { grads.layers[layer].bias[k - nw] };
            let x0 = if k < nw { model.layers[layer].weight[k] } else { model.layers[layer].bias[k - nw] };
            let mut probe = model.clone();
            let fd = central_difference(
                |x| {
                    if k < nw {
                        probe.layers[layer].weight[k] = x;
                    } else {
                        probe.layers[layer].bias[k - nw] = x;
                    }
                    field_loss(&probe, &input, &ws, &wc)
                },
                x0,
            );
            worst = worst.max(rel_err(analytic, fd));
        }
    }
    worst
}

fn encoding_gradient_error(rng: &mut ChaCha8Rng) -> f64 {
    let p = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.0..2.5)];
    let n_freq = rng.gen_range(1..=10);
    let upstream: Vec<f64> = (0..3 * (1 + 2 * n_freq)).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let analytic = encode_backward(p, n_freq, true, &upstream);
    let mut worst: f64 = 0.0;
    for axis in 0..3 {
        // the step shrinks with the highest frequency
        let fd = central_difference_step(
            |x| {
                let mut q = p;
                q[axis] = x;
                encode(q, n_freq, true).iter().zip(&upstream).map(|(a, b)| a * b).sum()
            },
            p[axis],
            FD_STEP / (1u32 << (n_freq - 1)) as f64,
        );
        worst = worst.max(rel_err(analytic[axis], fd));
    }
    worst
}

fn composite_gradient_error(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.gen_range(2..24);
    let mut b = random_batch(rng, n, 3.0);
    let res = composite(&mut b).unwrap();
    let g = RenderGrad {
        rgb: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
        depth: rng.gen_range(-1.0..1.0),
        opacity: rng.gen_range(-1.0..1.0),
    };
    let loss = |b: &RaySampleBatch| {
        let mut c = b.clone();
        let r = composite(&mut c).unwrap();
        g.rgb[0] * r.rgb[0] + g.rgb[1] * r.rgb[1] + g.rgb[2] * r.rgb[2] + g.depth * r.depth + g.opacity * r.opacity
    };
    let (d_sigma, d_color) = composite_backward(&b, &res, &g, None);
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let mut probe = b.clone();
        let fd = central_difference(
            |x| {
                probe.sigmas[k] = x;
                loss(&probe)
            },
            b.sigmas[k],
        );
        worst = worst.max(rel_err(d_sigma[k], fd));
        for c in 0..3 {
            let mut probe = b.clone();
            let fd = central_difference(
                |x| {
                    probe.colors[k][c] = x;
                    loss(&probe)
                },
                b.colors[k][c],
            );
            worst = worst.max(rel_err(d_color[k][c], fd));
        }
    }
    worst
}

fn depth_kl_gradient_error(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.gen_range(4..24);
    let mut b = random_batch(rng, n, 2.0);
    composite(&mut b).unwrap();
    let d = rng.gen_range(b.t_near + 0.05..b.t_far - 0.05);
    let sigma_hat = rng.gen_range(0.2..1.5);
    let analytic = depth_loss(&b, d, sigma_hat).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let mut probe = b.clone();
        let fd = central_difference(
            |x| {
                probe.sigmas[k] = x;
                composite(&mut probe).unwrap();
                depth_loss(&probe, d, sigma_hat).unwrap().value
            },
            b.sigmas[k],
        );
        worst = worst.max(rel_err(analytic.d_sigma[k], fd));
    }
    worst
}

fn criterion_1() -> Outcome {
    let field = (0..12).map(field_gradient_error).fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let enc = (0..200).map(|_| encoding_gradient_error(&mut rng)).fold(0.0, f64::max);
    let comp = (0..100).map(|_| composite_gradient_error(&mut rng)).fold(0.0, f64::max);
    let kl = (0..100).map(|_| depth_kl_gradient_error(&mut rng)).fold(0.0, f64::max);
    let worst = field.max(enc).max(comp).max(kl);
    ensure(
        worst < GRAD_REL_TOL,
        format!("max relative error: field {field:.2e}, encoding {enc:.2e}, compositing {comp:.2e}, depth KL {kl:.2e}"),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_identity: f64 = 0.0;
    let mut monotone = true;
    for _ in 0..2000 {
        let n = rng.gen_range(1..96);
        let max_sigma = [0.1, 2.0, 50.0][rng.gen_range(0..3)];
        let mut b = random_batch(&mut rng, n, max_sigma);
        composite(&mut b).unwrap();
        let optical: f64 = b.sigmas.iter().zip(&b.deltas).map(|(s, d)| s * d).sum();
        let sum_w: f64 = b.weights.iter().sum();
        worst_identity = worst_identity.max((1.0 - sum_w - (-optical).exp()).abs());
        monotone &= b.transmittance.windows(2).all(|w| w[1] <= w[0]);
    }
    let mut worst_wall: f64 = 0.0;
    for _ in 0..500 {
        let near = rng.gen_range(0.1..1.0);
        let ray = Ray { origin: Vec3::zeros(), direction: Vec3::z(), t_near: near, t_far: near + 5.0 };
        let n = rng.gen_range(8..64);
        let spacing = 5.0 / n as f64;
        let wall = rng.gen_range(near + 0.5..near + 4.5);
        let depths = sample_coarse(&ray, n, false, &mut rng);
        let sig = depths.iter().map(|&t| if t >= wall { 1e4 } else { 0.0 }).collect();
        let mut b = RaySampleBatch::for_ray(&ray, depths).unwrap();
        b.set_field(sig, vec![[0.5; 3]; n]).unwrap();
        let r = composite(&mut b).unwrap();
        worst_wall = worst_wall.max((r.depth - wall).abs() / spacing);
    }
    ensure(
        worst_identity < 1e-6 && monotone && worst_wall <= 1.0,
        format!(
            "|1 - sum w - exp(-tau)| max {worst_identity:.2e}, transmittance monotone {monotone}, wall error max {worst_wall:.3} spacings"
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

fn one_hot(k: usize) -> RaySampleBatch {
    let mut b = RaySampleBatch::new(0.0, 8.0, (0..8).map(|i| i as f64).collect()).unwrap();
    b.weights = (0..8).map(|i| if i == k { 1.0 } else { 0.0 }).collect();
    b.transmittance = (0..9).map(|i| if i <= k { 1.0 } else { 0.0 }).collect();
    b
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_matched: f64 = 0.0;
    let mut matched_ok = true;
    for _ in 0..500 {
        let n = rng.gen_range(2..64);
        let mut b = random_batch(&mut rng, n, 1.0);
        let d = rng.gen_range(b.t_near + 0.01..b.t_far - 0.01);
        let sigma_hat = rng.gen_range(0.05..2.0);
        b.weights = target_distribution(&b, d, sigma_hat).unwrap();
        let kl = depth_loss(&b, d, sigma_hat).unwrap().value.abs();
        // the epsilon inside the log shifts a perfect match by at most n * eps
        matched_ok &= kl <= n as f64 * KL_EPS;
        worst_matched = worst_matched.max(kl);
    }

    let mut sweep_ok = true;
    let mut cases = 0;
    for j in 0..8usize {
        for frac in [0.1, 0.5, 0.9] {
            let d = j as f64 + frac;
            let losses: Vec<f64> = (0..8).map(|k| depth_loss(&one_hot(k), d, 1.0).unwrap().value).collect();
            for k in j..7 {
                sweep_ok &= losses[k] < losses[k + 1];
            }
            for k in 1..=j {
                sweep_ok &= losses[k] < losses[k - 1];
            }
            cases += 1;
        }
    }
    ensure(
        matched_ok && sweep_ok,
        format!(
            "matched |KL| max {worst_matched:.2e} within n * {KL_EPS:.0e}: {matched_ok}, one-hot sweep strictly increasing in {cases} target positions: {sweep_ok}"
        ),
    )
}

// --------------------------------------------------------- trained models

struct Scene {
    oracle: OracleScene,
    dataset: Dataset,
    train: Dataset,
    held: Vec<RgbdFrame>,
    holdout: Camera,
}

fn scene() -> Scene {
    let oracle = OracleScene::desk();
    let dataset = oracle.render_dataset(&arc_cameras(5, WIDTH, HEIGHT), &T_VALUES, 0.0, 0).unwrap();
    let (train, held) = dataset.split_holdout(HOLDOUT).unwrap();
    let holdout = *dataset.camera(HOLDOUT).unwrap();
    Scene { oracle, dataset, train, held, holdout }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Variant {
    Nerf,
    DsNerf,
    Dynamic,
}

impl Variant {
    fn name(self) -> &'static str {
        match self {
            Variant::Nerf => "nerf",
            Variant::DsNerf => "ds-nerf",
            Variant::Dynamic => "dynamic",
        }
    }

    fn config(self) -> TrainConfig {
        let base = TrainConfig::preset(Preset::Desk);
        match self {
            Variant::Nerf => TrainConfig { use_depth_loss: false, use_time: false, ..base },
            Variant::DsNerf => TrainConfig { use_time: false, ..base },
            Variant::Dynamic => base,
        }
    }
}

struct Trained {
    variant: Variant,
    config: TrainConfig,
    models: FieldPair<f32>,
    log: Vec<LogRecord>,
    reports: Vec<MetricReport>,
}

impl Trained {
    fn mean_psnr(&self) -> f64 {
        self.reports.iter().map(MetricReport::psnr_db).sum::<f64>() / self.reports.len() as f64
    }

    fn mean_depth_err(&self) -> f64 {
        self.reports.iter().map(|r| r.depth_err_pct.unwrap_or(f64::NAN)).sum::<f64>() / self.reports.len() as f64
    }
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os("RFE_ACCEPTANCE_CACHE").map(PathBuf::from)
}

fn train_variant(scene: &Scene, variant: Variant) -> Trained {
    let config = variant.config();
    let cached = cache_dir().map(|d| d.join(format!("{}.ckpt", variant.name())));
    let log_path = cached.as_ref().map(|p| p.with_extension("log.json"));
    let (models, log) = match (&cached, &log_path) {
        (Some(c), Some(l)) if c.exists() && l.exists() => {
            let ck = Checkpoint::load(c).unwrap();
            let log: Vec<LogRecord> = serde_json::from_str(&std::fs::read_to_string(l).unwrap()).unwrap();
            (ck.models, log)
        }
        _ => {
            let start = Instant::now();
            let out = train(&scene.train, &config, |r| {
                if (r.iteration + 1) % 500 == 0 {
                    eprintln!(
                        "  {} iteration {} total {:.5} ({:.0}s)",
                        variant.name(),
                        r.iteration + 1,
                        r.total,
                        start.elapsed().as_secs_f64()
                    );
                }
            })
            .unwrap();
            if let (Some(c), Some(l)) = (&cached, &log_path) {
                std::fs::create_dir_all(c.parent().unwrap()).unwrap();
                checkpoint(&out.models, &config, &scene.dataset).save(c).unwrap();
                std::fs::write(l, serde_json::to_string(&out.log).unwrap()).unwrap();
            }
            (out.models, out.log)
        }
    };
    let mut reports = Vec::new();
    for f in &scene.held {
        let view = render_view(&models, &scene.holdout, f.t, &config.render_config()).unwrap();
        reports.push(MetricReport::compute(HOLDOUT, f.t, &view.rgb, &f.color, &view.depth, &f.depth).unwrap());
    }
    let t = Trained { variant, config, models, log, reports };
    eprintln!(
        "  {}: held-out PSNR {:.2} dB, depth error {:.2}%",
        variant.name(),
        t.mean_psnr(),
        t.mean_depth_err()
    );
    t
}

fn checkpoint(models: &FieldPair<f32>, config: &TrainConfig, dataset: &Dataset) -> Checkpoint {
    Checkpoint {
        models: models.clone(),
        depth_supervised: config.use_depth_loss,
        n_coarse: config.n_coarse,
        n_fine: config.n_fine,
        cameras: dataset.cameras.clone(),
    }
}

fn criterion_4(nerf: &Trained, ds: &Trained, dynamic: &Trained) -> Outcome {
    let (pn, pd, py) = (nerf.mean_psnr(), ds.mean_psnr(), dynamic.mean_psnr());
    let (en, ed) = (nerf.mean_depth_err(), ds.mean_depth_err());
    ensure(
        pd > pn + 1.0 && ed < en / 2.0 && (py - pd).abs() < 1.5,
        format!(
            "PSNR nerf {pn:.2} / ds-nerf {pd:.2} / dynamic {py:.2} dB; depth error nerf {en:.2}% / ds-nerf {ed:.2}%"
        ),
    )
}

fn criterion_5(dynamic: &Trained) -> Outcome {
    let e = dynamic.mean_depth_err();
    let per_t: Vec<String> = dynamic
        .reports
        .iter()
        .map(|r| format!("{:.2}", r.depth_err_pct.unwrap_or(f64::NAN)))
        .collect();
    ensure(e < 5.0, format!("dynamic depth error {e:.2}% (per t: {})", per_t.join(", ")))
}

fn baseline_psnr(scene: &Scene) -> f64 {
    let mut total = 0.0;
    for f in &scene.held {
        let frames: Vec<&RgbdFrame> = scene.train.frames.iter().filter(|g| g.t == f.t).collect();
        let cams: Vec<&Camera> = frames.iter().map(|g| scene.train.camera(&g.camera_id).unwrap()).collect();
        let cloud = fuse(&frames, &cams).unwrap();
        let (rgb, _) = reproject(&cloud, &scene.holdout);
        total += psnr(&rgb, &f.color).unwrap();
    }
    total / scene.held.len() as f64
}

/// Reprojects the fused t = 0 cloud of all five cameras into one of its
/// source cameras. Pixels whose z-buffer winner came from that camera must
/// reproduce it exactly; every other winner must be at least as near.
fn baseline_exact(scene: &Scene) -> (bool, usize) {
    let frames: Vec<&RgbdFrame> = scene.dataset.frames.iter().filter(|f| f.t == 0.0).collect();
    let cams: Vec<&Camera> = frames.iter().map(|f| scene.dataset.camera(&f.camera_id).unwrap()).collect();
    let cloud = fuse(&frames, &cams).unwrap();
    let src = frames.iter().find(|f| f.camera_id == "cam1").unwrap();
    let cam = scene.dataset.camera("cam1").unwrap();
    let (rgb, depth) = reproject(&cloud, cam);
    let mut ok = true;
    let mut exact = 0;
    for (idx, winner) in splat(&cloud, cam).into_iter().enumerate() {
        let (u, v) = (idx as u32 % cam.width, idx as u32 / cam.width);
        let Some(k) = winner else {
            ok = false;
            continue;
        };
        if cloud.sources[k] == "cam1" {
            ok &= rgb.get(u, v) == src.color.get(u, v) && (depth.get(u, v) - src.depth.get(u, v)).abs() < 1e-9;
            exact += 1;
        } else {
            ok &= depth.get(u, v) <= src.depth.get(u, v) + 1e-9;
        }
    }
    (ok && exact > 0, exact)
}

fn criterion_6(scene: &Scene, models: &[&Trained]) -> Outcome {
    let base = baseline_psnr(scene);
    let (exact_ok, exact) = baseline_exact(scene);
    let psnrs: Vec<String> = models.iter().map(|m| format!("{} {:.2}", m.variant.name(), m.mean_psnr())).collect();
    ensure(
        models.iter().all(|m| m.mean_psnr() > base) && exact_ok,
        format!(
            "baseline PSNR {base:.2} dB vs {}; reprojection exact at {exact} source-owned pixels: {exact_ok}",
            psnrs.join(", ")
        ),
    )
}

/// Image-space direction of the mover's motion as seen from `camera`.
fn trajectory_axis(scene: &Scene, camera: &Camera) -> (f64, f64) {
    let c0 = scene.oracle.mover.shape_at(0.0).bounds().center();
    let c1 = scene.oracle.mover.shape_at(1.0).bounds().center();
    let (u0, v0, _) = camera.project_point(&c0).unwrap();
    let (u1, v1, _) = camera.project_point(&c1).unwrap();
    let n = ((u1 - u0).powi(2) + (v1 - v0).powi(2)).sqrt();
    ((u1 - u0) / n, (v1 - v0) / n)
}

/// Position along `axis` of the centroid of strongly red pixels.
fn red_centroid(rgb: &RgbImage, axis: (f64, f64)) -> Option<(f64, usize)> {
    let mut sum = 0.0;
    let mut count = 0;
    for v in 0..rgb.height {
        for u in 0..rgb.width {
            let c = rgb.get(u, v);
            if c[0] - c[1].max(c[2]) > 0.4 {
                sum += u as f64 * axis.0 + v as f64 * axis.1;
                count += 1;
            }
        }
    }
    (count > 0).then(|| (sum / count as f64, count))
}

fn criterion_7(scene: &Scene, dynamic: &Trained) -> Outcome {
    let cam = &scene.holdout;
    let axis = trajectory_axis(scene, cam);
    let mut c = Vec::new();
    for t in [0.0, 0.5, 1.0] {
        let view = render_view(&dynamic.models, cam, t, &dynamic.config.render_config()).unwrap();
        match red_centroid(&view.rgb, axis) {
            Some(x) => c.push(x),
            None => return Err(format!("no mover pixels rendered at t={t}")),
        }
    }
    let (lo, hi) = (c[0].0.min(c[2].0), c[0].0.max(c[2].0));
    ensure(
        lo < c[1].0 && c[1].0 < hi,
        format!(
            "centroid along the trajectory axis: t=0 {:.3} px ({} px), t=0.5 {:.3} px ({} px), t=1 {:.3} px ({} px)",
            c[0].0, c[0].1, c[1].0, c[1].1, c[2].0, c[2].1
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_8(scene: &Scene, dynamic: &Trained) -> Outcome {
    let cam = &scene.holdout;
    let config = dynamic.config.render_config();
    let same = segment_view(&dynamic.models, cam, 2.0, 2.0, &config, ResidualMode::Added).unwrap();
    let mean_same = same.segmented.opacity.iter().sum::<f64>() / same.segmented.opacity.len() as f64;

    let (t_base, t_phase) = (-2.0, 2.0);
    let seg = segment_view(&dynamic.models, cam, t_base, t_phase, &config, ResidualMode::Added).unwrap();
    let (_, _, mask) = scene.oracle.render(cam, t_phase);
    let op = &seg.segmented.opacity;
    let background = median(op.iter().zip(&mask).filter(|(_, &m)| !m).map(|(o, _)| *o).collect());
    let inside: Vec<f64> = op.iter().zip(&mask).filter(|(_, &m)| m).map(|(o, _)| *o).collect();
    let hits = inside.iter().filter(|&&o| o > background + 0.3).count();
    let share = hits as f64 / inside.len().max(1) as f64;
    ensure(
        mean_same < 0.01 && !inside.is_empty() && share >= 0.8,
        format!(
            "t_base = t_phase mean opacity {mean_same:.2e}; t {t_base} -> {t_phase}: {hits}/{} mask pixels above background median {background:.3} + 0.3 ({:.1}%)",
            inside.len(),
            share * 100.0
        ),
    )
}

fn training_curve(dynamic: &Trained) -> Outcome {
    let at = |i: usize| dynamic.log.iter().find(|r| r.iter == i).map(|r| r.total);
    match (at(100), at(2000)) {
        (Some(a), Some(b)) => ensure(b < 0.5 * a, format!("total loss {a:.5} at iteration 100, {b:.5} at iteration 2000")),
        _ => Err("log does not reach iteration 2000".into()),
    }
}

// ---------------------------------------------------------------- criterion 9

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism_run(root: &Path) -> (Vec<(String, Vec<u8>)>, Vec<u8>, Vec<(String, Vec<u8>)>) {
    let data_dir = root.join("scene");
    let ds = OracleScene::desk()
        .write_dataset(&arc_cameras(5, WIDTH, HEIGHT), &T_VALUES, 0.1, 7, &data_dir)
        .unwrap();
    let reloaded = Dataset::load(&data_dir).unwrap();
    assert_eq!(reloaded.frames.len(), ds.frames.len());
    let (train_ds, _) = reloaded.split_holdout(HOLDOUT).unwrap();
    let config = TrainConfig { iterations: 100, seed: 7, ..TrainConfig::preset(Preset::Desk) };
    let out = train(&train_ds, &config, |_| {}).unwrap();
    let ckpt_path = root.join("model.ckpt");
    checkpoint(&out.models, &config, &reloaded).save(&ckpt_path).unwrap();

    let ck = Checkpoint::load(&ckpt_path).unwrap();
    let path = camera_path(ck.camera("cam0").unwrap(), ck.camera("cam2").unwrap(), ck.camera("cam4").unwrap(), 2, false).unwrap();
    let frames_dir = root.join("path");
    std::fs::create_dir_all(&frames_dir).unwrap();
    for (k, cam) in path.iter().enumerate() {
        let view = render_view(&ck.models, cam, 0.5, &config.render_config()).unwrap();
        view.rgb.save_png(&frames_dir.join(format!("frame_{k:04}.png"))).unwrap();
        view.depth.save_png16(&frames_dir.join(format!("depth_{k:04}.png"))).unwrap();
    }
    (
        dir_bytes(&data_dir),
        std::fs::read(&ckpt_path).unwrap(),
        dir_bytes(&frames_dir),
    )
}

fn criterion_9() -> Outcome {
    let a_dir = tempfile::tempdir().unwrap();
    let b_dir = tempfile::tempdir().unwrap();
    let a = determinism_run(a_dir.path());
    let b = determinism_run(b_dir.path());
    let scene_same = a.0 == b.0;
    let train_same = a.1 == b.1;
    let path_same = a.2 == b.2;
    ensure(
        scene_same && train_same && path_same && a.2.len() == 10,
        format!(
            "scene files ({}) identical {scene_same}, 100-iteration checkpoint ({} bytes) identical {train_same}, path files ({}) identical {path_same}",
            a.0.len(),
            a.1.len(),
            a.2.len()
        ),
    )
}

// --------------------------------------------------------------- criterion 10

fn criterion_10() -> Outcome {
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failed.push(name.to_string());
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let noise = RgbImage {
        width: 16,
        height: 12,
        data: (0..16 * 12).map(|_| [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)]).collect(),
    };
    check("psnr identical", psnr(&noise, &noise).unwrap() == f64::INFINITY);
    let zeros = RgbImage::filled(16, 12, [0.0; 3]);
    let ones = RgbImage::filled(16, 12, [1.0; 3]);
    check("psnr 0 vs 1", psnr(&zeros, &ones).unwrap() == 0.0);
    let shifted = RgbImage {
        width: 16,
        height: 12,
        data: noise.data.iter().enumerate().map(|(k, p)| {
            let s = if k % 2 == 0 { 0.1 } else { -0.1 };
            [p[0] + s, p[1] - s, p[2] + s]
        }).collect(),
    };
    check("psnr 20 dB", (psnr(&shifted, &noise).unwrap() - 20.0).abs() < 1e-9);
    check("ssim identical", (ssim(&noise, &noise).unwrap() - 1.0).abs() < 1e-12);
    let checker = RgbImage {
        width: 20,
        height: 20,
        data: (0..400).map(|k| if (k % 20 + k / 20) % 2 == 0 { [1.0; 3] } else { [0.0; 3] }).collect(),
    };
    let negative = RgbImage {
        width: 20,
        height: 20,
        data: checker.data.iter().map(|p| [1.0 - p[0], 1.0 - p[1], 1.0 - p[2]]).collect(),
    };
    check("ssim negative", ssim(&checker, &negative).unwrap() < 0.0);
    for (a, b) in [(0.2, 0.7), (0.0, 0.5), (0.45, 0.95)] {
        let want = (2.0 * a * b + SSIM_C1) / (a * a + b * b + SSIM_C1);
        let got = ssim(&RgbImage::filled(12, 12, [a; 3]), &RgbImage::filled(12, 12, [b; 3])).unwrap();
        check("ssim constant closed form", (got - want).abs() < 1e-12);
    }
    let gt = DepthMap { width: 4, height: 3, data: vec![2.0; 12] };
    let same = depth_metrics(&gt, &gt).unwrap().unwrap();
    check("depth identical", same.mae_cm == 0.0 && same.err_pct == 0.0);
    let off = depth_metrics(&DepthMap { width: 4, height: 3, data: vec![2.1; 12] }, &gt).unwrap().unwrap();
    check("depth 10 cm 5%", (off.mae_cm - 10.0).abs() < 1e-9 && (off.err_pct - 5.0).abs() < 1e-9);
    let mut holes = gt.clone();
    holes.data[3] = 0.0;
    holes.data[7] = 0.0;
    let pred = DepthMap { width: 4, height: 3, data: (0..12).map(|k| 1.0 + k as f64 * 0.25).collect() };
    let m = depth_metrics(&pred, &holes).unwrap().unwrap();
    let kept: Vec<f64> = (0..12).filter(|k| *k != 3 && *k != 7).map(|k| pred.data[k]).collect();
    let mae = kept.iter().map(|p| (p - 2.0).abs()).sum::<f64>() / 10.0 * 100.0;
    check("depth mask", m.n_valid == 10 && (m.mae_cm - mae).abs() < 1e-9 && (m.err_pct - mae / 2.0).abs() < 1e-9);
    check("depth empty", depth_metrics(&gt, &DepthMap::new(4, 3)).unwrap().is_none());
    ensure(
        failed.is_empty(),
        if failed.is_empty() { "all closed-form cases hold".into() } else { format!("failed: {}", failed.join(", ")) },
    )
}

fn main() -> ExitCode {
    let only: BTreeSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut suite = Suite { only, failures: Vec::new() };
    let fast: [(u32, &str, fn() -> Outcome); 4] = [
        (1, "gradient integrity", criterion_1),
        (2, "rendering identities", criterion_2),
        (3, "depth loss", criterion_3),
        (10, "metric closed forms", criterion_10),
    ];
    for (id, name, f) in fast {
        if suite.wants(id) {
            let start = Instant::now();
            let outcome = f();
            suite.report(id, name, start, outcome);
        }
    }
    if suite.wants(9) {
        let start = Instant::now();
        let outcome = criterion_9();
        suite.report(9, "determinism", start, outcome);
    }
    if (4..=8).any(|id| suite.wants(id)) {
        let start = Instant::now();
        let scene = scene();
        let needs_static = suite.wants(4) || suite.wants(6);
        let nerf = needs_static.then(|| train_variant(&scene, Variant::Nerf));
        let ds = needs_static.then(|| train_variant(&scene, Variant::DsNerf));
        let dynamic = train_variant(&scene, Variant::Dynamic);
        if let (Some(nerf), Some(ds)) = (&nerf, &ds) {
            if suite.wants(4) {
                suite.report(4, "ablation ordering", start, criterion_4(nerf, ds, &dynamic));
            }
            if suite.wants(6) {
                let t = Instant::now();
                suite.report(6, "baseline ordering", t, criterion_6(&scene, &[nerf, ds, &dynamic]));
            }
        }
        if suite.wants(5) {
            suite.report(5, "depth accuracy", start, criterion_5(&dynamic));
        }
        if suite.wants(7) {
            let t = Instant::now();
            suite.report(7, "time interpolation", t, criterion_7(&scene, &dynamic));
        }
        if suite.wants(8) {
            let t = Instant::now();
            suite.report(8, "segmentation", t, criterion_8(&scene, &dynamic));
        }
        let t = Instant::now();
        let outcome = training_curve(&dynamic);
        match outcome {
            Ok(d) => println!("supplement   PASS training curve ({:.1}s): {d}", t.elapsed().as_secs_f64()),
            Err(d) => {
                println!("supplement   FAIL training curve: {d}");
                suite.failures.push(0);
            }
        }
    }
    if suite.failures.is_empty() {
        println!("acceptance: all selected criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {:?}", suite.failures);
        ExitCode::FAILURE
    }
}
