use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rfe_core::checkpoint::Checkpoint;
use rfe_core::dataset::Dataset;
use rfe_core::field::FieldPair;
use rfe_core::oracle::{arc_cameras, OracleScene};
use rfe_core::raster::RgbImage;
use rfe_core::train::{batch_gradients, train, Preset, TrainConfig, TrainingData};

fn small_dataset(dropout: f64) -> Dataset {
    OracleScene::desk()
        .render_dataset(&arc_cameras(3, 16, 12), &[0.0, 1.0], dropout, 5)
        .unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        width: 16,
        rays_per_batch: 64,
        n_coarse: 8,
        n_fine: 8,
        iterations: 4,
        keypoints_per_image: 50,
        chunk_rays: 16,
        t_values: vec![],
        ..TrainConfig::preset(Preset::Desk)
    }
}

#[test]
fn zero_lambda_matches_the_pure_color_gradient() {
    let ds = small_dataset(0.0);
    let cfg = small_config();
    let data = TrainingData::prepare(&ds, &cfg).unwrap();
    let batch = data.sample_batch(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
    assert!(batch.iter().filter(|r| r.depth.is_some()).count() >= 16);
    let models = FieldPair::<f32>::init(cfg.arch(), 3).unwrap();
    let zero = TrainConfig { lambda_depth: 0.0, ..cfg.clone() };
    let off = TrainConfig { use_depth_loss: false, ..cfg.clone() };
    let (ra, ca, fa) = batch_gradients(&models, &batch, &zero, 9).unwrap();
    let (rb, cb, fb) = batch_gradients(&models, &batch, &off, 9).unwrap();
    assert_eq!((&ca, &fa), (&cb, &fb));
    assert!(ra.depth_kl > 0.0, "depth KL is still reported");
    assert_eq!(ra.total, ra.color_mse_coarse + ra.color_mse_fine);
    assert_eq!(ra.total, rb.total);
    let (rc, cc, _) = batch_gradients(&models, &batch, &cfg, 9).unwrap();
    assert!((rc.total - ra.total - 0.1 * rc.depth_kl).abs() < 1e-12);
    assert_ne!(cc, cb);
}

#[test]
fn perfect_model_has_zero_color_error() {
    let mut ds = small_dataset(0.0);
    for f in &mut ds.frames {
        f.color = RgbImage::filled(16, 12, [0.5; 3]);
    }
    let cfg = small_config();
    // zero weights give gray 0.5 everywhere; a huge density bias makes every
    // ray opaque at its first sample
    let mut models = FieldPair::<f32>::init(cfg.arch(), 0).unwrap();
    for m in [&mut models.coarse, &mut models.fine] {
        for layer in m.layers.iter_mut() {
            layer.weight.iter_mut().for_each(|w| *w = 0.0);
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        m.density_head_mut().bias[0] = 1000.0;
        m.bump_version();
    }
    let data = TrainingData::prepare(&ds, &cfg).unwrap();
    let batch = data.sample_batch(&cfg, &mut ChaCha8Rng::seed_from_u64(2));
    let (r, _, _) = batch_gradients(&models, &batch, &cfg, 0).unwrap();
    assert!(r.color_mse_coarse < 1e-20 && r.color_mse_fine < 1e-20, "{r:?}");
}

#[test]
fn zero_iterations_return_the_initialization() {
    let ds = small_dataset(0.0);
    let cfg = TrainConfig { iterations: 0, ..small_config() };
    let out = train(&ds, &cfg, |_| {}).unwrap();
    assert_eq!(out.models, FieldPair::init(cfg.arch(), cfg.seed).unwrap());
    assert!(out.log.is_empty());
}

#[test]
fn training_leaves_the_dataset_alone_and_is_deterministic() {
    let ds = small_dataset(0.2);
    let before = ds.clone();
    let cfg = small_config();
    let a = train(&ds, &cfg, |_| {}).unwrap();
    assert_eq!(ds, before);
    let b = train(&ds, &cfg, |_| {}).unwrap();
    assert_eq!(a.models, b.models);
    let ck = |m: FieldPair<f32>| Checkpoint {
        models: m,
        depth_supervised: true,
        n_coarse: 8,
        n_fine: 8,
        cameras: ds.cameras.clone(),
    }
    .to_bytes();
    assert_eq!(ck(a.models), ck(b.models));
    let totals: Vec<f64> = a.log.iter().map(|r| r.total).collect();
    assert_eq!(totals, b.log.iter().map(|r| r.total).collect::<Vec<_>>());
    assert!(totals.iter().all(|t| t.is_finite() && *t >= 0.0));
}

#[test]
fn zero_depth_pixels_never_become_keypoints() {
    let ds = small_dataset(0.5);
    let cfg = small_config();
    let data = TrainingData::prepare(&ds, &cfg).unwrap();
    assert!(data.keypoints.iter().all(|k| k.depth > 0.0));
    for kp in &data.keypoints {
        assert!(data.frames[kp.frame].frame.depth.get(kp.u, kp.v) > 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        for r in data.sample_batch(&cfg, &mut rng) {
            if let Some((d, _)) = r.depth {
                assert!(d > 0.0);
            }
        }
    }
}

#[test]
fn static_model_equals_a_dynamic_model_on_time_zero_data() {
    let ds = small_dataset(0.0);
    let mut flat = ds.clone();
    flat.frames.iter_mut().for_each(|f| f.t = 0.0);
    let stat = TrainConfig { use_time: false, ..small_config() };
    let dynamic = TrainConfig { use_time: true, ..small_config() };
    let a = train(&ds, &stat, |_| {}).unwrap();
    let b = train(&flat, &dynamic, |_| {}).unwrap();
    let bytes = |m: FieldPair<f32>| {
        Checkpoint { models: m, depth_supervised: true, n_coarse: 8, n_fine: 8, cameras: vec![] }.to_bytes()
    };
    let (x, y) = (bytes(a.models), bytes(b.models));
    let diff: Vec<usize> = (0..x.len()).filter(|&i| x[i] != y[i]).collect();
    // only the flags word (bytes 24..28) differs
    assert_eq!(diff, vec![24]);
}
