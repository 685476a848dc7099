//! Depth keypoints and the KL depth-supervision loss.

use rand::seq::index;
use rand::Rng;

use crate::dataset::RgbdFrame;
use crate::render::{weights_backward, RaySampleBatch};

/// Added to every weight before taking logs.
pub const KL_EPS: f64 = 1e-8;

/// A pixel with a measured depth, used to supervise the ray termination
/// distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthKeypoint {
    pub frame: usize,
    pub u: u32,
    pub v: u32,
    /// Measured camera-frame depth in meters.
    pub depth: f64,
    /// Standard deviation of the target distribution in meters.
    pub sigma_hat: f64,
}

/// Draws `min(n, valid)` keypoints uniformly without replacement from the
/// pixels of `frame` whose depth is positive.
pub fn select_depth_keypoints<R: Rng + ?Sized>(
    frame: &RgbdFrame,
    frame_index: usize,
    n: usize,
    sigma_hat: f64,
    rng: &mut R,
) -> Vec<DepthKeypoint> {
    let valid: Vec<usize> = frame
        .depth
        .data
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > 0.0)
        .map(|(k, _)| k)
        .collect();
    let chosen: Vec<usize> = if n >= valid.len() {
        valid
    } else {
        let mut picks: Vec<usize> = index::sample(rng, valid.len(), n)
            .into_iter()
            .map(|i| valid[i])
            .collect();
        picks.sort_unstable();
        picks
    };
    let w = frame.depth.width as usize;
    chosen
        .into_iter()
        .map(|k| DepthKeypoint {
            frame: frame_index,
            u: (k % w) as u32,
            v: (k / w) as u32,
            depth: frame.depth.data[k],
            sigma_hat,
        })
        .collect()
}

/// Probability mass of `Normal(mean, std^2)` on `[a, b]`, accurate in both tails.
pub fn normal_interval_mass(a: f64, b: f64, mean: f64, std: f64) -> f64 {
    let s = std * std::f64::consts::SQRT_2;
    let za = (a - mean) / s;
    let zb = (b - mean) / s;
    let m = if za >= 0.0 {
        0.5 * (libm::erfc(za) - libm::erfc(zb))
    } else if zb <= 0.0 {
        0.5 * (libm::erfc(-zb) - libm::erfc(-za))
    } else {
        1.0 - 0.5 * libm::erfc(zb) - 0.5 * libm::erfc(-za)
    };
    m.max(0.0)
}

/// Discretized target distribution: Gaussian mass over each sample interval,
/// renormalized over the intervals. `None` when no mass falls on the ray.
pub fn target_distribution(samples: &RaySampleBatch, depth: f64, sigma_hat: f64) -> Option<Vec<f64>> {
    let mut p: Vec<f64> = (0..samples.len())
        .map(|k| normal_interval_mass(samples.depths[k], samples.interval_end(k), depth, sigma_hat))
        .collect();
    let total: f64 = p.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    p.iter_mut().for_each(|v| *v /= total);
    Some(p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthLoss {
    pub value: f64,
    /// Gradient w.r.t. the compositing weights.
    pub d_weights: Vec<f64>,
    /// Gradient w.r.t. the densities (through the weights).
    pub d_sigma: Vec<f64>,
}

/// `KL(target || h)` where `target` is the discretized Gaussian around the
/// measured ray distance `depth` and `h_k = w_k + KL_EPS` are the ray's
/// compositing weights.
///
/// Returns `None` (keypoint skipped) when `depth` lies outside the ray's range.
/// The epsilon shifts the minimum below zero by at most `n * KL_EPS`.
pub fn depth_loss(samples: &RaySampleBatch, depth: f64, sigma_hat: f64) -> Option<DepthLoss> {
    if !(depth > samples.t_near && depth < samples.t_far) || !(sigma_hat > 0.0) {
        return None;
    }
    let p = target_distribution(samples, depth, sigma_hat)?;
    let mut value = 0.0;
    let mut d_weights = vec![0.0; p.len()];
    for (k, &pk) in p.iter().enumerate() {
        if pk > 0.0 {
            let h = samples.weights[k] + KL_EPS;
            value += pk * (pk.ln() - h.ln());
            d_weights[k] = -pk / h;
        }
    }
    let d_sigma = weights_backward(samples, &d_weights);
    Some(DepthLoss {
        value,
        d_weights,
        d_sigma,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::raster::{DepthMap, RgbImage};
    use crate::render::composite;

    fn frame(depth: Vec<f64>, w: u32, h: u32) -> RgbdFrame {
        RgbdFrame {
            camera_id: "c".into(),
            t: 0.0,
            color: RgbImage::new(w, h),
            depth: DepthMap {
                width: w,
                height: h,
                data: depth,
            },
        }
    }

    #[test]
    fn no_valid_pixels_gives_no_keypoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(select_depth_keypoints(&frame(vec![0.0; 12], 4, 3), 0, 5, 1.0, &mut rng).is_empty());
    }

    #[test]
    fn asking_for_everything_returns_the_valid_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = vec![0.0, 1.0, 0.0, 2.0, 3.0, 0.0];
        let kps = select_depth_keypoints(&frame(d, 3, 2), 4, 10, 1.0, &mut rng);
        let px: Vec<(u32, u32)> = kps.iter().map(|k| (k.u, k.v)).collect();
        assert_eq!(px, vec![(1, 0), (0, 1), (1, 1)]);
        assert!(kps.iter().all(|k| k.frame == 4 && k.sigma_hat == 1.0 && k.depth > 0.0));
    }

    #[test]
    fn subset_is_distinct_and_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d: Vec<f64> = (0..100).map(|k| if k % 3 == 0 { 0.0 } else { 1.5 }).collect();
        let kps = select_depth_keypoints(&frame(d, 10, 10), 0, 20, 1.0, &mut rng);
        assert_eq!(kps.len(), 20);
        let mut idx: Vec<u32> = kps.iter().map(|k| k.v * 10 + k.u).collect();
        idx.dedup();
        assert_eq!(idx.len(), 20);
        assert!(idx.iter().all(|k| k % 3 != 0));
    }

    #[test]
    fn interval_mass_is_symmetric_and_normalized() {
        assert!((normal_interval_mass(-1e3, 1e3, 0.2, 0.7) - 1.0).abs() < 1e-15);
        let a = normal_interval_mass(1.0, 2.0, 0.0, 1.0);
        let b = normal_interval_mass(-2.0, -1.0, 0.0, 1.0);
        assert!((a - b).abs() < 1e-16);
        assert!((a - 0.1359051219832778).abs() < 1e-12);
        // far tail keeps relative precision
        let tail = normal_interval_mass(10.0, 11.0, 0.0, 1.0);
        assert!(tail > 7e-24 && tail < 8e-24);
    }

    fn eight_sample_ray() -> RaySampleBatch {
        RaySampleBatch::new(0.0, 8.0, (0..8).map(|k| k as f64).collect()).unwrap()
    }

    #[test]
    fn matched_distribution_has_zero_loss() {
        let mut b = eight_sample_ray();
        let p = target_distribution(&b, 3.5, 1.2).unwrap();
        b.weights = p;
        let l = depth_loss(&b, 3.5, 1.2).unwrap();
        assert!(l.value.abs() < 1e-6, "{}", l.value);
        assert!(l.value >= -8.0 * KL_EPS);
    }

    #[test]
    fn out_of_range_depth_is_skipped() {
        let b = eight_sample_ray();
        assert!(depth_loss(&b, 9.0, 1.0).is_none());
        assert!(depth_loss(&b, 0.0, 1.0).is_none());
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let n = 16;
            let mut depths: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..6.0)).collect();
            depths.sort_by(f64::total_cmp);
            let mut b = RaySampleBatch::new(0.1, 6.0, depths).unwrap();
            let sig: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
            b.set_field(sig, vec![[0.0; 3]; n]).unwrap();
            composite(&mut b).unwrap();
            let d = rng.gen_range(1.0..5.0);
            let sh = rng.gen_range(0.2..1.5);
            let l = depth_loss(&b, d, sh).unwrap();
            let h = 1e-6;
            for k in 0..n {
                let eval = |delta: f64| {
                    let mut c = b.clone();
                    c.sigmas[k] += delta;
                    composite(&mut c).unwrap();
                    depth_loss(&c, d, sh).unwrap().value
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let err = (fd - l.d_sigma[k]).abs();
                assert!(err < 1e-7 + 1e-4 * fd.abs(), "{k}: {fd} vs {}", l.d_sigma[k]);
            }
        }
    }
}
