//! Image and depth quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{DepthMap, RgbImage};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn same_shape(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Shape(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Mean squared error over all pixels and channels.
pub fn mse(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    same_shape(pred, gt)?;
    let n = (pred.data.len() * 3) as f64;
    let sum: f64 = pred
        .data
        .iter()
        .zip(&gt.data)
        .flat_map(|(p, g)| (0..3).map(move |c| (p[c] - g[c]).powi(2)))
        .sum();
    Ok(sum / n)
}

/// Peak signal-to-noise ratio for peak value 1; `f64::INFINITY` for identical
/// images.
pub fn psnr(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    let m = mse(pred, gt)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * m.log10()
    })
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - c;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filter keeping only fully covered ("valid") positions.
fn filter_valid(x: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = (0..SSIM_WINDOW).map(|i| k[i] * x[y * w + x0 + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y0 + i) * ow + x0]).sum();
        }
    }
    out
}

/// Single-scale SSIM: 11 x 11 Gaussian window (sigma 1.5), valid positions
/// only, mean over positions and channels.
pub fn ssim(pred: &RgbImage, gt: &RgbImage) -> Result<f64> {
    same_shape(pred, gt)?;
    let (w, h) = (pred.width as usize, pred.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let k = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let a: Vec<f64> = pred.data.iter().map(|p| p[c]).collect();
        let b: Vec<f64> = gt.data.iter().map(|p| p[c]).collect();
        let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
        let mu_a = filter_valid(&a, w, h, &k);
        let mu_b = filter_valid(&b, w, h, &k);
        let aa = filter_valid(&prod(&a, &a), w, h, &k);
        let bb = filter_valid(&prod(&b, &b), w, h, &k);
        let ab = filter_valid(&prod(&a, &b), w, h, &k);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub mae_cm: f64,
    pub err_pct: f64,
    pub n_valid: usize,
}

/// Depth errors over pixels whose ground truth is positive. `Ok(None)` when
/// there are no such pixels.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<Option<DepthMetrics>> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::Shape("depth map sizes differ".into()));
    }
    Ok(depth_metrics_slices(&pred.data, &gt.data))
}

/// [`depth_metrics`] over flat arrays.
pub fn depth_metrics_slices(pred: &[f64], gt: &[f64]) -> Option<DepthMetrics> {
    let (mut abs, mut rel, mut n) = (0.0, 0.0, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        if g > 0.0 {
            let e = (p - g).abs();
            abs += e;
            rel += e / g;
            n += 1;
        }
    }
    (n > 0).then(|| DepthMetrics {
        mae_cm: 100.0 * abs / n as f64,
        err_pct: 100.0 * rel / n as f64,
        n_valid: n,
    })
}

/// One evaluation record. `psnr` is `None` for identical images and the
/// depth fields are `None` when no ground-truth depth is valid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub phase: f64,
    pub camera_id: String,
    pub psnr: Option<f64>,
    pub ssim: f64,
    pub lpips: Option<f64>,
    pub depth_mae_cm: Option<f64>,
    pub depth_err_pct: Option<f64>,
    pub n_valid_depth_pixels: usize,
}

impl MetricReport {
    pub fn compute(
        camera_id: &str,
        phase: f64,
        pred_rgb: &RgbImage,
        gt_rgb: &RgbImage,
        pred_depth: &DepthMap,
        gt_depth: &DepthMap,
    ) -> Result<Self> {
        let p = psnr(pred_rgb, gt_rgb)?;
        let s = ssim(pred_rgb, gt_rgb)?;
        let d = depth_metrics(pred_depth, gt_depth)?;
        Ok(MetricReport {
            phase,
            camera_id: camera_id.to_string(),
            psnr: p.is_finite().then_some(p),
            ssim: s,
            lpips: None,
            depth_mae_cm: d.map(|d| d.mae_cm),
            depth_err_pct: d.map(|d| d.err_pct),
            n_valid_depth_pixels: d.map_or(0, |d| d.n_valid),
        })
    }

    /// PSNR with identical images mapped back to infinity.
    pub fn psnr_db(&self) -> f64 {
        self.psnr.unwrap_or(f64::INFINITY)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
