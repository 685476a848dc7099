//! Segmentation of changed matter by subtracting a base-time density field
//! from a phase-time density field at identical sample locations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::FieldPair;
use crate::geometry::{Camera, Ray};
use crate::raster::{DepthMap, RgbImage};
use crate::real::Real;
use crate::render::{
    composite, merge_depths, run_pass, sample_coarse, sample_fine, RaySampleBatch, RenderConfig,
    RenderResult, RenderedView,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualMode {
    /// `max(sigma_phase - sigma_base, 0)` with phase colors: matter present
    /// at the phase but not at the base time.
    #[default]
    Added,
    /// `max(sigma_base - sigma_phase, 0)` with base colors: matter that
    /// disappeared. Together with `Added` this shows the signed residual.
    Removed,
}

/// Residual densities for one ray.
pub fn residual_densities(phase: &[f64], base: &[f64], mode: ResidualMode) -> Vec<f64> {
    phase
        .iter()
        .zip(base)
        .map(|(&p, &b)| match mode {
            ResidualMode::Added => (p - b).max(0.0),
            ResidualMode::Removed => (b - p).max(0.0),
        })
        .collect()
}

/// Fine-pass renderings of one ray at the phase time, at the base time, and
/// of the residual, all on the same sample depths.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SegmentedPixel {
    pub segmented: RenderResult,
    pub phase: RenderResult,
    pub base: RenderResult,
}

/// Samples are placed from the phase-time coarse pass (midpoints and
/// midpoint quantiles), then the fine model is evaluated at both times.
pub fn segment_rays<S: Real>(
    models: &FieldPair<S>,
    rays: &[Ray],
    t_base: f64,
    t_phase: f64,
    config: &RenderConfig,
    mode: ResidualMode,
) -> Result<Vec<SegmentedPixel>> {
    let mut out = Vec::with_capacity(rays.len());
    for chunk in rays.chunks(config.chunk_rays.max(1)) {
        let phase_t = vec![t_phase; chunk.len()];
        let base_t = vec![t_base; chunk.len()];
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let coarse_depths = chunk
            .iter()
            .map(|r| sample_coarse(r, config.n_coarse, false, &mut rng))
            .collect();
        let coarse = run_pass(&models.coarse, chunk, &phase_t, coarse_depths, false)?;
        let depths: Vec<Vec<f64>> = coarse
            .samples
            .iter()
            .map(|s| {
                let extra = sample_fine::<rand::rngs::mock::StepRng>(s, config.n_fine, None);
                merge_depths(&s.depths, &extra)
            })
            .collect();
        let phase = run_pass(&models.fine, chunk, &phase_t, depths.clone(), false)?;
        let base = run_pass(&models.fine, chunk, &base_t, depths, false)?;
        for k in 0..chunk.len() {
            let (p, b) = (&phase.samples[k], &base.samples[k]);
            let mut seg: RaySampleBatch = p.clone();
            seg.sigmas = residual_densities(&p.sigmas, &b.sigmas, mode);
            if mode == ResidualMode::Removed {
                seg.colors = b.colors.clone();
            }
            out.push(SegmentedPixel {
                segmented: composite(&mut seg)?,
                phase: phase.results[k],
                base: base.results[k],
            });
        }
    }
    Ok(out)
}

/// Segmented rendering of a single ray.
pub fn render_segmented<S: Real>(
    models: &FieldPair<S>,
    ray: &Ray,
    t_base: f64,
    t_phase: f64,
    config: &RenderConfig,
) -> Result<RenderResult> {
    Ok(segment_rays(models, std::slice::from_ref(ray), t_base, t_phase, config, ResidualMode::Added)?[0]
        .segmented)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentedView {
    pub segmented: RenderedView,
    pub phase: RenderedView,
    pub base: RenderedView,
}

/// [`segment_rays`] over every pixel of `camera`.
pub fn segment_view<S: Real>(
    models: &FieldPair<S>,
    camera: &Camera,
    t_base: f64,
    t_phase: f64,
    config: &RenderConfig,
    mode: ResidualMode,
) -> Result<SegmentedView> {
    let (w, h) = (camera.width, camera.height);
    let pixels: Vec<(u32, u32)> = (0..h).flat_map(|j| (0..w).map(move |i| (i, j))).collect();
    let parts: Vec<Result<Vec<SegmentedPixel>>> = pixels
        .par_chunks(config.chunk_rays.max(1))
        .map(|px| {
            let rays: Vec<Ray> = px.iter().map(|&(i, j)| camera.pixel_ray(i, j)).collect();
            segment_rays(models, &rays, t_base, t_phase, config, mode)
        })
        .collect();
    let blank = || RenderedView {
        rgb: RgbImage::new(w, h),
        depth: DepthMap::new(w, h),
        opacity: vec![0.0; pixels.len()],
    };
    let mut view = SegmentedView {
        segmented: blank(),
        phase: blank(),
        base: blank(),
    };
    let mut k = 0;
    for part in parts {
        for px in part? {
            let (i, j) = pixels[k];
            let scale = camera.ray_length_per_depth(i, j);
            for (dst, r) in [
                (&mut view.segmented, px.segmented),
                (&mut view.phase, px.phase),
                (&mut view.base, px.base),
            ] {
                dst.rgb.set(i, j, r.rgb);
                dst.depth.set(i, j, r.depth / scale);
                dst.opacity[k] = r.opacity;
            }
            k += 1;
        }
    }
    Ok(view)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_arithmetic() {
        assert_eq!(residual_densities(&[5.0, 1.0], &[2.0, 2.0], ResidualMode::Added), vec![3.0, 0.0]);
        assert_eq!(residual_densities(&[5.0, 1.0], &[2.0, 2.0], ResidualMode::Removed), vec![0.0, 1.0]);
    }
}
