//! Naive RGB-D baseline: fuse training frames into one colored point cloud
//! and splat it into another camera with a z-buffer.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::RgbdFrame;
use crate::error::{Error, Result};
use crate::geometry::{Camera, Vec3};
use crate::raster::{DepthMap, RgbImage};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColoredPointCloud {
    pub points: Vec<Vec3>,
    pub colors: Vec<[f64; 3]>,
    /// Camera id of the frame each point came from.
    pub sources: Vec<String>,
}

impl ColoredPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// ASCII PLY with `x y z` floats and `r g b` bytes.
    pub fn write_ply(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        s.push_str("ply\nformat ascii 1.0\n");
        let _ = writeln!(s, "element vertex {}", self.len());
        s.push_str("property float x\nproperty float y\nproperty float z\n");
        s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
        for (p, c) in self.points.iter().zip(&self.colors) {
            let b = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            let _ = writeln!(s, "{} {} {} {} {} {}", p.x, p.y, p.z, b(c[0]), b(c[1]), b(c[2]));
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// One world-space point per pixel with positive depth.
pub fn fuse(frames: &[&RgbdFrame], cameras: &[&Camera]) -> Result<ColoredPointCloud> {
    if frames.len() != cameras.len() {
        return Err(Error::Validation(format!(
            "{} frames but {} cameras",
            frames.len(),
            cameras.len()
        )));
    }
    let parts: Vec<(Vec<Vec3>, Vec<[f64; 3]>, String)> = frames
        .par_iter()
        .zip(cameras.par_iter())
        .map(|(f, cam)| {
            let mut pts = Vec::new();
            let mut cols = Vec::new();
            for v in 0..f.depth.height {
                for u in 0..f.depth.width {
                    let z = f.depth.get(u, v);
                    if z > 0.0 {
                        pts.push(cam.unproject(u, v, z));
                        cols.push(f.color.get(u, v));
                    }
                }
            }
            (pts, cols, f.camera_id.clone())
        })
        .collect();
    for (f, cam) in frames.iter().zip(cameras) {
        if (f.depth.width, f.depth.height) != (cam.width, cam.height) {
            return Err(Error::Validation(format!(
                "frame of camera '{}' does not match its camera resolution",
                f.camera_id
            )));
        }
    }
    let mut cloud = ColoredPointCloud::default();
    for (pts, cols, id) in parts {
        cloud.sources.extend(std::iter::repeat_n(id, pts.len()));
        cloud.points.extend(pts);
        cloud.colors.extend(cols);
    }
    Ok(cloud)
}

/// Index of the winning point for every pixel of `camera`: each point lands
/// in the pixel containing its projection and the smallest camera depth wins
/// (ties keep the earlier point).
pub fn splat(cloud: &ColoredPointCloud, camera: &Camera) -> Vec<Option<usize>> {
    let (w, h) = (camera.width, camera.height);
    let mut best = vec![(f64::INFINITY, None); (w * h) as usize];
    for (k, p) in cloud.points.iter().enumerate() {
        let Ok((u, v, z)) = camera.project_point(p) else {
            continue;
        };
        let (iu, iv) = (u.round(), v.round());
        if iu < 0.0 || iv < 0.0 || iu >= w as f64 || iv >= h as f64 {
            continue;
        }
        let idx = iv as usize * w as usize + iu as usize;
        if z < best[idx].0 {
            best[idx] = (z, Some(k));
        }
    }
    best.into_iter().map(|(_, k)| k).collect()
}

/// Z-buffered 1-pixel splatting of `cloud` into `camera`. Uncovered pixels
/// stay black with depth 0.
pub fn reproject(cloud: &ColoredPointCloud, camera: &Camera) -> (RgbImage, DepthMap) {
    let (w, h) = (camera.width, camera.height);
    let mut rgb = RgbImage::new(w, h);
    let mut depth = DepthMap::new(w, h);
    for (idx, winner) in splat(cloud, camera).into_iter().enumerate() {
        if let Some(k) = winner {
            let (u, v) = (idx as u32 % w, idx as u32 / w);
            let z = camera.pose.inverse_transform_point(&cloud.points[k]).z;
            rgb.set(u, v, cloud.colors[k]);
            depth.set(u, v, z);
        }
    }
    (rgb, depth)
}

/// Share of pixels that received a point.
pub fn coverage(depth: &DepthMap) -> f64 {
    depth.valid_count() as f64 / depth.data.len() as f64
}
