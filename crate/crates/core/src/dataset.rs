//! Multi-view RGB-D dataset directory: `manifest.json` plus 8-bit color PNGs and
//! 16-bit millimeter depth PNGs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Pose};
use crate::raster::{DepthMap, RgbImage};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: u32,
    pub h: u32,
    pub near: f64,
    pub far: f64,
    /// Row-major world-from-camera `[R | p]`.
    pub pose_3x4: [f64; 12],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub camera_id: String,
    pub t: f64,
    pub color: String,
    pub depth: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scene_units: String,
    pub cameras: Vec<CameraRecord>,
    pub frames: Vec<FrameRecord>,
}

impl CameraRecord {
    pub fn from_camera(id: &str, cam: &Camera) -> Self {
        CameraRecord {
            id: id.to_string(),
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            w: cam.width,
            h: cam.height,
            near: cam.near,
            far: cam.far,
            pose_3x4: cam.pose.to_rows(),
        }
    }

    pub fn camera(&self) -> Camera {
        Camera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            pose: Pose::from_rows(&self.pose_3x4),
            width: self.w,
            height: self.h,
            near: self.near,
            far: self.far,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedCamera {
    pub id: String,
    pub camera: Camera,
}

/// Color image, metric depth and time value captured by one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdFrame {
    pub camera_id: String,
    pub t: f64,
    pub color: RgbImage,
    pub depth: DepthMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub cameras: Vec<NamedCamera>,
    pub frames: Vec<RgbdFrame>,
}

impl Dataset {
    pub fn camera(&self, id: &str) -> Result<&Camera> {
        self.cameras
            .iter()
            .find(|c| c.id == id)
            .map(|c| &c.camera)
            .ok_or_else(|| Error::Validation(format!("unknown camera id '{id}'")))
    }

    pub fn frame(&self, camera_id: &str, t: f64) -> Result<&RgbdFrame> {
        self.frames
            .iter()
            .find(|f| f.camera_id == camera_id && f.t == t)
            .ok_or_else(|| {
                Error::Validation(format!("no frame for camera '{camera_id}' at t = {t}"))
            })
    }

    /// Distinct time values in ascending order.
    pub fn time_values(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.frames.iter().map(|f| f.t).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    pub fn validate(&self) -> Result<()> {
        for (k, c) in self.cameras.iter().enumerate() {
            if self.cameras[..k].iter().any(|o| o.id == c.id) {
                return Err(Error::Validation(format!("duplicate camera id '{}'", c.id)));
            }
            c.camera
                .validate()
                .map_err(|e| Error::Validation(format!("camera '{}': {e}", c.id)))?;
        }
        for f in &self.frames {
            let cam = self.camera(&f.camera_id)?;
            if !f.t.is_finite() {
                return Err(Error::Validation(format!(
                    "frame of camera '{}' has a non-finite time value",
                    f.camera_id
                )));
            }
            let dims = (cam.width, cam.height);
            if (f.color.width, f.color.height) != dims || (f.depth.width, f.depth.height) != dims {
                return Err(Error::Validation(format!(
                    "frame of camera '{}' at t = {} does not match the camera resolution {}x{}",
                    f.camera_id, f.t, dims.0, dims.1
                )));
            }
        }
        Ok(())
    }

    /// Splits off every frame of `holdout_id`; the returned training set keeps
    /// all camera definitions.
    pub fn split_holdout(&self, holdout_id: &str) -> Result<(Dataset, Vec<RgbdFrame>)> {
        self.camera(holdout_id)?;
        let (held, train): (Vec<_>, Vec<_>) = self
            .frames
            .iter()
            .cloned()
            .partition(|f| f.camera_id == holdout_id);
        Ok((
            Dataset {
                cameras: self.cameras.clone(),
                frames: train,
            },
            held,
        ))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|source| Error::Json { path: path.clone(), source })?;
        if manifest.scene_units != "m" {
            return Err(Error::Validation(format!(
                "unsupported scene units '{}', expected 'm'",
                manifest.scene_units
            )));
        }
        let cameras = manifest
            .cameras
            .iter()
            .map(|c| NamedCamera {
                id: c.id.clone(),
                camera: c.camera(),
            })
            .collect();
        let mut frames = Vec::with_capacity(manifest.frames.len());
        for f in &manifest.frames {
            frames.push(RgbdFrame {
                camera_id: f.camera_id.clone(),
                t: f.t,
                color: RgbImage::load_png(&dir.join(&f.color))?,
                depth: DepthMap::load_png16(&dir.join(&f.depth))?,
            });
        }
        let ds = Dataset { cameras, frames };
        ds.validate()?;
        Ok(ds)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            scene_units: "m".into(),
            cameras: self
                .cameras
                .iter()
                .map(|c| CameraRecord::from_camera(&c.id, &c.camera))
                .collect(),
            frames: self
                .frames
                .iter()
                .map(|f| {
                    let (color, depth) = frame_file_names(&f.camera_id, f.t);
                    FrameRecord {
                        camera_id: f.camera_id.clone(),
                        t: f.t,
                        color,
                        depth,
                    }
                })
                .collect(),
        }
    }

    /// Writes images and `manifest.json` into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = self.manifest();
        for (f, rec) in self.frames.iter().zip(&manifest.frames) {
            f.color.save_png(&dir.join(&rec.color))?;
            f.depth.save_png16(&dir.join(&rec.depth))?;
        }
        let path: PathBuf = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn frame_file_names(camera_id: &str, t: f64) -> (String, String) {
    let tag: String = format!("{camera_id}_t{t}")
        .chars()
        .map(|c| match c {
            '-' => 'm',
            '.' => 'p',
            c => c,
        })
        .collect();
    (format!("color_{tag}.png"), format!("depth_{tag}.png"))
}
