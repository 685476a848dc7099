//! Binary checkpoint: both models plus the camera rig they were trained on.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "DDNF" | u32 version = 1
//! u32 width | u32 trunk depth | u32 n_freq_pos | u32 n_freq_dir | u32 flags
//! u32 n_coarse | u32 n_fine
//! u64 coarse param count | u64 fine param count
//! f32 coarse params | f32 fine params      (layer order, weights then bias)
//! u32 camera count, then per camera:
//!   u32 id length | id bytes (UTF-8) | f64 fx fy cx cy near far | u32 w h | f64 pose[12]
//! ```
//!
//! Flags: bit 0 include_input, bit 1 use_time, bit 2 skip, bit 3 depth supervised.

use std::fs;
use std::path::Path;

use crate::dataset::{CameraRecord, NamedCamera};
use crate::error::{Error, Result};
use crate::field::{EncodingConfig, FieldArch, FieldModel, FieldPair, TRUNK_DEPTH};

pub const MAGIC: &[u8; 4] = b"DDNF";
pub const VERSION: u32 = 1;

const FLAG_INCLUDE_INPUT: u32 = 1;
const FLAG_USE_TIME: u32 = 2;
const FLAG_SKIP: u32 = 4;
const FLAG_DEPTH: u32 = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub models: FieldPair<f32>,
    pub depth_supervised: bool,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub cameras: Vec<NamedCamera>,
}

impl Checkpoint {
    pub fn camera(&self, id: &str) -> Result<&crate::geometry::Camera> {
        self.cameras
            .iter()
            .find(|c| c.id == id)
            .map(|c| &c.camera)
            .ok_or_else(|| Error::Validation(format!("checkpoint has no camera '{id}'")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let arch = self.models.arch();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let mut flags = 0;
        if arch.encoding.include_input {
            flags |= FLAG_INCLUDE_INPUT;
        }
        if arch.use_time {
            flags |= FLAG_USE_TIME;
        }
        if arch.skip {
            flags |= FLAG_SKIP;
        }
        if self.depth_supervised {
            flags |= FLAG_DEPTH;
        }
        for v in [
            VERSION,
            arch.width as u32,
            TRUNK_DEPTH as u32,
            arch.encoding.n_freq_pos as u32,
            arch.encoding.n_freq_dir as u32,
            flags,
            self.n_coarse as u32,
            self.n_fine as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let models = [&self.models.coarse, &self.models.fine];
        for m in models {
            out.extend_from_slice(&(m.parameter_count() as u64).to_le_bytes());
        }
        for m in models {
            for layer in &m.layers {
                for v in layer.weight.iter().chain(&layer.bias) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&(self.cameras.len() as u32).to_le_bytes());
        for c in &self.cameras {
            let r = CameraRecord::from_camera(&c.id, &c.camera);
            out.extend_from_slice(&(r.id.len() as u32).to_le_bytes());
            out.extend_from_slice(r.id.as_bytes());
            for v in [r.fx, r.fy, r.cx, r.cy, r.near, r.far] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&r.w.to_le_bytes());
            out.extend_from_slice(&r.h.to_le_bytes());
            for v in r.pose_3x4 {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let width = r.u32()? as usize;
        let depth = r.u32()? as usize;
        if depth != TRUNK_DEPTH {
            return Err(Error::Checkpoint(format!("unsupported trunk depth {depth}")));
        }
        let n_freq_pos = r.u32()? as usize;
        let n_freq_dir = r.u32()? as usize;
        let flags = r.u32()?;
        let n_coarse = r.u32()? as usize;
        let n_fine = r.u32()? as usize;
        let arch = FieldArch {
            width,
            encoding: EncodingConfig {
                n_freq_pos,
                n_freq_dir,
                include_input: flags & FLAG_INCLUDE_INPUT != 0,
            },
            use_time: flags & FLAG_USE_TIME != 0,
            skip: flags & FLAG_SKIP != 0,
        };
        arch.validate()
            .map_err(|e| Error::Checkpoint(format!("invalid architecture: {e}")))?;
        let counts = [r.u64()? as usize, r.u64()? as usize];
        let mut models = Vec::with_capacity(2);
        for count in counts {
            let mut m = FieldModel::<f32>::zeros(arch)?;
            if m.parameter_count() != count {
                return Err(Error::Checkpoint(format!(
                    "parameter count {count} does not match the architecture ({})",
                    m.parameter_count()
                )));
            }
            for layer in m.layers.iter_mut() {
                for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                    *v = f32::from_le_bytes(r.array()?);
                }
            }
            m.bump_version();
            models.push(m);
        }
        let fine = models.pop().expect("two models");
        let coarse = models.pop().expect("two models");
        let n_cams = r.u32()? as usize;
        let mut cameras = Vec::with_capacity(n_cams.min(1024));
        for _ in 0..n_cams {
            let len = r.u32()? as usize;
            let id = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("camera id is not UTF-8".into()))?;
            let mut f = [0.0; 6];
            for v in f.iter_mut() {
                *v = r.f64()?;
            }
            let (w, h) = (r.u32()?, r.u32()?);
            let mut pose_3x4 = [0.0; 12];
            for v in pose_3x4.iter_mut() {
                *v = r.f64()?;
            }
            let rec = CameraRecord {
                id,
                fx: f[0],
                fy: f[1],
                cx: f[2],
                cy: f[3],
                near: f[4],
                far: f[5],
                w,
                h,
                pose_3x4,
            };
            cameras.push(NamedCamera {
                camera: rec.camera(),
                id: rec.id,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after the camera table".into()));
        }
        Ok(Checkpoint {
            models: FieldPair { coarse, fine },
            depth_supervised: flags & FLAG_DEPTH != 0,
            n_coarse,
            n_fine,
            cameras,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("unexpected end of checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}
