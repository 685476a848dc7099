//! Analytic synthetic scene with exact color and depth: a closed room with
//! flat-colored props and one box moving linearly in time.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{Dataset, NamedCamera, RgbdFrame};
use crate::error::{Error, Result};
use crate::geometry::{Camera, Pose, Ray, Vec3};
use crate::raster::{DepthMap, RgbImage};

const HIT_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    pub fn centered(center: Vec3, half: Vec3) -> Self {
        Aabb {
            min: center - half,
            max: center + half,
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|i| other.min[i] >= self.min[i] && other.max[i] <= self.max[i])
    }

    pub fn contains_point(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Parametric entry and exit of the ray's line through the box.
    fn slabs(&self, ray: &Ray) -> Option<(f64, f64, usize, usize)> {
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        let (mut axis0, mut axis1) = (0, 0);
        for i in 0..3 {
            let o = ray.origin[i];
            let d = ray.direction[i];
            if d == 0.0 {
                if o < self.min[i] || o > self.max[i] {
                    return None;
                }
                continue;
            }
            let (mut a, mut b) = ((self.min[i] - o) / d, (self.max[i] - o) / d);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            if a > t0 {
                t0 = a;
                axis0 = i;
            }
            if b < t1 {
                t1 = b;
                axis1 = i;
            }
        }
        (t0 <= t1).then_some((t0, t1, axis0, axis1))
    }

    /// First intersection with the box surface seen from outside.
    pub fn hit_outside(&self, ray: &Ray) -> Option<f64> {
        let (t0, t1, _, _) = self.slabs(ray)?;
        (t0 > HIT_EPS && t0 <= t1).then_some(t0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
}

impl Sphere {
    pub fn hit(&self, ray: &Ray) -> Option<f64> {
        let oc = ray.origin - self.center;
        let b = oc.dot(&ray.direction);
        let c = oc.norm_squared() - self.radius * self.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        [-b - s, -b + s].into_iter().find(|&t| t > HIT_EPS)
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::centered(self.center, Vec3::repeat(self.radius))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Box(Aabb),
    Sphere(Sphere),
}

impl Shape {
    pub fn hit(&self, ray: &Ray) -> Option<f64> {
        match self {
            Shape::Box(b) => b.hit_outside(ray),
            Shape::Sphere(s) => s.hit(ray),
        }
    }

    pub fn bounds(&self) -> Aabb {
        match self {
            Shape::Box(b) => *b,
            Shape::Sphere(s) => s.bounds(),
        }
    }

    fn translated(&self, offset: Vec3) -> Shape {
        match self {
            Shape::Box(b) => Shape::Box(Aabb::new(b.min + offset, b.max + offset)),
            Shape::Sphere(s) => Shape::Sphere(Sphere {
                center: s.center + offset,
                radius: s.radius,
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prop {
    pub shape: Shape,
    pub albedo: [f64; 3],
}

/// A prop whose shape is translated by `t * velocity`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mover {
    pub prop: Prop,
    pub velocity: Vec3,
}

impl Mover {
    pub fn shape_at(&self, t: f64) -> Shape {
        self.prop.shape.translated(self.velocity * t)
    }
}

/// Room faces in the order -x, +x, -y, +y, floor (-z), ceiling (+z).
#[derive(Clone, Debug, PartialEq)]
pub struct OracleScene {
    pub room: Aabb,
    pub wall_albedo: [[f64; 3]; 6],
    pub props: Vec<Prop>,
    pub mover: Mover,
    /// Side length of the floor checker pattern; `None` keeps the floor flat.
    pub floor_checker: Option<f64>,
}

/// What a traced ray hit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HitKind {
    Room(usize),
    Prop(usize),
    Mover,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceHit {
    pub rgb: [f64; 3],
    /// Distance along the (unit) ray direction.
    pub depth: f64,
    pub kind: HitKind,
}

impl OracleScene {
    /// The default layout: a 4 x 4 x 2.5 m room with a table, a stool, a
    /// cabinet, a ball, and a box sliding along x on the table top.
    pub fn desk() -> Self {
        let table_top = 0.75;
        OracleScene {
            room: Aabb::new(Vec3::new(-2.0, -2.0, 0.0), Vec3::new(2.0, 2.0, 2.5)),
            wall_albedo: [
                [0.80, 0.75, 0.60],
                [0.55, 0.70, 0.85],
                [0.85, 0.60, 0.55],
                [0.60, 0.80, 0.60],
                [0.35, 0.30, 0.30],
                [0.90, 0.90, 0.90],
            ],
            props: vec![
                Prop {
                    shape: Shape::Box(Aabb::new(
                        Vec3::new(-0.7, -0.45, 0.0),
                        Vec3::new(0.7, 0.45, table_top),
                    )),
                    albedo: [0.55, 0.35, 0.20],
                },
                Prop {
                    shape: Shape::Box(Aabb::new(
                        Vec3::new(-1.9, 0.9, 0.0),
                        Vec3::new(-1.3, 1.9, 1.6),
                    )),
                    albedo: [0.25, 0.40, 0.55],
                },
                Prop {
                    shape: Shape::Sphere(Sphere {
                        center: Vec3::new(-1.0, -1.0, 0.35),
                        radius: 0.35,
                    }),
                    albedo: [0.95, 0.85, 0.20],
                },
                Prop {
                    shape: Shape::Box(Aabb::new(
                        Vec3::new(0.9, 0.8, 0.0),
                        Vec3::new(1.4, 1.3, 0.5),
                    )),
                    albedo: [0.30, 0.60, 0.35],
                },
            ],
            mover: Mover {
                prop: Prop {
                    shape: Shape::Box(Aabb::centered(
                        Vec3::new(0.0, 0.0, table_top + 0.25),
                        Vec3::new(0.25, 0.25, 0.25),
                    )),
                    albedo: [0.85, 0.15, 0.15],
                },
                velocity: Vec3::new(0.2, 0.0, 0.0),
            },
            floor_checker: Some(0.5),
        }
    }

    /// Every prop and the mover at each `t` lie inside the room.
    pub fn validate(&self, t_values: &[f64]) -> Result<()> {
        for (k, p) in self.props.iter().enumerate() {
            if !self.room.contains_box(&p.shape.bounds()) {
                return Err(Error::Validation(format!("prop {k} leaves the room")));
            }
        }
        for &t in t_values {
            if !self.room.contains_box(&self.mover.shape_at(t).bounds()) {
                return Err(Error::Validation(format!("the mover leaves the room at t = {t}")));
            }
        }
        Ok(())
    }

    fn floor_color(&self, p: &Vec3) -> [f64; 3] {
        let base = self.wall_albedo[4];
        match self.floor_checker {
            Some(s) => {
                let parity = ((p.x / s).floor() + (p.y / s).floor()) as i64;
                if parity.rem_euclid(2) == 0 {
                    base
                } else {
                    [base[0] + 0.35, base[1] + 0.35, base[2] + 0.35]
                }
            }
            None => base,
        }
    }

    fn room_hit(&self, ray: &Ray) -> Option<(f64, usize)> {
        let (_, t1, _, axis) = self.room.slabs(ray)?;
        if !(t1 > HIT_EPS) {
            return None;
        }
        let positive = ray.direction[axis] > 0.0;
        Some((t1, 2 * axis + positive as usize))
    }

    /// Nearest surface along `ray` at time `t`; `None` for a miss (only
    /// possible from outside the room).
    pub fn trace(&self, ray: &Ray, t: f64) -> Option<TraceHit> {
        let mut best: Option<TraceHit> = None;
        let mut consider = |depth: Option<f64>, rgb: [f64; 3], kind: HitKind| {
            if let Some(d) = depth {
                if best.is_none_or(|b| d < b.depth) {
                    best = Some(TraceHit { rgb, depth: d, kind });
                }
            }
        };
        if self.room.contains_point(&ray.origin) {
            if let Some((d, face)) = self.room_hit(ray) {
                let rgb = if face == 4 {
                    self.floor_color(&ray.at(d))
                } else {
                    self.wall_albedo[face]
                };
                consider(Some(d), rgb, HitKind::Room(face));
            }
        }
        for (k, p) in self.props.iter().enumerate() {
            consider(p.shape.hit(ray), p.albedo, HitKind::Prop(k));
        }
        consider(self.mover.shape_at(t).hit(ray), self.mover.prop.albedo, HitKind::Mover);
        best
    }

    /// Color, camera-z depth and mover mask for every pixel of `camera`.
    pub fn render(&self, camera: &Camera, t: f64) -> (RgbImage, DepthMap, Vec<bool>) {
        let (w, h) = (camera.width, camera.height);
        let hits: Vec<Option<TraceHit>> = (0..w * h)
            .into_par_iter()
            .map(|k| self.trace(&camera.pixel_ray(k % w, k / w), t))
            .collect();
        let mut rgb = RgbImage::new(w, h);
        let mut depth = DepthMap::new(w, h);
        let mut mask = vec![false; (w * h) as usize];
        for (k, hit) in hits.into_iter().enumerate() {
            let (u, v) = (k as u32 % w, k as u32 / w);
            if let Some(hit) = hit {
                rgb.set(u, v, hit.rgb);
                depth.set(u, v, hit.depth / camera.ray_length_per_depth(u, v));
                mask[k] = hit.kind == HitKind::Mover;
            }
        }
        (rgb, depth, mask)
    }

    /// Renders every (camera, t) pair. `dropout` zeroes each depth pixel
    /// independently with that probability.
    pub fn render_dataset(
        &self,
        cameras: &[NamedCamera],
        t_values: &[f64],
        dropout: f64,
        seed: u64,
    ) -> Result<Dataset> {
        if cameras.is_empty() {
            return Err(Error::Validation("at least one camera is required".into()));
        }
        if !(0.0..=1.0).contains(&dropout) {
            return Err(Error::Validation(format!("dropout {dropout} is outside [0, 1]")));
        }
        self.validate(t_values)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut frames = Vec::with_capacity(cameras.len() * t_values.len());
        for c in cameras {
            c.camera.validate()?;
            for &t in t_values {
                let (color, mut depth, _) = self.render(&c.camera, t);
                if dropout > 0.0 {
                    for d in depth.data.iter_mut() {
                        if rng.gen_bool(dropout) {
                            *d = 0.0;
                        }
                    }
                }
                frames.push(RgbdFrame {
                    camera_id: c.id.clone(),
                    t,
                    color,
                    depth,
                });
            }
        }
        let ds = Dataset {
            cameras: cameras.to_vec(),
            frames,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// [`Self::render_dataset`] followed by [`Dataset::save`].
    pub fn write_dataset(
        &self,
        cameras: &[NamedCamera],
        t_values: &[f64],
        dropout: f64,
        seed: u64,
        out_dir: &Path,
    ) -> Result<Dataset> {
        let ds = self.render_dataset(cameras, t_values, dropout, seed)?;
        ds.save(out_dir)?;
        Ok(ds)
    }
}

/// Pinhole camera with a horizontal field of view of `fov_x_deg`.
pub fn pinhole(pose: Pose, width: u32, height: u32, fov_x_deg: f64, near: f64, far: f64) -> Camera {
    let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
    Camera {
        fx: f,
        fy: f,
        cx: 0.5 * width as f64,
        cy: 0.5 * height as f64,
        pose,
        width,
        height,
        near,
        far,
    }
}

/// `n` cameras `cam0 .. cam{n-1}` on a horizontal arc around the table,
/// all looking at the table top.
pub fn arc_cameras(n: usize, width: u32, height: u32) -> Vec<NamedCamera> {
    let target = Vec3::new(0.0, 0.0, 0.8);
    let span = 150f64.to_radians();
    (0..n)
        .map(|i| {
            let a = if n == 1 {
                0.0
            } else {
                -0.5 * span + span * i as f64 / (n - 1) as f64
            };
            // the y offset keeps the +x-facing views from lining up with the
            // mover's trajectory
            let eye = Vec3::new(1.7 * a.cos() - 0.3, 1.7 * a.sin() - 0.2, 1.9);
            let pose = Pose::look_at(eye, target, Vec3::z());
            NamedCamera {
                id: format!("cam{i}"),
                camera: pinhole(pose, width, height, 75.0, 0.1, 6.0),
            }
        })
        .collect()
}
