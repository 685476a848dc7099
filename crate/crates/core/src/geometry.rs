//! Pinhole cameras, rays and camera-path interpolation.
//!
//! Camera frames follow the usual computer-vision convention: +x right, +y down,
//! +z along the optical axis. `pose` maps camera coordinates to world
//! coordinates, `x_world = R * x_cam + p`. Pixel `(i, j)` covers the continuous
//! range `[i, i + 1) x [j, j + 1)` in the intrinsic matrix's frame, so the ray for
//! integer pixel `(i, j)` passes through `(i + 0.5, j + 0.5)`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// World-from-camera rigid transform stored as a 3x4 `[R | p]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Row-major 3x4 matrix, the layout used in dataset manifests.
    pub fn from_rows(rows: &[f64; 12]) -> Self {
        let rotation = Mat3::new(
            rows[0], rows[1], rows[2], rows[4], rows[5], rows[6], rows[8], rows[9], rows[10],
        );
        let translation = Vec3::new(rows[3], rows[7], rows[11]);
        Pose {
            rotation,
            translation,
        }
    }

    pub fn to_rows(&self) -> [f64; 12] {
        let r = &self.rotation;
        let p = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            p.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            p.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            p.z,
        ]
    }

    /// Camera at `eye` looking at `target`; `up` is the approximate world up axis.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        Pose {
            rotation: Mat3::from_columns(&[right, down, forward]),
            translation: eye,
        }
    }

    pub fn transform_point(&self, x_cam: &Vec3) -> Vec3 {
        self.rotation * x_cam + self.translation
    }

    /// Inverse transform. Uses `R^T`, so only exact for orthonormal rotations.
    pub fn inverse_transform_point(&self, x_world: &Vec3) -> Vec3 {
        self.rotation.transpose() * (x_world - self.translation)
    }

    /// Largest deviation of `R^T R` from identity.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Mat3::identity()).amax()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub pose: Pose,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.near, self.far]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Validation(format!(
                "camera intrinsics must be finite with positive focal length (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return Err(Error::Validation(format!(
                "camera clip range must satisfy 0 < near < far (near={}, far={})",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("camera resolution must be non-zero".into()));
        }
        if self.pose.orthonormality_error() > 1e-6 || self.pose.rotation.determinant() <= 0.0 {
            return Err(Error::Validation(
                "camera rotation must be a proper rotation matrix".into(),
            ));
        }
        Ok(())
    }

    pub fn position(&self) -> Vec3 {
        self.pose.translation
    }

    /// Unnormalized camera-frame direction `K^-1 (u + 0.5, v + 0.5, 1)`, z = 1.
    pub fn pixel_direction_cam(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new(
            (u + 0.5 - self.cx) / self.fx,
            (v + 0.5 - self.cy) / self.fy,
            1.0,
        )
    }

    /// Ray through the center of pixel `(u, v)`.
    ///
    /// Sub-pixel positions are accepted as long as the sample point `u + 0.5`
    /// stays on the sensor, i.e. `-0.5 <= u <= width - 0.5`.
    pub fn pixel_to_ray(&self, u: f64, v: f64) -> Result<Ray> {
        let w = self.width as f64;
        let h = self.height as f64;
        let inside = (0.0..=w).contains(&(u + 0.5)) && (0.0..=h).contains(&(v + 0.5));
        if !inside || !u.is_finite() || !v.is_finite() {
            return Err(Error::PixelOutOfBounds {
                u,
                v,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.pixel_ray_unchecked(u, v))
    }

    pub(crate) fn pixel_ray_unchecked(&self, u: f64, v: f64) -> Ray {
        let d = self.pose.rotation * self.pixel_direction_cam(u, v);
        Ray {
            origin: self.pose.translation,
            direction: d.normalize(),
            t_near: self.near,
            t_far: self.far,
        }
    }

    /// Ray for integer pixel `(i, j)`.
    pub fn pixel_ray(&self, i: u32, j: u32) -> Ray {
        self.pixel_ray_unchecked(i as f64, j as f64)
    }

    /// Ratio between distance along the pixel's unit ray and camera-frame depth.
    pub fn ray_length_per_depth(&self, i: u32, j: u32) -> f64 {
        self.pixel_direction_cam(i as f64, j as f64).norm()
    }

    /// Projects a world point to continuous pixel coordinates in the same
    /// convention as [`Camera::pixel_to_ray`], plus its camera-frame depth.
    pub fn project_point(&self, x: &Vec3) -> Result<(f64, f64, f64)> {
        let c = self.pose.inverse_transform_point(x);
        if c.z <= 0.0 {
            return Err(Error::BehindCamera { z: c.z });
        }
        let u = self.fx * c.x / c.z + self.cx - 0.5;
        let v = self.fy * c.y / c.z + self.cy - 0.5;
        Ok((u, v, c.z))
    }

    /// Back-projects pixel `(i, j)` at camera-frame depth `z`.
    pub fn unproject(&self, i: u32, j: u32, z: f64) -> Vec3 {
        self.pose
            .transform_point(&(self.pixel_direction_cam(i as f64, j as f64) * z))
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Nearest rotation in the Frobenius sense (orthogonal polar factor).
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fixed = u;
        u_fixed.column_mut(2).neg_mut();
        r = u_fixed * v_t;
    }
    r
}

/// Elementwise blend `alpha * A + (1 - alpha) * B` of two cameras' pose matrices,
/// intrinsics and clip range.
///
/// The blended rotation block is generally not a rotation; pass
/// `orthonormalize = true` to replace it by its polar factor.
pub fn interpolate_pose(a: &Camera, b: &Camera, alpha: f64, orthonormalize: bool) -> Camera {
    let mix = |x: f64, y: f64| alpha * x + (1.0 - alpha) * y;
    let mut rotation = a.pose.rotation * alpha + b.pose.rotation * (1.0 - alpha);
    if orthonormalize {
        rotation = nearest_rotation(&rotation);
    }
    Camera {
        fx: mix(a.fx, b.fx),
        fy: mix(a.fy, b.fy),
        cx: mix(a.cx, b.cx),
        cy: mix(a.cy, b.cy),
        pose: Pose {
            rotation,
            translation: a.pose.translation * alpha + b.pose.translation * (1.0 - alpha),
        },
        width: b.width,
        height: b.height,
        near: mix(a.near, b.near),
        far: mix(a.far, b.far),
    }
}

/// Two-leg path `a -> b -> c` with `steps_per_leg` interpolation steps per leg,
/// `2 * steps_per_leg + 1` cameras in total.
///
/// Each leg is generated with [`interpolate_pose`] at `alpha_i = i / I`, with
/// the leg's destination in the `A` slot, so step 0 is the leg's start camera.
pub fn camera_path(
    a: &Camera,
    b: &Camera,
    c: &Camera,
    steps_per_leg: usize,
    orthonormalize: bool,
) -> Result<Vec<Camera>> {
    if steps_per_leg == 0 {
        return Err(Error::Validation("camera path needs at least one step per leg".into()));
    }
    if (a.width, a.height) != (b.width, b.height) || (b.width, b.height) != (c.width, c.height) {
        return Err(Error::Validation(
            "camera path endpoints must share a resolution".into(),
        ));
    }
    let n = steps_per_leg as f64;
    let mut path = Vec::with_capacity(2 * steps_per_leg + 1);
    for i in 0..=steps_per_leg {
        path.push(interpolate_pose(b, a, i as f64 / n, orthonormalize));
    }
    for i in 1..=steps_per_leg {
        path.push(interpolate_pose(c, b, i as f64 / n, orthonormalize));
    }
    Ok(path)
}
