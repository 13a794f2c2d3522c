//! Pinhole camera model and the world → view → NDC → pixel chain.
//!
//! Column vectors, matrix on the left. The camera looks down `-z` in view
//! space, NDC spans `[-1, 1]` on every axis and pixel `y` grows downward.
//! `rotation` maps camera axes to world axes, so the view matrix is the
//! inverse rigid transform `[Rᵀ | -Rᵀ·P_u]`.

use std::f64::consts::TAU;

use nalgebra::{Matrix2x3, Matrix3, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{config, contract};
use crate::{Result, Vec3};

pub const DEFAULT_RESOLUTION: (u32, u32) = (1200, 600);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub id: u32,
    pub position: Vec3,
    /// Camera-to-world rotation; columns are the camera axes in world space.
    pub rotation: Matrix3<f64>,
    /// Vertical field of view (radians).
    pub fov: f64,
    /// Width / height.
    pub aspect: f64,
    pub near: f64,
    pub far: f64,
    pub resolution: (u32, u32),
}

/// Projected pixel position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagePoint {
    pub x: f64,
    pub y: f64,
    pub in_frustum: bool,
}

impl ImagePoint {
    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

impl CameraConfig {
    pub fn width(&self) -> u32 {
        self.resolution.0
    }

    pub fn height(&self) -> u32 {
        self.resolution.1
    }

    /// `1 / tan(fov / 2)`.
    pub fn focal(&self) -> f64 {
        1.0 / (self.fov / 2.0).tan()
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if (r.transpose() * r - Matrix3::identity()).abs().max() > 1e-9 {
            return Err(contract(format!("camera {} rotation is not orthonormal", self.id)));
        }
        if (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(contract(format!("camera {} rotation is not proper", self.id)));
        }
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return Err(contract(format!("camera {} fov must lie in (0, pi)", self.id)));
        }
        if !(self.aspect > 0.0) {
            return Err(contract(format!("camera {} aspect must be positive", self.id)));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(contract(format!("camera {} needs 0 < near < far", self.id)));
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(contract(format!("camera {} has an empty resolution", self.id)));
        }
        Ok(())
    }

    /// World point to view space.
    pub fn to_view(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.position)
    }

    /// Unit world-space ray through continuous pixel `(x, y)`.
    pub fn pixel_ray(&self, x: f64, y: f64) -> (Vec3, Vec3) {
        let ndc_x = 2.0 * x / self.width() as f64 - 1.0;
        let ndc_y = 1.0 - 2.0 * y / self.height() as f64;
        let f = self.focal();
        let d_view = Vec3::new(ndc_x * self.aspect / f, ndc_y / f, -1.0);
        (self.position, (self.rotation * d_view).normalize())
    }

    /// Pixel position of `p` and its derivative with respect to `p`.
    ///
    /// The derivative ignores frustum clipping; it is meaningful for points
    /// in front of the camera.
    pub fn project_with_jacobian(&self, p: &Vec3) -> (Vector2<f64>, Matrix2x3<f64>) {
        let v = self.to_view(p);
        let f = self.focal();
        let (w, h) = (self.width() as f64, self.height() as f64);
        let depth = -v.z;
        let sx = 0.5 * w * f / self.aspect;
        let sy = 0.5 * h * f;
        let px = Vector2::new(0.5 * w + sx * v.x / depth, 0.5 * h - sy * v.y / depth);
        let d2 = depth * depth;
        let dv = Matrix2x3::new(
            sx / depth, 0.0, sx * v.x / d2, //
            0.0, -sy / depth, -sy * v.y / d2,
        );
        (px, dv * self.rotation.transpose())
    }
}

pub fn view_matrix(cam: &CameraConfig) -> Result<Matrix4<f64>> {
    cam.validate()?;
    Ok(view_matrix_unchecked(cam))
}

fn view_matrix_unchecked(cam: &CameraConfig) -> Matrix4<f64> {
    let rt = cam.rotation.transpose();
    let t = -(rt * cam.position);
    let mut v = Matrix4::identity();
    v.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
    v.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    v
}

/// Perspective matrix with the near plane mapped to NDC `z = -1`.
pub fn projection_matrix(cam: &CameraConfig) -> Result<Matrix4<f64>> {
    cam.validate()?;
    Ok(projection_matrix_unchecked(cam))
}

fn projection_matrix_unchecked(cam: &CameraConfig) -> Matrix4<f64> {
    let f = cam.focal();
    let (n, fa) = (cam.near, cam.far);
    Matrix4::new(
        f / cam.aspect, 0.0, 0.0, 0.0, //
        0.0, f, 0.0, 0.0,
        0.0, 0.0, (fa + n) / (n - fa), 2.0 * fa * n / (n - fa),
        0.0, 0.0, -1.0, 0.0,
    )
}

/// Normalized device coordinates of `p`, or `None` when the point is at or
/// behind the camera plane.
pub fn to_ndc(cam: &CameraConfig, p: &Vec3) -> Option<Vec3> {
    let clip = projection_matrix_unchecked(cam)
        * view_matrix_unchecked(cam)
        * Vector4::new(p.x, p.y, p.z, 1.0);
    (clip.w > 0.0).then(|| Vec3::new(clip.x / clip.w, clip.y / clip.w, clip.z / clip.w))
}

pub fn project_point(cam: &CameraConfig, p: &Vec3) -> ImagePoint {
    let (w, h) = (cam.width() as f64, cam.height() as f64);
    match to_ndc(cam, p) {
        Some(ndc) => {
            let inside = ndc.iter().all(|c| (-1.0..=1.0).contains(c));
            ImagePoint {
                x: (ndc.x + 1.0) / 2.0 * w,
                y: (1.0 - ndc.y) / 2.0 * h,
                in_frustum: inside,
            }
        }
        None => ImagePoint { x: 0.0, y: 0.0, in_frustum: false },
    }
}

/// Camera-to-world rotation that looks from `eye` toward `target` with `+y`
/// as the up hint.
pub fn look_at_rotation(eye: &Vec3, target: &Vec3) -> Result<Matrix3<f64>> {
    let forward = target - eye;
    if forward.norm() < 1e-12 {
        return Err(config("camera position coincides with its target"));
    }
    let z = -forward.normalize();
    let x = Vec3::y().cross(&z);
    if x.norm() < 1e-9 {
        return Err(config("camera looks straight along the up axis"));
    }
    let x = x.normalize();
    let y = z.cross(&x);
    Ok(Matrix3::from_columns(&[x, y, z]))
}

/// Intrinsics shared by every camera of a rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigSpec {
    pub count: usize,
    pub radius: f64,
    pub height: f64,
    pub look_at: Vec3,
    pub fov_deg: f64,
    pub near: f64,
    pub far: f64,
    pub resolution: (u32, u32),
}

impl Default for RigSpec {
    fn default() -> Self {
        RigSpec {
            count: 8,
            radius: 8.0,
            height: 4.0,
            look_at: Vec3::new(0.0, 1.2, 0.0),
            fov_deg: 50.0,
            near: 0.5,
            far: 20.0,
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

impl RigSpec {
    pub fn build(&self) -> Result<Vec<CameraConfig>> {
        make_rig(self)
    }
}

/// Evenly spaced cameras on a horizontal circle around `look_at`, camera `k`
/// at azimuth `2πk/n`.
pub fn make_rig(spec: &RigSpec) -> Result<Vec<CameraConfig>> {
    if spec.count < 2 {
        return Err(config(format!("a rig needs at least 2 cameras, got {}", spec.count)));
    }
    let (w, h) = spec.resolution;
    (0..spec.count)
        .map(|k| {
            let azimuth = TAU * k as f64 / spec.count as f64;
            let position = Vec3::new(
                spec.look_at.x + spec.radius * azimuth.cos(),
                spec.height,
                spec.look_at.z + spec.radius * azimuth.sin(),
            );
            let cam = CameraConfig {
                id: k as u32,
                position,
                rotation: look_at_rotation(&position, &spec.look_at)?,
                fov: spec.fov_deg.to_radians(),
                aspect: w as f64 / h.max(1) as f64,
                near: spec.near,
                far: spec.far,
                resolution: spec.resolution,
            };
            cam.validate().map_err(|e| config(e.to_string()))?;
            Ok(cam)
        })
        .collect()
}
