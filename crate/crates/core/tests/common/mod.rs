//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{Matrix3, Matrix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semcom::camera::{look_at_rotation, CameraConfig, RigSpec};
use semcom::render::PointCloud;
use semcom::scene::{ArmModel, ArmPose, Scenario, SceneLayout, NUM_JOINTS, NUM_KEYPOINTS};
use semcom::Vec3;
use statrs::function::erf::erfc;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian tail probability.
pub fn q(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

pub fn ber_awgn(snr_linear: f64) -> f64 {
    q((2.0 * snr_linear).sqrt())
}

pub fn ber_rayleigh(snr_linear: f64) -> f64 {
    0.5 * (1.0 - (snr_linear / (1.0 + snr_linear)).sqrt())
}

/// Rodrigues rotation as a homogeneous 4×4 matrix.
fn homogeneous_rotation(axis: &Vec3, angle: f64) -> Matrix4<f64> {
    let k = axis.normalize();
    let skew = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    let r = Matrix3::identity() + skew * angle.sin() + skew * skew * (1.0 - angle.cos());
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m
}

fn homogeneous_translation(t: &Vec3) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

/// Keypoints by multiplying one rotation and one link translation per
/// joint, starting from the base.
pub fn fk_oracle(model: &ArmModel, angles: &[f64]) -> [Vec3; NUM_KEYPOINTS] {
    let mut t = homogeneous_translation(&model.base_position);
    let mut out = [model.base_position; NUM_KEYPOINTS];
    for j in 0..NUM_JOINTS {
        t = t
            * homogeneous_rotation(&model.joint_axes[j], angles[j])
            * homogeneous_translation(&Vec3::new(0.0, model.link_lengths[j], 0.0));
        out[j + 1] = Vec3::new(t[(0, 3)], t[(1, 3)], t[(2, 3)]);
    }
    out
}

pub fn random_angles(rng: &mut impl Rng, spread: f64) -> Vec<f64> {
    (0..NUM_JOINTS).map(|_| rng.random_range(-spread..spread)).collect()
}

pub fn default_scenario() -> Scenario {
    Scenario::builtin("default").unwrap()
}

pub fn default_layout() -> Arc<SceneLayout> {
    Arc::new(default_scenario().layout())
}

/// The 8-camera rig of the sweep configuration.
pub fn rig(resolution: (u32, u32)) -> Vec<CameraConfig> {
    RigSpec { resolution, ..RigSpec::default() }.build().unwrap()
}

/// A camera at a random position looking at a random target.
pub fn random_camera(rng: &mut impl Rng, id: u32) -> CameraConfig {
    let position = Vec3::new(
        rng.random_range(-10.0..10.0),
        rng.random_range(-10.0..10.0),
        rng.random_range(-10.0..10.0),
    );
    let target = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    CameraConfig {
        id,
        position,
        rotation: look_at_rotation(&position, &target).unwrap(),
        fov: rng.random_range(0.3..2.5),
        aspect: rng.random_range(0.5..2.5),
        near: 0.1,
        far: 50.0,
        resolution: (1200, 600),
    }
}

pub fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
    PointCloud {
        points: (0..n)
            .map(|_| semcom::render::CloudPoint {
                position: Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
                color: [0, 0, 0],
            })
            .collect(),
    }
}

/// O(n²) symmetric RMS nearest-neighbor distance.
pub fn brute_p2point(a: &PointCloud, b: &PointCloud) -> (f64, f64, f64) {
    let directed = |from: &PointCloud, to: &PointCloud| {
        let sum: f64 = from
            .points
            .iter()
            .map(|p| {
                to.points
                    .iter()
                    .map(|q| (p.position - q.position).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        (sum / from.points.len() as f64).sqrt()
    };
    let (f, b) = (directed(a, b), directed(b, a));
    (((f * f + b * b) / 2.0).sqrt(), f, b)
}

pub fn angle_error(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

pub fn pose_error(a: &ArmPose, b: &ArmPose) -> f64 {
    a.joint_angles
        .iter()
        .zip(&b.joint_angles)
        .map(|(x, y)| angle_error(*x, *y))
        .fold(0.0, f64::max)
}
