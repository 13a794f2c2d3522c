mod common;

use nalgebra::{Matrix3, Matrix4, Vector4};
use rand::Rng;
use semcom::camera::{
    make_rig, project_point, projection_matrix, to_ndc, view_matrix, CameraConfig, RigSpec,
};
use semcom::Vec3;

use common::*;

fn axis_camera() -> CameraConfig {
    CameraConfig {
        id: 0,
        position: Vec3::zeros(),
        rotation: Matrix3::identity(),
        fov: std::f64::consts::FRAC_PI_2,
        aspect: 2.0,
        near: 0.1,
        far: 100.0,
        resolution: (1200, 600),
    }
}

#[test]
fn view_matrix_cases() {
    let mut cam = axis_camera();
    assert_eq!(view_matrix(&cam).unwrap(), Matrix4::identity());
    cam.position = Vec3::new(0.0, 0.0, 10.0);
    let v = view_matrix(&cam).unwrap() * Vector4::new(0.0, 0.0, 10.0, 1.0);
    assert_eq!(v, Vector4::new(0.0, 0.0, 0.0, 1.0));
    cam.rotation[(0, 0)] = 2.0;
    assert!(view_matrix(&cam).is_err());
}

#[test]
fn camera_z_axis_maps_to_view_z() {
    let mut r = rng(3);
    for i in 0..50 {
        let cam = random_camera(&mut r, i);
        let ez = cam.rotation.column(2).into_owned();
        let p = cam.position + ez;
        let v = view_matrix(&cam).unwrap() * Vector4::new(p.x, p.y, p.z, 1.0);
        assert!((v.xyz() - Vec3::z()).norm() < 1e-9);
    }
}

#[test]
fn projection_diagonal_is_focal_over_aspect() {
    let mut r = rng(4);
    for _ in 0..10 {
        let mut cam = axis_camera();
        cam.fov = r.random_range(0.1..3.0);
        cam.aspect = r.random_range(0.2..4.0);
        let m = projection_matrix(&cam).unwrap();
        let f = 1.0 / (cam.fov / 2.0).tan();
        assert!((m[(0, 0)] - f / cam.aspect).abs() < 1e-12);
        assert!((m[(1, 1)] - f).abs() < 1e-12);
    }
    let mut cam = axis_camera();
    let m = projection_matrix(&cam).unwrap();
    assert!((m[(0, 0)] - 0.5).abs() < 1e-15 && (m[(1, 1)] - 1.0).abs() < 1e-15);
    let near = to_ndc(&cam, &Vec3::new(0.0, 0.0, -cam.near)).unwrap();
    assert!((near.z + 1.0).abs() < 1e-12);
    let far = to_ndc(&cam, &Vec3::new(0.0, 0.0, -cam.far)).unwrap();
    assert!((far.z - 1.0).abs() < 1e-9);
    cam.near = cam.far;
    assert!(projection_matrix(&cam).is_err());
}

#[test]
fn hand_projections() {
    let cam = axis_camera();
    let p = project_point(&cam, &Vec3::new(0.0, 0.0, -5.0));
    assert!(p.in_frustum && (p.x - 600.0).abs() < 1e-9 && (p.y - 300.0).abs() < 1e-9);
    let p = project_point(&cam, &Vec3::new(1.0, 0.0, -1.0));
    assert!((p.x - 900.0).abs() < 1e-9 && (p.y - 300.0).abs() < 1e-9);
    assert!(!project_point(&cam, &Vec3::new(0.0, 0.0, 1.0)).in_frustum);
    assert!(!project_point(&cam, &Vec3::zeros()).in_frustum);
}

#[test]
fn pixel_ray_round_trip() {
    let mut r = rng(5);
    let mut checked = 0;
    while checked < 1000 {
        let cam = random_camera(&mut r, 0);
        let depth = r.random_range(cam.near * 2.0..cam.far * 0.9);
        let f = cam.focal();
        let ndc = (r.random_range(-0.99..0.99), r.random_range(-0.99..0.99));
        let view = Vec3::new(ndc.0 * depth * cam.aspect / f, ndc.1 * depth / f, -depth);
        let world = cam.rotation * view + cam.position;
        let px = project_point(&cam, &world);
        assert!(px.in_frustum);
        let (origin, dir) = cam.pixel_ray(px.x, px.y);
        let along = -(cam.rotation.transpose() * dir).z;
        let back = origin + dir * (depth / along);
        assert!((back - world).norm() < 1e-6, "{}", (back - world).norm());
        checked += 1;
    }
}

#[test]
fn projection_is_rigid_invariant() {
    let mut r = rng(6);
    for i in 0..50 {
        let cam = random_camera(&mut r, i);
        let p = cam.position + cam.rotation * Vec3::new(0.3, -0.2, -4.0);
        let rot = nalgebra::Rotation3::from_euler_angles(r.random(), r.random(), r.random());
        let shift = Vec3::new(r.random(), r.random(), r.random());
        let moved = CameraConfig {
            position: rot * cam.position + shift,
            rotation: rot.matrix() * cam.rotation,
            ..cam.clone()
        };
        let a = project_point(&cam, &p);
        let b = project_point(&moved, &(rot * p + shift));
        assert!((a.x - b.x).abs() < 1e-7 && (a.y - b.y).abs() < 1e-7);
    }
}

#[test]
fn rig_is_evenly_spaced_and_centered() {
    let spec = RigSpec { count: 4, radius: 10.0, height: 5.0, look_at: Vec3::zeros(), ..RigSpec::default() };
    let cams = make_rig(&spec).unwrap();
    for (k, cam) in cams.iter().enumerate() {
        let az = cam.position.z.atan2(cam.position.x).rem_euclid(std::f64::consts::TAU);
        assert!(angle_error(az, k as f64 * std::f64::consts::FRAC_PI_2) < 1e-12);
        let r = &cam.rotation;
        assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-9);
        let c = project_point(cam, &spec.look_at);
        assert!((c.x - 600.0).abs() < 0.5 && (c.y - 300.0).abs() < 0.5);
    }
    assert!(make_rig(&RigSpec { count: 1, ..RigSpec::default() }).is_err());
}
