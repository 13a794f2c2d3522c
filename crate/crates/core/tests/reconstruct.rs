mod common;

use nalgebra::{DVector, Vector2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use semcom::camera::{project_point, RigSpec};
use semcom::channel::{decode_semantic, encode_semantic, transmit, ChannelConfig, Fading, SemanticCodec};
use semcom::metrics::p2point;
use semcom::reconstruct::fit::{ArmResiduals, BoxResiduals, KeypointObservation};
use semcom::reconstruct::lm::numeric_jacobian;
use semcom::reconstruct::regenerate::box_observations;
use semcom::reconstruct::{
    fit_arm, fit_box, regenerate_m, regenerate_s, triangulate, BaseKnowledge, ControlWeights,
    EdgeSession, Mode, RegenSettings,
};
use semcom::render::{extract_point_cloud, CloudSpec};
use semcom::scene::{animate_with, ArmPose, NUM_JOINTS, NUM_KEYPOINTS};
use semcom::semantics::{extract_frame, DetectorNoise, SemanticFrame};
use semcom::{Error, Vec3};

use common::*;

const RES: (u32, u32) = (300, 150);

fn base() -> BaseKnowledge {
    let s = default_scenario();
    BaseKnowledge::capture(&s, &default_layout(), &rig(RES), 128, 0.2).unwrap()
}

fn truth_frame(base: &BaseKnowledge, t: u32) -> (semcom::scene::SceneState, SemanticFrame) {
    let state = animate_with(&default_scenario(), &base.layout, t).unwrap();
    let frame = extract_frame(&state, &base.cameras, None).unwrap();
    (state, frame)
}

fn noisy(frame: &SemanticFrame, sigma: f64, seed: u64) -> SemanticFrame {
    let noise = DetectorNoise { keypoint_sigma: sigma, box_sigma: sigma, miss_rate: 0.0, seed };
    semcom::semantics::apply_detector_noise(frame, &noise)
}

#[test]
fn triangulation_oracles() {
    let cams = &rig((1200, 600))[..4];
    let p = Vec3::new(0.3, 1.1, -0.4);
    let obs: Vec<_> = cams.iter().map(|c| (c, project_point(c, &p).as_vector())).collect();
    assert!((triangulate(&obs).unwrap() - p).norm() < 1e-6);
    assert!(matches!(triangulate(&obs[..1]), Err(Error::InsufficientObservations(_))));
    let same = vec![obs[0], obs[0]];
    assert!(matches!(triangulate(&same), Err(Error::DegenerateGeometry(_))));

    let wide = RigSpec { radius: 10.0, resolution: (1200, 600), ..RigSpec::default() }.build().unwrap();
    let mut r = rng(21);
    let px = Normal::new(0.0, 1.0).unwrap();
    let mut errors: Vec<f64> = (0..100)
        .map(|_| {
            let p = Vec3::new(r.random_range(-1.0..1.0), r.random_range(0.0..2.0), r.random_range(-1.0..1.0));
            let obs: Vec<_> = wide
                .iter()
                .map(|c| (c, project_point(c, &p).as_vector() + Vector2::new(px.sample(&mut r), px.sample(&mut r))))
                .collect();
            (triangulate(&obs).unwrap() - p).norm()
        })
        .collect();
    errors.sort_by(f64::total_cmp);
    assert!(errors[50] < 0.05, "median {}", errors[50]);
}

#[test]
fn arm_jacobian_matches_central_differences() {
    let model = default_scenario().arm.model;
    let cams = rig((1200, 600));
    let mut r = rng(22);
    for _ in 0..20 {
        let angles = random_angles(&mut r, 1.2);
        let obs: Vec<_> = (0..cams.len())
            .flat_map(|c| (0..NUM_KEYPOINTS).map(move |j| (c, j)))
            .map(|(camera, joint)| KeypointObservation { camera, joint, pixel: Vector2::new(600.0, 300.0) })
            .collect();
        let res = ArmResiduals { model: &model, cameras: &cams, observations: &obs, weight: 1.0 };
        let analytic = res.jacobian_at(&angles);
        let numeric = numeric_jacobian(&DVector::from_column_slice(&angles), 1e-6, |x| {
            res.residuals_at(x.as_slice())
        });
        let rel = (&analytic - &numeric).norm() / analytic.norm();
        assert!(rel < 1e-5, "relative Jacobian error {rel}");
    }
}

#[test]
fn arm_fit_recovers_pose() {
    let base = base();
    let (state, frame) = truth_frame(&base, 2);
    let settings = RegenSettings::default();
    let init = ArmPose::new(state.arm_pose.joint_angles.iter().map(|a| a + 0.1));
    let (pose, stats) = fit_arm(&frame, &base, &init, &settings).unwrap();
    assert!(pose_error(&pose, &state.arm_pose) < 1e-6, "{}", pose_error(&pose, &state.arm_pose));
    assert!(stats.residual_px < 1e-6);
    let (_, at_truth) = fit_arm(&frame, &base, &state.arm_pose, &settings).unwrap();
    assert!(at_truth.iterations <= 2 && at_truth.residual_px < 1e-9);
}

#[test]
fn arm_fit_needs_two_views() {
    let base = base();
    let (state, mut frame) = truth_frame(&base, 0);
    for v in frame.views.iter_mut().skip(1) {
        for k in &mut v.keypoints {
            k.in_frustum = false;
        }
    }
    let err = fit_arm(&frame, &base, &state.arm_pose, &RegenSettings::default()).unwrap_err();
    assert!(matches!(err, Error::InsufficientObservations(_)));
}

#[test]
fn box_fit_oracles() {
    let base = base();
    let (state, frame) = truth_frame(&base, 3);
    let settings = RegenSettings::default();
    let fit = fit_box(&frame, &base, &base.initial_box, &settings).unwrap();
    assert!(!fit.stale);
    assert!((fit.state.center - state.box_state.center).norm() < 1e-4);
    assert_eq!(fit.state.half_extents, base.box_half_extents());
    assert_eq!(fit.state.yaw, base.initial_box.yaw);

    let mut empty = frame.clone();
    for v in &mut empty.views {
        v.bbox = Default::default();
    }
    let stale = fit_box(&empty, &base, &state.box_state, &settings).unwrap();
    assert!(stale.stale);
    assert_eq!(stale.state, state.box_state);
}

#[test]
fn clean_regeneration_reproduces_the_frame() {
    let base = base();
    let previous = base.initial_state().unwrap();
    let (_, frame) = truth_frame(&base, 1);
    let codec = SemanticCodec::for_width(RES.0);
    let received = decode_semantic(&encode_semantic(&frame, &codec).unwrap().bits, &codec).unwrap().frame;
    for regen in [
        regenerate_m(&received, &base, &previous, &RegenSettings::default()).unwrap(),
        regenerate_s(&received, &base, &previous, &ControlWeights::default(), &RegenSettings::default())
            .unwrap(),
    ] {
        assert!(!regen.stale_arm && !regen.stale_box);
        assert_eq!(regen.state.background(), previous.background());
        let again = extract_frame(&regen.state, &base.cameras, None).unwrap();
        for (a, b) in again.views.iter().zip(&received.views) {
            for (p, q) in a.keypoints.iter().zip(&b.keypoints) {
                assert!((p.x - q.x).abs() < 0.1 && (p.y - q.y).abs() < 0.1);
            }
        }
    }
}

#[test]
fn fully_stale_keeps_the_previous_state() {
    let base = base();
    let previous = base.initial_state().unwrap();
    let (_, mut frame) = truth_frame(&base, 2);
    for v in &mut frame.views {
        v.bbox = Default::default();
        for k in &mut v.keypoints {
            k.in_frustum = false;
        }
    }
    let regen = regenerate_m(&frame, &base, &previous, &RegenSettings::default()).unwrap();
    assert!(regen.fully_stale());
    assert_eq!(regen.state.arm_pose, previous.arm_pose);
    assert_eq!(regen.state.box_state, previous.box_state);

    let mut session =
        EdgeSession::new(base.clone(), Mode::M, ControlWeights::default(), RegenSettings::default(), CloudSpec::default())
            .unwrap();
    let (_, good) = truth_frame(&base, 1);
    let first = session.construct_metaverse(&good).unwrap();
    let second = session.construct_metaverse(&frame).unwrap();
    assert!(second.regenerated.fully_stale());
    assert_eq!(second.cloud, first.cloud);
    assert!(!first.cloud.is_empty());
}

#[test]
fn joint_fit_without_edge_term_equals_separate_fits() {
    let base = base();
    let previous = base.initial_state().unwrap();
    let (_, frame) = truth_frame(&base, 2);
    let frame = noisy(&frame, 0.7, 5);
    let settings = RegenSettings { outlier_px: None, ..RegenSettings::default() };
    let weights = ControlWeights { omega_c: 0.0, omega_k: 1.0, omega_b: 1.0 };
    let m = regenerate_m(&frame, &base, &previous, &settings).unwrap();
    let s = regenerate_s(&frame, &base, &previous, &weights, &settings).unwrap();
    assert!(pose_error(&m.state.arm_pose, &s.state.arm_pose) < 1e-6);
    assert!((m.state.box_state.center - s.state.box_state.center).norm() < 1e-6);
}

#[test]
fn zero_keypoint_weight_keeps_the_arm() {
    let base = base();
    let previous = base.initial_state().unwrap();
    let (_, frame) = truth_frame(&base, 3);
    let weights = ControlWeights { omega_c: 0.0, omega_k: 0.0, omega_b: 1.0 };
    let s = regenerate_s(&frame, &base, &previous, &weights, &RegenSettings::default()).unwrap();
    assert_eq!(s.state.arm_pose, previous.arm_pose);
}

#[test]
fn box_residual_does_not_grow_with_its_weight() {
    let base = base();
    let previous = base.initial_state().unwrap();
    let (_, frame) = truth_frame(&base, 3);
    let frame = noisy(&frame, 1.0, 6);
    let settings = RegenSettings::default();
    let obs = box_observations(&frame, &base.cameras, &previous.box_state, settings.gate_px);
    let mut last = f64::INFINITY;
    for omega_b in [0.1, 0.3, 1.0, 3.0, 10.0] {
        let weights = ControlWeights { omega_c: 0.05, omega_k: 1.0, omega_b };
        let s = regenerate_s(&frame, &base, &previous, &weights, &settings).unwrap();
        let res = BoxResiduals {
            cameras: &base.cameras,
            observations: &obs,
            half_extents: base.box_half_extents(),
            yaw: base.initial_box.yaw,
            weight: 1.0,
        };
        let r = res.rms_px(&s.state.box_state.center);
        assert!(r <= last + 1e-9, "ω_b {omega_b}: {r} > {last}");
        last = r;
    }
}

#[test]
fn every_logged_fit_is_monotone() {
    let base = base();
    let codec = SemanticCodec::for_width(RES.0);
    let settings = RegenSettings { gate_px: Some(15.0), ..RegenSettings::default() };
    let mut logs = 0;
    for mode in [Mode::M, Mode::S] {
        for snr in [0.0, 5.0, 10.0] {
            let mut session =
                EdgeSession::new(base.clone(), mode, ControlWeights::default(), settings, CloudSpec::default())
                    .unwrap();
            for t in 0..4 {
                let (_, frame) = truth_frame(&base, t);
                let bits = encode_semantic(&frame, &codec).unwrap().bits;
                let ch = ChannelConfig { snr_db: snr, fading: Fading::Rayleigh, seed: 40 + t as u64, link_rate_bps: 160e6 };
                let received = decode_semantic(&transmit(&bits, &ch).unwrap().0, &codec).unwrap().frame;
                let regen = session.regenerate(&received).unwrap();
                for log in &regen.fit.cost_logs {
                    logs += 1;
                    assert!(log.windows(2).all(|w| w[1] <= w[0]), "{log:?}");
                }
                session.construct_metaverse(&received).unwrap();
            }
        }
    }
    assert!(logs > 0);
}

#[test]
fn base_knowledge_round_trip() {
    let base = base();
    let bytes = base.to_bytes();
    let back = BaseKnowledge::from_bytes(&bytes).unwrap();
    assert_eq!(back.cameras, base.cameras);
    assert_eq!(back.edge_maps, base.edge_maps);
    assert_eq!(*back.layout, *base.layout);
    assert_eq!(back.initial_pose, base.initial_pose);
    assert_eq!(back.initial_box, base.initial_box);
    assert_eq!(base.size_bits(), bytes.len() * 8);
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(BaseKnowledge::from_bytes(&longer).is_err());
    assert!(BaseKnowledge::from_bytes(&bytes[..bytes.len() / 2]).is_err());
}

#[test]
fn clean_cloud_is_within_one_voxel() {
    let base = base();
    let spec = CloudSpec::default();
    let mut session =
        EdgeSession::new(base.clone(), Mode::S, ControlWeights::default(), RegenSettings::default(), spec.clone())
            .unwrap();
    for t in 0..3 {
        let (state, frame) = truth_frame(&base, t);
        let built = session.construct_metaverse(&frame).unwrap();
        let truth = extract_point_cloud(&state, &spec).unwrap();
        assert!(p2point(&truth, &built.cloud).unwrap().rms_m < spec.voxel_size);
        assert_eq!(built.regenerated.state.arm_pose.joint_angles.len(), NUM_JOINTS);
    }
}
