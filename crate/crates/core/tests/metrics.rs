mod common;

use proptest::prelude::*;
use semcom::camera::ImagePoint;
use semcom::channel::ChannelConfig;
use semcom::metrics::{kpe, p2point, td};
use semcom::render::{CloudPoint, PointCloud};
use semcom::semantics::{BoxObservation, SemanticFrame, ViewSemantics};
use semcom::Vec3;

use common::*;

fn frame_from(values: &[f64]) -> SemanticFrame {
    // 18 values per view: 7 (x, y) pairs then cx, cy, w, h
    let views = values
        .chunks_exact(18)
        .enumerate()
        .map(|(k, v)| ViewSemantics {
            camera_id: k as u32,
            keypoints: std::array::from_fn(|j| ImagePoint { x: v[2 * j], y: v[2 * j + 1], in_frustum: true }),
            bbox: BoxObservation { cx: v[14], cy: v[15], w: v[16].abs(), h: v[17].abs() },
        })
        .collect();
    SemanticFrame { time: 0, views }
}

/// Mean over every keypoint and both box corners, written out longhand.
fn kpe_oracle(a: &SemanticFrame, b: &SemanticFrame, d: f64) -> (f64, f64) {
    let mut dists = Vec::new();
    let mut hits = 0;
    let mut keypoints = 0;
    for (va, vb) in a.views.iter().zip(&b.views) {
        for (p, q) in va.keypoints.iter().zip(&vb.keypoints) {
            let e = ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt();
            dists.push(e);
            keypoints += 1;
            if e <= d {
                hits += 1;
            }
        }
        for sign in [-1.0, 1.0] {
            let ca = (va.bbox.cx + sign * va.bbox.w / 2.0, va.bbox.cy + sign * va.bbox.h / 2.0);
            let cb = (vb.bbox.cx + sign * vb.bbox.w / 2.0, vb.bbox.cy + sign * vb.bbox.h / 2.0);
            dists.push(((ca.0 - cb.0).powi(2) + (ca.1 - cb.1).powi(2)).sqrt());
        }
    }
    (dists.iter().sum::<f64>() / dists.len() as f64, hits as f64 / keypoints as f64)
}

fn frames(views: usize) -> impl Strategy<Value = SemanticFrame> {
    prop::collection::vec(0.0f64..600.0, 18 * views).prop_map(|v| frame_from(&v))
}

#[test]
fn kpe_examples() {
    let a = frame_from(&[100.0; 36]);
    let r = kpe(&a, &a, 10.0).unwrap();
    assert_eq!((r.mean_px, r.pck_at_d), (0.0, 1.0));
    let mut b = a.clone();
    for v in &mut b.views {
        for k in &mut v.keypoints {
            k.x += 3.0;
            k.y += 4.0;
        }
        v.bbox.cx += 3.0;
        v.bbox.cy += 4.0;
    }
    let r = kpe(&a, &b, 10.0).unwrap();
    assert!((r.mean_px - 5.0).abs() < 1e-12);
    assert!(r.per_keypoint_px.iter().all(|k| (k - 5.0).abs() < 1e-12));
    assert!(kpe(&a, &frame_from(&[0.0; 18]), 10.0).is_err());
    assert!(kpe(&a, &a, 0.0).is_err());
}

proptest! {
    #[test]
    fn kpe_equals_longhand(a in frames(3), b in frames(3), d in 1.0f64..200.0) {
        let r = kpe(&a, &b, d).unwrap();
        let (mean, pck) = kpe_oracle(&a, &b, d);
        prop_assert!((r.mean_px - mean).abs() < 1e-9);
        prop_assert!((r.pck_at_d - pck).abs() < 1e-12);
    }

    #[test]
    fn kpe_is_a_pseudometric(a in frames(2), b in frames(2), c in frames(2)) {
        let m = |x: &SemanticFrame, y: &SemanticFrame| kpe(x, y, 10.0).unwrap().mean_px;
        prop_assert_eq!(m(&a, &a), 0.0);
        prop_assert!((m(&a, &b) - m(&b, &a)).abs() < 1e-12);
        prop_assert!(m(&a, &c) <= m(&a, &b) + m(&b, &c) + 1e-9);
    }
}

#[test]
fn p2point_equals_brute_force() {
    let mut r = rng(31);
    for (n, m) in [(100, 100), (1000, 700), (1, 1000), (333, 1)] {
        let a = random_cloud(&mut r, n);
        let b = random_cloud(&mut r, m);
        let got = p2point(&a, &b).unwrap();
        let (rms, f, bw) = brute_p2point(&a, &b);
        assert!((got.rms_m - rms).abs() <= 1e-12);
        assert!((got.forward_rms_m - f).abs() <= 1e-12);
        assert!((got.backward_rms_m - bw).abs() <= 1e-12);
        let swapped = p2point(&b, &a).unwrap();
        assert_eq!(swapped.forward_rms_m, got.backward_rms_m);
        assert_eq!(swapped.backward_rms_m, got.forward_rms_m);
    }
}

#[test]
fn p2point_with_duplicate_points() {
    let mut r = rng(32);
    let mut a = random_cloud(&mut r, 200);
    a.points.extend(a.points.clone());
    let b = random_cloud(&mut r, 50);
    let (rms, _, _) = brute_p2point(&a, &b);
    assert!((p2point(&a, &b).unwrap().rms_m - rms).abs() <= 1e-12);
    assert_eq!(p2point(&a, &a).unwrap().rms_m, 0.0);
}

#[test]
fn p2point_examples() {
    let point = |x: f64| PointCloud { points: vec![CloudPoint { position: Vec3::new(x, 0.0, 0.0), color: [0; 3] }] };
    assert_eq!(p2point(&point(0.0), &point(1.0)).unwrap().rms_m, 1.0);
    assert!(p2point(&point(0.0), &PointCloud::default()).is_err());
}

#[test]
fn delay_examples() {
    let cfg = ChannelConfig::noiseless();
    let image = td(0.0, 8 * 17_280_000, 0.0, &cfg, 0.0).unwrap();
    assert!((image.airtime_s - 0.864).abs() < 1e-12);
    let semantic = td(0.03, 2392, 0.0, &cfg, 0.62).unwrap();
    assert!((semantic.airtime_s - 2392.0 / 160e6).abs() < 1e-15);
    assert!(semantic.generate_s > 1000.0 * semantic.airtime_s);
    assert!((semantic.total_s - (0.03 + 0.62 + semantic.airtime_s)).abs() < 1e-15);
    let zero = td(0.0, 0, 0.0, &cfg, 0.0).unwrap();
    assert_eq!(zero, Default::default());
    let shared = td(0.0, 100, 1600.0, &cfg, 0.0).unwrap();
    assert!((shared.base_airtime_s - 1e-5).abs() < 1e-18);
    assert!((shared.airtime_s - (100.0 / 160e6 + 1e-5)).abs() < 1e-18);
    assert!(td(-1.0, 0, 0.0, &cfg, 0.0).is_err());
}
