//! Evaluation metrics: key-point error, point-cloud distance and delay.

use rayon::prelude::*;
use rstar::RTree;
use serde::{Deserialize, Serialize};

use crate::channel::{airtime, ChannelConfig};
use crate::error::contract;
use crate::render::PointCloud;
use crate::scene::NUM_KEYPOINTS;
use crate::semantics::{check_same_structure, SemanticFrame};
use crate::{Result, Vec3};

/// Default PCK threshold (px).
pub const DEFAULT_PCK_PX: f64 = 10.0;

/// Points compared per view: the arm keypoints and two box corners.
pub const POINTS_PER_VIEW: usize = NUM_KEYPOINTS + 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpeReport {
    /// Mean distance over keypoints and box corners of every view.
    pub mean_px: f64,
    /// Mean distance of each keypoint over views.
    pub per_keypoint_px: [f64; NUM_KEYPOINTS],
    /// Mean distance within each view.
    pub per_view_px: Vec<f64>,
    /// Fraction of keypoints within `d` pixels.
    pub pck_at_d: f64,
    pub d_px: f64,
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Pixel distances of one view pair: 7 keypoints then 2 box corners.
pub fn view_distances(
    truth: &crate::semantics::ViewSemantics,
    recovered: &crate::semantics::ViewSemantics,
) -> [f64; POINTS_PER_VIEW] {
    let mut out = [0.0; POINTS_PER_VIEW];
    for (j, (a, b)) in truth.keypoints.iter().zip(&recovered.keypoints).enumerate() {
        out[j] = dist((a.x, a.y), (b.x, b.y));
    }
    for (k, (a, b)) in truth.bbox.corners().iter().zip(recovered.bbox.corners()).enumerate() {
        out[NUM_KEYPOINTS + k] = dist(*a, b);
    }
    out
}

pub fn kpe(truth: &SemanticFrame, recovered: &SemanticFrame, d: f64) -> Result<KpeReport> {
    check_same_structure(truth, recovered)?;
    if !(d > 0.0) {
        return Err(contract("PCK threshold must be positive"));
    }
    if truth.views.is_empty() {
        return Err(contract("KPE needs at least one view"));
    }
    let n = truth.views.len() as f64;
    let mut total = 0.0;
    let mut per_keypoint = [0.0; NUM_KEYPOINTS];
    let mut per_view = Vec::with_capacity(truth.views.len());
    let mut within = 0usize;
    for (a, b) in truth.views.iter().zip(&recovered.views) {
        let ds = view_distances(a, b);
        let sum: f64 = ds.iter().sum();
        total += sum;
        per_view.push(sum / POINTS_PER_VIEW as f64);
        for j in 0..NUM_KEYPOINTS {
            per_keypoint[j] += ds[j] / n;
            within += (ds[j] <= d) as usize;
        }
    }
    Ok(KpeReport {
        mean_px: total / (n * POINTS_PER_VIEW as f64),
        per_keypoint_px: per_keypoint,
        per_view_px: per_view,
        pck_at_d: within as f64 / (n * NUM_KEYPOINTS as f64),
        d_px: d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct P2PointReport {
    pub rms_m: f64,
    /// RMS distance from points of the first cloud to the second.
    pub forward_rms_m: f64,
    pub backward_rms_m: f64,
}

fn as_array(p: &Vec3) -> [f64; 3] {
    [p.x, p.y, p.z]
}

/// RMS over `from` of the distance to the nearest point of `to`.
fn directed_rms(from: &PointCloud, to: &PointCloud) -> f64 {
    let tree = RTree::bulk_load(to.positions().map(as_array).collect());
    let sum: f64 = from
        .points
        .par_iter()
        .map(|p| {
            let q = tree.nearest_neighbor(&as_array(&p.position)).expect("nonempty cloud");
            (p.position - Vec3::new(q[0], q[1], q[2])).norm_squared()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    (sum / from.len() as f64).sqrt()
}

/// Symmetric RMS nearest-neighbor distance.
pub fn p2point(a: &PointCloud, b: &PointCloud) -> Result<P2PointReport> {
    if a.is_empty() || b.is_empty() {
        return Err(contract("P2Point needs two nonempty clouds"));
    }
    let forward = directed_rms(a, b);
    let backward = directed_rms(b, a);
    Ok(P2PointReport {
        rms_m: ((forward * forward + backward * backward) / 2.0).sqrt(),
        forward_rms_m: forward,
        backward_rms_m: backward,
    })
}

/// Per-frame delay breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TdReport {
    pub extract_s: f64,
    /// Payload airtime plus the per-frame share of the base knowledge.
    pub airtime_s: f64,
    /// The base-knowledge share included in `airtime_s`.
    pub base_airtime_s: f64,
    pub generate_s: f64,
    pub total_s: f64,
}

pub fn td(
    extract_s: f64,
    payload_bits: usize,
    base_bits_amortized: f64,
    cfg: &ChannelConfig,
    generate_s: f64,
) -> Result<TdReport> {
    if !(extract_s >= 0.0 && generate_s >= 0.0 && base_bits_amortized >= 0.0) {
        return Err(contract("delay components must be non-negative"));
    }
    let base_airtime_s = base_bits_amortized / cfg.link_rate_bps;
    let airtime_s = airtime(payload_bits, cfg) + base_airtime_s;
    Ok(TdReport {
        extract_s,
        airtime_s,
        base_airtime_s,
        generate_s,
        total_s: extract_s + airtime_s + generate_s,
    })
}
