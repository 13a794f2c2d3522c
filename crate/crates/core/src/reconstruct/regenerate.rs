//! Edge-side regeneration: refit the parametric scene to received
//! semantics, then rebuild the point cloud.
//!
//! M mode fits the arm and the box separately; S mode fits both jointly
//! under control weights, with an extra penalty that keeps the visible
//! static background consistent with the base-knowledge edge maps.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use super::base::BaseKnowledge;
use super::fit::{
    fit_arm_observations, fit_box_center, lift_above_floor, ArmResiduals, BoxObservationPoint,
    BoxResiduals, FitResult, KeypointObservation, LmFitStats,
};
use super::lm::{levenberg_marquardt, LmSettings, Problem};
use crate::camera::CameraConfig;
use crate::error::config;
use crate::render::{extract_point_cloud, CloudSpec, PointCloud};
use crate::scene::{
    kinematic_chain, Aabb, ArmModel, ArmPose, BoxState, SceneState, Shape, NUM_JOINTS,
};
use crate::semantics::{project_box, SemanticFrame};
use crate::{Error, Result, Vec3};

/// Weights of the edge-map, arm and box terms of the joint fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlWeights {
    pub omega_c: f64,
    pub omega_k: f64,
    pub omega_b: f64,
}

impl Default for ControlWeights {
    fn default() -> Self {
        ControlWeights { omega_c: 0.05, omega_k: 1.0, omega_b: 1.0 }
    }
}

impl ControlWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.omega_c, self.omega_k, self.omega_b];
        if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(config("control weights must be finite and non-negative"));
        }
        if w.iter().all(|x| *x == 0.0) {
            return Err(config("control weights must not all be zero"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    /// Objects regenerated one after the other.
    M,
    /// Objects regenerated jointly.
    S,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegenSettings {
    pub lm: LmSettings,
    /// Received points further than this from where the previous state
    /// projects are ignored. `None` keeps every point.
    pub gate_px: Option<f64>,
    /// Columns and rows of the subsampled edge-consistency grid.
    pub grid: (u32, u32),
    /// After a fit, points whose reprojection error exceeds
    /// `max(outlier_px, OUTLIER_MEDIAN_FACTOR · median error)` are dropped
    /// and the fit is repeated. `None` disables rejection.
    pub outlier_px: Option<f64>,
}

impl Default for RegenSettings {
    fn default() -> Self {
        RegenSettings { lm: LmSettings::default(), gate_px: None, grid: (64, 32), outlier_px: Some(1.0) }
    }
}

/// Scale of the median-relative outlier threshold.
pub const OUTLIER_MEDIAN_FACTOR: f64 = 2.5;

/// Upper bound on reject-and-refit rounds.
pub const MAX_REJECTION_ROUNDS: usize = 5;

/// Pixel error of each point from a stacked `(dx, dy)` residual vector.
fn point_errors(r: &DVector<f64>) -> Vec<f64> {
    r.as_slice().chunks_exact(2).map(|c| c[0].hypot(c[1])).collect()
}

fn median_of(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Points of `obs` whose error is within the rejection threshold.
fn inliers<T: Copy>(obs: &[T], errors: &[f64], outlier_px: f64) -> Vec<T> {
    let threshold = outlier_px.max(OUTLIER_MEDIAN_FACTOR * median_of(errors));
    obs.iter().zip(errors).filter(|(_, e)| **e <= threshold).map(|(o, _)| *o).collect()
}

/// A regenerated scene with the fit that produced it.
#[derive(Debug, Clone)]
pub struct Regenerated {
    pub state: SceneState,
    pub fit: FitResult,
    /// The arm pose was carried over from the previous frame.
    pub stale_arm: bool,
    /// The box was carried over from the previous frame.
    pub stale_box: bool,
}

impl Regenerated {
    pub fn fully_stale(&self) -> bool {
        self.stale_arm && self.stale_box
    }
}

fn inside_image(cam: &CameraConfig, p: &Vector2<f64>) -> bool {
    p.x >= 0.0 && p.y >= 0.0 && p.x <= cam.width() as f64 && p.y <= cam.height() as f64
}

/// Keypoints usable for fitting: flagged valid, inside the image and, when
/// a gate is given, close to where `prior` projects. View `k` of the frame
/// belongs to camera `k`.
pub fn keypoint_observations(
    frame: &SemanticFrame,
    cameras: &[CameraConfig],
    model: &ArmModel,
    prior: &ArmPose,
    gate_px: Option<f64>,
) -> Result<Vec<KeypointObservation>> {
    let chain = kinematic_chain(model, prior)?;
    let mut out = Vec::new();
    for (c, (view, cam)) in frame.views.iter().zip(cameras).enumerate() {
        for (joint, kp) in view.keypoints.iter().enumerate() {
            let pixel = kp.as_vector();
            if !kp.in_frustum || !inside_image(cam, &pixel) {
                continue;
            }
            if let Some(gate) = gate_px {
                let (predicted, _) = cam.project_with_jacobian(&chain.keypoints[joint]);
                if !((predicted - pixel).norm() <= gate) {
                    continue;
                }
            }
            out.push(KeypointObservation { camera: c, joint, pixel });
        }
    }
    Ok(out)
}

/// Box centers usable for fitting: nonzero boxes centered inside the image,
/// gated against the projection of `prior` like keypoints.
pub fn box_observations(
    frame: &SemanticFrame,
    cameras: &[CameraConfig],
    prior: &BoxState,
    gate_px: Option<f64>,
) -> Vec<BoxObservationPoint> {
    let mut out = Vec::new();
    for (c, (view, cam)) in frame.views.iter().zip(cameras).enumerate() {
        let b = &view.bbox;
        let pixel = Vector2::new(b.cx, b.cy);
        if b.is_empty() || !inside_image(cam, &pixel) {
            continue;
        }
        if let Some(gate) = gate_px {
            let p = project_box(prior, cam);
            if p.is_empty() || !((Vector2::new(p.cx, p.cy) - pixel).norm() <= gate) {
                continue;
            }
        }
        out.push(BoxObservationPoint { camera: c, pixel });
    }
    out
}

fn distinct_views(cameras: impl Iterator<Item = usize>) -> usize {
    let mut v: Vec<usize> = cameras.collect();
    v.sort_unstable();
    v.dedup();
    v.len()
}

/// Fits the arm pose to a received frame, starting from `init`.
pub fn fit_arm(
    frame: &SemanticFrame,
    base: &BaseKnowledge,
    init: &ArmPose,
    settings: &RegenSettings,
) -> Result<(ArmPose, LmFitStats)> {
    let obs = keypoint_observations(frame, &base.cameras, &base.layout.arm, init, settings.gate_px)?;
    fit_arm_observations(&base.layout.arm, &base.cameras, &obs, init, &settings.lm)
}

/// Box recovered from one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxFit {
    pub state: BoxState,
    /// Too few views: `state` is the previous box.
    pub stale: bool,
    pub stats: Option<LmFitStats>,
}

/// Fits the box center; size comes from base knowledge and yaw stays at
/// its initial value. Falls back to `previous` when fewer than two views
/// see the box.
pub fn fit_box(
    frame: &SemanticFrame,
    base: &BaseKnowledge,
    previous: &BoxState,
    settings: &RegenSettings,
) -> Result<BoxFit> {
    let obs = box_observations(frame, &base.cameras, previous, settings.gate_px);
    Ok(robust_box_fit(base, obs, previous, settings)?.0)
}

fn robust_box_fit(
    base: &BaseKnowledge,
    mut obs: Vec<BoxObservationPoint>,
    previous: &BoxState,
    settings: &RegenSettings,
) -> Result<(BoxFit, Vec<LmFitStats>, usize)> {
    let half = base.box_half_extents();
    let yaw = base.initial_box.yaw;
    let fit = |obs: &[BoxObservationPoint], fallback: &Vec3| {
        fit_box_center(&base.cameras, obs, &half, yaw, fallback, &settings.lm)
    };
    let (mut center, first) = match fit(&obs, &previous.center) {
        Ok(f) => f,
        Err(Error::InsufficientObservations(_)) => {
            return Ok((BoxFit { state: *previous, stale: true, stats: None }, Vec::new(), 0));
        }
        Err(e) => return Err(e),
    };
    let mut stats = vec![first];
    if let Some(outlier_px) = settings.outlier_px {
        for _ in 0..MAX_REJECTION_ROUNDS {
            let problem = BoxResiduals { cameras: &base.cameras, observations: &obs, half_extents: half, yaw, weight: 1.0 };
            let kept = inliers(&obs, &point_errors(&problem.residuals_at(&center)), outlier_px);
            if kept.len() == obs.len() || distinct_views(kept.iter().map(|o| o.camera)) < 2 {
                break;
            }
            obs = kept;
            let (c, st) = fit(&obs, &center)?;
            center = c;
            stats.push(st);
        }
    }
    let last = stats.last().cloned();
    let state = BoxState { center, half_extents: half, yaw };
    Ok((BoxFit { state, stale: false, stats: last }, stats, obs.len()))
}

/// Arm fit with iterative outlier rejection. `None` when fewer than two
/// views carry usable keypoints.
fn robust_arm_fit(
    base: &BaseKnowledge,
    mut obs: Vec<KeypointObservation>,
    init: &ArmPose,
    settings: &RegenSettings,
) -> Result<Option<(ArmPose, Vec<LmFitStats>, usize)>> {
    let model = &base.layout.arm;
    let (mut pose, first) = match fit_arm_observations(model, &base.cameras, &obs, init, &settings.lm) {
        Ok(f) => f,
        Err(Error::InsufficientObservations(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut stats = vec![first];
    if let Some(outlier_px) = settings.outlier_px {
        for _ in 0..MAX_REJECTION_ROUNDS {
            let problem = ArmResiduals { model, cameras: &base.cameras, observations: &obs, weight: 1.0 };
            let kept = inliers(&obs, &point_errors(&problem.residuals_at(&pose.joint_angles)), outlier_px);
            if kept.len() == obs.len() || distinct_views(kept.iter().map(|o| o.camera)) < 2 {
                break;
            }
            obs = kept;
            let (p, st) = fit_arm_observations(model, &base.cameras, &obs, &pose, &settings.lm)?;
            pose = p;
            stats.push(st);
        }
    }
    Ok(Some((pose, stats, obs.len())))
}

fn combined_rms(parts: &[(f64, usize)]) -> f64 {
    let n: usize = parts.iter().map(|p| p.1).sum();
    if n == 0 {
        return 0.0;
    }
    (parts.iter().map(|(rms, k)| rms * rms * *k as f64).sum::<f64>() / n as f64).sqrt()
}

/// Separate regeneration: the arm from keypoints, then the box from box
/// centers, both placed into the base-knowledge background.
pub fn regenerate_m(
    frame: &SemanticFrame,
    base: &BaseKnowledge,
    previous: &SceneState,
    settings: &RegenSettings,
) -> Result<Regenerated> {
    let arm_obs = keypoint_observations(
        frame,
        &base.cameras,
        &base.layout.arm,
        &previous.arm_pose,
        settings.gate_px,
    )?;
    let arm = robust_arm_fit(base, arm_obs, &previous.arm_pose, settings)?;
    let box_obs = box_observations(frame, &base.cameras, &previous.box_state, settings.gate_px);
    let (boxed, box_stats, box_count) = robust_box_fit(base, box_obs, &previous.box_state, settings)?;

    let mut logs = Vec::new();
    let mut iterations = 0;
    let mut converged = true;
    let mut parts = Vec::new();
    let mut absorb = |stats: &[LmFitStats], count: usize| {
        for st in stats {
            logs.push(st.cost_log.clone());
            iterations += st.iterations;
        }
        if let Some(last) = stats.last() {
            converged &= last.converged;
            parts.push((last.residual_px, count));
        }
    };
    let pose = match &arm {
        Some((pose, stats, count)) => {
            absorb(stats, *count);
            pose.clone()
        }
        None => previous.arm_pose.clone(),
    };
    absorb(&box_stats, box_count);
    let state = SceneState::new(frame.time, pose.clone(), boxed.state, base.layout.clone())?;
    Ok(Regenerated {
        state,
        fit: FitResult {
            arm_pose: pose,
            box_state: boxed.state,
            residual_px: combined_rms(&parts),
            iterations,
            converged,
            cost_logs: logs,
        },
        stale_arm: arm.is_none(),
        stale_box: boxed.stale,
    })
}

/// Coarse per-camera grid used by the edge-consistency penalty.
///
/// Each cell holds one ray through its center, the depth of the first
/// static surface along it, whether the static background has an edge in
/// that cell, and whether the base edge map has any edge pixel in the
/// cell's pixel block.
#[derive(Debug, Clone)]
pub struct SilhouetteGrid {
    cells: Vec<GridCell>,
}

#[derive(Debug, Clone)]
struct GridCell {
    origin: Vec3,
    dir: Vec3,
    static_depth: f64,
    static_edge: bool,
    base_edge: bool,
}

fn ray_sphere(origin: &Vec3, dir: &Vec3, center: &Vec3, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    if -b + s < 0.0 {
        return None;
    }
    Some((-b - s).max(0.0))
}

fn ray_entry(interval: Option<(f64, f64)>) -> Option<f64> {
    interval.filter(|(_, t1)| *t1 >= 0.0).map(|(t0, _)| t0.max(0.0))
}

/// Squared distance between segments `p0–p1` and `q0–q1`.
fn segment_distance_squared(p0: &Vec3, p1: &Vec3, q0: &Vec3, q1: &Vec3) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let (a, e, f) = (d1.norm_squared(), d2.norm_squared(), d2.dot(&r));
    let (s, t);
    if a <= f64::EPSILON && e <= f64::EPSILON {
        return r.norm_squared();
    }
    if a <= f64::EPSILON {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= f64::EPSILON {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 0.0 { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p0 + d1 * s) - (q0 + d2 * t)).norm_squared()
}

impl SilhouetteGrid {
    pub fn build(base: &BaseKnowledge, cols: u32, rows: u32) -> Result<Self> {
        if cols < 2 || rows < 2 {
            return Err(config("edge-consistency grid needs at least 2×2 cells"));
        }
        let mut cells = Vec::new();
        for (cam, edges) in base.cameras.iter().zip(&base.edge_maps) {
            let (w, h) = (cam.width(), cam.height());
            let mut ids = Vec::with_capacity((cols * rows) as usize);
            let start = cells.len();
            for j in 0..rows {
                for i in 0..cols {
                    let x = (i as f64 + 0.5) * w as f64 / cols as f64;
                    let y = (j as f64 + 0.5) * h as f64 / rows as f64;
                    let (origin, dir) = cam.pixel_ray(x, y);
                    let mut depth = cam.far;
                    let mut id = usize::MAX;
                    for (k, prim) in base.layout.background.iter().enumerate() {
                        if prim.density <= 0.0 {
                            continue;
                        }
                        let t = match prim.shape {
                            Shape::Slab { min, max } => {
                                ray_entry(Aabb { min, max }.ray_interval(&origin, &dir))
                            }
                            Shape::Sphere { center, radius } => {
                                ray_sphere(&origin, &dir, &center, radius)
                            }
                        };
                        if let Some(t) = t.filter(|t| *t < depth) {
                            depth = t;
                            id = k;
                        }
                    }
                    ids.push(id);
                    let (x0, x1) = (i * w / cols, ((i + 1) * w / cols).max(i * w / cols + 1));
                    let (y0, y1) = (j * h / rows, ((j + 1) * h / rows).max(j * h / rows + 1));
                    let base_edge = (y0..y1.min(h)).any(|yy| (x0..x1.min(w)).any(|xx| edges.get(xx, yy)));
                    cells.push(GridCell {
                        origin,
                        dir,
                        static_depth: depth,
                        static_edge: false,
                        base_edge,
                    });
                }
            }
            for j in 0..rows as usize {
                for i in 0..cols as usize {
                    let k = j * cols as usize + i;
                    let right = i + 1 < cols as usize && ids[k] != ids[k + 1];
                    let down = j + 1 < rows as usize && ids[k] != ids[k + cols as usize];
                    cells[start + k].static_edge = right || down;
                }
            }
        }
        Ok(SilhouetteGrid { cells })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Fraction of cells where the static edges left visible by the
    /// candidate objects disagree with the base edge maps.
    pub fn disagreement(&self, model: &ArmModel, pose: &ArmPose, b: &BoxState) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        let Ok(chain) = kinematic_chain(model, pose) else {
            return 1.0;
        };
        let unit = Aabb { min: -b.half_extents, max: b.half_extents };
        let link_r2 = model.link_radius * model.link_radius;
        let mut wrong = 0usize;
        for cell in &self.cells {
            let far = cell.origin + cell.dir * cell.static_depth;
            let occluded = ray_entry(
                unit.ray_interval(&b.to_local(&cell.origin), &b.rotate_to_local(&cell.dir)),
            )
            .is_some_and(|t| t < cell.static_depth)
                || chain.keypoints.iter().any(|k| {
                    ray_sphere(&cell.origin, &cell.dir, k, model.marker_radius)
                        .is_some_and(|t| t < cell.static_depth)
                })
                || (0..NUM_JOINTS).any(|i| {
                    segment_distance_squared(
                        &cell.origin,
                        &far,
                        &chain.keypoints[i],
                        &chain.keypoints[i + 1],
                    ) <= link_r2
                });
            if (cell.static_edge && !occluded) != cell.base_edge {
                wrong += 1;
            }
        }
        wrong as f64 / self.cells.len() as f64
    }
}

/// Joint objective over six joint angles followed by the box center.
struct JointProblem<'a> {
    arm: ArmResiduals<'a>,
    boxes: BoxResiduals<'a>,
    silhouettes: Option<(&'a SilhouetteGrid, f64)>,
}

const JOINT_PARAMS: usize = NUM_JOINTS + 3;

impl JointProblem<'_> {
    fn split(x: &DVector<f64>) -> (&[f64], Vec3) {
        let s = x.as_slice();
        (&s[..NUM_JOINTS], Vec3::new(s[NUM_JOINTS], s[NUM_JOINTS + 1], s[NUM_JOINTS + 2]))
    }
}

impl Problem for JointProblem<'_> {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let (angles, center) = Self::split(x);
        let a = self.arm.residuals_at(angles);
        let b = self.boxes.residuals_at(&center);
        DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (angles, center) = Self::split(x);
        let ja = self.arm.jacobian_at(angles);
        let jb = self.boxes.jacobian_at(&center);
        let mut jac = DMatrix::zeros(ja.nrows() + jb.nrows(), JOINT_PARAMS);
        jac.view_mut((0, 0), (ja.nrows(), NUM_JOINTS)).copy_from(&ja);
        jac.view_mut((ja.nrows(), NUM_JOINTS), (jb.nrows(), 3)).copy_from(&jb);
        jac
    }

    fn penalty(&self, x: &DVector<f64>) -> f64 {
        let Some((grid, omega)) = self.silhouettes else {
            return 0.0;
        };
        let (angles, center) = Self::split(x);
        let b = BoxState {
            center,
            half_extents: self.boxes.half_extents,
            yaw: self.boxes.yaw,
        };
        omega * grid.disagreement(self.arm.model, &ArmPose { joint_angles: angles.to_vec() }, &b)
    }
}

/// Joint regeneration of arm pose and box center under `weights`.
pub fn regenerate_s(
    frame: &SemanticFrame,
    base: &BaseKnowledge,
    previous: &SceneState,
    weights: &ControlWeights,
    settings: &RegenSettings,
) -> Result<Regenerated> {
    let grid = if weights.omega_c > 0.0 {
        Some(SilhouetteGrid::build(base, settings.grid.0, settings.grid.1)?)
    } else {
        None
    };
    regenerate_s_with(frame, base, previous, weights, settings, grid.as_ref())
}

/// [`regenerate_s`] with a prebuilt edge-consistency grid.
pub fn regenerate_s_with(
    frame: &SemanticFrame,
    base: &BaseKnowledge,
    previous: &SceneState,
    weights: &ControlWeights,
    settings: &RegenSettings,
    grid: Option<&SilhouetteGrid>,
) -> Result<Regenerated> {
    weights.validate()?;
    let model = &base.layout.arm;
    let half = base.box_half_extents();
    let yaw = base.initial_box.yaw;
    let mut arm_obs =
        keypoint_observations(frame, &base.cameras, model, &previous.arm_pose, settings.gate_px)?;
    let mut box_obs = box_observations(frame, &base.cameras, &previous.box_state, settings.gate_px);
    let stale_arm = distinct_views(arm_obs.iter().map(|o| o.camera)) < 2;
    let stale_box = distinct_views(box_obs.iter().map(|o| o.camera)) < 2;
    if stale_arm {
        arm_obs.clear();
    }
    if stale_box {
        box_obs.clear();
    }
    if stale_arm && stale_box {
        let mut state = previous.clone();
        state.time = frame.time;
        return Ok(Regenerated {
            fit: FitResult {
                arm_pose: state.arm_pose.clone(),
                box_state: state.box_state,
                residual_px: 0.0,
                iterations: 0,
                converged: false,
                cost_logs: Vec::new(),
            },
            state,
            stale_arm,
            stale_box,
        });
    }

    let box_init = if stale_box {
        previous.box_state.center
    } else {
        let rays: Vec<_> = box_obs.iter().map(|o| (&base.cameras[o.camera], o.pixel)).collect();
        super::fit::triangulate(&rays).unwrap_or(previous.box_state.center)
    };
    let mut x = DVector::from_iterator(
        JOINT_PARAMS,
        previous.arm_pose.joint_angles.iter().copied().chain(box_init.iter().copied()),
    );
    let silhouettes = grid.filter(|_| weights.omega_c > 0.0).map(|g| (g, weights.omega_c));
    let mut logs = Vec::new();
    let mut iterations = 0;
    let mut converged;
    let mut round = 0;
    loop {
        let problem = JointProblem {
            arm: ArmResiduals {
                model,
                cameras: &base.cameras,
                observations: &arm_obs,
                weight: weights.omega_k.sqrt(),
            },
            boxes: BoxResiduals {
                cameras: &base.cameras,
                observations: &box_obs,
                half_extents: half,
                yaw,
                weight: weights.omega_b.sqrt(),
            },
            silhouettes,
        };
        let out = levenberg_marquardt(&problem, x, &settings.lm);
        x = out.params;
        logs.push(out.cost_log);
        iterations += out.iterations;
        converged = out.converged;
        let Some(outlier_px) = settings.outlier_px else { break };
        if round == MAX_REJECTION_ROUNDS {
            break;
        }
        round += 1;
        let (angles, center) = JointProblem::split(&x);
        let arm_unit = ArmResiduals { weight: 1.0, ..problem.arm };
        let box_unit = BoxResiduals { weight: 1.0, ..problem.boxes };
        let kept_arm = inliers(&arm_obs, &point_errors(&arm_unit.residuals_at(angles)), outlier_px);
        let kept_box = inliers(&box_obs, &point_errors(&box_unit.residuals_at(&center)), outlier_px);
        let mut changed = false;
        if kept_arm.len() < arm_obs.len() && distinct_views(kept_arm.iter().map(|o| o.camera)) >= 2 {
            arm_obs = kept_arm;
            changed = true;
        }
        if kept_box.len() < box_obs.len() && distinct_views(kept_box.iter().map(|o| o.camera)) >= 2 {
            box_obs = kept_box;
            changed = true;
        }
        if !changed {
            break;
        }
    }
    let (angles, center) = JointProblem::split(&x);
    let pose = if stale_arm { previous.arm_pose.clone() } else { ArmPose::new(angles.iter().copied()) };
    let box_state = if stale_box {
        previous.box_state
    } else {
        BoxState { center: lift_above_floor(center, &half), half_extents: half, yaw }
    };

    let arm_unit = ArmResiduals { model, cameras: &base.cameras, observations: &arm_obs, weight: 1.0 };
    let box_unit = BoxResiduals {
        cameras: &base.cameras,
        observations: &box_obs,
        half_extents: half,
        yaw,
        weight: 1.0,
    };
    let residual_px = combined_rms(&[
        (arm_unit.rms_px(&pose.joint_angles), arm_obs.len()),
        (box_unit.rms_px(&box_state.center), box_obs.len()),
    ]);
    let state = SceneState::new(frame.time, pose.clone(), box_state, base.layout.clone())?;
    Ok(Regenerated {
        state,
        fit: FitResult { arm_pose: pose, box_state, residual_px, iterations, converged, cost_logs: logs },
        stale_arm,
        stale_box,
    })
}

/// Sequential edge-side reconstruction: each frame starts from the
/// previous result, frame 0 from base knowledge.
#[derive(Debug, Clone)]
pub struct EdgeSession {
    pub base: BaseKnowledge,
    pub mode: Mode,
    pub weights: ControlWeights,
    pub settings: RegenSettings,
    pub cloud: CloudSpec,
    grid: Option<SilhouetteGrid>,
    previous: SceneState,
    previous_cloud: Option<PointCloud>,
}

/// One regenerated frame.
#[derive(Debug, Clone)]
pub struct Construction {
    pub regenerated: Regenerated,
    pub cloud: PointCloud,
}

impl EdgeSession {
    pub fn new(
        base: BaseKnowledge,
        mode: Mode,
        weights: ControlWeights,
        settings: RegenSettings,
        cloud: CloudSpec,
    ) -> Result<Self> {
        base.validate()?;
        weights.validate()?;
        let grid = match mode {
            Mode::S if weights.omega_c > 0.0 => {
                Some(SilhouetteGrid::build(&base, settings.grid.0, settings.grid.1)?)
            }
            _ => None,
        };
        let previous = base.initial_state()?;
        Ok(EdgeSession { base, mode, weights, settings, cloud, grid, previous, previous_cloud: None })
    }

    /// State the next frame starts from.
    pub fn previous(&self) -> &SceneState {
        &self.previous
    }

    pub fn regenerate(&self, frame: &SemanticFrame) -> Result<Regenerated> {
        match self.mode {
            Mode::M => regenerate_m(frame, &self.base, &self.previous, &self.settings),
            Mode::S => regenerate_s_with(
                frame,
                &self.base,
                &self.previous,
                &self.weights,
                &self.settings,
                self.grid.as_ref(),
            ),
        }
    }

    /// Regenerates the scene for `frame` and rebuilds its point cloud. A
    /// fully stale frame reuses the previous cloud.
    pub fn construct_metaverse(&mut self, frame: &SemanticFrame) -> Result<Construction> {
        let regenerated = self.regenerate(frame)?;
        let cloud = match (&self.previous_cloud, regenerated.fully_stale()) {
            (Some(prev), true) => prev.clone(),
            _ => extract_point_cloud(&regenerated.state, &self.cloud)?,
        };
        self.previous = regenerated.state.clone();
        self.previous_cloud = Some(cloud.clone());
        Ok(Construction { regenerated, cloud })
    }
}
