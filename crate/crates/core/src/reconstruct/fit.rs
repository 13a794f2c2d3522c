//! Multi-view triangulation and the arm / box fits.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, numeric_jacobian, LmSettings, Problem};
use crate::camera::CameraConfig;
use crate::error::Error;
use crate::scene::{kinematic_chain, ArmModel, ArmPose, BoxState, NUM_JOINTS};
use crate::semantics::project_box;
use crate::{Result, Vec3};

/// Rays whose normal matrix has a condition number above this are treated
/// as parallel.
pub const MAX_CONDITION: f64 = 1e8;

/// Least-squares intersection of pixel rays: the point minimizing the sum of
/// squared distances to every ray.
pub fn triangulate(observations: &[(&CameraConfig, Vector2<f64>)]) -> Result<Vec3> {
    if observations.len() < 2 {
        return Err(Error::InsufficientObservations(format!(
            "triangulation needs 2 views, got {}",
            observations.len()
        )));
    }
    let mut a = Matrix3::zeros();
    let mut b = Vec3::zeros();
    for (cam, px) in observations {
        let (origin, dir) = cam.pixel_ray(px.x, px.y);
        let proj = Matrix3::identity() - dir * dir.transpose();
        a += proj;
        b += proj * origin;
    }
    let eig = SymmetricEigen::new(a);
    let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| {
        (lo.min(e.abs()), hi.max(e.abs()))
    });
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(Error::DegenerateGeometry(format!(
            "ray normal matrix condition number {:.3e}",
            hi / lo
        )));
    }
    a.lu().solve(&b).ok_or_else(|| Error::DegenerateGeometry("singular ray system".into()))
}

/// One observed keypoint: camera index, joint index, pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointObservation {
    pub camera: usize,
    pub joint: usize,
    pub pixel: Vector2<f64>,
}

/// One observed box center: camera index, pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxObservationPoint {
    pub camera: usize,
    pub pixel: Vector2<f64>,
}

/// Reprojection residuals of the arm keypoints, scaled by `weight`.
pub struct ArmResiduals<'a> {
    pub model: &'a ArmModel,
    pub cameras: &'a [CameraConfig],
    pub observations: &'a [KeypointObservation],
    pub weight: f64,
}

impl ArmResiduals<'_> {
    fn pose(x: &[f64]) -> ArmPose {
        ArmPose { joint_angles: x[..NUM_JOINTS].to_vec() }
    }

    pub fn residuals_at(&self, angles: &[f64]) -> DVector<f64> {
        let chain = kinematic_chain(self.model, &Self::pose(angles)).expect("pose length checked");
        let mut r = DVector::zeros(2 * self.observations.len());
        for (i, o) in self.observations.iter().enumerate() {
            let (px, _) = self.cameras[o.camera].project_with_jacobian(&chain.keypoints[o.joint]);
            let d = (px - o.pixel) * self.weight;
            r[2 * i] = d.x;
            r[2 * i + 1] = d.y;
        }
        r
    }

    /// Analytic Jacobian: joint `j` moves keypoint `k > j` by
    /// `axis_j × (p_k − p_j)` per radian.
    pub fn jacobian_at(&self, angles: &[f64]) -> DMatrix<f64> {
        let chain = kinematic_chain(self.model, &Self::pose(angles)).expect("pose length checked");
        let mut jac = DMatrix::zeros(2 * self.observations.len(), NUM_JOINTS);
        for (i, o) in self.observations.iter().enumerate() {
            let p = chain.keypoints[o.joint];
            let (_, dp) = self.cameras[o.camera].project_with_jacobian(&p);
            for j in 0..o.joint {
                let dpos = chain.world_axes[j].cross(&(p - chain.keypoints[j]));
                let d = dp * dpos * self.weight;
                jac[(2 * i, j)] = d.x;
                jac[(2 * i + 1, j)] = d.y;
            }
        }
        jac
    }

    pub fn rms_px(&self, angles: &[f64]) -> f64 {
        if self.observations.is_empty() || self.weight == 0.0 {
            return 0.0;
        }
        let r = self.residuals_at(angles) / self.weight;
        (r.norm_squared() / self.observations.len() as f64).sqrt()
    }
}

impl Problem for ArmResiduals<'_> {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        self.residuals_at(x.as_slice())
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.jacobian_at(x.as_slice())
    }
}

/// Residuals between projected box-center positions and observed ones.
pub struct BoxResiduals<'a> {
    pub cameras: &'a [CameraConfig],
    pub observations: &'a [BoxObservationPoint],
    pub half_extents: Vec3,
    pub yaw: f64,
    pub weight: f64,
}

/// Finite-difference step for box-center derivatives (m).
const BOX_FD_STEP: f64 = 1e-6;

impl BoxResiduals<'_> {
    pub fn residuals_at(&self, center: &Vec3) -> DVector<f64> {
        let b = BoxState { center: *center, half_extents: self.half_extents, yaw: self.yaw };
        let mut r = DVector::zeros(2 * self.observations.len());
        for (i, o) in self.observations.iter().enumerate() {
            let obs = project_box(&b, &self.cameras[o.camera]);
            r[2 * i] = (obs.cx - o.pixel.x) * self.weight;
            r[2 * i + 1] = (obs.cy - o.pixel.y) * self.weight;
        }
        r
    }

    pub fn jacobian_at(&self, center: &Vec3) -> DMatrix<f64> {
        let x = DVector::from_column_slice(center.as_slice());
        numeric_jacobian(&x, BOX_FD_STEP, |p| self.residuals_at(&Vec3::new(p[0], p[1], p[2])))
    }

    pub fn rms_px(&self, center: &Vec3) -> f64 {
        if self.observations.is_empty() || self.weight == 0.0 {
            return 0.0;
        }
        let r = self.residuals_at(center) / self.weight;
        (r.norm_squared() / self.observations.len() as f64).sqrt()
    }
}

impl Problem for BoxResiduals<'_> {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        self.residuals_at(&Vec3::new(x[0], x[1], x[2]))
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.jacobian_at(&Vec3::new(x[0], x[1], x[2]))
    }
}

/// Result of refitting scene parameters to received semantics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub arm_pose: ArmPose,
    pub box_state: BoxState,
    /// RMS reprojection error over the fitted observations (px).
    pub residual_px: f64,
    pub iterations: usize,
    pub converged: bool,
    /// One log per minimization run: the objective at the start and after
    /// every accepted step.
    pub cost_logs: Vec<Vec<f64>>,
}

fn views_with_data(cameras: impl Iterator<Item = usize>) -> usize {
    let mut seen: Vec<usize> = cameras.collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Fits the joint angles to keypoint observations, starting from `init`.
pub fn fit_arm_observations(
    model: &ArmModel,
    cameras: &[CameraConfig],
    observations: &[KeypointObservation],
    init: &ArmPose,
    settings: &LmSettings,
) -> Result<(ArmPose, LmFitStats)> {
    if views_with_data(observations.iter().map(|o| o.camera)) < 2 {
        return Err(Error::InsufficientObservations(
            "arm fit needs valid keypoints in at least 2 views".into(),
        ));
    }
    let problem = ArmResiduals { model, cameras, observations, weight: 1.0 };
    let out = levenberg_marquardt(&problem, DVector::from_column_slice(&init.joint_angles), settings);
    let pose = ArmPose::new(out.params.iter().copied());
    let stats = LmFitStats {
        residual_px: problem.rms_px(&pose.joint_angles),
        iterations: out.iterations,
        converged: out.converged,
        cost_log: out.cost_log,
    };
    Ok((pose, stats))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmFitStats {
    pub residual_px: f64,
    pub iterations: usize,
    pub converged: bool,
    pub cost_log: Vec<f64>,
}

/// Keeps a fitted box resting on or above the floor.
pub fn lift_above_floor(mut center: Vec3, half_extents: &Vec3) -> Vec3 {
    center.y = center.y.max(half_extents.y);
    center
}

/// Fits the box center: triangulation of the observed centers, refined so
/// the projected bounding boxes are centered on the observations.
pub fn fit_box_center(
    cameras: &[CameraConfig],
    observations: &[BoxObservationPoint],
    half_extents: &Vec3,
    yaw: f64,
    fallback: &Vec3,
    settings: &LmSettings,
) -> Result<(Vec3, LmFitStats)> {
    if views_with_data(observations.iter().map(|o| o.camera)) < 2 {
        return Err(Error::InsufficientObservations(
            "box fit needs boxes in at least 2 views".into(),
        ));
    }
    let rays: Vec<_> = observations.iter().map(|o| (&cameras[o.camera], o.pixel)).collect();
    let init = triangulate(&rays).unwrap_or(*fallback);
    let problem = BoxResiduals { cameras, observations, half_extents: *half_extents, yaw, weight: 1.0 };
    let out = levenberg_marquardt(&problem, DVector::from_column_slice(init.as_slice()), settings);
    let center = lift_above_floor(Vec3::new(out.params[0], out.params[1], out.params[2]), half_extents);
    let stats = LmFitStats {
        residual_px: problem.rms_px(&center),
        iterations: out.iterations,
        converged: out.converged,
        cost_log: out.cost_log,
    };
    Ok((center, stats))
}
