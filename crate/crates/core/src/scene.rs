//! Parametric ground-truth world.
//!
//! The world holds a six-joint robotic arm, one movable box and a set of
//! stationary background primitives. Everything is exposed as an analytic,
//! piecewise-constant density and color field that the renderer samples.
//!
//! Conventions: right-handed, `+y` up, the floor is the plane `y = 0`.
//! Arm links extend along the local `+y` axis of their joint frame, so the
//! all-zero pose is a vertical column above the base.

use std::f64::consts::{PI, TAU};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix3, Rotation3, Unit};
use serde::{Deserialize, Serialize};

use crate::error::{config, contract};
use crate::{Result, Rgb, Vec3};

pub const NUM_JOINTS: usize = 6;
pub const NUM_KEYPOINTS: usize = NUM_JOINTS + 1;

/// Density used for every primitive unless configured otherwise (1/m).
pub const DEFAULT_DENSITY: f64 = 50.0;
pub const DEFAULT_LINK_RADIUS: f64 = 0.05;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Surface appearance of a primitive. A density of zero hides it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub color: Rgb,
    pub density: f64,
}

/// Kinematic and visual description of the arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub link_lengths: [f64; NUM_JOINTS],
    pub base_position: Vec3,
    pub joint_axes: [Vec3; NUM_JOINTS],
    /// Capsule radius of every link.
    pub link_radius: f64,
    /// Radius of the colored sphere drawn at every keypoint.
    pub marker_radius: f64,
    pub density: f64,
    pub link_color: Rgb,
    pub marker_colors: [Rgb; NUM_KEYPOINTS],
}

impl ArmModel {
    /// A vertical-axis model with unit links, used mostly by tests.
    pub fn uniform(link_length: f64) -> Self {
        ArmModel {
            link_lengths: [link_length; NUM_JOINTS],
            base_position: Vec3::zeros(),
            joint_axes: [Vec3::y(); NUM_JOINTS],
            link_radius: DEFAULT_LINK_RADIUS,
            marker_radius: 0.0,
            density: DEFAULT_DENSITY,
            link_color: [0.5, 0.5, 0.5],
            marker_colors: [[1.0, 0.0, 0.0]; NUM_KEYPOINTS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.link_lengths.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(contract(format!("link length {l} must be positive")));
        }
        for (i, axis) in self.joint_axes.iter().enumerate() {
            if (axis.norm() - 1.0).abs() > 1e-9 {
                return Err(contract(format!("joint axis {i} is not unit norm")));
            }
        }
        if self.link_radius < 0.0 || self.marker_radius < 0.0 || self.density < 0.0 {
            return Err(contract("arm radii and density must be non-negative"));
        }
        Ok(())
    }

    pub fn link_material(&self) -> Material {
        Material { color: self.link_color, density: self.density }
    }

    pub fn marker_material(&self, joint: usize) -> Material {
        Material { color: self.marker_colors[joint], density: self.density }
    }
}

/// Joint angles of the arm (radians).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmPose {
    pub joint_angles: Vec<f64>,
}

impl ArmPose {
    /// Builds a pose with every angle wrapped into `(-pi, pi]`.
    pub fn new(angles: impl IntoIterator<Item = f64>) -> Self {
        ArmPose { joint_angles: angles.into_iter().map(wrap_angle).collect() }
    }

    pub fn zeros() -> Self {
        ArmPose { joint_angles: vec![0.0; NUM_JOINTS] }
    }
}

/// Keypoints plus the world-space joint axes, as needed by the fitter.
#[derive(Debug, Clone)]
pub struct KinematicChain {
    pub keypoints: [Vec3; NUM_KEYPOINTS],
    /// World-space rotation axis of joint `j`, located at `keypoints[j]`.
    pub world_axes: [Vec3; NUM_JOINTS],
}

pub fn forward_kinematics(model: &ArmModel, pose: &ArmPose) -> Result<[Vec3; NUM_KEYPOINTS]> {
    Ok(kinematic_chain(model, pose)?.keypoints)
}

/// Forward kinematics that also reports the world-space joint axes.
pub fn kinematic_chain(model: &ArmModel, pose: &ArmPose) -> Result<KinematicChain> {
    if pose.joint_angles.len() != NUM_JOINTS {
        return Err(contract(format!(
            "pose has {} angles, model has {NUM_JOINTS} joints",
            pose.joint_angles.len()
        )));
    }
    let mut keypoints = [model.base_position; NUM_KEYPOINTS];
    let mut world_axes = [Vec3::zeros(); NUM_JOINTS];
    let mut frame = Matrix3::identity();
    let mut tip = model.base_position;
    for j in 0..NUM_JOINTS {
        let axis = model.joint_axes[j];
        world_axes[j] = frame * axis;
        let angle = wrap_angle(pose.joint_angles[j]);
        let rot = Rotation3::from_axis_angle(&Unit::new_unchecked(axis), angle);
        frame *= rot.matrix();
        tip += frame * Vec3::new(0.0, model.link_lengths[j], 0.0);
        keypoints[j + 1] = tip;
    }
    Ok(KinematicChain { keypoints, world_axes })
}

/// Pose of the movable box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxState {
    pub center: Vec3,
    pub half_extents: Vec3,
    /// Rotation about the vertical axis (radians).
    pub yaw: f64,
}

impl BoxState {
    pub fn validate(&self) -> Result<()> {
        if self.half_extents.iter().any(|h| !(*h > 0.0)) {
            return Err(contract("box half extents must be positive"));
        }
        if self.center.y < self.half_extents.y {
            return Err(contract(format!(
                "box center height {} is below its half height {}",
                self.center.y, self.half_extents.y
            )));
        }
        Ok(())
    }

    /// Box-frame coordinates of a world point.
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.rotate_to_local(&(p - self.center))
    }

    /// Box-frame components of a world direction.
    pub fn rotate_to_local(&self, d: &Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        // inverse yaw about +y
        Vec3::new(c * d.x - s * d.z, d.y, s * d.x + c * d.z)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= self.half_extents.x
            && l.y.abs() <= self.half_extents.y
            && l.z.abs() <= self.half_extents.z
    }

    /// The 8 world-space corners.
    pub fn corners(&self) -> [Vec3; 8] {
        let (s, c) = self.yaw.sin_cos();
        let h = self.half_extents;
        let mut out = [Vec3::zeros(); 8];
        for (i, corner) in out.iter_mut().enumerate() {
            let lx = if i & 1 == 0 { -h.x } else { h.x };
            let ly = if i & 2 == 0 { -h.y } else { h.y };
            let lz = if i & 4 == 0 { -h.z } else { h.z };
            *corner = self.center + Vec3::new(c * lx + s * lz, ly, -s * lx + c * lz);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    /// Axis-aligned slab between two corners.
    Slab { min: Vec3, max: Vec3 },
    Sphere { center: Vec3, radius: f64 },
}

impl Shape {
    pub fn contains(&self, p: &Vec3) -> bool {
        match self {
            Shape::Slab { min, max } => (0..3).all(|k| p[k] >= min[k] && p[k] <= max[k]),
            Shape::Sphere { center, radius } => (p - center).norm_squared() <= radius * radius,
        }
    }

    fn aabb(&self) -> Aabb {
        match *self {
            Shape::Slab { min, max } => Aabb { min, max },
            Shape::Sphere { center, radius } => {
                let r = Vec3::repeat(radius);
                Aabb { min: center - r, max: center + r }
            }
        }
    }
}

/// A stationary background primitive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub color: Rgb,
    pub density: f64,
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb { min: Vec3::repeat(f64::INFINITY), max: Vec3::repeat(f64::NEG_INFINITY) }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|k| !(self.min[k] < self.max[k]))
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&other.min), max: self.max.sup(&other.max) }
    }

    /// Parametric interval `[t0, t1]` where the ray is inside the box.
    pub fn ray_interval(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        if self.is_empty() {
            return None;
        }
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            if dir[k] == 0.0 {
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return None;
                }
            } else {
                let inv = 1.0 / dir[k];
                let (a, b) = ((self.min[k] - origin[k]) * inv, (self.max[k] - origin[k]) * inv);
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

/// Static part of a scenario, shared by every [`SceneState`] of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub arm: ArmModel,
    pub box_material: Material,
    pub background: Vec<Primitive>,
    pub background_color: Rgb,
}

impl SceneLayout {
    /// A layout without any visible object.
    pub fn empty(background_color: Rgb) -> Self {
        let mut arm = ArmModel::uniform(1.0);
        arm.density = 0.0;
        SceneLayout {
            arm,
            box_material: Material { color: [0.0; 3], density: 0.0 },
            background: Vec::new(),
            background_color,
        }
    }
}

/// The ground-truth world at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub time: u32,
    pub arm_pose: ArmPose,
    pub box_state: BoxState,
    pub layout: Arc<SceneLayout>,
    keypoints: [Vec3; NUM_KEYPOINTS],
}

/// Which primitive a point falls in, in priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hit {
    Marker(usize),
    Link(usize),
    Box,
    Background(usize),
}

impl Hit {
    pub fn is_static(&self) -> bool {
        matches!(self, Hit::Background(_))
    }
}

/// Density and color of the field at one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub density: f64,
    pub color: Rgb,
}

impl SceneState {
    pub fn new(
        time: u32,
        arm_pose: ArmPose,
        box_state: BoxState,
        layout: Arc<SceneLayout>,
    ) -> Result<Self> {
        layout.arm.validate()?;
        box_state.validate()?;
        let keypoints = forward_kinematics(&layout.arm, &arm_pose)?;
        Ok(SceneState { time, arm_pose, box_state, layout, keypoints })
    }

    /// World-space arm keypoints of this state.
    pub fn keypoints(&self) -> &[Vec3; NUM_KEYPOINTS] {
        &self.keypoints
    }

    pub fn background(&self) -> &[Primitive] {
        &self.layout.background
    }

    /// First primitive containing `p`, honoring marker > link > box >
    /// background priority. Primitives with zero density are absent.
    pub fn classify(&self, p: &Vec3) -> Option<Hit> {
        let arm = &self.layout.arm;
        if arm.density > 0.0 {
            let mr2 = arm.marker_radius * arm.marker_radius;
            if mr2 > 0.0 {
                if let Some(j) = self.keypoints.iter().position(|k| (p - k).norm_squared() <= mr2) {
                    return Some(Hit::Marker(j));
                }
            }
            let lr2 = arm.link_radius * arm.link_radius;
            for i in 0..NUM_JOINTS {
                if point_segment_distance_squared(p, &self.keypoints[i], &self.keypoints[i + 1])
                    <= lr2
                {
                    return Some(Hit::Link(i));
                }
            }
        }
        if self.layout.box_material.density > 0.0 && self.box_state.contains(p) {
            return Some(Hit::Box);
        }
        self.layout
            .background
            .iter()
            .position(|prim| prim.density > 0.0 && prim.shape.contains(p))
            .map(Hit::Background)
    }

    pub fn material(&self, hit: Hit) -> Material {
        match hit {
            Hit::Marker(j) => self.layout.arm.marker_material(j),
            Hit::Link(_) => self.layout.arm.link_material(),
            Hit::Box => self.layout.box_material,
            Hit::Background(k) => {
                let prim = &self.layout.background[k];
                Material { color: prim.color, density: prim.density }
            }
        }
    }

    /// Bounding box of all geometry with nonzero density.
    pub fn bounds(&self) -> Aabb {
        let mut out = Aabb::empty();
        let arm = &self.layout.arm;
        if arm.density > 0.0 {
            let r = Vec3::repeat(arm.marker_radius.max(arm.link_radius));
            for k in &self.keypoints {
                out = out.union(&Aabb { min: k - r, max: k + r });
            }
        }
        if self.layout.box_material.density > 0.0 {
            let r = Vec3::repeat(self.box_state.half_extents.norm());
            out = out.union(&Aabb { min: self.box_state.center - r, max: self.box_state.center + r });
        }
        for prim in self.layout.background.iter().filter(|p| p.density > 0.0) {
            out = out.union(&prim.shape.aabb());
        }
        out
    }
}

/// Samples the analytic field. Empty space yields zero density and the
/// background color.
pub fn scene_field(state: &SceneState, position: &Vec3) -> FieldSample {
    match state.classify(position) {
        Some(hit) => {
            let m = state.material(hit);
            FieldSample { density: m.density, color: m.color }
        }
        None => FieldSample { density: 0.0, color: state.layout.background_color },
    }
}

pub fn point_segment_distance_squared(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm_squared()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmMotion {
    pub amplitude: [f64; NUM_JOINTS],
    pub frequency_hz: [f64; NUM_JOINTS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmConfig {
    #[serde(flatten)]
    pub model: ArmModel,
    pub initial_angles: [f64; NUM_JOINTS],
    pub motion: ArmMotion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxConfig {
    pub center: Vec3,
    pub half_extents: Vec3,
    pub yaw: f64,
    /// Constant velocity (m/s).
    pub velocity: Vec3,
    pub color: Rgb,
    pub density: f64,
}

/// Scenario file contents. See `scenarios/default.toml` for the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub frame_period_s: f64,
    pub background_color: Rgb,
    pub arm: ArmConfig,
    #[serde(rename = "box")]
    pub box_config: BoxConfig,
    #[serde(default)]
    pub background: Vec<Primitive>,
}

const DEFAULT_SCENARIO: &str = include_str!("../scenarios/default.toml");

impl Scenario {
    /// Looks up a built-in scenario.
    pub fn builtin(name: &str) -> Result<Scenario> {
        match name {
            "default" => Scenario::from_toml(DEFAULT_SCENARIO),
            other => Err(config(format!("unknown scenario `{other}`"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Scenario> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        Scenario::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: crate::Error| config(format!("scenario `{}`: {e}", self.name));
        self.arm.model.validate().map_err(wrap)?;
        self.initial_box().validate().map_err(wrap)?;
        if !(self.frame_period_s > 0.0) {
            return Err(config("frame_period_s must be positive"));
        }
        if self.box_config.velocity.y < 0.0 {
            return Err(config("box velocity must not point into the floor"));
        }
        Ok(())
    }

    pub fn layout(&self) -> SceneLayout {
        SceneLayout {
            arm: self.arm.model.clone(),
            box_material: Material { color: self.box_config.color, density: self.box_config.density },
            background: self.background.clone(),
            background_color: self.background_color,
        }
    }

    pub fn initial_pose(&self) -> ArmPose {
        ArmPose::new(self.arm.initial_angles)
    }

    pub fn initial_box(&self) -> BoxState {
        BoxState {
            center: self.box_config.center,
            half_extents: self.box_config.half_extents,
            yaw: self.box_config.yaw,
        }
    }

    /// Seconds elapsed at frame `t`.
    pub fn time_s(&self, t: u32) -> f64 {
        t as f64 * self.frame_period_s
    }

    pub fn pose_at(&self, t: u32) -> ArmPose {
        let ts = self.time_s(t);
        let m = &self.arm.motion;
        ArmPose::new((0..NUM_JOINTS).map(|j| {
            self.arm.initial_angles[j] + m.amplitude[j] * (TAU * m.frequency_hz[j] * ts).sin()
        }))
    }

    pub fn box_at(&self, t: u32) -> BoxState {
        let mut b = self.initial_box();
        b.center += self.box_config.velocity * self.time_s(t);
        b
    }
}

/// Produces the scene at frame `t`, sharing `layout` so the background is
/// literally the same object at every frame.
pub fn animate_with(scenario: &Scenario, layout: &Arc<SceneLayout>, t: u32) -> Result<SceneState> {
    SceneState::new(t, scenario.pose_at(t), scenario.box_at(t), Arc::clone(layout))
}

pub fn animate(scenario: &Scenario, t: u32) -> Result<SceneState> {
    animate_with(scenario, &Arc::new(scenario.layout()), t)
}
