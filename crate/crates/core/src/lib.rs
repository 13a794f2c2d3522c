//! End-to-end simulator for remote 3D scene reconstruction over a fading
//! wireless link.
//!
//! Two transmission strategies are compared on the same ground-truth world:
//!
//! - **ImageCom** sends every camera's raw RGB frame and rebuilds the scene
//!   at the edge from the (possibly corrupted) pixels.
//! - **GSCM** sends a compact semantic frame (7 arm keypoints plus a
//!   bounding box per view) and regenerates the scene at the edge by
//!   refitting a parametric model seeded from a once-per-session base
//!   knowledge preamble. Two regeneration modes exist: `M` fits the arm and
//!   the box separately, `S` fits them jointly with an edge-consistency term.
//!
//! The pipeline is `scene` → `camera`/`render` → `semantics` → `channel` →
//! `reconstruct` → `metrics`, orchestrated by `harness`.
//!
//! Every stochastic step is driven by explicit seeds; a given configuration
//! fixes every output byte.

pub mod camera;
pub mod channel;
mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod reconstruct;
pub mod render;
pub mod scene;
pub mod semantics;

pub use error::{Error, Result};

/// 3D vector in world units (meters).
pub type Vec3 = nalgebra::Vector3<f64>;

/// Linear RGB color with channels nominally in `[0, 1]`.
pub type Rgb = [f64; 3];
