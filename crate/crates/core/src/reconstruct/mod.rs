//! Edge-side scene regeneration from received semantics.

pub mod base;
pub mod fit;
pub mod lm;
pub mod regenerate;

pub use base::BaseKnowledge;
pub use fit::{triangulate, FitResult};
pub use lm::{levenberg_marquardt, LmSettings};
pub use regenerate::{
    fit_arm, fit_box, regenerate_m, regenerate_s, Construction, ControlWeights, EdgeSession, Mode,
    RegenSettings, Regenerated,
};
