//! Experiment configuration, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::camera::RigSpec;
use crate::channel::{Fading, DEFAULT_LINK_RATE_BPS};
use crate::error::config;
use crate::metrics::DEFAULT_PCK_PX;
use crate::reconstruct::{ControlWeights, LmSettings, Mode};
use crate::render::{CloudSpec, DEFAULT_STEPS};
use crate::scene::Scenario;
use crate::semantics::DetectorNoise;
use crate::Result;

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "SEMCOM_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Framework {
    #[serde(rename = "imagecom")]
    ImageCom,
    #[serde(rename = "m-gscm")]
    MGscm,
    #[serde(rename = "s-gscm")]
    SGscm,
}

impl Framework {
    pub const ALL: [Framework; 3] = [Framework::ImageCom, Framework::MGscm, Framework::SGscm];

    pub fn name(self) -> &'static str {
        match self {
            Framework::ImageCom => "imagecom",
            Framework::MGscm => "m-gscm",
            Framework::SGscm => "s-gscm",
        }
    }

    /// Regeneration mode of the semantic frameworks.
    pub fn mode(self) -> Option<Mode> {
        match self {
            Framework::ImageCom => None,
            Framework::MGscm => Some(Mode::M),
            Framework::SGscm => Some(Mode::S),
        }
    }
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Framework {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Framework::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| config(format!("unknown framework `{s}` (imagecom, m-gscm, s-gscm)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub steps: usize,
    /// Edge threshold as a fraction of the strongest gradient.
    pub edge_threshold: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings { steps: DEFAULT_STEPS, edge_threshold: 0.2 }
    }
}

/// Fixed per-frame processing times (s) of one framework. They stand in for
/// detector and generator run times, so reported delays stay deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTiming {
    pub extract_s: f64,
    pub generate_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub imagecom: StageTiming,
    #[serde(rename = "m-gscm")]
    pub m_gscm: StageTiming,
    #[serde(rename = "s-gscm")]
    pub s_gscm: StageTiming,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            imagecom: StageTiming { extract_s: 0.0, generate_s: 0.75 },
            m_gscm: StageTiming { extract_s: 0.03, generate_s: 0.70 },
            s_gscm: StageTiming { extract_s: 0.03, generate_s: 0.62 },
        }
    }
}

impl TimingConfig {
    pub fn get(&self, fw: Framework) -> StageTiming {
        match fw {
            Framework::ImageCom => self.imagecom,
            Framework::MGscm => self.m_gscm,
            Framework::SGscm => self.s_gscm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in scenario name, or a path to a scenario TOML file (relative
    /// paths resolve against the config file).
    pub scenario: String,
    pub frames: u32,
    pub frameworks: Vec<Framework>,
    pub snr_db: Vec<f64>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub fading: Fading,
    pub link_rate_bps: f64,
    pub rig: RigSpec,
    pub weights: ControlWeights,
    pub render: RenderSettings,
    pub cloud: CloudSpec,
    pub detector: DetectorNoise,
    pub timing: TimingConfig,
    pub lm: LmSettings,
    /// Semantic observations further than this fraction of the image
    /// height from the previous state's projection are ignored.
    pub gate_fraction: f64,
    /// Columns and rows of the edge-consistency grid.
    pub edge_grid: (u32, u32),
    /// Reprojection error (px) above which fitted points are rejected and
    /// the fit repeated; absent disables rejection.
    pub outlier_px: Option<f64>,
    /// Per-channel tolerance of the ImageCom color matcher (0-255).
    pub color_tolerance: u8,
    /// Median-filter received images before ImageCom color matching.
    pub median_filter: bool,
    /// PCK threshold (px).
    pub pck_px: f64,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: "default".into(),
            frames: 4,
            frameworks: Framework::ALL.to_vec(),
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            seeds: (0..10).collect(),
            output_dir: PathBuf::from("out"),
            fading: Fading::Rayleigh,
            link_rate_bps: DEFAULT_LINK_RATE_BPS,
            rig: RigSpec { resolution: (300, 150), ..RigSpec::default() },
            weights: ControlWeights::default(),
            render: RenderSettings::default(),
            cloud: CloudSpec::default(),
            detector: DetectorNoise::default(),
            timing: TimingConfig::default(),
            lm: LmSettings::default(),
            gate_fraction: 0.1,
            edge_grid: (64, 32),
            outlier_px: Some(1.0),
            color_tolerance: 32,
            median_filter: false,
            pck_px: DEFAULT_PCK_PX,
            base_dir: PathBuf::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frameworks.is_empty() || self.snr_db.is_empty() || self.seeds.is_empty() {
            return Err(config("frameworks, snr_db and seeds must be nonempty"));
        }
        if self.frames == 0 {
            return Err(config("frames must be at least 1"));
        }
        if self.snr_db.iter().any(|s| s.is_nan()) {
            return Err(config("SNR values must be numbers"));
        }
        if !(self.link_rate_bps > 0.0) {
            return Err(config("link_rate_bps must be positive"));
        }
        if !(self.gate_fraction > 0.0) {
            return Err(config("gate_fraction must be positive"));
        }
        if self.outlier_px.is_some_and(|p| !(p > 0.0)) {
            return Err(config("outlier_px must be positive"));
        }
        if !(self.pck_px > 0.0) {
            return Err(config("pck_px must be positive"));
        }
        if self.render.steps == 0 || !(self.render.edge_threshold > 0.0 && self.render.edge_threshold <= 1.0) {
            return Err(config("render needs steps ≥ 1 and an edge threshold in (0, 1]"));
        }
        self.weights.validate()?;
        self.detector.validate()?;
        for fw in Framework::ALL {
            let t = self.timing.get(fw);
            if !(t.extract_s >= 0.0 && t.generate_s >= 0.0) {
                return Err(config(format!("timing of {fw} must be non-negative")));
            }
        }
        Ok(())
    }

    pub fn load_scenario(&self) -> Result<Scenario> {
        let looks_like_path = self.scenario.ends_with(".toml") || self.scenario.contains('/');
        if looks_like_path {
            Scenario::load(&self.base_dir.join(&self.scenario))
        } else {
            Scenario::builtin(&self.scenario)
        }
    }

    /// Keypoint gate in pixels for the configured resolution.
    pub fn gate_px(&self) -> f64 {
        self.gate_fraction * self.rig.resolution.1 as f64
    }
}
