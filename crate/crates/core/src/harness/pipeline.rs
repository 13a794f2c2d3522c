//! Per-cell pipelines: one framework at one SNR and seed over all frames.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, Framework};
use super::estimator::estimate_view;
use crate::camera::CameraConfig;
use crate::channel::{
    decode_image, decode_semantic, encode_image, encode_semantic, transmit, ChannelConfig,
    SemanticCodec,
};
use crate::metrics::{kpe, p2point, td, KpeReport, P2PointReport, TdReport};
use crate::reconstruct::{BaseKnowledge, EdgeSession, Mode, RegenSettings, Regenerated};
use crate::render::{edge_map, extract_point_cloud, render_image, Image, PointCloud};
use crate::scene::{animate_with, Scenario, SceneLayout, SceneState};
use crate::semantics::{extract_frame, SemanticFrame};
use crate::{Error, Result};

/// Transmitter-side ground truth of one frame.
#[derive(Debug, Clone)]
pub struct TruthFrame {
    pub state: SceneState,
    /// Exact semantics, the KPE reference.
    pub semantics: SemanticFrame,
    /// Semantics as the detector reports them (with detector noise).
    pub detected: SemanticFrame,
    pub cloud: PointCloud,
    /// One render per camera; empty when no framework needs images.
    pub images: Vec<Image>,
}

/// Everything shared by all cells of a sweep.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub scenario: Scenario,
    pub layout: Arc<SceneLayout>,
    pub cameras: Vec<CameraConfig>,
    pub base: BaseKnowledge,
    pub base_bits: usize,
    pub frames: Vec<TruthFrame>,
}

impl Prepared {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let scenario = config.load_scenario()?;
        let layout = Arc::new(scenario.layout());
        let cameras = config.rig.build()?;
        let needs_images = config.frameworks.contains(&Framework::ImageCom);
        let noise = (!config.detector.is_noiseless()).then_some(&config.detector);
        let frames = (0..config.frames)
            .map(|t| {
                let state = animate_with(&scenario, &layout, t)?;
                let semantics = extract_frame(&state, &cameras, None)?;
                let detected = extract_frame(&state, &cameras, noise)?;
                let cloud = extract_point_cloud(&state, &config.cloud)?;
                let images = if needs_images || t == 0 {
                    cameras
                        .iter()
                        .map(|cam| render_image(&state, cam, config.render.steps))
                        .collect::<Result<Vec<_>>>()?
                } else {
                    Vec::new()
                };
                Ok(TruthFrame { state, semantics, detected, cloud, images })
            })
            .collect::<Result<Vec<_>>>()?;
        let base = BaseKnowledge::from_renders(
            &frames[0].state,
            &cameras,
            &frames[0].images,
            config.render.edge_threshold,
        )?;
        let base_bits = base.size_bits();
        Ok(Prepared { config: config.clone(), scenario, layout, cameras, base, base_bits, frames })
    }

    fn regen_settings(&self, gated: bool) -> RegenSettings {
        RegenSettings {
            lm: self.config.lm,
            gate_px: gated.then(|| self.config.gate_px()),
            grid: self.config.edge_grid,
            outlier_px: self.config.outlier_px,
        }
    }

    fn channel(&self, snr_db: f64, seed: u64) -> ChannelConfig {
        ChannelConfig { snr_db, fading: self.config.fading, seed, link_rate_bps: self.config.link_rate_bps }
    }
}

/// Metrics of one (framework, SNR, seed, frame).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub framework: Framework,
    pub snr_db: f64,
    pub seed: u64,
    pub frame: u32,
    pub kpe: Option<KpeReport>,
    pub p2point: Option<P2PointReport>,
    pub td: Option<TdReport>,
    pub bits_sent: usize,
    pub bit_errors: usize,
    /// `ok`, `stale-arm`, `stale-box`, `stale`, or `error: …`.
    pub status: String,
}

/// Sample outputs of the last frame of a cell.
#[derive(Debug, Clone)]
pub struct CellArtifacts {
    pub cloud: PointCloud,
    /// Edge map of camera 0 as seen at the edge.
    pub edges: Image,
}

#[derive(Debug, Clone)]
pub struct CellOutput {
    pub records: Vec<RunRecord>,
    pub artifacts: Option<CellArtifacts>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Channel seed of one transmission. It does not depend on the SNR, so one
/// seed sees the same fading and noise draws at every SNR.
pub fn channel_seed(seed: u64, frame: u32, view: u32) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ frame as u64) ^ ((view as u64) << 32))
}

fn status_of(regen: &Regenerated) -> &'static str {
    match (regen.stale_arm, regen.stale_box) {
        (false, false) => "ok",
        (true, false) => "stale-arm",
        (false, true) => "stale-box",
        (true, true) => "stale",
    }
}

fn error_record(fw: Framework, snr_db: f64, seed: u64, frame: u32, e: &Error) -> RunRecord {
    RunRecord {
        framework: fw,
        snr_db,
        seed,
        frame,
        kpe: None,
        p2point: None,
        td: None,
        bits_sent: 0,
        bit_errors: 0,
        status: format!("error: {e}"),
    }
}

struct FrameOutcome {
    record: RunRecord,
    state: SceneState,
    cloud: PointCloud,
    received: Option<Image>,
}

fn score(
    prep: &Prepared,
    truth: &TruthFrame,
    state: &SceneState,
    cloud: &PointCloud,
) -> Result<(KpeReport, P2PointReport)> {
    let recovered = extract_frame(state, &prep.cameras, None)?;
    Ok((kpe(&truth.semantics, &recovered, prep.config.pck_px)?, p2point(&truth.cloud, cloud)?))
}

fn edges_of(prep: &Prepared, state: &SceneState, received: Option<Image>) -> Result<Image> {
    let img = match received {
        Some(img) => img,
        None => render_image(state, &prep.cameras[0], prep.config.render.steps)?,
    };
    Ok(edge_map(&img, prep.config.render.edge_threshold)?.to_image())
}

fn run_frames<F>(
    prep: &Prepared,
    fw: Framework,
    snr_db: f64,
    seed: u64,
    artifacts: bool,
    mut step: F,
) -> Result<CellOutput>
where
    F: FnMut(u32, &TruthFrame) -> Result<FrameOutcome>,
{
    let mut records = Vec::with_capacity(prep.frames.len());
    let mut last = None;
    for (t, truth) in prep.frames.iter().enumerate() {
        match step(t as u32, truth) {
            Ok(out) => {
                records.push(out.record);
                last = Some((out.state, out.cloud, out.received));
            }
            Err(e) => records.push(error_record(fw, snr_db, seed, t as u32, &e)),
        }
    }
    let artifacts = match (artifacts, last) {
        (true, Some((state, cloud, received))) => {
            Some(CellArtifacts { edges: edges_of(prep, &state, received)?, cloud })
        }
        _ => None,
    };
    Ok(CellOutput { records, artifacts })
}

/// ImageCom: raw images over the channel, color-matched semantics and an
/// ungated refit at the edge.
pub fn run_imagecom(prep: &Prepared, snr_db: f64, seed: u64, artifacts: bool) -> Result<CellOutput> {
    let fw = Framework::ImageCom;
    let cfg = &prep.config;
    let timing = cfg.timing.get(fw);
    let mut session = EdgeSession::new(
        prep.base.clone(),
        Mode::M,
        cfg.weights,
        prep.regen_settings(false),
        cfg.cloud.clone(),
    )?;
    run_frames(prep, fw, snr_db, seed, artifacts, |t, truth| {
        if truth.images.len() != prep.cameras.len() {
            return Err(crate::error::contract("ImageCom needs truth renders"));
        }
        let received = truth
            .images
            .par_iter()
            .enumerate()
            .map(|(v, img)| {
                let ch = prep.channel(snr_db, channel_seed(seed, t, v as u32));
                let (bits, report) = transmit(&encode_image(img), &ch)?;
                Ok((decode_image(&bits, img.width, img.height)?, report))
            })
            .collect::<Result<Vec<_>>>()?;
        let views = received
            .iter()
            .zip(&prep.cameras)
            .map(|((img, _), cam)| estimate_view(img, cam.id, &prep.layout, cfg.color_tolerance, cfg.median_filter))
            .collect();
        let frame = SemanticFrame { time: t, views };
        let built = session.construct_metaverse(&frame)?;
        let (k, p) = score(prep, truth, &built.regenerated.state, &built.cloud)?;
        let bits_sent: usize = received.iter().map(|(_, r)| r.bits_sent).sum();
        let bit_errors = received.iter().map(|(_, r)| r.bit_errors).sum();
        let delay = td(timing.extract_s, bits_sent, 0.0, &prep.channel(snr_db, seed), timing.generate_s)?;
        Ok(FrameOutcome {
            record: RunRecord {
                framework: fw,
                snr_db,
                seed,
                frame: t,
                kpe: Some(k),
                p2point: Some(p),
                td: Some(delay),
                bits_sent,
                bit_errors,
                status: status_of(&built.regenerated).into(),
            },
            state: built.regenerated.state,
            cloud: built.cloud,
            received: received.into_iter().next().map(|(img, _)| img),
        })
    })
}

/// GSCM: one semantic frame over the channel, regenerated at the edge in
/// the given mode.
pub fn run_gscm(prep: &Prepared, mode: Mode, snr_db: f64, seed: u64, artifacts: bool) -> Result<CellOutput> {
    let fw = match mode {
        Mode::M => Framework::MGscm,
        Mode::S => Framework::SGscm,
    };
    let cfg = &prep.config;
    let timing = cfg.timing.get(fw);
    let codec = SemanticCodec::for_width(cfg.rig.resolution.0);
    let base_share = prep.base_bits as f64 / prep.frames.len() as f64;
    let mut session = EdgeSession::new(
        prep.base.clone(),
        mode,
        cfg.weights,
        prep.regen_settings(true),
        cfg.cloud.clone(),
    )?;
    run_frames(prep, fw, snr_db, seed, artifacts, |t, truth| {
        let encoded = encode_semantic(&truth.detected, &codec)?;
        let (bits, report) = transmit(&encoded.bits, &prep.channel(snr_db, channel_seed(seed, t, 0)))?;
        let mut frame = decode_semantic(&bits, &codec)?.frame;
        frame.time = t;
        let built = session.construct_metaverse(&frame)?;
        let (k, p) = score(prep, truth, &built.regenerated.state, &built.cloud)?;
        let delay = td(
            timing.extract_s,
            report.bits_sent,
            base_share,
            &prep.channel(snr_db, seed),
            timing.generate_s,
        )?;
        Ok(FrameOutcome {
            record: RunRecord {
                framework: fw,
                snr_db,
                seed,
                frame: t,
                kpe: Some(k),
                p2point: Some(p),
                td: Some(delay),
                bits_sent: report.bits_sent,
                bit_errors: report.bit_errors,
                status: status_of(&built.regenerated).into(),
            },
            state: built.regenerated.state,
            cloud: built.cloud,
            received: None,
        })
    })
}

/// Runs one cell of the sweep.
pub fn run_cell(prep: &Prepared, fw: Framework, snr_db: f64, seed: u64, artifacts: bool) -> Result<CellOutput> {
    match fw.mode() {
        None => run_imagecom(prep, snr_db, seed, artifacts),
        Some(mode) => run_gscm(prep, mode, snr_db, seed, artifacts),
    }
}
