//! Transmitter-side semantic extraction.
//!
//! A semantic frame carries, for every camera, the 7 projected arm keypoints
//! and the pixel bounding box of the movable box. Extraction is a pure
//! function of the scene state and the cameras; it never looks at pixels.
//! Detector imperfection is modeled separately by [`apply_detector_noise`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{project_point, to_ndc, CameraConfig, ImagePoint};
use crate::error::{config, contract};
use crate::scene::{BoxState, SceneState, NUM_KEYPOINTS};
use crate::Result;

/// Scalars per view: 7 keypoints × 2 plus 4 box parameters.
pub const SCALARS_PER_VIEW: usize = NUM_KEYPOINTS * 2 + 4;

/// Pixel-space box: center and size.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxObservation {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxObservation {
    pub fn is_empty(&self) -> bool {
        !(self.w > 0.0 && self.h > 0.0)
    }

    /// Top-left and bottom-right corners.
    pub fn corners(&self) -> [(f64, f64); 2] {
        [
            (self.cx - self.w / 2.0, self.cy - self.h / 2.0),
            (self.cx + self.w / 2.0, self.cy + self.h / 2.0),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSemantics {
    pub camera_id: u32,
    pub keypoints: [ImagePoint; NUM_KEYPOINTS],
    pub bbox: BoxObservation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticFrame {
    pub time: u32,
    pub views: Vec<ViewSemantics>,
}

impl SemanticFrame {
    pub fn scalar_count(&self) -> usize {
        self.views.len() * SCALARS_PER_VIEW
    }
}

/// Imperfect-detector model applied on top of exact extraction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorNoise {
    pub keypoint_sigma: f64,
    pub box_sigma: f64,
    /// Probability that a view's box is lost.
    pub miss_rate: f64,
    pub seed: u64,
}

impl DetectorNoise {
    pub fn validate(&self) -> Result<()> {
        if !(self.keypoint_sigma >= 0.0 && self.box_sigma >= 0.0) {
            return Err(config("detector sigmas must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.miss_rate) {
            return Err(config("detector miss rate must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.keypoint_sigma == 0.0 && self.box_sigma == 0.0 && self.miss_rate == 0.0
    }
}

pub fn extract_keypoints(state: &SceneState, cam: &CameraConfig) -> [ImagePoint; NUM_KEYPOINTS] {
    state.keypoints().map(|k| project_point(cam, &k))
}

/// Pixel bounding box of a box pose, clipped to the image; all zero when
/// nothing of it is visible in front of the camera.
pub fn project_box(b: &BoxState, cam: &CameraConfig) -> BoxObservation {
    let (w, h) = (cam.width() as f64, cam.height() as f64);
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut any = false;
    for corner in b.corners() {
        if let Some(ndc) = to_ndc(cam, &corner) {
            let (x, y) = ((ndc.x + 1.0) / 2.0 * w, (1.0 - ndc.y) / 2.0 * h);
            lo = (lo.0.min(x), lo.1.min(y));
            hi = (hi.0.max(x), hi.1.max(y));
            any = true;
        }
    }
    if !any {
        return BoxObservation::default();
    }
    let (x0, y0) = (lo.0.max(0.0), lo.1.max(0.0));
    let (x1, y1) = (hi.0.min(w), hi.1.min(h));
    if x1 <= x0 || y1 <= y0 {
        return BoxObservation::default();
    }
    BoxObservation { cx: (x0 + x1) / 2.0, cy: (y0 + y1) / 2.0, w: x1 - x0, h: y1 - y0 }
}

pub fn extract_box(state: &SceneState, cam: &CameraConfig) -> BoxObservation {
    project_box(&state.box_state, cam)
}

/// Exact semantics of `state` seen by `cam`.
pub fn extract_view(state: &SceneState, cam: &CameraConfig) -> ViewSemantics {
    ViewSemantics {
        camera_id: cam.id,
        keypoints: extract_keypoints(state, cam),
        bbox: extract_box(state, cam),
    }
}

/// Mixes the frame index into the detector seed so frames draw independent
/// noise.
fn frame_seed(seed: u64, time: u32) -> u64 {
    seed ^ (time as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn apply_detector_noise(frame: &SemanticFrame, noise: &DetectorNoise) -> SemanticFrame {
    if noise.is_noiseless() {
        return frame.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(noise.seed, frame.time));
    let kp = Normal::new(0.0, noise.keypoint_sigma).expect("validated sigma");
    let bx = Normal::new(0.0, noise.box_sigma).expect("validated sigma");
    let mut out = frame.clone();
    for view in &mut out.views {
        for k in &mut view.keypoints {
            k.x += kp.sample(&mut rng);
            k.y += kp.sample(&mut rng);
        }
        let b = &mut view.bbox;
        let jitter: [f64; 4] = std::array::from_fn(|_| bx.sample(&mut rng));
        let missed = rng.random::<f64>() < noise.miss_rate;
        if missed || b.is_empty() {
            *b = BoxObservation::default();
        } else {
            b.cx += jitter[0];
            b.cy += jitter[1];
            b.w = (b.w + jitter[2]).max(0.0);
            b.h = (b.h + jitter[3]).max(0.0);
        }
    }
    out
}

/// One view record per camera, with optional detector noise.
pub fn extract_frame(
    state: &SceneState,
    rig: &[CameraConfig],
    noise: Option<&DetectorNoise>,
) -> Result<SemanticFrame> {
    if rig.is_empty() {
        return Err(config("semantic extraction needs at least one camera"));
    }
    let frame = SemanticFrame {
        time: state.time,
        views: rig.iter().map(|cam| extract_view(state, cam)).collect(),
    };
    match noise {
        Some(n) => {
            n.validate()?;
            Ok(apply_detector_noise(&frame, n))
        }
        None => Ok(frame),
    }
}

/// Views of `a` and `b` must line up camera by camera.
pub fn check_same_structure(a: &SemanticFrame, b: &SemanticFrame) -> Result<()> {
    if a.views.len() != b.views.len() {
        return Err(contract(format!("frames have {} and {} views", a.views.len(), b.views.len())));
    }
    for (va, vb) in a.views.iter().zip(&b.views) {
        if va.camera_id != vb.camera_id {
            return Err(contract("frames list different cameras"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::RigSpec;
    use crate::scene::{animate, Scenario};

    fn setup() -> (SceneState, Vec<CameraConfig>) {
        let s = Scenario::builtin("default").unwrap();
        (animate(&s, 0).unwrap(), RigSpec::default().build().unwrap())
    }

    #[test]
    fn frame_shape() {
        let (state, rig) = setup();
        let f = extract_frame(&state, &rig, None).unwrap();
        assert_eq!(f.views.len(), 8);
        assert_eq!(f.scalar_count(), 8 * 18);
        assert!(extract_frame(&state, &[], None).is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let (state, rig) = setup();
        let f = extract_frame(&state, &rig, None).unwrap();
        let n = DetectorNoise { seed: 9, ..Default::default() };
        assert_eq!(apply_detector_noise(&f, &n), f);
    }

    #[test]
    fn noise_is_seeded() {
        let (state, rig) = setup();
        let f = extract_frame(&state, &rig, None).unwrap();
        let n = DetectorNoise { keypoint_sigma: 1.0, box_sigma: 2.0, miss_rate: 0.2, seed: 5 };
        assert_eq!(apply_detector_noise(&f, &n), apply_detector_noise(&f, &n));
        let other = DetectorNoise { seed: 6, ..n };
        assert_ne!(apply_detector_noise(&f, &n), apply_detector_noise(&f, &other));
    }

    #[test]
    fn invalid_noise_rejected() {
        let (state, rig) = setup();
        let n = DetectorNoise { miss_rate: 1.0, ..Default::default() };
        assert!(extract_frame(&state, &rig, Some(&n)).is_err());
    }
}
