//! Pixel-domain semantics for ImageCom: find the arm markers and the box by
//! their configured colors in a received image.

use crate::camera::ImagePoint;
use crate::render::{quantize_rgb, Image};
use crate::scene::{SceneLayout, NUM_KEYPOINTS};
use crate::semantics::{BoxObservation, ViewSemantics};

/// Components smaller than this are treated as noise.
pub const MIN_BLOB_PIXELS: usize = 2;

/// A 4-connected set of matching pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub pixels: usize,
    pub sum_x: f64,
    pub sum_y: f64,
    pub min: (u32, u32),
    pub max: (u32, u32),
}

impl Blob {
    /// Mean of the pixel centers.
    pub fn centroid(&self) -> (f64, f64) {
        (self.sum_x / self.pixels as f64 + 0.5, self.sum_y / self.pixels as f64 + 0.5)
    }
}

fn matches(px: &[u8], target: [u8; 3], tolerance: u8) -> bool {
    px.iter().zip(target).all(|(a, b)| a.abs_diff(b) <= tolerance)
}

/// Largest 4-connected component of pixels within `tolerance` of `target`
/// on every channel. Ties go to the component found first in raster order.
pub fn largest_blob(img: &Image, target: [u8; 3], tolerance: u8) -> Option<Blob> {
    let (w, h) = (img.width as usize, img.height as usize);
    let mask: Vec<bool> = img.rgb.chunks_exact(3).map(|px| matches(px, target, tolerance)).collect();
    let mut seen = vec![false; w * h];
    let mut best: Option<Blob> = None;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut blob = Blob {
            pixels: 0,
            sum_x: 0.0,
            sum_y: 0.0,
            min: (u32::MAX, u32::MAX),
            max: (0, 0),
        };
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            blob.pixels += 1;
            blob.sum_x += x as f64;
            blob.sum_y += y as f64;
            blob.min = (blob.min.0.min(x as u32), blob.min.1.min(y as u32));
            blob.max = (blob.max.0.max(x as u32), blob.max.1.max(y as u32));
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if best.as_ref().is_none_or(|b| blob.pixels > b.pixels) {
            best = Some(blob);
        }
    }
    best.filter(|b| b.pixels >= MIN_BLOB_PIXELS)
}

/// 3×3 per-channel median filter; border pixels use the clamped
/// neighborhood. Removes isolated bit-flip speckle before color matching.
pub fn median3(img: &Image) -> Image {
    let (w, h) = (img.width as usize, img.height as usize);
    let mut out = img.clone();
    let mut window = [0u8; 9];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut n = 0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                        let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                        window[n] = img.rgb[(yy * w + xx) * 3 + c];
                        n += 1;
                    }
                }
                window.sort_unstable();
                out.rgb[(y * w + x) * 3 + c] = window[4];
            }
        }
    }
    out
}

/// Semantics of one received image. `denoise` median-filters it first. Markers that cannot be found are
/// flagged invalid; a missing box yields an empty box.
pub fn estimate_view(
    img: &Image,
    camera_id: u32,
    layout: &SceneLayout,
    tolerance: u8,
    denoise: bool,
) -> ViewSemantics {
    let filtered;
    let img = if denoise {
        filtered = median3(img);
        &filtered
    } else {
        img
    };
    let arm = &layout.arm;
    let mut keypoints = [ImagePoint { x: 0.0, y: 0.0, in_frustum: false }; NUM_KEYPOINTS];
    for (kp, color) in keypoints.iter_mut().zip(&arm.marker_colors) {
        if let Some(blob) = largest_blob(img, quantize_rgb(color), tolerance) {
            let (x, y) = blob.centroid();
            *kp = ImagePoint { x, y, in_frustum: true };
        }
    }
    let bbox = largest_blob(img, quantize_rgb(&layout.box_material.color), tolerance)
        .map(|b| {
            let (x0, y0) = (b.min.0 as f64, b.min.1 as f64);
            let (x1, y1) = (b.max.0 as f64 + 1.0, b.max.1 as f64 + 1.0);
            BoxObservation { cx: (x0 + x1) / 2.0, cy: (y0 + y1) / 2.0, w: x1 - x0, h: y1 - y0 }
        })
        .unwrap_or_default();
    ViewSemantics { camera_id, keypoints, bbox }
}
