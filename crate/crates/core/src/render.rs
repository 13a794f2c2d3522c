//! Volume rendering of the analytic field, edge maps and voxel point clouds.
//!
//! Rays are integrated with uniform midpoint quadrature:
//! `C = Σ T_i·(1 − exp(−σ_i·δ))·c_i + T_N·background` with
//! `T_i = exp(−Σ_{j<i} σ_j·δ)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraConfig;
use crate::error::contract;
use crate::scene::{scene_field, Aabb, SceneState};
use crate::{Result, Rgb, Vec3};

pub const DEFAULT_STEPS: usize = 256;

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, rgb: Vec<u8>) -> Result<Self> {
        if rgb.len() != width as usize * height as usize * 3 {
            return Err(contract(format!(
                "image buffer has {} bytes, expected {}x{}x3",
                rgb.len(),
                width,
                height
            )));
        }
        Ok(Image { width, height, rgb })
    }

    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Self {
        let rgb = color.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Image { width, height, rgb }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }
}

/// Boolean edge mask, same shape as its source image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    pub width: u32,
    pub height: u32,
    pub mask: Vec<bool>,
}

impl EdgeMap {
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.mask[y as usize * self.width as usize + x as usize]
    }

    /// White-on-black rendering of the mask.
    pub fn to_image(&self) -> Image {
        let rgb = self.mask.iter().flat_map(|&e| if e { [255u8; 3] } else { [0u8; 3] }).collect();
        Image { width: self.width, height: self.height, rgb }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: Vec3,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = &Vec3> + '_ {
        self.points.iter().map(|p| &p.position)
    }
}

pub fn quantize(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn quantize_rgb(c: &Rgb) -> [u8; 3] {
    [quantize(c[0]), quantize(c[1]), quantize(c[2])]
}

/// Per-sample record of one marched ray.
#[derive(Debug, Clone)]
pub struct RayMarch {
    /// Unclamped radiance.
    pub color: Rgb,
    pub step: f64,
    /// `T_i` before sample `i`; one extra trailing entry for the residual.
    pub transmittance: Vec<f64>,
    pub density: Vec<f64>,
}

fn check_ray(dir: &Vec3, l_s: f64, l_e: f64, steps: usize) -> Result<()> {
    let n = dir.norm();
    if !(n > 1e-12) {
        return Err(contract("ray direction has zero length"));
    }
    if (n - 1.0).abs() > 1e-9 {
        return Err(contract(format!("ray direction must be unit norm, got {n}")));
    }
    if !(l_s < l_e) {
        return Err(contract(format!("ray interval [{l_s}, {l_e}] is empty")));
    }
    if steps == 0 {
        return Err(contract("ray needs at least one step"));
    }
    Ok(())
}

/// Marches a ray and keeps every sample, without empty-space skipping.
pub fn march_ray(
    state: &SceneState,
    origin: &Vec3,
    dir: &Vec3,
    l_s: f64,
    l_e: f64,
    steps: usize,
) -> Result<RayMarch> {
    check_ray(dir, l_s, l_e, steps)?;
    let step = (l_e - l_s) / steps as f64;
    let mut color = [0.0; 3];
    let mut depth = 0.0f64;
    let mut transmittance = Vec::with_capacity(steps + 1);
    let mut density = Vec::with_capacity(steps);
    for i in 0..steps {
        let l = l_s + (i as f64 + 0.5) * step;
        let s = scene_field(state, &(origin + dir * l));
        let t = (-depth).exp();
        let alpha = 1.0 - (-s.density * step).exp();
        for k in 0..3 {
            color[k] += t * alpha * s.color[k];
        }
        transmittance.push(t);
        density.push(s.density);
        depth += s.density * step;
    }
    let residual = (-depth).exp();
    transmittance.push(residual);
    let bg = state.layout.background_color;
    for k in 0..3 {
        color[k] += residual * bg[k];
    }
    Ok(RayMarch { color, step, transmittance, density })
}

/// Renders one ray, clamped to `[0, 1]`.
///
/// Samples outside the scene bounds are skipped; they carry zero density,
/// so the result is identical to marching every sample.
pub fn render_ray(
    state: &SceneState,
    origin: &Vec3,
    dir: &Vec3,
    l_s: f64,
    l_e: f64,
    steps: usize,
) -> Result<Rgb> {
    check_ray(dir, l_s, l_e, steps)?;
    Ok(render_ray_bounded(state, &state.bounds(), origin, dir, l_s, l_e, steps))
}

fn render_ray_bounded(
    state: &SceneState,
    bounds: &Aabb,
    origin: &Vec3,
    dir: &Vec3,
    l_s: f64,
    l_e: f64,
    steps: usize,
) -> Rgb {
    let step = (l_e - l_s) / steps as f64;
    let mut color = [0.0; 3];
    let mut depth = 0.0f64;
    if let Some((t0, t1)) = bounds.ray_interval(origin, dir) {
        // midpoints l_s + (i + 0.5)·step inside [t0, t1], padded by one sample
        let first = ((t0 - l_s) / step - 1.5).floor().max(0.0) as usize;
        let last = (((t1 - l_s) / step + 0.5).ceil().max(0.0) as usize).min(steps);
        for i in first..last {
            let l = l_s + (i as f64 + 0.5) * step;
            let s = scene_field(state, &(origin + dir * l));
            if s.density == 0.0 {
                continue;
            }
            let t = (-depth).exp();
            let alpha = 1.0 - (-s.density * step).exp();
            for k in 0..3 {
                color[k] += t * alpha * s.color[k];
            }
            depth += s.density * step;
        }
    }
    let residual = (-depth).exp();
    let bg = state.layout.background_color;
    for k in 0..3 {
        color[k] = (color[k] + residual * bg[k]).clamp(0.0, 1.0);
    }
    color
}

/// Renders through every pixel center between the near and far planes.
pub fn render_image(state: &SceneState, cam: &CameraConfig, steps: usize) -> Result<Image> {
    cam.validate()?;
    if steps == 0 {
        return Err(contract("render needs at least one step"));
    }
    let (w, h) = cam.resolution;
    let bounds = state.bounds();
    let mut rgb = vec![0u8; w as usize * h as usize * 3];
    rgb.par_chunks_mut(w as usize * 3).enumerate().for_each(|(y, row)| {
        for x in 0..w as usize {
            let (origin, dir) = cam.pixel_ray(x as f64 + 0.5, y as f64 + 0.5);
            let c = render_ray_bounded(state, &bounds, &origin, &dir, cam.near, cam.far, steps);
            row[x * 3..x * 3 + 3].copy_from_slice(&quantize_rgb(&c));
        }
    });
    Ok(Image { width: w, height: h, rgb })
}

/// Sobel gradient magnitude of the channel-mean intensity, thresholded at
/// `threshold · max`. Border pixels are never edges.
pub fn edge_map(img: &Image, threshold: f64) -> Result<EdgeMap> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(contract(format!("edge threshold {threshold} must lie in (0, 1]")));
    }
    let (w, h) = (img.width as usize, img.height as usize);
    let gray: Vec<f64> = img
        .rgb
        .chunks_exact(3)
        .map(|p| (p[0] as f64 + p[1] as f64 + p[2] as f64) / (3.0 * 255.0))
        .collect();
    let mut mag = vec![0.0; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let g = |dx: isize, dy: isize| {
                gray[(y as isize + dy) as usize * w + (x as isize + dx) as usize]
            };
            let gx = (g(1, -1) + 2.0 * g(1, 0) + g(1, 1)) - (g(-1, -1) + 2.0 * g(-1, 0) + g(-1, 1));
            let gy = (g(-1, 1) + 2.0 * g(0, 1) + g(1, 1)) - (g(-1, -1) + 2.0 * g(0, -1) + g(1, -1));
            mag[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    let max = mag.iter().copied().fold(0.0, f64::max);
    let mask = if max > 0.0 {
        let cut = threshold * max;
        mag.iter().map(|&m| m > 0.0 && m >= cut).collect()
    } else {
        vec![false; w * h]
    };
    Ok(EdgeMap { width: img.width, height: img.height, mask })
}

/// Voxel-grid sampling settings for point-cloud export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloudSpec {
    pub bounds: Aabb,
    pub voxel_size: f64,
    pub sigma_min: f64,
}

impl Default for CloudSpec {
    fn default() -> Self {
        CloudSpec {
            bounds: Aabb { min: Vec3::new(-4.0, -0.1, -4.0), max: Vec3::new(4.0, 3.5, 4.0) },
            voxel_size: 0.1,
            sigma_min: 1.0,
        }
    }
}

/// One point per voxel whose center density reaches `sigma_min`, placed at
/// the voxel center. Voxels are visited x-major, then y, then z.
pub fn extract_point_cloud(state: &SceneState, spec: &CloudSpec) -> Result<PointCloud> {
    if !(spec.voxel_size > 0.0) {
        return Err(contract("voxel size must be positive"));
    }
    if !(spec.sigma_min > 0.0) {
        return Err(contract("sigma_min must be positive"));
    }
    let b = &spec.bounds;
    if b.is_empty() {
        return Ok(PointCloud::default());
    }
    let counts: Vec<usize> = (0..3)
        .map(|k| ((b.max[k] - b.min[k]) / spec.voxel_size + 1e-9).floor() as usize)
        .collect();
    let center = |k: usize, i: usize| b.min[k] + (i as f64 + 0.5) * spec.voxel_size;
    let mut points = Vec::new();
    for ix in 0..counts[0] {
        for iy in 0..counts[1] {
            for iz in 0..counts[2] {
                let p = Vec3::new(center(0, ix), center(1, iy), center(2, iz));
                let s = scene_field(state, &p);
                if s.density >= spec.sigma_min {
                    points.push(CloudPoint { position: p, color: quantize_rgb(&s.color) });
                }
            }
        }
    }
    Ok(PointCloud { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ArmPose, BoxState, Material, Primitive, SceneLayout, Shape};
    use std::sync::Arc;

    fn state_with(layout: SceneLayout) -> SceneState {
        let b = BoxState { center: Vec3::new(0.0, 1.0, 0.0), half_extents: Vec3::repeat(0.5), yaw: 0.0 };
        SceneState::new(0, ArmPose::zeros(), b, Arc::new(layout)).unwrap()
    }

    #[test]
    fn empty_ray_is_background() {
        let state = state_with(SceneLayout::empty([0.2, 0.4, 0.6]));
        let c = render_ray(&state, &Vec3::zeros(), &Vec3::x(), 0.0, 10.0, 64).unwrap();
        assert_eq!(c, [0.2, 0.4, 0.6]);
    }

    #[test]
    fn zero_direction_rejected() {
        let state = state_with(SceneLayout::empty([0.0; 3]));
        assert!(render_ray(&state, &Vec3::zeros(), &Vec3::zeros(), 0.0, 1.0, 8).is_err());
        assert!(render_ray(&state, &Vec3::zeros(), &Vec3::x(), 1.0, 1.0, 8).is_err());
    }

    #[test]
    fn skipping_matches_full_march() {
        let mut layout = SceneLayout::empty([0.1, 0.2, 0.3]);
        layout.box_material = Material { color: [0.9, 0.1, 0.1], density: 3.0 };
        layout.background.push(Primitive {
            shape: Shape::Sphere { center: Vec3::new(2.0, 1.0, 0.5), radius: 0.7 },
            color: [0.1, 0.8, 0.2],
            density: 1.5,
        });
        let state = state_with(layout);
        let origin = Vec3::new(-5.0, 1.1, 0.2);
        let dir = Vec3::new(1.0, 0.0, 0.05).normalize();
        let full = march_ray(&state, &origin, &dir, 0.5, 12.0, 200).unwrap();
        let fast = render_ray(&state, &origin, &dir, 0.5, 12.0, 200).unwrap();
        for k in 0..3 {
            assert!((full.color[k] - fast[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn vertical_step_edges() {
        let (w, h) = (16u32, 8u32);
        let mut img = Image::filled(w, h, [0, 0, 0]);
        for y in 0..h {
            for x in w / 2..w {
                let i = ((y * w + x) * 3) as usize;
                img.rgb[i..i + 3].copy_from_slice(&[255, 255, 255]);
            }
        }
        let edges = edge_map(&img, 0.5).unwrap();
        for y in 0..h {
            for x in 0..w {
                let expect = y > 0 && y < h - 1 && (x == w / 2 - 1 || x == w / 2);
                assert_eq!(edges.get(x, y), expect, "pixel ({x},{y})");
            }
        }
        let flat = edge_map(&Image::filled(w, h, [7, 7, 7]), 0.1).unwrap();
        assert!(flat.mask.iter().all(|e| !e));
        assert!(edge_map(&img, 0.0).is_err());
    }

    #[test]
    fn empty_bounds_give_empty_cloud() {
        let state = state_with(SceneLayout::empty([0.0; 3]));
        let spec = CloudSpec {
            bounds: Aabb { min: Vec3::zeros(), max: Vec3::zeros() },
            voxel_size: 0.1,
            sigma_min: 1.0,
        };
        assert!(extract_point_cloud(&state, &spec).unwrap().is_empty());
    }
}
