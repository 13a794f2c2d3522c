//! Session preamble shared with the edge once, before the first frame.
//!
//! # File layout
//!
//! Little-endian throughout.
//!
//! ```text
//! "SCBK" u16 version=1
//! camera block   u16 n, then per camera:
//!                u32 id, f64×3 position, f64×9 rotation (row-major),
//!                f64 fov, f64 aspect, f64 near, f64 far, u32 width, u32 height
//! object block   arm: f64×6 link lengths, f64×3 base, f64×18 joint axes,
//!                     f64 link radius, f64 marker radius, f64 density,
//!                     f64×3 link color, f64×21 marker colors
//!                box material: f64×3 color, f64 density
//!                f64×3 background color
//!                u16 m primitives, each: u8 kind (0 slab, 1 sphere),
//!                     slab f64×6 (min, max) | sphere f64×4 (center, radius),
//!                     f64×3 color, f64 density
//!                f64×6 initial joint angles
//!                initial box: f64×3 center, f64×3 half extents, f64 yaw
//! edge block     u16 n, then per map: u32 width, u32 height,
//!                ceil(w·h/8) bytes of row-major mask bits, MSB-first
//! ```

use std::sync::Arc;

use nalgebra::Matrix3;

use crate::camera::CameraConfig;
use crate::error::contract;
use crate::render::{edge_map, render_image, EdgeMap, Image};
use crate::scene::{
    animate_with, ArmModel, ArmPose, BoxState, Material, Primitive, Scenario, SceneLayout,
    SceneState, Shape, NUM_JOINTS, NUM_KEYPOINTS,
};
use crate::{Error, Result, Rgb, Vec3};

const MAGIC: &[u8; 4] = b"SCBK";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct BaseKnowledge {
    pub cameras: Vec<CameraConfig>,
    /// One edge map per camera, taken at frame 0.
    pub edge_maps: Vec<EdgeMap>,
    /// Object models, materials and the stationary background.
    pub layout: Arc<SceneLayout>,
    pub initial_pose: ArmPose,
    pub initial_box: BoxState,
}

impl BaseKnowledge {
    /// Renders frame 0 from every camera and keeps its edge maps.
    pub fn capture(
        scenario: &Scenario,
        layout: &Arc<SceneLayout>,
        cameras: &[CameraConfig],
        steps: usize,
        edge_threshold: f64,
    ) -> Result<Self> {
        let state = animate_with(scenario, layout, 0)?;
        let images = cameras
            .iter()
            .map(|cam| render_image(&state, cam, steps))
            .collect::<Result<Vec<_>>>()?;
        Self::from_renders(&state, cameras, &images, edge_threshold)
    }

    /// Builds the preamble from frame-0 renders that already exist.
    pub fn from_renders(
        state: &SceneState,
        cameras: &[CameraConfig],
        images: &[Image],
        edge_threshold: f64,
    ) -> Result<Self> {
        let edge_maps = images
            .iter()
            .map(|img| edge_map(img, edge_threshold))
            .collect::<Result<Vec<_>>>()?;
        let base = BaseKnowledge {
            cameras: cameras.to_vec(),
            edge_maps,
            layout: Arc::clone(&state.layout),
            initial_pose: state.arm_pose.clone(),
            initial_box: state.box_state,
        };
        base.validate()?;
        Ok(base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.len() != self.edge_maps.len() {
            return Err(contract("base knowledge needs one edge map per camera"));
        }
        for (cam, map) in self.cameras.iter().zip(&self.edge_maps) {
            cam.validate()?;
            if (map.width, map.height) != cam.resolution {
                return Err(contract(format!("edge map of camera {} has the wrong size", cam.id)));
            }
        }
        Ok(())
    }

    pub fn box_half_extents(&self) -> Vec3 {
        self.initial_box.half_extents
    }

    /// The scene as known at frame 0.
    pub fn initial_state(&self) -> Result<SceneState> {
        SceneState::new(0, self.initial_pose.clone(), self.initial_box, Arc::clone(&self.layout))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u16(VERSION);

        w.u16(self.cameras.len() as u16);
        for cam in &self.cameras {
            w.u32(cam.id);
            w.vec3(&cam.position);
            for r in 0..3 {
                for c in 0..3 {
                    w.f64(cam.rotation[(r, c)]);
                }
            }
            for v in [cam.fov, cam.aspect, cam.near, cam.far] {
                w.f64(v);
            }
            w.u32(cam.resolution.0);
            w.u32(cam.resolution.1);
        }

        let arm = &self.layout.arm;
        arm.link_lengths.iter().for_each(|v| w.f64(*v));
        w.vec3(&arm.base_position);
        arm.joint_axes.iter().for_each(|a| w.vec3(a));
        w.f64(arm.link_radius);
        w.f64(arm.marker_radius);
        w.f64(arm.density);
        w.rgb(&arm.link_color);
        arm.marker_colors.iter().for_each(|c| w.rgb(c));
        w.rgb(&self.layout.box_material.color);
        w.f64(self.layout.box_material.density);
        w.rgb(&self.layout.background_color);
        w.u16(self.layout.background.len() as u16);
        for prim in &self.layout.background {
            match prim.shape {
                Shape::Slab { min, max } => {
                    w.u8(0);
                    w.vec3(&min);
                    w.vec3(&max);
                }
                Shape::Sphere { center, radius } => {
                    w.u8(1);
                    w.vec3(&center);
                    w.f64(radius);
                }
            }
            w.rgb(&prim.color);
            w.f64(prim.density);
        }
        self.initial_pose.joint_angles.iter().for_each(|a| w.f64(*a));
        w.vec3(&self.initial_box.center);
        w.vec3(&self.initial_box.half_extents);
        w.f64(self.initial_box.yaw);

        w.u16(self.edge_maps.len() as u16);
        for map in &self.edge_maps {
            w.u32(map.width);
            w.u32(map.height);
            for chunk in map.mask.chunks(8) {
                let byte = chunk.iter().enumerate().fold(0u8, |b, (i, &m)| b | (m as u8) << (7 - i));
                w.u8(byte);
            }
        }
        w.buf
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader { data, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Decode("not a base-knowledge file".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Decode(format!("unsupported base-knowledge version {version}")));
        }

        let n = r.u16()? as usize;
        let mut cameras = Vec::with_capacity(n);
        for _ in 0..n {
            let id = r.u32()?;
            let position = r.vec3()?;
            let mut rotation = Matrix3::zeros();
            for row in 0..3 {
                for col in 0..3 {
                    rotation[(row, col)] = r.f64()?;
                }
            }
            let (fov, aspect, near, far) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
            let resolution = (r.u32()?, r.u32()?);
            cameras.push(CameraConfig { id, position, rotation, fov, aspect, near, far, resolution });
        }

        let mut link_lengths = [0.0; NUM_JOINTS];
        for l in &mut link_lengths {
            *l = r.f64()?;
        }
        let base_position = r.vec3()?;
        let mut joint_axes = [Vec3::zeros(); NUM_JOINTS];
        for a in &mut joint_axes {
            *a = r.vec3()?;
        }
        let (link_radius, marker_radius, density) = (r.f64()?, r.f64()?, r.f64()?);
        let link_color = r.rgb()?;
        let mut marker_colors = [[0.0; 3]; NUM_KEYPOINTS];
        for c in &mut marker_colors {
            *c = r.rgb()?;
        }
        let arm = ArmModel {
            link_lengths,
            base_position,
            joint_axes,
            link_radius,
            marker_radius,
            density,
            link_color,
            marker_colors,
        };
        let box_material = Material { color: r.rgb()?, density: r.f64()? };
        let background_color = r.rgb()?;
        let m = r.u16()? as usize;
        let mut background = Vec::with_capacity(m);
        for _ in 0..m {
            let shape = match r.u8()? {
                0 => Shape::Slab { min: r.vec3()?, max: r.vec3()? },
                1 => Shape::Sphere { center: r.vec3()?, radius: r.f64()? },
                k => return Err(Error::Decode(format!("unknown primitive kind {k}"))),
            };
            background.push(Primitive { shape, color: r.rgb()?, density: r.f64()? });
        }
        let mut angles = Vec::with_capacity(NUM_JOINTS);
        for _ in 0..NUM_JOINTS {
            angles.push(r.f64()?);
        }
        let initial_box = BoxState { center: r.vec3()?, half_extents: r.vec3()?, yaw: r.f64()? };

        let n_maps = r.u16()? as usize;
        let mut edge_maps = Vec::with_capacity(n_maps);
        for _ in 0..n_maps {
            let (width, height) = (r.u32()?, r.u32()?);
            let count = width as usize * height as usize;
            let bytes = r.take(count.div_ceil(8))?;
            let mask = (0..count).map(|i| bytes[i / 8] >> (7 - i % 8) & 1 == 1).collect();
            edge_maps.push(EdgeMap { width, height, mask });
        }
        if r.pos != data.len() {
            return Err(Error::Decode("trailing bytes after base knowledge".into()));
        }
        let base = BaseKnowledge {
            cameras,
            edge_maps,
            layout: Arc::new(SceneLayout { arm, box_material, background, background_color }),
            initial_pose: ArmPose { joint_angles: angles },
            initial_box,
        };
        base.validate()?;
        Ok(base)
    }

    /// Size of the serialized preamble in bits.
    pub fn size_bits(&self) -> usize {
        self.to_bytes().len() * 8
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn vec3(&mut self, v: &Vec3) {
        v.iter().for_each(|x| self.f64(*x));
    }
    fn rgb(&mut self, c: &Rgb) {
        c.iter().for_each(|x| self.f64(*x));
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Decode("base-knowledge file is truncated".into()));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn vec3(&mut self) -> Result<Vec3> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }
    fn rgb(&mut self) -> Result<Rgb> {
        Ok([self.f64()?, self.f64()?, self.f64()?])
    }
}
