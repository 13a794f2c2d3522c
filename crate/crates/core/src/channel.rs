//! Bit-level wireless link.
//!
//! Payload codecs turn images and semantic frames into bitstreams, which
//! are sent uncoded over a single-tap channel `r = h·s + w` with BPSK
//! symbols `s = ±1`, optional Rayleigh gain `h ~ CN(0, 1)` and complex AWGN
//! `w ~ CN(0, 1/SNR)`. The receiver knows `h` and decides on
//! `sign(Re(h*·r))`.
//!
//! # Semantic payload layout
//!
//! All fields are MSB-first.
//!
//! | bits | field |
//! |------|-------|
//! | 10   | frame index mod 1024 |
//! | 6    | view count mod 64 |
//! | 16   | CRC-16/IBM-3740 over the 16 bits above followed by the body |
//! | 295 per view | 7 × (x, y) keypoints, box (cx, cy, w, h), all u16 in 1/16 px; then 7 keypoint validity bits |
//!
//! Views are numbered by their rig index; the receiver maps view `k` to
//! camera id `k`.
//!
//! # Dump file layout
//!
//! `u32` LE payload length in bits, `u32` LE header word (kind in bits
//! 31..28: 0 image, 1 semantic, 2 base knowledge; frame index in bits 27..12;
//! view count in bits 11..0), then the payload bytes, MSB-first with zero
//! padding in the last byte.

use std::f64::consts::FRAC_1_SQRT_2;

use crc::{Crc, CRC_16_IBM_3740};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::camera::ImagePoint;
use crate::error::{config, contract};
use crate::render::Image;
use crate::scene::NUM_KEYPOINTS;
use crate::semantics::{BoxObservation, SemanticFrame, ViewSemantics, SCALARS_PER_VIEW};
use crate::{Error, Result};

/// Average 5G downlink rate used as the default link rate (bit/s).
pub const DEFAULT_LINK_RATE_BPS: f64 = 160e6;

pub const SEMANTIC_HEADER_BITS: usize = 32;
pub const BITS_PER_SCALAR: usize = 16;
pub const SEMANTIC_BITS_PER_VIEW: usize = SCALARS_PER_VIEW * BITS_PER_SCALAR + NUM_KEYPOINTS;
/// Fixed-point resolution of semantic scalars (px).
pub const SEMANTIC_STEP_PX: f64 = 1.0 / 16.0;

const CRC16: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Image,
    Semantic,
    BaseKnowledge,
}

impl PayloadKind {
    fn code(self) -> u32 {
        match self {
            PayloadKind::Image => 0,
            PayloadKind::Semantic => 1,
            PayloadKind::BaseKnowledge => 2,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(PayloadKind::Image),
            1 => Ok(PayloadKind::Semantic),
            2 => Ok(PayloadKind::BaseKnowledge),
            c => Err(Error::Decode(format!("unknown payload kind {c}"))),
        }
    }
}

/// Packed, MSB-first bit sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    bytes: Vec<u8>,
    len: usize,
    pub kind: PayloadKind,
}

impl Bitstream {
    pub fn new(kind: PayloadKind) -> Self {
        Bitstream { bytes: Vec::new(), len: 0, kind }
    }

    /// Wraps whole bytes; every bit is payload.
    pub fn from_bytes(kind: PayloadKind, bytes: Vec<u8>) -> Self {
        let len = bytes.len() * 8;
        Bitstream { bytes, len, kind }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.bytes[i / 8] >> (7 - i % 8) & 1 == 1
    }

    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.bytes[i / 8] ^= 1 << (7 - i % 8);
    }

    pub fn push_bit(&mut self, bit: bool) {
        if self.len % 8 == 0 {
            self.bytes.push(0);
        }
        if bit {
            self.bytes[self.len / 8] |= 1 << (7 - self.len % 8);
        }
        self.len += 1;
    }

    /// Appends the low `n` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, n: usize) {
        for k in (0..n).rev() {
            self.push_bit(value >> k & 1 == 1);
        }
    }

    pub fn read_bits(&self, pos: usize, n: usize) -> u64 {
        (pos..pos + n).fold(0, |acc, i| acc << 1 | self.bit(i) as u64)
    }

    /// Copy of bits `[start, start + n)`.
    pub fn slice(&self, start: usize, n: usize) -> Bitstream {
        let mut out = Bitstream::new(self.kind);
        for i in start..start + n {
            out.push_bit(self.bit(i));
        }
        out
    }

    /// Number of positions where `self` and `other` differ.
    pub fn hamming_distance(&self, other: &Bitstream) -> usize {
        assert_eq!(self.len, other.len);
        self.bytes.iter().zip(&other.bytes).map(|(a, b)| (a ^ b).count_ones() as usize).sum()
    }

    pub fn to_dump(&self, time: u32, views: u32) -> Vec<u8> {
        let header = self.kind.code() << 28 | (time & 0xFFFF) << 12 | (views & 0xFFF);
        let mut out = Vec::with_capacity(8 + self.bytes.len());
        out.extend_from_slice(&(self.len as u32).to_le_bytes());
        out.extend_from_slice(&header.to_le_bytes());
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn from_dump(data: &[u8]) -> Result<(DumpHeader, Bitstream)> {
        if data.len() < 8 {
            return Err(Error::Decode("dump shorter than its 8-byte prefix".into()));
        }
        let len = u32::from_le_bytes(data[0..4].try_into().unwrap()) as usize;
        let word = u32::from_le_bytes(data[4..8].try_into().unwrap());
        let kind = PayloadKind::from_code(word >> 28)?;
        let payload = &data[8..];
        if payload.len() != len.div_ceil(8) {
            return Err(Error::Decode(format!(
                "dump declares {len} bits but carries {} bytes",
                payload.len()
            )));
        }
        let header = DumpHeader { kind, time: word >> 12 & 0xFFFF, views: word & 0xFFF };
        Ok((header, Bitstream { bytes: payload.to_vec(), len, kind }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DumpHeader {
    pub kind: PayloadKind,
    pub time: u32,
    pub views: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fading {
    Rayleigh,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Average SNR in dB; `f64::INFINITY` disables noise entirely.
    pub snr_db: f64,
    pub fading: Fading,
    pub seed: u64,
    pub link_rate_bps: f64,
}

impl ChannelConfig {
    pub fn noiseless() -> Self {
        ChannelConfig {
            snr_db: f64::INFINITY,
            fading: Fading::Rayleigh,
            seed: 0,
            link_rate_bps: DEFAULT_LINK_RATE_BPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.link_rate_bps > 0.0 && self.link_rate_bps.is_finite()) {
            return Err(config("link rate must be positive"));
        }
        if self.snr_db.is_nan() {
            return Err(config("SNR must be a number"));
        }
        Ok(())
    }

    pub fn snr_linear(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub bits_sent: usize,
    pub bit_errors: usize,
    pub airtime_s: f64,
}

impl ChannelReport {
    pub fn ber(&self) -> f64 {
        if self.bits_sent == 0 {
            0.0
        } else {
            self.bit_errors as f64 / self.bits_sent as f64
        }
    }
}

pub fn airtime(bits: usize, cfg: &ChannelConfig) -> f64 {
    bits as f64 / cfg.link_rate_bps
}

/// Sends `bits` through the channel.
///
/// The random draws depend only on `cfg.seed` and the bit position, never on
/// the SNR, so for a fixed seed the error set at a higher SNR is a subset of
/// the error set at a lower one.
pub fn transmit(bits: &Bitstream, cfg: &ChannelConfig) -> Result<(Bitstream, ChannelReport)> {
    cfg.validate()?;
    if cfg.snr_db == f64::INFINITY {
        let report = ChannelReport { bits_sent: bits.len, bit_errors: 0, airtime_s: airtime(bits.len, cfg) };
        return Ok((bits.clone(), report));
    }
    let sigma = (1.0 / cfg.snr_linear()).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gauss = move || -> f64 { FRAC_1_SQRT_2 * rng.sample::<f64, _>(StandardNormal) };
    let mut out = bits.clone();
    let mut errors = 0;
    for i in 0..bits.len {
        let s = if bits.bit(i) { -1.0 } else { 1.0 };
        let decision = match cfg.fading {
            Fading::None => s + sigma * gauss(),
            Fading::Rayleigh => {
                let (hr, hi) = (gauss(), gauss());
                let (wr, wi) = (gauss(), gauss());
                (hr * hr + hi * hi) * s + sigma * (hr * wr + hi * wi)
            }
        };
        let received_one = decision <= 0.0;
        if received_one != bits.bit(i) {
            out.flip(i);
            errors += 1;
        }
    }
    let report = ChannelReport { bits_sent: bits.len, bit_errors: errors, airtime_s: airtime(bits.len, cfg) };
    Ok((out, report))
}

/// Raw 8-bit RGB, row-major, no in-band header.
pub fn encode_image(img: &Image) -> Bitstream {
    Bitstream::from_bytes(PayloadKind::Image, img.rgb.clone())
}

pub fn decode_image(bits: &Bitstream, width: u32, height: u32) -> Result<Image> {
    let expected = width as usize * height as usize * 24;
    if bits.len != expected {
        return Err(Error::Decode(format!("image payload has {} bits, expected {expected}", bits.len)));
    }
    Image::new(width, height, bits.bytes.clone())
}

/// Fixed-point codec for semantic frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticCodec {
    /// Largest representable coordinate (px); values are clamped to
    /// `[0, max_coord]`.
    pub max_coord: f64,
}

impl SemanticCodec {
    /// Range `[0, 2·width]` for an image of the given width.
    pub fn for_width(width: u32) -> Self {
        let max = (2.0 * width as f64).min(u16::MAX as f64 * SEMANTIC_STEP_PX);
        SemanticCodec { max_coord: max }
    }

    pub fn payload_bits(views: usize) -> usize {
        SEMANTIC_HEADER_BITS + views * SEMANTIC_BITS_PER_VIEW
    }

    fn quantize(&self, v: f64, clamped: &mut usize) -> u64 {
        let max_q = (self.max_coord / SEMANTIC_STEP_PX).floor();
        let q = (v / SEMANTIC_STEP_PX).round();
        if q.is_nan() || q < 0.0 || q > max_q {
            *clamped += 1;
        }
        if q.is_nan() {
            0
        } else {
            q.clamp(0.0, max_q) as u64
        }
    }

    fn dequantize(&self, q: u64) -> f64 {
        (q as f64 * SEMANTIC_STEP_PX).min(self.max_coord)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEncoding {
    pub bits: Bitstream,
    /// Scalars that fell outside the representable range.
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedSemantic {
    pub frame: SemanticFrame,
    /// False when the CRC or the header view count disagrees with the body.
    pub reliable: bool,
}

fn crc_of(bits: &Bitstream) -> u16 {
    CRC16.checksum(bits.as_bytes())
}

fn semantic_body(frame: &SemanticFrame, codec: &SemanticCodec, clamped: &mut usize) -> Bitstream {
    let mut body = Bitstream::new(PayloadKind::Semantic);
    body.push_bits(frame.time as u64 & 0x3FF, 10);
    body.push_bits(frame.views.len() as u64 & 0x3F, 6);
    for view in &frame.views {
        for k in &view.keypoints {
            body.push_bits(codec.quantize(k.x, clamped), BITS_PER_SCALAR);
            body.push_bits(codec.quantize(k.y, clamped), BITS_PER_SCALAR);
        }
        let b = &view.bbox;
        for v in [b.cx, b.cy, b.w, b.h] {
            body.push_bits(codec.quantize(v, clamped), BITS_PER_SCALAR);
        }
        for k in &view.keypoints {
            body.push_bit(k.in_frustum);
        }
    }
    body
}

pub fn encode_semantic(frame: &SemanticFrame, codec: &SemanticCodec) -> Result<SemanticEncoding> {
    if frame.views.is_empty() {
        return Err(contract("cannot encode a frame without views"));
    }
    let mut clamped = 0;
    let body = semantic_body(frame, codec, &mut clamped);
    let crc = crc_of(&body);
    let mut bits = Bitstream::new(PayloadKind::Semantic);
    for i in 0..16 {
        bits.push_bit(body.bit(i));
    }
    bits.push_bits(crc as u64, 16);
    for i in 16..body.len() {
        bits.push_bit(body.bit(i));
    }
    Ok(SemanticEncoding { bits, clamped })
}

/// Best-effort decode. The view count comes from the stream length; a
/// mismatching header count or CRC only marks the frame unreliable.
pub fn decode_semantic(bits: &Bitstream, codec: &SemanticCodec) -> Result<DecodedSemantic> {
    if bits.kind != PayloadKind::Semantic {
        return Err(contract(format!("expected a semantic payload, got {:?}", bits.kind)));
    }
    if bits.len() < SEMANTIC_HEADER_BITS
        || (bits.len() - SEMANTIC_HEADER_BITS) % SEMANTIC_BITS_PER_VIEW != 0
    {
        return Err(Error::Decode(format!("truncated semantic payload of {} bits", bits.len())));
    }
    let views = (bits.len() - SEMANTIC_HEADER_BITS) / SEMANTIC_BITS_PER_VIEW;
    if views == 0 {
        return Err(Error::Decode("semantic payload has no views".into()));
    }
    let time = bits.read_bits(0, 10) as u32;
    let header_views = bits.read_bits(10, 6) as usize;
    let crc = bits.read_bits(16, 16) as u16;

    let mut covered = bits.slice(0, 16);
    for i in SEMANTIC_HEADER_BITS..bits.len() {
        covered.push_bit(bits.bit(i));
    }
    let reliable = crc_of(&covered) == crc && header_views == views % 64;

    let mut out = Vec::with_capacity(views);
    for k in 0..views {
        let mut pos = SEMANTIC_HEADER_BITS + k * SEMANTIC_BITS_PER_VIEW;
        let mut next = || {
            let v = codec.dequantize(bits.read_bits(pos, BITS_PER_SCALAR));
            pos += BITS_PER_SCALAR;
            v
        };
        let mut keypoints = [ImagePoint { x: 0.0, y: 0.0, in_frustum: false }; NUM_KEYPOINTS];
        for kp in &mut keypoints {
            kp.x = next();
            kp.y = next();
        }
        let bbox = BoxObservation { cx: next(), cy: next(), w: next(), h: next() };
        out.push(ViewSemantics { camera_id: k as u32, keypoints, bbox });
    }
    for (k, view) in out.iter_mut().enumerate() {
        let flags = SEMANTIC_HEADER_BITS + k * SEMANTIC_BITS_PER_VIEW + SCALARS_PER_VIEW * BITS_PER_SCALAR;
        for (j, kp) in view.keypoints.iter_mut().enumerate() {
            kp.in_frustum = bits.bit(flags + j);
        }
    }
    Ok(DecodedSemantic { frame: SemanticFrame { time, views: out }, reliable })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(views: usize) -> SemanticFrame {
        let view = |k: usize| ViewSemantics {
            camera_id: k as u32,
            keypoints: std::array::from_fn(|j| ImagePoint {
                x: 100.0 + 37.3 * j as f64 + k as f64,
                y: 50.0 + 11.1 * j as f64,
                in_frustum: j != 3,
            }),
            bbox: BoxObservation { cx: 400.2, cy: 300.7, w: 55.5, h: 40.01 },
        };
        SemanticFrame { time: 3, views: (0..views).map(view).collect() }
    }

    #[test]
    fn semantic_payload_size() {
        let enc = encode_semantic(&frame(8), &SemanticCodec::for_width(1200)).unwrap();
        assert_eq!(enc.bits.len(), 2392);
        assert_eq!(SemanticCodec::payload_bits(8), 2392);
        assert_eq!(enc.clamped, 0);
    }

    #[test]
    fn empty_frame_rejected() {
        assert!(encode_semantic(&frame(0), &SemanticCodec::for_width(1200)).is_err());
    }

    #[test]
    fn round_trip_within_step() {
        let codec = SemanticCodec::for_width(1200);
        let f = frame(3);
        let dec = decode_semantic(&encode_semantic(&f, &codec).unwrap().bits, &codec).unwrap();
        assert!(dec.reliable);
        assert_eq!(dec.frame.time, 3);
        for (a, b) in f.views.iter().zip(&dec.frame.views) {
            for (ka, kb) in a.keypoints.iter().zip(&b.keypoints) {
                assert!((ka.x - kb.x).abs() <= SEMANTIC_STEP_PX / 2.0);
                assert!((ka.y - kb.y).abs() <= SEMANTIC_STEP_PX / 2.0);
                assert_eq!(ka.in_frustum, kb.in_frustum);
            }
            assert!((a.bbox.w - b.bbox.w).abs() <= SEMANTIC_STEP_PX / 2.0);
        }
    }

    #[test]
    fn msb_flip_moves_one_coordinate() {
        let codec = SemanticCodec::for_width(1200);
        let f = frame(2);
        let mut bits = encode_semantic(&f, &codec).unwrap().bits;
        let clean = decode_semantic(&bits, &codec).unwrap().frame;
        // first keypoint x of view 1
        let pos = SEMANTIC_HEADER_BITS + SEMANTIC_BITS_PER_VIEW;
        bits.flip(pos);
        let dec = decode_semantic(&bits, &codec).unwrap();
        assert!(!dec.reliable);
        let shift = dec.frame.views[1].keypoints[0].x - clean.views[1].keypoints[0].x;
        assert_eq!(shift, 32768.0 * SEMANTIC_STEP_PX);
        let mut expect = clean.clone();
        expect.views[1].keypoints[0].x += shift;
        assert_eq!(dec.frame, expect);
    }

    #[test]
    fn out_of_range_is_clamped() {
        let codec = SemanticCodec::for_width(1200);
        let mut f = frame(1);
        f.views[0].keypoints[0].x = -5.0;
        f.views[0].keypoints[1].x = 1e6;
        let enc = encode_semantic(&f, &codec).unwrap();
        assert_eq!(enc.clamped, 2);
        let dec = decode_semantic(&enc.bits, &codec).unwrap().frame;
        assert_eq!(dec.views[0].keypoints[0].x, 0.0);
        assert_eq!(dec.views[0].keypoints[1].x, 2400.0);
    }

    #[test]
    fn truncated_stream_fails() {
        let codec = SemanticCodec::for_width(1200);
        let bits = encode_semantic(&frame(8), &codec).unwrap().bits;
        let half = bits.slice(0, bits.len() / 2);
        assert!(matches!(decode_semantic(&half, &codec), Err(Error::Decode(_))));
    }

    #[test]
    fn image_sizes() {
        let img = Image::filled(1200, 600, [1, 2, 3]);
        assert_eq!(encode_image(&img).len(), 17_280_000);
        let one = Image::filled(1, 1, [9, 8, 7]);
        let bits = encode_image(&one);
        assert_eq!(bits.len(), 24);
        assert_eq!(decode_image(&bits, 1, 1).unwrap(), one);
    }

    #[test]
    fn noiseless_channel_is_identity() {
        let bits = encode_image(&Image::filled(4, 3, [200, 17, 99]));
        let (out, report) = transmit(&bits, &ChannelConfig::noiseless()).unwrap();
        assert_eq!(out, bits);
        assert_eq!(report.bit_errors, 0);
    }

    #[test]
    fn airtime_examples() {
        let cfg = ChannelConfig::noiseless();
        assert!((airtime(17_280_000, &cfg) - 0.108).abs() < 1e-15);
        assert!((airtime(2392, &cfg) - 14.95e-6).abs() < 1e-18);
        assert_eq!(airtime(0, &cfg), 0.0);
    }

    #[test]
    fn dump_round_trip() {
        let mut bits = Bitstream::new(PayloadKind::Semantic);
        bits.push_bits(0b1011_0111_01, 10);
        let dump = bits.to_dump(42, 8);
        assert_eq!(dump.len(), 8 + 2);
        assert_eq!(&dump[0..4], &10u32.to_le_bytes());
        let (header, back) = Bitstream::from_dump(&dump).unwrap();
        assert_eq!(header, DumpHeader { kind: PayloadKind::Semantic, time: 42, views: 8 });
        assert_eq!(back, bits);
        assert!(Bitstream::from_dump(&dump[..9]).is_err());
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = ChannelConfig { link_rate_bps: 0.0, ..ChannelConfig::noiseless() };
        let bits = Bitstream::from_bytes(PayloadKind::Image, vec![1]);
        assert!(transmit(&bits, &cfg).is_err());
    }
}
