//! Synthetic video-fragment dataset.
//!
//! Source videos are procedural: piecewise scenes of gradients, drifting
//! sinusoidal textures and moving shapes, with hard cuts every 3 to 8 frames.
//! A near-duplicate pair holds a 15-frame fragment and a distorted copy of it;
//! a non-similar pair holds an original fragment and a distorted fragment of a
//! different source. Sources are partitioned between train, validation and
//! test, and each split only uses the augmentation families its fold allows.
//!
//! On disk a dataset is a directory with `manifest.json` and one file per
//! fragment under `fragments/`, see [`write_fragment`] for the layout.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::pipeline::{rescale_to, BinaryFrameVector, Frame, PipelineError, PreprocessConfig, FRAGMENT_LEN, RGB};
use crate::seed::Seed;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
pub const FRAGMENT_MAGIC: &[u8; 8] = b"LGNFRAG1";
pub const N_FOLDS: u8 = 12;

const STREAM_SOURCE: u64 = 1;
const STREAM_PLAN: u64 = 2;
const STREAM_AUGMENT: u64 = 3;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{file}: {message}")]
    Format { file: String, message: String },
    #[error("{file}: content hash does not match the manifest")]
    HashMismatch { file: String },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

fn config_err(msg: impl Into<String>) -> DatasetError {
    DatasetError::Config(msg.into())
}

// ---------------------------------------------------------------------------
// Augmentations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentationKind {
    Compression,
    Dropout,
    GaussianBlur,
    MultiNoise,
    Resize,
    Rotation,
}

impl AugmentationKind {
    pub const ALL: [AugmentationKind; 6] = [
        AugmentationKind::Compression,
        AugmentationKind::Dropout,
        AugmentationKind::GaussianBlur,
        AugmentationKind::MultiNoise,
        AugmentationKind::Resize,
        AugmentationKind::Rotation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentationKind::Compression => "compression",
            AugmentationKind::Dropout => "dropout",
            AugmentationKind::GaussianBlur => "gaussian-blur",
            AugmentationKind::MultiNoise => "multi-noise",
            AugmentationKind::Resize => "resize",
            AugmentationKind::Rotation => "rotation",
        }
    }
}

impl fmt::Display for AugmentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentationKind {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let k = match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "compression" => AugmentationKind::Compression,
            "dropout" => AugmentationKind::Dropout,
            "gaussian-blur" | "blur" => AugmentationKind::GaussianBlur,
            "multi-noise" | "noise" => AugmentationKind::MultiNoise,
            "resize" => AugmentationKind::Resize,
            "rotation" => AugmentationKind::Rotation,
            _ => return Err(config_err(format!("unknown augmentation `{s}`"))),
        };
        Ok(k)
    }
}

/// One distortion with its strength fixed for a whole fragment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Augmentation {
    Compression { quality: u32 },
    Dropout { rate: f64 },
    GaussianBlur { sigma: f64 },
    MultiNoise { sigma: f64, salt_pepper: f64 },
    Resize { factor: f64 },
    Rotation { degrees: f64 },
}

impl Augmentation {
    pub fn kind(&self) -> AugmentationKind {
        match self {
            Augmentation::Compression { .. } => AugmentationKind::Compression,
            Augmentation::Dropout { .. } => AugmentationKind::Dropout,
            Augmentation::GaussianBlur { .. } => AugmentationKind::GaussianBlur,
            Augmentation::MultiNoise { .. } => AugmentationKind::MultiNoise,
            Augmentation::Resize { .. } => AugmentationKind::Resize,
            Augmentation::Rotation { .. } => AugmentationKind::Rotation,
        }
    }

    pub fn sample(kind: AugmentationKind, ranges: &AugmentationRanges, rng: &mut ChaCha8Rng) -> Self {
        match kind {
            AugmentationKind::Compression => {
                let (lo, hi) = ranges.compression_quality;
                Augmentation::Compression { quality: rng.random_range(lo.min(hi)..=hi.max(lo)) }
            }
            AugmentationKind::Dropout => Augmentation::Dropout { rate: uniform(rng, ranges.dropout_rate) },
            AugmentationKind::GaussianBlur => Augmentation::GaussianBlur { sigma: uniform(rng, ranges.blur_sigma) },
            AugmentationKind::MultiNoise => {
                let sigma = uniform(rng, ranges.noise_sigma);
                let salt_pepper = uniform(rng, (0.0, ranges.salt_pepper_max));
                Augmentation::MultiNoise { sigma, salt_pepper }
            }
            AugmentationKind::Resize => Augmentation::Resize { factor: uniform(rng, ranges.resize_factor) },
            AugmentationKind::Rotation => {
                let m = ranges.rotation_degrees;
                Augmentation::Rotation { degrees: uniform(rng, (-m, m)) }
            }
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Strength ranges the per-fragment parameters are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationRanges {
    pub compression_quality: (u32, u32),
    pub dropout_rate: (f64, f64),
    pub blur_sigma: (f64, f64),
    pub noise_sigma: (f64, f64),
    pub salt_pepper_max: f64,
    pub resize_factor: (f64, f64),
    pub rotation_degrees: f64,
}

impl Default for AugmentationRanges {
    fn default() -> Self {
        Self {
            compression_quality: (10, 50),
            dropout_rate: (0.05, 0.3),
            blur_sigma: (0.5, 2.0),
            noise_sigma: (0.02, 0.1),
            salt_pepper_max: 0.05,
            resize_factor: (0.3, 0.8),
            rotation_degrees: 15.0,
        }
    }
}

/// Applies `aug` to every frame. Random masks and noise are drawn per frame
/// from `seed`.
pub fn apply_augmentation(frames: &[Frame], aug: &Augmentation, seed: Seed) -> Vec<Frame> {
    frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let mut rng = seed.child(0, t as u64).rng();
            let mut out = match *aug {
                Augmentation::Compression { quality } => compress(f, quality),
                Augmentation::Dropout { rate } => dropout(f, rate, &mut rng),
                Augmentation::GaussianBlur { sigma } => gaussian_blur(f, sigma),
                Augmentation::MultiNoise { sigma, salt_pepper } => multi_noise(f, sigma, salt_pepper, &mut rng),
                Augmentation::Resize { factor } => resize_round_trip(f, factor),
                Augmentation::Rotation { degrees } => rotate(f, degrees),
            };
            out.clamp_unit();
            out
        })
        .collect()
}

const JPEG_LUMA: [f64; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61., 12., 12., 14., 19., 26., 58., 60., 55., 14., 13., 16., 24., 40., 57.,
    69., 56., 14., 17., 22., 29., 51., 87., 80., 62., 18., 22., 37., 56., 68., 109., 103., 77., 24., 35., 55., 64.,
    81., 104., 113., 92., 49., 64., 78., 87., 103., 121., 120., 101., 72., 92., 95., 98., 112., 100., 103., 99.,
];

fn quant_table(quality: u32) -> [f64; 64] {
    let q = quality.clamp(1, 100) as f64;
    let scale = if q < 50.0 { 5000.0 / q } else { 200.0 - 2.0 * q };
    JPEG_LUMA.map(|b| ((b * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0))
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (k, row) in m.iter_mut().enumerate() {
        let a = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = a * ((2 * n + 1) as f64 * k as f64 * PI / 16.0).cos();
        }
    }
    m
}

/// 8×8 block DCT, quantization with the scaled luminance table, inverse DCT.
/// Partial edge blocks are padded by edge replication.
fn compress(frame: &Frame, quality: u32) -> Frame {
    let q = quant_table(quality);
    let m = dct_basis();
    let (w, h) = (frame.width, frame.height);
    let mut out = frame.clone();
    for c in 0..RGB {
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                let mut block = [[0.0; 8]; 8];
                for (y, row) in block.iter_mut().enumerate() {
                    for (x, v) in row.iter_mut().enumerate() {
                        *v = frame.get(c, (by + y).min(h - 1), (bx + x).min(w - 1)) * 255.0 - 128.0;
                    }
                }
                let coef = transform(&m, &block, false);
                let mut quantized = [[0.0; 8]; 8];
                for (u, row) in quantized.iter_mut().enumerate() {
                    for (v, val) in row.iter_mut().enumerate() {
                        let step = q[u * 8 + v];
                        *val = (coef[u][v] / step).round() * step;
                    }
                }
                let back = transform(&m, &quantized, true);
                for y in 0..8.min(h - by) {
                    for x in 0..8.min(w - bx) {
                        out.set(c, by + y, bx + x, (back[y][x] + 128.0) / 255.0);
                    }
                }
            }
        }
    }
    out
}

/// Separable 2-D DCT (`inverse = false`) or its inverse.
fn transform(m: &[[f64; 8]; 8], block: &[[f64; 8]; 8], inverse: bool) -> [[f64; 8]; 8] {
    let apply = |i: usize, j: usize| if inverse { m[j][i] } else { m[i][j] };
    let mut tmp = [[0.0; 8]; 8];
    for i in 0..8 {
        for (x, t) in tmp[i].iter_mut().enumerate() {
            *t = (0..8).map(|y| apply(i, y) * block[y][x]).sum();
        }
    }
    let mut out = [[0.0; 8]; 8];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, o) in row.iter_mut().enumerate() {
            *o = (0..8).map(|x| tmp[i][x] * apply(j, x)).sum();
        }
    }
    out
}

fn dropout(frame: &Frame, rate: f64, rng: &mut ChaCha8Rng) -> Frame {
    let mut out = frame.clone();
    if rate <= 0.0 {
        return out;
    }
    let n = frame.width * frame.height;
    for i in 0..n {
        if rng.random_bool(rate.min(1.0)) {
            for c in 0..RGB {
                out.data[c * n + i] = 0.0;
            }
        }
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

fn gaussian_blur(frame: &Frame, sigma: f64) -> Frame {
    if sigma <= 0.0 {
        return frame.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (frame.width as i64, frame.height as i64);
    let mut out = Frame::new(frame.width, frame.height);
    let mut tmp = vec![0.0; (w * h) as usize];
    for c in 0..RGB {
        let src = frame.plane(c);
        for y in 0..h {
            for x in 0..w {
                tmp[(y * w + x) as usize] =
                    k.iter().enumerate().map(|(i, kv)| kv * src[(y * w + (x + i as i64 - r).clamp(0, w - 1)) as usize]).sum();
            }
        }
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                dst[(y * w + x) as usize] =
                    k.iter().enumerate().map(|(i, kv)| kv * tmp[((y + i as i64 - r).clamp(0, h - 1) * w + x) as usize]).sum();
            }
        }
    }
    out
}

fn multi_noise(frame: &Frame, sigma: f64, salt_pepper: f64, rng: &mut ChaCha8Rng) -> Frame {
    let mut out = frame.clone();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        for v in &mut out.data {
            *v += normal.sample(rng);
        }
    }
    if salt_pepper > 0.0 {
        let n = frame.width * frame.height;
        for i in 0..n {
            if rng.random_bool(salt_pepper.min(1.0)) {
                let v = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
                for c in 0..RGB {
                    out.data[c * n + i] = v;
                }
            }
        }
    }
    out
}

fn sample_bilinear(plane: &[f64], w: usize, h: usize, sx: f64, sy: f64) -> f64 {
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear resampling with pixel-center alignment.
pub fn bilinear_resize(frame: &Frame, width: usize, height: usize) -> Frame {
    let mut out = Frame::new(width, height);
    let (sx, sy) = (frame.width as f64 / width as f64, frame.height as f64 / height as f64);
    for c in 0..RGB {
        let src = frame.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..height {
            for x in 0..width {
                let fx = (x as f64 + 0.5) * sx - 0.5;
                let fy = (y as f64 + 0.5) * sy - 0.5;
                dst[y * width + x] = sample_bilinear(src, frame.width, frame.height, fx, fy);
            }
        }
    }
    out
}

fn resize_round_trip(frame: &Frame, factor: f64) -> Frame {
    let w = ((frame.width as f64 * factor).round() as usize).max(1);
    let h = ((frame.height as f64 * factor).round() as usize).max(1);
    let small = rescale_to(frame, w, h).expect("non-empty frame");
    bilinear_resize(&small, frame.width, frame.height)
}

/// Rotation about the frame center; samples outside the frame take the
/// nearest edge pixel.
fn rotate(frame: &Frame, degrees: f64) -> Frame {
    let (s, c) = degrees.to_radians().sin_cos();
    let (w, h) = (frame.width, frame.height);
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut out = Frame::new(w, h);
    for ch in 0..RGB {
        let src = frame.plane(ch);
        let dst = out.plane_mut(ch);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let sx = cx + c * dx + s * dy;
                let sy = cy - s * dx + c * dy;
                dst[y * w + x] = sample_bilinear(src, w, h, sx, sy);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Source videos
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Shape {
    circle: bool,
    color: [f64; 3],
    pos: (f64, f64),
    vel: (f64, f64),
    size: (f64, f64),
}

#[derive(Debug, Clone)]
struct Scene {
    start: usize,
    bg0: [f64; 3],
    bg1: [f64; 3],
    gradient: (f64, f64),
    tex_freq: f64,
    tex_dir: (f64, f64),
    tex_amp: f64,
    tex_tint: [f64; 3],
    tex_phase: f64,
    tex_drift: f64,
    shapes: Vec<Shape>,
}

impl Scene {
    fn sample(start: usize, rng: &mut ChaCha8Rng) -> Self {
        let color = |rng: &mut ChaCha8Rng| [rng.random::<f64>(), rng.random(), rng.random()];
        let angle: f64 = rng.random_range(0.0..2.0 * PI);
        let tex_angle: f64 = rng.random_range(0.0..PI);
        let n_shapes = rng.random_range(1..=4);
        let bg0 = color(rng);
        let bg1 = color(rng);
        let strength = rng.random_range(0.5..2.0);
        Scene {
            start,
            bg0,
            bg1,
            gradient: (angle.cos() * strength, angle.sin() * strength),
            tex_freq: rng.random_range(1.0..6.0),
            tex_dir: (tex_angle.cos(), tex_angle.sin()),
            tex_amp: rng.random_range(0.05..0.3),
            tex_tint: color(rng),
            tex_phase: rng.random_range(0.0..2.0 * PI),
            tex_drift: rng.random_range(-0.4..0.4),
            shapes: (0..n_shapes)
                .map(|_| Shape {
                    circle: rng.random_bool(0.5),
                    color: color(rng),
                    pos: (rng.random(), rng.random()),
                    vel: (rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04)),
                    size: (rng.random_range(0.06..0.3), rng.random_range(0.06..0.3)),
                })
                .collect(),
        }
    }

    fn pixel(&self, u: f64, v: f64, t: f64, out: &mut [f64; 3]) {
        let g = (0.5 + (u - 0.5) * self.gradient.0 + (v - 0.5) * self.gradient.1).clamp(0.0, 1.0);
        let wave = self.tex_amp
            * (2.0 * PI * self.tex_freq * (u * self.tex_dir.0 + v * self.tex_dir.1) + self.tex_phase + self.tex_drift * t)
                .sin();
        for c in 0..RGB {
            out[c] = self.bg0[c] + (self.bg1[c] - self.bg0[c]) * g + wave * (self.tex_tint[c] - 0.5) * 2.0;
        }
        for s in &self.shapes {
            let (cx, cy) = (s.pos.0 + s.vel.0 * t, s.pos.1 + s.vel.1 * t);
            let (du, dv) = (u - cx, v - cy);
            let inside = if s.circle {
                du * du + dv * dv < s.size.0 * s.size.0
            } else {
                du.abs() < s.size.0 && dv.abs() < s.size.1
            };
            if inside {
                *out = s.color;
            }
        }
    }
}

/// Scene schedule of one source video; frames are rendered on demand.
#[derive(Debug, Clone)]
pub struct VideoPlan {
    n_frames: usize,
    scenes: Vec<Scene>,
}

impl VideoPlan {
    pub fn new(seed: Seed, n_frames: usize) -> Result<Self, DatasetError> {
        if n_frames < FRAGMENT_LEN {
            return Err(config_err(format!("source videos need at least {FRAGMENT_LEN} frames, got {n_frames}")));
        }
        let mut rng = seed.rng();
        let mut scenes = Vec::new();
        let mut start = 0;
        while start < n_frames {
            let len = rng.random_range(3..=8);
            scenes.push(Scene::sample(start, &mut rng));
            start += len;
        }
        Ok(Self { n_frames, scenes })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn scene_starts(&self) -> Vec<usize> {
        self.scenes.iter().map(|s| s.start).collect()
    }

    pub fn render(&self, t: usize, size: usize) -> Frame {
        let scene = self.scenes.iter().rev().find(|s| s.start <= t).expect("scene 0 starts at frame 0");
        let local = (t - scene.start) as f64;
        let mut frame = Frame::new(size, size);
        let n = size * size;
        let mut px = [0.0; 3];
        for y in 0..size {
            let v = (y as f64 + 0.5) / size as f64;
            for x in 0..size {
                let u = (x as f64 + 0.5) / size as f64;
                scene.pixel(u, v, local, &mut px);
                for c in 0..RGB {
                    frame.data[c * n + y * size + x] = px[c].clamp(0.0, 1.0);
                }
            }
        }
        frame
    }
}

#[derive(Debug, Clone)]
pub struct SourceVideo {
    pub frames: Vec<Frame>,
    pub scene_starts: Vec<usize>,
}

pub fn generate_source_video(seed: Seed, n_frames: usize, size: usize) -> Result<SourceVideo, DatasetError> {
    let plan = VideoPlan::new(seed, n_frames)?;
    Ok(SourceVideo { frames: (0..n_frames).map(|t| plan.render(t, size)).collect(), scene_starts: plan.scene_starts() })
}

// ---------------------------------------------------------------------------
// Folds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub fold_id: u8,
    pub validation: AugmentationKind,
    pub test: AugmentationKind,
    pub train: [AugmentationKind; 4],
}

impl FoldSpec {
    fn new(fold_id: u8, validation: AugmentationKind, test: AugmentationKind) -> Self {
        let mut train = [AugmentationKind::Compression; 4];
        let rest = AugmentationKind::ALL.iter().filter(|k| **k != validation && **k != test);
        for (slot, k) in train.iter_mut().zip(rest) {
            *slot = *k;
        }
        Self { fold_id, validation, test, train }
    }

    pub fn allowed(&self, split: Split) -> &[AugmentationKind] {
        match split {
            Split::Train => &self.train,
            Split::Val => std::slice::from_ref(&self.validation),
            Split::Test => std::slice::from_ref(&self.test),
        }
    }
}

pub fn fold_table() -> [FoldSpec; 12] {
    use AugmentationKind::*;
    let vt = [
        (Compression, Dropout),
        (Dropout, GaussianBlur),
        (GaussianBlur, MultiNoise),
        (MultiNoise, Resize),
        (Resize, Rotation),
        (Rotation, Compression),
        (GaussianBlur, Resize),
        (Resize, Dropout),
        (Dropout, MultiNoise),
        (MultiNoise, Compression),
        (Compression, Rotation),
        (Rotation, GaussianBlur),
    ];
    std::array::from_fn(|i| FoldSpec::new(i as u8 + 1, vt[i].0, vt[i].1))
}

pub fn fold(fold_id: u8) -> Result<FoldSpec, DatasetError> {
    if !(1..=N_FOLDS).contains(&fold_id) {
        return Err(config_err(format!("fold {fold_id} is outside 1..={N_FOLDS}")));
    }
    Ok(fold_table()[fold_id as usize - 1])
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(config_err(format!("unknown split `{s}` (train, val, test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub seed: Seed,
    pub fold: u8,
    pub n_sources: usize,
    /// Near-duplicate pairs over all splits; the same number of non-similar
    /// pairs is added. Split 4:1:1 between train, validation and test.
    pub pairs_per_class: usize,
    pub frames_per_source: usize,
    pub raw_size: usize,
    pub stored_size: usize,
    pub augmentation: AugmentationRanges,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: Seed(0),
            fold: 1,
            n_sources: 100,
            pairs_per_class: 600,
            frames_per_source: 45,
            raw_size: 128,
            stored_size: 32,
            augmentation: AugmentationRanges::default(),
        }
    }
}

impl DatasetConfig {
    /// Positive pairs per split.
    pub fn split_counts(&self) -> [usize; 3] {
        let val = self.pairs_per_class / 6;
        let test = self.pairs_per_class / 6;
        [self.pairs_per_class - val - test, val, test]
    }

    fn source_counts(&self) -> [usize; 3] {
        let val = self.n_sources / 6;
        let test = self.n_sources / 6;
        [self.n_sources - val - test, val, test]
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        fold(self.fold)?;
        if self.frames_per_source < FRAGMENT_LEN {
            return Err(config_err(format!("frames_per_source must be at least {FRAGMENT_LEN}")));
        }
        if self.stored_size == 0 || self.raw_size < self.stored_size {
            return Err(config_err("need 0 < stored_size <= raw_size"));
        }
        for (split, (s, p)) in Split::ALL.iter().zip(self.source_counts().iter().zip(self.split_counts())) {
            if *s < 2 {
                return Err(config_err(format!(
                    "{} sources leave the {split} split with {s}; non-similar pairs need at least 2 per split",
                    self.n_sources
                )));
            }
            if p < *s {
                return Err(config_err(format!("{split} split has {p} positives for {s} sources; every source needs one")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentRecord {
    pub id: u32,
    pub source: u32,
    pub start: u32,
    pub augmentation: Option<Augmentation>,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub a: u32,
    pub b: u32,
    pub label: u8,
    /// Distortion of `b` for near-duplicate pairs.
    pub augmentation: Option<AugmentationKind>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerSplit<T> {
    pub train: T,
    pub val: T,
    pub test: T,
}

impl<T> PerSplit<T> {
    pub fn get(&self, split: Split) -> &T {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut T {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub config: DatasetConfig,
    pub fold: FoldSpec,
    pub sources: PerSplit<Vec<u32>>,
    pub fragments: Vec<FragmentRecord>,
    pub pairs: PerSplit<Vec<PairRecord>>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// A dataset in memory: stored-resolution fragments, indexed by fragment id.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub fragments: Vec<Vec<Frame>>,
}

struct PositivePlan {
    source: u32,
    start: u32,
    augmentation: Augmentation,
    seed: Seed,
}

pub fn fragment_file_name(id: u32) -> String {
    format!("fragments/frag_{id:05}.bin")
}

/// Fragment file: magic, then `n_frames`, `width`, `height`, `channels` as
/// little-endian u32, then the frames back to back as planar u8 pixels.
pub fn encode_fragment(frames: &[Frame]) -> Vec<u8> {
    let (w, h) = frames.first().map_or((0, 0), |f| (f.width, f.height));
    let mut out = Vec::with_capacity(24 + frames.len() * RGB * w * h);
    out.extend_from_slice(FRAGMENT_MAGIC);
    for v in [frames.len(), w, h, RGB] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for f in frames {
        out.extend(f.to_bytes());
    }
    out
}

pub fn decode_fragment(bytes: &[u8]) -> Result<Vec<Frame>, String> {
    if bytes.len() < 24 || &bytes[..8] != FRAGMENT_MAGIC {
        return Err("not a fragment file".into());
    }
    let field = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (n, w, h, c) = (field(0), field(1), field(2), field(3));
    if c != RGB {
        return Err(format!("{c} channels, expected {RGB}"));
    }
    let per = c * w * h;
    if bytes.len() != 24 + n * per {
        return Err(format!("{} bytes, header implies {}", bytes.len(), 24 + n * per));
    }
    (0..n)
        .map(|t| Frame::from_bytes(w, h, &bytes[24 + t * per..24 + (t + 1) * per]).map_err(|e| e.to_string()))
        .collect()
}

pub fn write_fragment(frames: &[Frame], path: &Path) -> Result<String, DatasetError> {
    let bytes = encode_fragment(frames);
    fs::write(path, &bytes)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn quantize(frame: Frame) -> Frame {
    let (w, h) = (frame.width, frame.height);
    Frame::from_bytes(w, h, &frame.to_bytes()).expect("same shape")
}

fn render_fragment(config: &DatasetConfig, plan: &PositivePlan) -> Result<(Vec<Frame>, Vec<Frame>), DatasetError> {
    let video = VideoPlan::new(config.seed.child(STREAM_SOURCE, plan.source as u64), config.frames_per_source)?;
    let raw: Vec<Frame> =
        (plan.start as usize..plan.start as usize + FRAGMENT_LEN).map(|t| video.render(t, config.raw_size)).collect();
    let distorted = apply_augmentation(&raw, &plan.augmentation, plan.seed);
    let store = |frames: &[Frame]| -> Result<Vec<Frame>, DatasetError> {
        frames.iter().map(|f| Ok(quantize(rescale_to(f, config.stored_size, config.stored_size)?))).collect()
    };
    Ok((store(&raw)?, store(&distorted)?))
}

/// Builds the whole dataset in memory. Deterministic in `config`; fragment
/// rendering runs in parallel but every fragment owns its seed.
pub fn generate(config: &DatasetConfig) -> Result<Dataset, DatasetError> {
    config.validate()?;
    let spec = fold(config.fold)?;
    let mut rng = config.seed.child(STREAM_PLAN, 0).rng();

    let mut order: Vec<u32> = (0..config.n_sources as u32).collect();
    order.shuffle(&mut rng);
    let [n_train, n_val, _] = config.source_counts();
    let mut sources = PerSplit {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    };
    for s in Split::ALL {
        sources.get_mut(s).sort_unstable();
    }

    let mut plans = Vec::new();
    let mut split_ranges = Vec::new();
    for (split, n_pos) in Split::ALL.into_iter().zip(config.split_counts()) {
        let pool = sources.get(split);
        let mut assigned: Vec<u32> = (0..n_pos).map(|i| pool[i % pool.len()]).collect();
        assigned.shuffle(&mut rng);
        let allowed = spec.allowed(split);
        let first = plans.len();
        for (i, source) in assigned.into_iter().enumerate() {
            let kind = allowed[i % allowed.len()];
            let augmentation = Augmentation::sample(kind, &config.augmentation, &mut rng);
            let start = rng.random_range(0..=config.frames_per_source - FRAGMENT_LEN) as u32;
            let seed = config.seed.child(STREAM_AUGMENT, plans.len() as u64);
            plans.push(PositivePlan { source, start, augmentation, seed });
        }
        split_ranges.push((split, first..plans.len()));
    }

    let mut pairs: PerSplit<Vec<PairRecord>> = PerSplit::default();
    for (split, range) in &split_ranges {
        let list = pairs.get_mut(*split);
        for k in range.clone() {
            list.push(PairRecord {
                a: 2 * k as u32,
                b: 2 * k as u32 + 1,
                label: 1,
                augmentation: Some(plans[k].augmentation.kind()),
            });
        }
        for _ in range.clone() {
            let i = rng.random_range(range.clone());
            let j = loop {
                let j = rng.random_range(range.clone());
                if plans[j].source != plans[i].source {
                    break j;
                }
            };
            list.push(PairRecord { a: 2 * i as u32, b: 2 * j as u32 + 1, label: 0, augmentation: None });
        }
    }

    let rendered: Vec<(Vec<Frame>, Vec<Frame>)> =
        plans.par_iter().map(|p| render_fragment(config, p)).collect::<Result<_, _>>()?;

    let mut fragments = Vec::with_capacity(2 * plans.len());
    let mut records = Vec::with_capacity(2 * plans.len());
    for (k, (plan, (original, distorted))) in plans.iter().zip(rendered).enumerate() {
        for (offset, frames, aug) in [(0, original, None), (1, distorted, Some(plan.augmentation))] {
            let id = 2 * k as u32 + offset;
            records.push(FragmentRecord {
                id,
                source: plan.source,
                start: plan.start,
                augmentation: aug,
                file: fragment_file_name(id),
                sha256: hex::encode(Sha256::digest(encode_fragment(&frames))),
            });
            fragments.push(frames);
        }
    }

    let manifest = DatasetManifest { version: MANIFEST_VERSION, config: config.clone(), fold: spec, sources, fragments: records, pairs };
    Ok(Dataset { manifest, fragments })
}

impl Dataset {
    pub fn pairs(&self, split: Split) -> &[PairRecord] {
        self.manifest.pairs.get(split)
    }

    /// Writes fragment files and the manifest, creating `dir` if needed.
    pub fn write(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir.join("fragments"))?;
        for (rec, frames) in self.manifest.fragments.iter().zip(&self.fragments) {
            let path = dir.join(&rec.file);
            let bytes = encode_fragment(frames);
            fs::write(path, bytes)?;
        }
        let tmp = dir.join(".manifest.json.tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(self.manifest.to_json().as_bytes())?;
        f.sync_all()?;
        fs::rename(tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }

    /// Loads a dataset directory, checking every fragment against its hash.
    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(DatasetError::Format {
                file: MANIFEST_FILE.into(),
                message: format!("version {} (expected {MANIFEST_VERSION})", manifest.version),
            });
        }
        let fragments = manifest
            .fragments
            .par_iter()
            .map(|rec| {
                let bytes = fs::read(dir.join(&rec.file))?;
                if hex::encode(Sha256::digest(&bytes)) != rec.sha256 {
                    return Err(DatasetError::HashMismatch { file: rec.file.clone() });
                }
                decode_fragment(&bytes).map_err(|message| DatasetError::Format { file: rec.file.clone(), message })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { manifest, fragments })
    }

    /// Binarized frame vectors of every fragment under `pre`.
    pub fn binarize(&self, pre: &PreprocessConfig) -> Result<Vec<Vec<BinaryFrameVector>>, DatasetError> {
        pre.validate()?;
        self.fragments
            .par_iter()
            .map(|frames| frames.iter().map(|f| pre.preprocess(f).map_err(DatasetError::from)).collect())
            .collect()
    }

    /// Fragments resized to `size × size`, as the inference pipeline sees
    /// them after decoding.
    pub fn thumbnails(&self, size: usize) -> Result<Vec<Vec<Frame>>, DatasetError> {
        self.fragments
            .par_iter()
            .map(|frames| frames.iter().map(|f| Ok(rescale_to(f, size, size)?)).collect())
            .collect()
    }
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

/// SHA-256 of the manifest file, hex encoded.
pub fn manifest_hash(dir: &Path) -> Result<String, DatasetError> {
    Ok(hex::encode(Sha256::digest(fs::read(manifest_path(dir))?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_config(seed: u64, fold_id: u8) -> DatasetConfig {
        DatasetConfig {
            seed: Seed(seed),
            fold: fold_id,
            n_sources: 18,
            pairs_per_class: 36,
            frames_per_source: 20,
            raw_size: 32,
            stored_size: 16,
            ..DatasetConfig::default()
        }
    }

    fn mad(a: &Frame, b: &Frame) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len() as f64
    }

    #[test]
    fn source_videos_are_deterministic_and_in_range() {
        let a = generate_source_video(Seed(3), 15, 32).unwrap();
        let b = generate_source_video(Seed(3), 15, 32).unwrap();
        assert_eq!(a.frames, b.frames);
        assert!(a.frames.iter().all(|f| f.data.iter().all(|v| (0.0..=1.0).contains(v))));
        assert_ne!(generate_source_video(Seed(4), 15, 32).unwrap().frames, a.frames);
        assert!(generate_source_video(Seed(3), 14, 32).is_err());
    }

    #[test]
    fn scene_durations_are_three_to_eight_frames() {
        for s in 0..50 {
            let plan = VideoPlan::new(Seed(s), 60).unwrap();
            let starts = plan.scene_starts();
            assert_eq!(starts[0], 0);
            for w in starts.windows(2) {
                assert!((3..=8).contains(&(w[1] - w[0])));
            }
        }
    }

    #[test]
    fn scene_cuts_change_more_than_motion() {
        let (mut within, mut across, mut n_within, mut n_across) = (0.0, 0.0, 0, 0);
        for s in 0..100 {
            let v = generate_source_video(Seed(1000 + s), 20, 64).unwrap();
            for t in 1..v.frames.len() {
                let d = mad(&v.frames[t - 1], &v.frames[t]);
                if v.scene_starts.contains(&t) {
                    across += d;
                    n_across += 1;
                } else {
                    within += d;
                    n_within += 1;
                }
            }
        }
        let (within, across) = (within / n_within as f64, across / n_across as f64);
        assert!(within < across, "within {within} across {across}");
    }

    fn test_frames() -> Vec<Frame> {
        generate_source_video(Seed(11), 15, 32).unwrap().frames[..3].to_vec()
    }

    #[test]
    fn augmentation_identities() {
        let frames = test_frames();
        assert_eq!(apply_augmentation(&frames, &Augmentation::Dropout { rate: 0.0 }, Seed(1)), frames);
        let rotated = apply_augmentation(&frames, &Augmentation::Rotation { degrees: 0.0 }, Seed(1));
        for (a, b) in rotated.iter().zip(&frames) {
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| (x - y).abs() <= 1e-9));
        }
        let flat = vec![Frame::filled(20, 20, 0.37)];
        for sigma in [0.5, 1.2, 2.0] {
            let out = apply_augmentation(&flat, &Augmentation::GaussianBlur { sigma }, Seed(1));
            assert!(out[0].data.iter().all(|v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn augmentations_distort_and_stay_in_range() {
        let frames = test_frames();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in AugmentationKind::ALL {
            let aug = Augmentation::sample(kind, &AugmentationRanges::default(), &mut rng);
            assert_eq!(aug.kind(), kind);
            let out = apply_augmentation(&frames, &aug, Seed(9));
            assert_eq!(out.len(), frames.len());
            for (o, f) in out.iter().zip(&frames) {
                assert_eq!((o.width, o.height), (f.width, f.height));
                assert!(o.data.iter().all(|v| (0.0..=1.0).contains(v)));
                let d = mad(o, f);
                assert!(d > 0.0 && d < 0.3, "{kind}: {d}");
            }
            assert_eq!(out, apply_augmentation(&frames, &aug, Seed(9)));
        }
    }

    #[test]
    fn sampled_strengths_respect_ranges() {
        let r = AugmentationRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..500 {
            for kind in AugmentationKind::ALL {
                match Augmentation::sample(kind, &r, &mut rng) {
                    Augmentation::Compression { quality } => assert!((10..=50).contains(&quality)),
                    Augmentation::Dropout { rate } => assert!((0.05..=0.3).contains(&rate)),
                    Augmentation::GaussianBlur { sigma } => assert!((0.5..=2.0).contains(&sigma)),
                    Augmentation::MultiNoise { sigma, salt_pepper } => {
                        assert!((0.02..=0.1).contains(&sigma) && (0.0..=0.05).contains(&salt_pepper))
                    }
                    Augmentation::Resize { factor } => assert!((0.3..=0.8).contains(&factor)),
                    Augmentation::Rotation { degrees } => assert!(degrees.abs() <= 15.0),
                }
            }
        }
    }

    #[test]
    fn compression_at_high_quality_is_nearly_lossless() {
        let frames = test_frames();
        let hi = apply_augmentation(&frames, &Augmentation::Compression { quality: 100 }, Seed(0));
        let lo = apply_augmentation(&frames, &Augmentation::Compression { quality: 10 }, Seed(0));
        assert!(mad(&hi[0], &frames[0]) < 0.01);
        assert!(mad(&lo[0], &frames[0]) > mad(&hi[0], &frames[0]));
        let m = dct_basis();
        let mut block = [[0.0; 8]; 8];
        for (i, row) in block.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (i * 8 + j) as f64;
            }
        }
        let back = transform(&m, &transform(&m, &block, false), true);
        for i in 0..8 {
            for j in 0..8 {
                assert!((back[i][j] - block[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn augmentation_names_parse() {
        for k in AugmentationKind::ALL {
            assert_eq!(k.name().parse::<AugmentationKind>().unwrap(), k);
        }
        assert!("sticker".parse::<AugmentationKind>().is_err());
    }

    #[test]
    fn fold_table_matches_partition() {
        use AugmentationKind::*;
        let t = fold_table();
        assert_eq!((t[0].validation, t[0].test), (Compression, Dropout));
        assert_eq!(t[4].test, Rotation);
        assert_eq!((t[5].validation, t[5].test), (Rotation, Compression));
        assert_eq!((t[11].validation, t[11].test), (Rotation, GaussianBlur));
        for k in AugmentationKind::ALL {
            assert_eq!(t.iter().filter(|f| f.validation == k).count(), 2, "{k} as V");
            assert_eq!(t.iter().filter(|f| f.test == k).count(), 2, "{k} as T");
        }
        for (i, f) in t.iter().enumerate() {
            assert_eq!(f.fold_id as usize, i + 1);
            assert_ne!(f.validation, f.test);
            let mut all: Vec<AugmentationKind> = f.train.to_vec();
            all.push(f.validation);
            all.push(f.test);
            all.sort();
            assert_eq!(all, AugmentationKind::ALL.to_vec());
        }
        assert!(fold(0).is_err() && fold(13).is_err());
    }

    #[test]
    fn pairs_follow_the_fold_and_are_balanced() {
        for fold_id in [1, 5] {
            let ds = generate(&small_config(21, fold_id)).unwrap();
            let spec = fold(fold_id).unwrap();
            let m = &ds.manifest;
            for split in Split::ALL {
                let pairs = ds.pairs(split);
                let pos = pairs.iter().filter(|p| p.label == 1).count();
                assert_eq!(pos, pairs.len() - pos);
                assert_eq!(pos, ds.manifest.config.split_counts()[Split::ALL.iter().position(|s| *s == split).unwrap()]);
                for p in pairs {
                    let (a, b) = (&m.fragments[p.a as usize], &m.fragments[p.b as usize]);
                    assert!(a.augmentation.is_none());
                    let kind = b.augmentation.unwrap().kind();
                    assert!(spec.allowed(split).contains(&kind));
                    assert!(m.sources.get(split).contains(&a.source));
                    assert!(m.sources.get(split).contains(&b.source));
                    if p.label == 1 {
                        assert_eq!((a.source, a.start), (b.source, b.start));
                        assert_eq!(p.augmentation, Some(kind));
                    } else {
                        assert_ne!(a.source, b.source);
                    }
                }
            }
            let mut all: Vec<u32> = Split::ALL.iter().flat_map(|s| m.sources.get(*s).clone()).collect();
            all.sort_unstable();
            assert_eq!(all, (0..18).collect::<Vec<_>>());
            if fold_id == 1 {
                assert!(ds.pairs(Split::Val).iter().filter(|p| p.label == 1).all(|p| p.augmentation == Some(AugmentationKind::Compression)));
                assert!(ds.pairs(Split::Test).iter().filter(|p| p.label == 1).all(|p| p.augmentation == Some(AugmentationKind::Dropout)));
            } else {
                assert!(ds.pairs(Split::Test).iter().filter(|p| p.label == 1).all(|p| p.augmentation == Some(AugmentationKind::Rotation)));
            }
        }
    }

    #[test]
    fn insufficient_sources_are_rejected() {
        let mut c = small_config(1, 1);
        c.n_sources = 6;
        assert!(matches!(generate(&c), Err(DatasetError::Config(_))));
        c.n_sources = 18;
        c.pairs_per_class = 12;
        assert!(matches!(generate(&c), Err(DatasetError::Config(_))));
        c.pairs_per_class = 36;
        c.fold = 13;
        assert!(matches!(generate(&c), Err(DatasetError::Config(_))));
    }

    #[test]
    fn write_load_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(33, 2);
        let ds = generate(&cfg).unwrap();
        let out = dir.path().join("a/b");
        ds.write(&out).unwrap();
        let first = fs::read(manifest_path(&out)).unwrap();
        let loaded = Dataset::load(&out).unwrap();
        assert_eq!(loaded.manifest, ds.manifest);
        assert_eq!(loaded.fragments, ds.fragments);

        generate(&cfg).unwrap().write(&out).unwrap();
        assert_eq!(fs::read(manifest_path(&out)).unwrap(), first);
        let other = dir.path().join("c");
        generate(&cfg).unwrap().write(&other).unwrap();
        for rec in &ds.manifest.fragments {
            assert_eq!(fs::read(out.join(&rec.file)).unwrap(), fs::read(other.join(&rec.file)).unwrap());
        }

        let victim = out.join(&ds.manifest.fragments[3].file);
        let mut bytes = fs::read(&victim).unwrap();
        bytes[40] ^= 1;
        fs::write(&victim, bytes).unwrap();
        assert!(matches!(Dataset::load(&out), Err(DatasetError::HashMismatch { .. })));
    }

    #[test]
    fn fragment_codec_rejects_garbage() {
        let frames = test_frames();
        let bytes = encode_fragment(&frames);
        let back = decode_fragment(&bytes).unwrap();
        assert_eq!(back.len(), 3);
        assert!(decode_fragment(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_fragment(b"LGNFRAG0xxxxxxxxxxxxxxxx").is_err());
    }

    #[test]
    fn binarize_uses_preprocessing_dims() {
        let ds = generate(&small_config(4, 1)).unwrap();
        let bits = ds.binarize(&PreprocessConfig::default()).unwrap();
        assert_eq!(bits.len(), ds.fragments.len());
        assert!(bits.iter().all(|f| f.len() == FRAGMENT_LEN && f.iter().all(|v| v.len() == 768)));
    }
}
