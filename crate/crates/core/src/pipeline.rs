//! Frame preprocessing and fragment similarity.
//!
//! Frames are box-downsampled to a thumbnail, compared against a fixed set of
//! intensity thresholds per channel, and flattened into a bit vector in
//! threshold-major, then channel (R, G, B), then row-major pixel order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Frames per fragment.
pub const FRAGMENT_LEN: usize = 15;
pub const RGB: usize = 3;

pub const THRESHOLDS_4: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
pub const THRESHOLDS_7: [f64; 7] = [0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty frame")]
    EmptyFrame,
    #[error("invalid thresholds: {0}")]
    Thresholds(String),
}

/// Planar RGB frame with values in `[0, 1]`: `data[(c * height + y) * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; RGB * width * height] }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, data: vec![value; RGB * width * height] }
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Quantizes to bytes (`round(v * 255)`), planar order.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self, PipelineError> {
        if bytes.len() != RGB * width * height {
            return Err(PipelineError::Shape(format!(
                "{} bytes for a {width}x{height} RGB frame",
                bytes.len()
            )));
        }
        Ok(Self { width, height, data: bytes.iter().map(|&b| b as f64 / 255.0).collect() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub frame_size: usize,
    pub thresholds: Vec<f64>,
    pub n_channels: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { frame_size: 8, thresholds: THRESHOLDS_4.to_vec(), n_channels: RGB }
    }
}

impl PreprocessConfig {
    pub fn new(frame_size: usize, thresholds: &[f64]) -> Result<Self, PipelineError> {
        let cfg = Self { frame_size, thresholds: thresholds.to_vec(), n_channels: RGB };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Threshold preset by count: 4 or 7.
    pub fn preset_thresholds(count: usize) -> Option<Vec<f64>> {
        match count {
            4 => Some(THRESHOLDS_4.to_vec()),
            7 => Some(THRESHOLDS_7.to_vec()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.frame_size == 0 {
            return Err(PipelineError::EmptyFrame);
        }
        if self.n_channels != RGB {
            return Err(PipelineError::Shape(format!("{} channels, only RGB is supported", self.n_channels)));
        }
        if self.thresholds.is_empty() {
            return Err(PipelineError::Thresholds("empty set".into()));
        }
        if self.thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(PipelineError::Thresholds("values must lie in (0, 1)".into()));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PipelineError::Thresholds("values must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.frame_size * self.frame_size * self.n_channels * self.thresholds.len()
    }

    pub fn preprocess(&self, frame: &Frame) -> Result<BinaryFrameVector, PipelineError> {
        let small = if frame.width == self.frame_size && frame.height == self.frame_size {
            frame.clone()
        } else {
            rescale_frame(frame, self.frame_size)?
        };
        Ok(binarize_frame(&small, &self.thresholds))
    }
}

/// Area-weighted resampling weights along one axis: for each output index the
/// list of `(source index, weight)` with weights summing to one.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            let mut w: Vec<(usize, f64)> = (first..last)
                .map(|i| {
                    let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                    (i, overlap / scale)
                })
                .filter(|(_, w)| *w > 0.0)
                .collect();
            let total: f64 = w.iter().map(|(_, w)| w).sum();
            for (_, v) in &mut w {
                *v /= total;
            }
            w
        })
        .collect()
}

/// Box (area-average) resampling to `size × size`.
pub fn rescale_frame(frame: &Frame, size: usize) -> Result<Frame, PipelineError> {
    rescale_to(frame, size, size)
}

pub fn rescale_to(frame: &Frame, width: usize, height: usize) -> Result<Frame, PipelineError> {
    if frame.width == 0 || frame.height == 0 || width == 0 || height == 0 {
        return Err(PipelineError::EmptyFrame);
    }
    if frame.data.len() != RGB * frame.width * frame.height {
        return Err(PipelineError::Shape("frame buffer does not match its dimensions".into()));
    }
    let wx = area_weights(frame.width, width);
    let wy = area_weights(frame.height, height);
    let mut out = Frame::new(width, height);
    let mut rows = vec![0.0; frame.height * width];
    for c in 0..RGB {
        let src = frame.plane(c);
        for y in 0..frame.height {
            let row = &src[y * frame.width..(y + 1) * frame.width];
            for (ox, weights) in wx.iter().enumerate() {
                rows[y * width + ox] = weights.iter().map(|&(i, w)| row[i] * w).sum();
            }
        }
        let dst = out.plane_mut(c);
        for (oy, weights) in wy.iter().enumerate() {
            for ox in 0..width {
                dst[oy * width + ox] = weights.iter().map(|&(i, w)| rows[i * width + ox] * w).sum();
            }
        }
    }
    out.clamp_unit();
    Ok(out)
}

/// Bit-packed binary vector, 64 bits per word, bit `i` in word `i / 64`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryFrameVector {
    len: usize,
    words: Vec<u64>,
}

impl BinaryFrameVector {
    pub fn zeros(len: usize) -> Self {
        Self { len, words: vec![0; len.div_ceil(64)] }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.set(i, true);
            }
        }
        v
    }

    /// Builds from packed words; bits past `len` must be zero.
    pub fn from_words(len: usize, words: Vec<u64>) -> Self {
        assert_eq!(words.len(), len.div_ceil(64));
        let v = Self { len, words };
        debug_assert!(len % 64 == 0 || v.words.last().is_none_or(|w| w >> (len % 64) == 0));
        v
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }

    pub fn to_bools(&self) -> Vec<bool> {
        self.iter().collect()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        self.write_f64(&mut out);
        out
    }

    /// Writes 0.0 / 1.0 into `out`.
    pub fn write_f64(&self, out: &mut [f64]) {
        for (chunk, &w) in out.chunks_mut(64).zip(&self.words) {
            for (j, o) in chunk.iter_mut().enumerate() {
                *o = (w >> j & 1) as f64;
            }
        }
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn and_count(&self, other: &Self) -> u32 {
        self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones()).sum()
    }
}

/// `bit = value > threshold`, flattened threshold-major, then channel, then
/// row-major pixels.
pub fn binarize_frame(frame: &Frame, thresholds: &[f64]) -> BinaryFrameVector {
    // bit (t * RGB + c) * plane + i tests data[c * plane + i] against threshold t
    let len = frame.data.len() * thresholds.len();
    let mut words = Vec::with_capacity(len.div_ceil(64));
    if frame.data.len() % 64 == 0 {
        for &th in thresholds {
            words.extend(frame.data.chunks_exact(64).map(|chunk| {
                let mut acc = 0u64;
                for (j, &v) in chunk.iter().enumerate() {
                    acc |= ((v > th) as u64) << j;
                }
                acc
            }));
        }
        return BinaryFrameVector::from_words(len, words);
    }
    let (mut acc, mut bit) = (0u64, 0);
    for &th in thresholds {
        for &v in &frame.data {
            acc |= ((v > th) as u64) << bit;
            bit += 1;
            if bit == 64 {
                words.push(acc);
                (acc, bit) = (0, 0);
            }
        }
    }
    if bit > 0 {
        words.push(acc);
    }
    BinaryFrameVector::from_words(len, words)
}

/// `u·v / (|u| |v|)`, zero when either norm vanishes, clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> f64 {
    let (dot, nu, nv) = dot_norms(u, v);
    cosine_from_parts(dot, nu, nv)
}

#[inline]
fn dot_norms(u: &[f64], v: &[f64]) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    (dot, uu.sqrt(), vv.sqrt())
}

#[inline]
fn cosine_from_parts(dot: f64, nu: f64, nv: f64) -> f64 {
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        (dot / (nu * nv)).clamp(-1.0, 1.0)
    }
}

/// Adds `scale * ∂cos(u, v)/∂u` into `gu` and the `v` counterpart into `gv`.
fn cosine_backward(u: &[f64], v: &[f64], scale: f64, gu: &mut [f64], gv: &mut [f64]) {
    let (dot, nu, nv) = dot_norms(u, v);
    if nu == 0.0 || nv == 0.0 || scale == 0.0 {
        return;
    }
    let inv = 1.0 / (nu * nv);
    let cos = dot * inv;
    let su = cos / (nu * nu);
    let sv = cos / (nv * nv);
    for i in 0..u.len() {
        gu[i] += scale * (v[i] * inv - su * u[i]);
        gv[i] += scale * (u[i] * inv - sv * v[i]);
    }
}

#[inline]
fn rescale_score(cos: f64) -> f64 {
    (cos + 1.0) / 2.0
}

/// `T × D` matrix of frame embeddings, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FragmentEmbedding {
    pub frames: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl FragmentEmbedding {
    pub fn new(frames: usize, dim: usize, values: Vec<f64>) -> Result<Self, PipelineError> {
        if values.len() != frames * dim {
            return Err(PipelineError::Shape(format!("{} values for {frames}x{dim}", values.len())));
        }
        Ok(Self { frames, dim, values })
    }

    pub fn zeros(frames: usize, dim: usize) -> Self {
        Self { frames, dim, values: vec![0.0; frames * dim] }
    }

    pub fn from_bits(frames: &[BinaryFrameVector]) -> Self {
        let dim = frames.first().map_or(0, |f| f.len());
        let mut values = Vec::with_capacity(frames.len() * dim);
        for f in frames {
            values.extend(f.to_f64());
        }
        Self { frames: frames.len(), dim, values }
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.values[t * self.dim..(t + 1) * self.dim]
    }

    fn temporal_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for t in 0..self.frames {
            for (mi, v) in m.iter_mut().zip(self.frame(t)) {
                *mi += v;
            }
        }
        let inv = 1.0 / self.frames as f64;
        m.iter_mut().for_each(|v| *v *= inv);
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityStrategy {
    Concat,
    AveragePool,
    #[default]
    #[serde(rename = "framepair-max")]
    FramePairMax,
}

impl SimilarityStrategy {
    pub const ALL: [SimilarityStrategy; 3] =
        [SimilarityStrategy::Concat, SimilarityStrategy::AveragePool, SimilarityStrategy::FramePairMax];

    pub fn name(self) -> &'static str {
        match self {
            SimilarityStrategy::Concat => "concat",
            SimilarityStrategy::AveragePool => "average-pool",
            SimilarityStrategy::FramePairMax => "framepair-max",
        }
    }

    pub fn score(self, e1: &FragmentEmbedding, e2: &FragmentEmbedding) -> Result<f64, PipelineError> {
        match self {
            SimilarityStrategy::Concat => similarity_concat(e1, e2),
            SimilarityStrategy::AveragePool => similarity_avgpool(e1, e2),
            SimilarityStrategy::FramePairMax => similarity_framepair_max(e1, e2),
        }
    }

    /// Gradient of the rescaled score with respect to both embeddings,
    /// multiplied by `upstream`.
    pub fn backward(
        self,
        e1: &FragmentEmbedding,
        e2: &FragmentEmbedding,
        upstream: f64,
    ) -> Result<(Vec<f64>, Vec<f64>), PipelineError> {
        similarity_backward(self, e1, e2, upstream)
    }
}

impl fmt::Display for SimilarityStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SimilarityStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "concat" | "concat-pool" | "concatenation" => Ok(SimilarityStrategy::Concat),
            "average-pool" | "avgpool" | "avg-pool" | "average" => Ok(SimilarityStrategy::AveragePool),
            "framepair-max" | "frame-pair-max" | "fpm" | "max" => Ok(SimilarityStrategy::FramePairMax),
            _ => Err(format!("unknown similarity `{s}` (concat, average-pool, framepair-max)")),
        }
    }
}

fn same_dim(e1: &FragmentEmbedding, e2: &FragmentEmbedding) -> Result<(), PipelineError> {
    if e1.dim != e2.dim {
        return Err(PipelineError::Shape(format!("descriptor dims {} and {}", e1.dim, e2.dim)));
    }
    if e1.frames == 0 || e2.frames == 0 {
        return Err(PipelineError::Shape("fragment without frames".into()));
    }
    Ok(())
}

pub fn similarity_concat(e1: &FragmentEmbedding, e2: &FragmentEmbedding) -> Result<f64, PipelineError> {
    same_dim(e1, e2)?;
    if e1.frames != e2.frames {
        return Err(PipelineError::Shape(format!("{} vs {} frames", e1.frames, e2.frames)));
    }
    Ok(rescale_score(cosine_similarity(&e1.values, &e2.values)))
}

pub fn similarity_avgpool(e1: &FragmentEmbedding, e2: &FragmentEmbedding) -> Result<f64, PipelineError> {
    same_dim(e1, e2)?;
    Ok(rescale_score(cosine_similarity(&e1.temporal_mean(), &e2.temporal_mean())))
}

/// Maximum frame-pair cosine and its first (row-major) location.
fn framepair_argmax(e1: &FragmentEmbedding, e2: &FragmentEmbedding) -> (f64, usize, usize) {
    let n1: Vec<f64> = (0..e1.frames).map(|i| norm(e1.frame(i))).collect();
    let n2: Vec<f64> = (0..e2.frames).map(|j| norm(e2.frame(j))).collect();
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for i in 0..e1.frames {
        for j in 0..e2.frames {
            let dot: f64 = e1.frame(i).iter().zip(e2.frame(j)).map(|(a, b)| a * b).sum();
            let cos = cosine_from_parts(dot, n1[i], n2[j]);
            if cos > best.0 {
                best = (cos, i, j);
            }
        }
    }
    best
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn similarity_framepair_max(e1: &FragmentEmbedding, e2: &FragmentEmbedding) -> Result<f64, PipelineError> {
    same_dim(e1, e2)?;
    Ok(rescale_score(framepair_argmax(e1, e2).0))
}

pub fn similarity_backward(
    strategy: SimilarityStrategy,
    e1: &FragmentEmbedding,
    e2: &FragmentEmbedding,
    upstream: f64,
) -> Result<(Vec<f64>, Vec<f64>), PipelineError> {
    same_dim(e1, e2)?;
    let mut g1 = vec![0.0; e1.values.len()];
    let mut g2 = vec![0.0; e2.values.len()];
    let scale = upstream / 2.0;
    match strategy {
        SimilarityStrategy::Concat => {
            if e1.frames != e2.frames {
                return Err(PipelineError::Shape(format!("{} vs {} frames", e1.frames, e2.frames)));
            }
            cosine_backward(&e1.values, &e2.values, scale, &mut g1, &mut g2);
        }
        SimilarityStrategy::AveragePool => {
            let (m1, m2) = (e1.temporal_mean(), e2.temporal_mean());
            let mut gm1 = vec![0.0; e1.dim];
            let mut gm2 = vec![0.0; e2.dim];
            cosine_backward(&m1, &m2, scale, &mut gm1, &mut gm2);
            for chunk in g1.chunks_mut(e1.dim) {
                for (g, m) in chunk.iter_mut().zip(&gm1) {
                    *g = m / e1.frames as f64;
                }
            }
            for chunk in g2.chunks_mut(e2.dim) {
                for (g, m) in chunk.iter_mut().zip(&gm2) {
                    *g = m / e2.frames as f64;
                }
            }
        }
        SimilarityStrategy::FramePairMax => {
            let (_, i, j) = framepair_argmax(e1, e2);
            let d = e1.dim;
            cosine_backward(
                e1.frame(i),
                e2.frame(j),
                scale,
                &mut g1[i * d..(i + 1) * d],
                &mut g2[j * d..(j + 1) * d],
            );
        }
    }
    Ok((g1, g2))
}

/// Frame-pair max similarity on bit descriptors, using popcounts only. Equals
/// [`similarity_framepair_max`] on the same bits expanded to reals.
pub fn framepair_max_bits(a: &[BinaryFrameVector], b: &[BinaryFrameVector]) -> f64 {
    let na: Vec<f64> = a.iter().map(|f| (f.count_ones() as f64).sqrt()).collect();
    let nb: Vec<f64> = b.iter().map(|f| (f.count_ones() as f64).sqrt()).collect();
    let mut best = f64::NEG_INFINITY;
    for (fa, &ni) in a.iter().zip(&na) {
        for (fb, &nj) in b.iter().zip(&nb) {
            let cos = cosine_from_parts(fa.and_count(fb) as f64, ni, nj);
            if cos > best {
                best = cos;
            }
        }
    }
    rescale_score(best)
}
