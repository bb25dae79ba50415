//! Single-layer soft logic gate network used as a frame encoder.
//!
//! Gate `g` reads two soft operands chosen by the connectome and emits one
//! value in `[0, 1]`; the `n_gates` outputs form the frame descriptor.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::connectome::{Connectome, ConnectomeError, DenseConnectome, TopKConnectome};
use crate::gates::{
    coeff_grad_to_scores, project_coeffs, softmax16, soft_gate_forward, BoolOp, GateError, N_OPS,
};
use crate::pipeline::BinaryFrameVector;
use crate::seed::Seed;

/// Default fan-in of the sparse connectome.
pub const DEFAULT_TOP_K: usize = 32;

/// Operator that receives the initialization bias.
pub const PASS_THROUGH: BoolOp = BoolOp::A;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("input has {got} values, layer expects {expected}")]
    Shape { expected: usize, got: usize },
    #[error("forward cache does not belong to the current layer parameters")]
    StaleCache,
    #[error(transparent)]
    Connectome(#[from] ConnectomeError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error("invalid layer configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConnectomeKind {
    /// Fully learnable: every input is a candidate for every slot.
    Dense,
    TopK { k: usize },
}

impl ConnectomeKind {
    pub fn label(&self) -> String {
        match self {
            ConnectomeKind::Dense => "L".to_string(),
            ConnectomeKind::TopK { k } => format!("Top{k}"),
        }
    }
}

impl std::str::FromStr for ConnectomeKind {
    type Err = String;

    /// Accepts `dense`, `l`, `topk` (k = 32) or `topk:<k>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "dense" | "l" => Ok(ConnectomeKind::Dense),
            "topk" => Ok(ConnectomeKind::TopK { k: DEFAULT_TOP_K }),
            other => {
                let k = other
                    .strip_prefix("topk:")
                    .or_else(|| other.strip_prefix("top"))
                    .ok_or_else(|| format!("unknown connectome `{s}` (expected dense or topk:<k>)"))?;
                k.parse()
                    .map(|k| ConnectomeKind::TopK { k })
                    .map_err(|_| format!("bad fan-in in `{s}`"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LgnConfig {
    pub n_gates: usize,
    pub connectome: ConnectomeKind,
    pub input_dim: usize,
    pub seed: Seed,
    /// Initial logit added to the pass-through operator of every gate.
    #[serde(default = "default_bias")]
    pub pass_through_bias: f64,
}

fn default_bias() -> f64 {
    1.0
}

impl LgnConfig {
    pub fn new(n_gates: usize, connectome: ConnectomeKind, input_dim: usize, seed: Seed) -> Self {
        Self { n_gates, connectome, input_dim, seed, pass_through_bias: default_bias() }
    }
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Trainable single-layer network.
#[derive(Debug, Clone)]
pub struct SoftGateLayer {
    config: LgnConfig,
    /// `gate * 16 + op`
    gate_logits: Vec<f64>,
    connectome: Connectome,
    version: u64,
}

impl PartialEq for SoftGateLayer {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.gate_logits == other.gate_logits
            && self.connectome == other.connectome
    }
}

/// Gradients for every trainable logit, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub gate_logits: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl LayerGradients {
    pub fn zeros_like(layer: &SoftGateLayer) -> Self {
        Self {
            gate_logits: vec![0.0; layer.gate_logits.len()],
            alpha: vec![0.0; layer.connectome.n_logits()],
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.gate_logits.iter_mut().chain(self.alpha.iter_mut()).for_each(|g| *g *= factor);
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.gate_logits.iter().chain(self.alpha.iter())
    }
}

/// Soft (or hard) per-frame descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEmbedding {
    pub values: Vec<f64>,
}

/// Operand values of a forward pass, kept for [`SoftGateLayer::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    x: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl SoftGateLayer {
    /// Fresh layer: pass-through-biased gate logits; connection logits per
/// connectome variant.
    pub fn init(config: LgnConfig) -> Result<Self, NetworkError> {
        if config.n_gates == 0 || config.input_dim == 0 {
            return Err(NetworkError::Config("n_gates and input_dim must be positive".into()));
        }
        if !config.pass_through_bias.is_finite() {
            return Err(NetworkError::Config("pass-through bias must be finite".into()));
        }
        let connectome = match config.connectome {
            ConnectomeKind::Dense => {
                Connectome::Dense(DenseConnectome::init(config.seed.child(0xC0, 0), config.n_gates, config.input_dim)?)
            }
            ConnectomeKind::TopK { k } => Connectome::TopK(TopKConnectome::init(
                config.seed.child(0xC0, 0),
                config.n_gates,
                config.input_dim,
                k,
            )?),
        };
        let mut gate_logits = vec![0.0; config.n_gates * N_OPS];
        for g in 0..config.n_gates {
            gate_logits[g * N_OPS + PASS_THROUGH as usize] = config.pass_through_bias;
        }
        Ok(Self { config, gate_logits, connectome, version: fresh_version() })
    }

    pub(crate) fn from_parts(config: LgnConfig, gate_logits: Vec<f64>, connectome: Connectome) -> Self {
        Self { config, gate_logits, connectome, version: fresh_version() }
    }

    pub fn config(&self) -> &LgnConfig {
        &self.config
    }

    pub fn n_gates(&self) -> usize {
        self.config.n_gates
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn connectome(&self) -> &Connectome {
        &self.connectome
    }

    pub fn gate_logits(&self) -> &[f64] {
        &self.gate_logits
    }

    pub fn gate_scores(&self, gate: usize) -> &[f64; N_OPS] {
        self.gate_logits[gate * N_OPS..(gate + 1) * N_OPS].try_into().unwrap()
    }

    /// Mutable access to `(gate logits, connection logits)`. Invalidates
    /// every outstanding [`ForwardCache`].
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        self.version = fresh_version();
        (&mut self.gate_logits, self.connectome.alpha_mut())
    }

    /// Number of trainable logits.
    pub fn n_logits(&self) -> usize {
        self.gate_logits.len() + self.connectome.n_logits()
    }

    /// Trainable logits plus fixed Top-K candidate indices.
    pub fn n_parameters(&self) -> usize {
        let indices = match &self.connectome {
            Connectome::Dense(_) => 0,
            Connectome::TopK(t) => t.candidates().len(),
        };
        self.n_logits() + indices
    }

    pub fn prepare(&self) -> Result<PreparedLayer<'_>, NetworkError> {
        PreparedLayer::new(self)
    }

    pub fn forward_soft(&self, x: &[f64]) -> Result<(FrameEmbedding, ForwardCache), NetworkError> {
        let prepared = self.prepare()?;
        let n = self.n_gates();
        let mut out = vec![0.0; n];
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        prepared.encode_frame_with_operands(x, &mut out, &mut a, &mut b)?;
        Ok((
            FrameEmbedding { values: out },
            ForwardCache { version: self.version, x: x.to_vec(), a, b },
        ))
    }

    pub fn backward(&self, cache: &ForwardCache, grad_embedding: &[f64]) -> Result<LayerGradients, NetworkError> {
        if cache.version != self.version {
            return Err(NetworkError::StaleCache);
        }
        if grad_embedding.len() != self.n_gates() {
            return Err(NetworkError::Shape { expected: self.n_gates(), got: grad_embedding.len() });
        }
        let prepared = self.prepare()?;
        let mut acc = GradAccumulator::new(self);
        prepared.accumulate_with_operands(&cache.x, &cache.a, &cache.b, grad_embedding, &mut acc);
        Ok(acc.finish(&prepared))
    }
}

/// Layer with all softmaxes evaluated once, shared by every frame of a batch.
pub struct PreparedLayer<'a> {
    layer: &'a SoftGateLayer,
    probs: Vec<[f64; N_OPS]>,
    coeffs: Vec<[f64; 4]>,
    slot_probs: Vec<f64>,
}

/// Per-thread gradient accumulation buffers; merge then [`finish`](Self::finish).
#[derive(Debug, Clone)]
pub struct GradAccumulator {
    coeff: Vec<[f64; 4]>,
    alpha: Vec<f64>,
}

impl GradAccumulator {
    pub fn new(layer: &SoftGateLayer) -> Self {
        Self { coeff: vec![[0.0; 4]; layer.n_gates()], alpha: vec![0.0; layer.connectome.n_logits()] }
    }

    pub fn merge(mut self, other: GradAccumulator) -> Self {
        for (c, o) in self.coeff.iter_mut().zip(&other.coeff) {
            for k in 0..4 {
                c[k] += o[k];
            }
        }
        for (a, o) in self.alpha.iter_mut().zip(&other.alpha) {
            *a += o;
        }
        self
    }

    /// Chains the accumulated coefficient gradients through the gate softmaxes.
    pub fn finish(self, prepared: &PreparedLayer<'_>) -> LayerGradients {
        let mut gate_logits = Vec::with_capacity(self.coeff.len() * N_OPS);
        for (p, gc) in prepared.probs.iter().zip(&self.coeff) {
            gate_logits.extend_from_slice(&coeff_grad_to_scores(p, gc));
        }
        LayerGradients { gate_logits, alpha: self.alpha }
    }
}

impl<'a> PreparedLayer<'a> {
    fn new(layer: &'a SoftGateLayer) -> Result<Self, NetworkError> {
        let mut probs = Vec::with_capacity(layer.n_gates());
        let mut coeffs = Vec::with_capacity(layer.n_gates());
        for g in 0..layer.n_gates() {
            let p = softmax16(layer.gate_scores(g))?;
            coeffs.push(project_coeffs(&p));
            probs.push(p);
        }
        Ok(Self { layer, probs, coeffs, slot_probs: layer.connectome.slot_probabilities() })
    }

    pub fn layer(&self) -> &SoftGateLayer {
        self.layer
    }

    pub fn coeffs(&self) -> &[[f64; 4]] {
        &self.coeffs
    }

    #[inline]
    fn slot_value(&self, gate: usize, slot: usize, x: &[f64]) -> f64 {
        let fan = self.layer.connectome.fan();
        let base = (gate * 2 + slot) * fan;
        let p = &self.slot_probs[base..base + fan];
        match &self.layer.connectome {
            Connectome::Dense(_) => p.iter().zip(x).map(|(p, x)| p * x).sum(),
            Connectome::TopK(t) => {
                let cand = &t.candidates[base..base + fan];
                p.iter().zip(cand).map(|(p, &c)| p * x[c as usize]).sum()
            }
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NetworkError> {
        if x.len() != self.layer.input_dim() {
            return Err(NetworkError::Shape { expected: self.layer.input_dim(), got: x.len() });
        }
        Ok(())
    }

    pub fn encode_frame(&self, x: &[f64], out: &mut [f64]) -> Result<(), NetworkError> {
        self.check_input(x)?;
        for (g, o) in out.iter_mut().enumerate() {
            let a = self.slot_value(g, 0, x);
            let b = self.slot_value(g, 1, x);
            *o = soft_gate_forward(&self.coeffs[g], a, b);
        }
        Ok(())
    }

    fn encode_frame_with_operands(
        &self,
        x: &[f64],
        out: &mut [f64],
        a_out: &mut [f64],
        b_out: &mut [f64],
    ) -> Result<(), NetworkError> {
        self.check_input(x)?;
        for g in 0..out.len() {
            let a = self.slot_value(g, 0, x);
            let b = self.slot_value(g, 1, x);
            a_out[g] = a;
            b_out[g] = b;
            out[g] = soft_gate_forward(&self.coeffs[g], a, b);
        }
        Ok(())
    }

    /// Adds the parameter gradient of one frame, recomputing its operands.
    pub fn accumulate_frame(&self, x: &[f64], grad_out: &[f64], acc: &mut GradAccumulator) -> Result<(), NetworkError> {
        self.check_input(x)?;
        for (g, &up) in grad_out.iter().enumerate() {
            if up == 0.0 {
                continue;
            }
            let a = self.slot_value(g, 0, x);
            let b = self.slot_value(g, 1, x);
            self.accumulate_gate(g, x, a, b, up, acc);
        }
        Ok(())
    }

    fn accumulate_with_operands(&self, x: &[f64], a: &[f64], b: &[f64], grad_out: &[f64], acc: &mut GradAccumulator) {
        for (g, &up) in grad_out.iter().enumerate() {
            if up != 0.0 {
                self.accumulate_gate(g, x, a[g], b[g], up, acc);
            }
        }
    }

    #[inline]
    fn accumulate_gate(&self, g: usize, x: &[f64], a: f64, b: f64, up: f64, acc: &mut GradAccumulator) {
        let c = &self.coeffs[g];
        let gc = &mut acc.coeff[g];
        gc[0] += up;
        gc[1] += up * a;
        gc[2] += up * b;
        gc[3] += up * a * b;
        let grad_a = up * (c[1] + c[3] * b);
        let grad_b = up * (c[2] + c[3] * a);
        self.accumulate_slot(g, 0, x, a, grad_a, &mut acc.alpha);
        self.accumulate_slot(g, 1, x, b, grad_b, &mut acc.alpha);
    }

    #[inline]
    fn accumulate_slot(&self, gate: usize, slot: usize, x: &[f64], value: f64, grad: f64, alpha: &mut [f64]) {
        if grad == 0.0 {
            return;
        }
        let fan = self.layer.connectome.fan();
        let base = (gate * 2 + slot) * fan;
        let p = &self.slot_probs[base..base + fan];
        let ga = &mut alpha[base..base + fan];
        match &self.layer.connectome {
            Connectome::Dense(_) => {
                for ((g, p), x) in ga.iter_mut().zip(p).zip(x) {
                    *g += grad * p * (x - value);
                }
            }
            Connectome::TopK(t) => {
                let cand = &t.candidates[base..base + fan];
                for ((g, p), &c) in ga.iter_mut().zip(p).zip(cand) {
                    *g += grad * p * (x[c as usize] - value);
                }
            }
        }
    }
}

/// Frames per [`FrameBlock`].
pub const BLOCK: usize = 64;

/// Up to 64 frames stored input-major (`x[i * BLOCK + lane]`), so a slot's
/// weighted sum over its candidates becomes a run of contiguous axpys.
#[derive(Debug, Clone)]
pub struct FrameBlock {
    lanes: usize,
    input_dim: usize,
    x: Vec<f64>,
}

impl FrameBlock {
    pub fn from_bits(frames: &[&BinaryFrameVector]) -> Result<Self, NetworkError> {
        if frames.len() > BLOCK {
            return Err(NetworkError::Shape { expected: BLOCK, got: frames.len() });
        }
        let input_dim = frames.first().map_or(0, |f| f.len());
        let mut x = vec![0.0; input_dim * BLOCK];
        for (lane, f) in frames.iter().enumerate() {
            if f.len() != input_dim {
                return Err(NetworkError::Shape { expected: input_dim, got: f.len() });
            }
            for (w, &word) in f.words().iter().enumerate() {
                let mut m = word;
                while m != 0 {
                    let i = w * 64 + m.trailing_zeros() as usize;
                    x[i * BLOCK + lane] = 1.0;
                    m &= m - 1;
                }
            }
        }
        Ok(Self { lanes: frames.len(), input_dim, x })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, NetworkError> {
        if rows.len() > BLOCK {
            return Err(NetworkError::Shape { expected: BLOCK, got: rows.len() });
        }
        let input_dim = rows.first().map_or(0, |r| r.len());
        let mut x = vec![0.0; input_dim * BLOCK];
        for (lane, r) in rows.iter().enumerate() {
            if r.len() != input_dim {
                return Err(NetworkError::Shape { expected: input_dim, got: r.len() });
            }
            for (i, v) in r.iter().enumerate() {
                x[i * BLOCK + lane] = *v;
            }
        }
        Ok(Self { lanes: rows.len(), input_dim, x })
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }
}

#[inline(always)]
fn axpy(acc: &mut [f64; BLOCK], p: f64, row: &[f64]) {
    let row: &[f64; BLOCK] = row.try_into().expect("block row");
    for l in 0..BLOCK {
        acc[l] += p * row[l];
    }
}

impl PreparedLayer<'_> {
    fn check_block(&self, block: &FrameBlock, out_len: usize) -> Result<(), NetworkError> {
        if block.input_dim != self.layer.input_dim() {
            return Err(NetworkError::Shape { expected: self.layer.input_dim(), got: block.input_dim });
        }
        let want = block.lanes * self.layer.n_gates();
        if out_len != want {
            return Err(NetworkError::Shape { expected: want, got: out_len });
        }
        Ok(())
    }

    #[inline]
    fn slot_block(&self, gate: usize, slot: usize, x: &[f64], acc: &mut [f64; BLOCK]) {
        *acc = [0.0; BLOCK];
        let fan = self.layer.connectome.fan();
        let base = (gate * 2 + slot) * fan;
        let p = &self.slot_probs[base..base + fan];
        match &self.layer.connectome {
            Connectome::Dense(_) => {
                for (c, &pj) in p.iter().enumerate() {
                    axpy(acc, pj, &x[c * BLOCK..(c + 1) * BLOCK]);
                }
            }
            Connectome::TopK(t) => {
                for (&pj, &c) in p.iter().zip(&t.candidates[base..base + fan]) {
                    let c = c as usize;
                    axpy(acc, pj, &x[c * BLOCK..(c + 1) * BLOCK]);
                }
            }
        }
    }

    /// Soft outputs of every frame in `block`, written to
    /// `out[lane * n_gates + gate]`.
    pub fn encode_block(&self, block: &FrameBlock, out: &mut [f64]) -> Result<(), NetworkError> {
        self.check_block(block, out.len())?;
        let n = self.layer.n_gates();
        let (mut a, mut b) = ([0.0; BLOCK], [0.0; BLOCK]);
        // gate-major tiles, transposed into the lane-major output
        const TILE: usize = 16;
        let mut tile = [[0.0; BLOCK]; TILE];
        for g0 in (0..n).step_by(TILE) {
            let g1 = (g0 + TILE).min(n);
            for g in g0..g1 {
                self.slot_block(g, 0, &block.x, &mut a);
                self.slot_block(g, 1, &block.x, &mut b);
                let c = &self.coeffs[g];
                for l in 0..BLOCK {
                    tile[g - g0][l] = soft_gate_forward(c, a[l], b[l]);
                }
            }
            for l in 0..block.lanes {
                for g in g0..g1 {
                    out[l * n + g] = tile[g - g0][l];
                }
            }
        }
        Ok(())
    }

    /// Adds the parameter gradient of a block given output gradients laid
    /// out like [`encode_block`](Self::encode_block)'s result.
    pub fn accumulate_block(&self, block: &FrameBlock, grad_out: &[f64], acc: &mut GradAccumulator) -> Result<(), NetworkError> {
        self.check_block(block, grad_out.len())?;
        let n = self.layer.n_gates();
        let (mut a, mut b) = ([0.0; BLOCK], [0.0; BLOCK]);
        let (mut up, mut ga, mut gb) = ([0.0; BLOCK], [0.0; BLOCK], [0.0; BLOCK]);
        for g in 0..n {
            let mut any = false;
            for l in 0..block.lanes {
                up[l] = grad_out[l * n + g];
                any |= up[l] != 0.0;
            }
            if !any {
                continue;
            }
            self.slot_block(g, 0, &block.x, &mut a);
            self.slot_block(g, 1, &block.x, &mut b);
            let c = &self.coeffs[g];
            let gc = &mut acc.coeff[g];
            for l in 0..block.lanes {
                gc[0] += up[l];
                gc[1] += up[l] * a[l];
                gc[2] += up[l] * b[l];
                gc[3] += up[l] * a[l] * b[l];
                ga[l] = up[l] * (c[1] + c[3] * b[l]);
                gb[l] = up[l] * (c[2] + c[3] * a[l]);
            }
            self.slot_block_grad(g, 0, block, &a, &ga, &mut acc.alpha);
            self.slot_block_grad(g, 1, block, &b, &gb, &mut acc.alpha);
        }
        Ok(())
    }

    #[inline]
    fn slot_block_grad(
        &self,
        gate: usize,
        slot: usize,
        block: &FrameBlock,
        value: &[f64; BLOCK],
        grad: &[f64; BLOCK],
        alpha: &mut [f64],
    ) {
        let lanes = block.lanes;
        let gv: f64 = grad[..lanes].iter().zip(&value[..lanes]).map(|(g, v)| g * v).sum();
        let fan = self.layer.connectome.fan();
        let base = (gate * 2 + slot) * fan;
        let p = &self.slot_probs[base..base + fan];
        let dot = |c: usize| -> f64 {
            let row = &block.x[c * BLOCK..c * BLOCK + lanes];
            grad[..lanes].iter().zip(row).map(|(g, x)| g * x).sum()
        };
        let ga = &mut alpha[base..base + fan];
        match &self.layer.connectome {
            Connectome::Dense(_) => {
                for (c, (g, &pj)) in ga.iter_mut().zip(p).enumerate() {
                    *g += pj * (dot(c) - gv);
                }
            }
            Connectome::TopK(t) => {
                let cand = &t.candidates[base..base + fan];
                for ((g, &pj), &c) in ga.iter_mut().zip(p).zip(cand) {
                    *g += pj * (dot(c as usize) - gv);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoint file
// ---------------------------------------------------------------------------

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LGNCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 56;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("checkpoint truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checkpoint checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("checkpoint holds a {found} connectome, expected {expected}")]
    KindMismatch { expected: String, found: String },
    #[error("invalid checkpoint contents: {0}")]
    Invalid(String),
}

/// Serializes a layer. See the repository README for the byte layout.
pub fn encode_checkpoint(layer: &SoftGateLayer) -> Vec<u8> {
    let cfg = &layer.config;
    let (kind, k) = match cfg.connectome {
        ConnectomeKind::Dense => (0u8, 0u32),
        ConnectomeKind::TopK { k } => (1u8, k as u32),
    };
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * layer.n_parameters() + 4);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&[kind, 0, 0, 0]);
    buf.extend_from_slice(&(cfg.n_gates as u32).to_le_bytes());
    buf.extend_from_slice(&(cfg.input_dim as u32).to_le_bytes());
    buf.extend_from_slice(&k.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&cfg.seed.0.to_le_bytes());
    buf.extend_from_slice(&cfg.pass_through_bias.to_le_bytes());
    buf.extend_from_slice(&(payload_len(cfg) as u64).to_le_bytes());
    debug_assert_eq!(buf.len(), HEADER_LEN);
    for v in &layer.gate_logits {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Connectome::TopK(t) = &layer.connectome {
        for c in t.candidates() {
            buf.extend_from_slice(&c.to_le_bytes());
        }
    }
    for v in layer.connectome.alpha() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

fn payload_len(cfg: &LgnConfig) -> usize {
    let gates = cfg.n_gates * N_OPS * 8;
    match cfg.connectome {
        ConnectomeKind::Dense => gates + 2 * cfg.n_gates * cfg.input_dim * 8,
        ConnectomeKind::TopK { k } => gates + 2 * cfg.n_gates * k * (4 + 8),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.buf[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        out
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SoftGateLayer, CheckpointError> {
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated { expected: HEADER_LEN + 4, found: bytes.len() });
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader { buf: bytes, pos: 8 };
    let version = r.u32();
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch { found: version });
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(CheckpointError::Truncated { expected: HEADER_LEN + 4, found: bytes.len() });
    }
    let kind: [u8; 4] = r.take();
    let n_gates = r.u32() as usize;
    let input_dim = r.u32() as usize;
    let k = r.u32() as usize;
    let _reserved = r.u32();
    let seed = Seed(r.u64());
    let pass_through_bias = r.f64();
    let declared = r.u64() as usize;
    let connectome = match kind[0] {
        0 => ConnectomeKind::Dense,
        1 => ConnectomeKind::TopK { k },
        other => return Err(CheckpointError::Invalid(format!("unknown connectome tag {other}"))),
    };
    let config = LgnConfig { n_gates, connectome, input_dim, seed, pass_through_bias };
    let payload = payload_len(&config);
    if declared != payload {
        return Err(CheckpointError::Invalid(format!(
            "declared payload {declared} bytes, header implies {payload}"
        )));
    }
    let expected = HEADER_LEN + payload + 4;
    if bytes.len() != expected {
        return Err(CheckpointError::Truncated { expected, found: bytes.len() });
    }
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..expected - 4]);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }
    let gate_logits: Vec<f64> = (0..n_gates * N_OPS).map(|_| r.f64()).collect();
    let conn = match connectome {
        ConnectomeKind::Dense => {
            let alpha = (0..2 * n_gates * input_dim).map(|_| r.f64()).collect();
            Connectome::Dense(DenseConnectome { n_gates, n_inputs: input_dim, alpha })
        }
        ConnectomeKind::TopK { k } => {
            let candidates: Vec<u32> = (0..2 * n_gates * k).map(|_| r.u32()).collect();
            if candidates.iter().any(|&c| c as usize >= input_dim) {
                return Err(CheckpointError::Invalid("candidate index out of range".into()));
            }
            let alpha = (0..2 * n_gates * k).map(|_| r.f64()).collect();
            Connectome::TopK(
                TopKConnectome::from_parts(n_gates, input_dim, k, candidates, alpha)
                    .map_err(|e| CheckpointError::Invalid(e.to_string()))?,
            )
        }
    };
    Ok(SoftGateLayer::from_parts(config, gate_logits, conn))
}

pub fn save_checkpoint(layer: &SoftGateLayer, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(layer))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<SoftGateLayer, CheckpointError> {
    decode_checkpoint(&fs::read(path)?)
}

/// Loads a checkpoint and insists on a connectome family (`Dense` or any
/// `TopK`).
pub fn load_checkpoint_expecting(path: &Path, expected: ConnectomeKind) -> Result<SoftGateLayer, CheckpointError> {
    let layer = load_checkpoint(path)?;
    let found = layer.config.connectome;
    let same_family = matches!(
        (expected, found),
        (ConnectomeKind::Dense, ConnectomeKind::Dense) | (ConnectomeKind::TopK { .. }, ConnectomeKind::TopK { .. })
    );
    if !same_family {
        return Err(CheckpointError::KindMismatch { expected: expected.label(), found: found.label() });
    }
    Ok(layer)
}
