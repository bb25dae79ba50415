//! Discrete Boolean circuits obtained from a trained layer.
//!
//! Inference is bit-sliced: 64 samples are transposed so that word `i` holds
//! input bit `i` of every sample, and each gate then costs one or two word
//! operations for all 64 lanes at once.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::gates::BoolOp;
use crate::network::SoftGateLayer;
use crate::pipeline::{binarize_frame, framepair_max_bits, BinaryFrameVector, Frame, PreprocessConfig};

pub const LANES: usize = 64;
pub const NETLIST_HEADER: &str = "LGNNET v1";

#[derive(Debug, Error)]
pub enum CircuitError {
    #[error("input has {got} bits, circuit expects {expected}")]
    Shape { expected: usize, got: usize },
    #[error("gate {gate} references {operand}, which is not an earlier gate or a valid input")]
    BadReference { gate: usize, operand: String },
    #[error("batch holds {0} samples, at most 64 fit in one packed block")]
    TooManyLanes(usize),
    #[error("netlist line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operand {
    Input(u32),
    Gate(u32),
}

impl std::fmt::Display for Operand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Operand::Input(i) => write!(f, "i{i}"),
            Operand::Gate(g) => write!(f, "g{g}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Gate {
    pub op: BoolOp,
    pub a: Operand,
    pub b: Operand,
}

/// Immutable, acyclic netlist. Every gate output is a circuit output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteCircuit {
    n_inputs: usize,
    gates: Vec<Gate>,
    single_layer: bool,
}

impl DiscreteCircuit {
    pub fn new(n_inputs: usize, gates: Vec<Gate>) -> Result<Self, CircuitError> {
        for (k, g) in gates.iter().enumerate() {
            for operand in [g.a, g.b] {
                let ok = match operand {
                    Operand::Input(i) => (i as usize) < n_inputs,
                    Operand::Gate(j) => (j as usize) < k,
                };
                if !ok {
                    return Err(CircuitError::BadReference { gate: k, operand: operand.to_string() });
                }
            }
        }
        let single_layer = gates
            .iter()
            .all(|g| matches!((g.a, g.b), (Operand::Input(_), Operand::Input(_))));
        Ok(Self { n_inputs, gates, single_layer })
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_gates(&self) -> usize {
        self.gates.len()
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn is_single_layer(&self) -> bool {
        self.single_layer
    }

    /// Bytes needed for one binary frame descriptor.
    pub fn descriptor_bytes(&self) -> usize {
        self.gates.len().div_ceil(8)
    }

    /// Reference evaluator, one gate at a time.
    pub fn eval_scalar(&self, x: &[bool]) -> Result<Vec<bool>, CircuitError> {
        if x.len() != self.n_inputs {
            return Err(CircuitError::Shape { expected: self.n_inputs, got: x.len() });
        }
        let mut out: Vec<bool> = Vec::with_capacity(self.gates.len());
        for g in &self.gates {
            let fetch = |o: Operand, out: &[bool]| match o {
                Operand::Input(i) => x[i as usize],
                Operand::Gate(j) => out[j as usize],
            };
            let v = g.op.eval(fetch(g.a, &out), fetch(g.b, &out));
            out.push(v);
        }
        Ok(out)
    }

    /// Word-parallel evaluator; lanes outside the batch are zero in the output.
    pub fn eval_packed(&self, batch: &PackedBatch) -> Result<PackedBatch, CircuitError> {
        if batch.n_bits != self.n_inputs {
            return Err(CircuitError::Shape { expected: self.n_inputs, got: batch.n_bits });
        }
        let mut words = Vec::with_capacity(self.gates.len());
        self.eval_words(&batch.words, batch.lane_mask(), &mut words);
        Ok(PackedBatch { n_bits: self.gates.len(), lanes: batch.lanes, words })
    }

    fn eval_words(&self, inputs: &[u64], mask: u64, out: &mut Vec<u64>) {
        out.clear();
        if self.single_layer {
            out.extend(self.gates.iter().map(|g| {
                let (Operand::Input(a), Operand::Input(b)) = (g.a, g.b) else { unreachable!() };
                g.op.eval_word(inputs[a as usize], inputs[b as usize]) & mask
            }));
        } else {
            for g in &self.gates {
                let fetch = |o: Operand, out: &[u64]| match o {
                    Operand::Input(i) => inputs[i as usize],
                    Operand::Gate(j) => out[j as usize],
                };
                let v = g.op.eval_word(fetch(g.a, out), fetch(g.b, out)) & mask;
                out.push(v);
            }
        }
    }

    /// Descriptors for any number of frames, 64 at a time.
    pub fn encode_frames(&self, frames: &[BinaryFrameVector]) -> Result<Vec<BinaryFrameVector>, CircuitError> {
        let mut out = Vec::with_capacity(frames.len());
        let mut scratch = Vec::new();
        for chunk in frames.chunks(LANES) {
            let batch = PackedBatch::from_vectors(chunk)?;
            if batch.n_bits != self.n_inputs {
                return Err(CircuitError::Shape { expected: self.n_inputs, got: batch.n_bits });
            }
            self.eval_words(&batch.words, batch.lane_mask(), &mut scratch);
            out.extend(unpack_words(&scratch, self.gates.len(), chunk.len()));
        }
        Ok(out)
    }
}

/// Collapses every softmax of a layer to its mode.
pub fn discretize(layer: &SoftGateLayer) -> DiscreteCircuit {
    let wires = layer.connectome().discretize_connections();
    let gates = wires
        .iter()
        .enumerate()
        .map(|(g, w)| Gate {
            op: crate::gates::GateLogits(*layer.gate_scores(g)).mode(),
            a: Operand::Input(w[0]),
            b: Operand::Input(w[1]),
        })
        .collect();
    DiscreteCircuit::new(layer.input_dim(), gates).expect("discretized wires are in range")
}

/// In-place transpose of a 64×64 bit matrix, row `r` = word `r`, column `c`
/// = bit `c`.
pub fn transpose64(a: &mut [u64; 64]) {
    let mut j = 32;
    let mut m: u64 = 0x0000_0000_FFFF_FFFF;
    while j != 0 {
        let mut k = 0;
        while k < 64 {
            let t = ((a[k] >> j) ^ a[k + j]) & m;
            a[k] ^= t << j;
            a[k + j] ^= t;
            k = (k + j + 1) & !j;
        }
        j >>= 1;
        m ^= m << j;
    }
}

/// Bit-transposed block of up to 64 samples: `words[i]` bit `l` is bit `i`
/// of sample `l`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBatch {
    n_bits: usize,
    lanes: usize,
    words: Vec<u64>,
}

impl PackedBatch {
    pub fn pack(samples: &[Vec<bool>]) -> Result<Self, CircuitError> {
        if samples.len() > LANES {
            return Err(CircuitError::TooManyLanes(samples.len()));
        }
        let n_bits = samples.first().map_or(0, |s| s.len());
        let mut words = vec![0u64; n_bits];
        for (lane, s) in samples.iter().enumerate() {
            if s.len() != n_bits {
                return Err(CircuitError::Shape { expected: n_bits, got: s.len() });
            }
            for (w, &bit) in words.iter_mut().zip(s) {
                *w |= (bit as u64) << lane;
            }
        }
        Ok(Self { n_bits, lanes: samples.len(), words })
    }

    /// Packs bit vectors with 64×64 block transposes.
    pub fn from_vectors(samples: &[BinaryFrameVector]) -> Result<Self, CircuitError> {
        if samples.len() > LANES {
            return Err(CircuitError::TooManyLanes(samples.len()));
        }
        let n_bits = samples.first().map_or(0, |s| s.len());
        if let Some(bad) = samples.iter().find(|s| s.len() != n_bits) {
            return Err(CircuitError::Shape { expected: n_bits, got: bad.len() });
        }
        let n_words = n_bits.div_ceil(64);
        let mut words = vec![0u64; n_words * 64];
        let mut block = [0u64; 64];
        for w in 0..n_words {
            for (lane, slot) in block.iter_mut().enumerate() {
                *slot = samples.get(lane).map_or(0, |s| s.words()[w]);
            }
            transpose64(&mut block);
            words[w * 64..(w + 1) * 64].copy_from_slice(&block);
        }
        words.truncate(n_bits);
        Ok(Self { n_bits, lanes: samples.len(), words })
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn lane_mask(&self) -> u64 {
        if self.lanes == LANES {
            u64::MAX
        } else {
            (1u64 << self.lanes) - 1
        }
    }

    pub fn unpack(&self) -> Vec<Vec<bool>> {
        (0..self.lanes)
            .map(|l| self.words.iter().map(|w| w >> l & 1 == 1).collect())
            .collect()
    }

    pub fn to_vectors(&self) -> Vec<BinaryFrameVector> {
        unpack_words(&self.words, self.n_bits, self.lanes)
    }
}

fn unpack_words(words: &[u64], n_bits: usize, lanes: usize) -> Vec<BinaryFrameVector> {
    let n_words = n_bits.div_ceil(64);
    let mut per_lane = vec![vec![0u64; n_words]; lanes];
    let mut block = [0u64; 64];
    for w in 0..n_words {
        let start = w * 64;
        let end = (start + 64).min(n_bits);
        block[..end - start].copy_from_slice(&words[start..end]);
        block[end - start..].fill(0);
        transpose64(&mut block);
        for (lane, v) in per_lane.iter_mut().enumerate() {
            v[w] = block[lane];
        }
    }
    per_lane.into_iter().map(|w| BinaryFrameVector::from_words(n_bits, w)).collect()
}

// ---------------------------------------------------------------------------
// Netlist text format
// ---------------------------------------------------------------------------

pub fn netlist_to_string(circuit: &DiscreteCircuit) -> String {
    let mut s = String::with_capacity(24 * circuit.n_gates() + 32);
    let _ = writeln!(s, "{NETLIST_HEADER}");
    let _ = writeln!(s, "inputs {}", circuit.n_inputs);
    let _ = writeln!(s, "gates {}", circuit.n_gates());
    for (k, g) in circuit.gates.iter().enumerate() {
        let _ = writeln!(s, "g{k} {} {} {}", g.op.mnemonic(), g.a, g.b);
    }
    s
}

pub fn parse_netlist(text: &str) -> Result<DiscreteCircuit, CircuitError> {
    let err = |line: usize, message: String| CircuitError::Parse { line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let mut next = |what: &str| lines.next().ok_or_else(|| err(0, format!("unexpected end of file, expected {what}")));

    let (ln, header) = next("header")?;
    if header.trim() != NETLIST_HEADER {
        return Err(err(ln, format!("expected `{NETLIST_HEADER}`, found `{header}`")));
    }
    let count = |ln: usize, line: &str, key: &str| -> Result<usize, CircuitError> {
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(v), None) if k == key => {
                v.parse().map_err(|_| err(ln, format!("bad {key} count `{v}`")))
            }
            _ => Err(err(ln, format!("expected `{key} <count>`"))),
        }
    };
    let (ln, line) = next("inputs line")?;
    let n_inputs = count(ln, line, "inputs")?;
    let (ln, line) = next("gates line")?;
    let n_gates = count(ln, line, "gates")?;

    let mut gates = Vec::with_capacity(n_gates);
    for k in 0..n_gates {
        let (ln, line) = next("gate line")?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(err(ln, format!("expected `g<k> <OP> <ref> <ref>`, found `{line}`")));
        }
        if fields[0] != format!("g{k}") {
            return Err(err(ln, format!("expected label g{k}, found `{}`", fields[0])));
        }
        let op: BoolOp = fields[1].parse().map_err(|_| err(ln, format!("unknown mnemonic `{}`", fields[1])))?;
        let operand = |tok: &str| -> Result<Operand, CircuitError> {
            let (kind, num) = tok.split_at(1.min(tok.len()));
            let idx: u32 = num.parse().map_err(|_| err(ln, format!("bad operand `{tok}`")))?;
            match kind {
                "i" if (idx as usize) < n_inputs => Ok(Operand::Input(idx)),
                "i" => Err(err(ln, format!("input {tok} out of range (inputs {n_inputs})"))),
                "g" if (idx as usize) < k => Ok(Operand::Gate(idx)),
                "g" => Err(err(ln, format!("forward reference to {tok} from g{k}"))),
                _ => Err(err(ln, format!("bad operand `{tok}`"))),
            }
        };
        gates.push(Gate { op, a: operand(fields[2])?, b: operand(fields[3])? });
    }
    for (ln, line) in lines {
        if !line.trim().is_empty() {
            return Err(err(ln, "trailing content after the last gate".into()));
        }
    }
    DiscreteCircuit::new(n_inputs, gates)
}

pub fn export_netlist(circuit: &DiscreteCircuit, path: &Path) -> Result<(), CircuitError> {
    fs::write(path, netlist_to_string(circuit))?;
    Ok(())
}

pub fn import_netlist(path: &Path) -> Result<DiscreteCircuit, CircuitError> {
    parse_netlist(&fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Throughput
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub sps_mean: f64,
    pub sps_std: f64,
    pub gates: usize,
    pub desc_bytes: usize,
    pub n_pairs: usize,
    pub repetitions: usize,
    pub threads: usize,
}

impl BenchReport {
    pub fn line(&self) -> String {
        format!(
            "sps_mean={:.1} sps_std={:.1} gates={} desc_bytes={}",
            self.sps_mean, self.sps_std, self.gates, self.desc_bytes
        )
    }
}

/// Thumbnail pair already decoded and resized; binarization onwards is timed.
pub type FramePair = (Vec<Frame>, Vec<Frame>);

/// Scores every pair end to end: binarize, pack, evaluate, unpack descriptors,
/// frame-pair max similarity.
pub fn score_pairs(
    circuit: &DiscreteCircuit,
    preprocess: &PreprocessConfig,
    pairs: &[FramePair],
) -> Result<Vec<f64>, CircuitError> {
    let mut frames = Vec::new();
    for (a, b) in pairs {
        frames.extend(a.iter().chain(b).map(|f| binarize_frame(f, &preprocess.thresholds)));
    }
    let desc = circuit.encode_frames(&frames)?;
    let mut offset = 0;
    let mut out = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let da = &desc[offset..offset + a.len()];
        let db = &desc[offset + a.len()..offset + a.len() + b.len()];
        out.push(framepair_max_bits(da, db));
        offset += a.len() + b.len();
    }
    Ok(out)
}

/// Pair-scoring throughput over `repetitions` timed passes. Work is sharded
/// across the current rayon pool in blocks of `pairs_per_task` pairs.
pub fn benchmark(
    circuit: &DiscreteCircuit,
    preprocess: &PreprocessConfig,
    pairs: &[FramePair],
    repetitions: usize,
) -> Result<BenchReport, CircuitError> {
    const PAIRS_PER_TASK: usize = 32;
    let reps = repetitions.max(1);
    // warm-up pass, untimed
    score_pairs(circuit, preprocess, &pairs[..pairs.len().min(PAIRS_PER_TASK)])?;
    let mut rates = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        let scores: Vec<Vec<f64>> = pairs
            .par_chunks(PAIRS_PER_TASK)
            .map(|chunk| score_pairs(circuit, preprocess, chunk))
            .collect::<Result<_, _>>()?;
        let elapsed = start.elapsed().as_secs_f64();
        std::hint::black_box(&scores);
        rates.push(pairs.len() as f64 / elapsed);
    }
    let mean = rates.iter().sum::<f64>() / reps as f64;
    let var = if reps > 1 {
        rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (reps - 1) as f64
    } else {
        0.0
    };
    Ok(BenchReport {
        sps_mean: mean,
        sps_std: var.sqrt(),
        gates: circuit.n_gates(),
        desc_bytes: circuit.descriptor_bytes(),
        n_pairs: pairs.len(),
        repetitions: reps,
        threads: rayon::current_num_threads(),
    })
}
