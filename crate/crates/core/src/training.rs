//! Training loop, threshold selection and the trial protocol.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{discretize, CircuitError, DiscreteCircuit};
use crate::metrics::{full_report, Confusion, MetricsError, MetricsReport, ScoredPair};
use crate::network::{
    FrameBlock, GradAccumulator, LayerGradients, LgnConfig, NetworkError, PreparedLayer, SoftGateLayer, BLOCK,
};
use crate::pipeline::{framepair_max_bits, BinaryFrameVector, FragmentEmbedding, PipelineError, SimilarityStrategy};
use crate::seed::Seed;

pub const BCE_EPS: f64 = 1e-7;

const STREAM_TRIAL: u64 = 11;
const STREAM_INIT: u64 = 12;
const STREAM_SHUFFLE: u64 = 13;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(format!("unknown optimizer `{s}` (adam, sgd)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub similarity: SimilarityStrategy,
    pub seed: Seed,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 300,
            learning_rate: 0.1,
            batch_size: 128,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            similarity: SimilarityStrategy::FramePairMax,
            seed: Seed(0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if self.batch_size == 0 {
            return Err(TrainingError::Config("batch_size must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(TrainingError::Config(format!("learning rate {} is not a finite non-negative value", self.learning_rate)));
        }
        Ok(())
    }
}

/// Binary cross-entropy on a score clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(score: f64, label: bool) -> f64 {
    let s = score.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if label {
        -s.ln()
    } else {
        -(1.0 - s).ln()
    }
}

/// Derivative of the loss with respect to the score, taken at the clamped
/// score so saturated pairs still receive a gradient.
pub fn bce_grad(score: f64, label: bool) -> f64 {
    let s = score.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if label {
        -1.0 / s
    } else {
        1.0 / (1.0 - s)
    }
}

/// Pair of fragment indices into a fragment table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub label: bool,
}

/// Binarized fragments plus the pair lists of each split.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub fragments: Vec<Vec<BinaryFrameVector>>,
    pub train: Vec<Pair>,
    pub val: Vec<Pair>,
    pub test: Vec<Pair>,
}

impl TrainingData {
    pub fn input_dim(&self) -> usize {
        self.fragments.first().and_then(|f| f.first()).map_or(0, |v| v.len())
    }
}

#[derive(Debug, Clone)]
struct AdamState {
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Layer plus optimizer moments.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub layer: SoftGateLayer,
    pub epoch: usize,
    adam: AdamState,
}

impl TrainState {
    pub fn new(layer: SoftGateLayer) -> Self {
        let n = layer.n_logits();
        Self { layer, epoch: 0, adam: AdamState { t: 0, m: vec![0.0; n], v: vec![0.0; n] } }
    }

    pub fn step(&mut self, grads: &LayerGradients, config: &TrainConfig) {
        let lr = config.learning_rate;
        let (gates, alpha) = self.layer.params_mut();
        let params = gates.iter_mut().chain(alpha.iter_mut());
        match config.optimizer {
            OptimizerKind::Sgd => {
                for (p, g) in params.zip(grads.iter()) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let s = &mut self.adam;
                s.t += 1;
                let bc1 = 1.0 - config.beta1.powi(s.t as i32);
                let bc2 = 1.0 - config.beta2.powi(s.t as i32);
                for (((p, g), m), v) in params.zip(grads.iter()).zip(s.m.iter_mut()).zip(s.v.iter_mut()) {
                    *m = config.beta1 * *m + (1.0 - config.beta1) * g;
                    *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + config.eps);
                }
            }
        }
    }
}

/// Soft embeddings of `ids`, encoded 64 frames at a time.
fn encode_many(
    prepared: &PreparedLayer<'_>,
    fragments: &[Vec<BinaryFrameVector>],
    ids: &[usize],
) -> Result<Vec<FragmentEmbedding>, TrainingError> {
    let n = prepared.layer().n_gates();
    let flat: Vec<(usize, usize)> =
        ids.iter().enumerate().flat_map(|(k, &i)| (0..fragments[i].len()).map(move |t| (k, t))).collect();
    let outputs: Vec<Vec<f64>> = flat
        .par_chunks(BLOCK)
        .map(|chunk| -> Result<Vec<f64>, TrainingError> {
            let frames: Vec<&BinaryFrameVector> = chunk.iter().map(|&(k, t)| &fragments[ids[k]][t]).collect();
            let mut out = vec![0.0; chunk.len() * n];
            prepared.encode_block(&FrameBlock::from_bits(&frames)?, &mut out)?;
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    let mut embs: Vec<FragmentEmbedding> = ids.iter().map(|&i| FragmentEmbedding::zeros(fragments[i].len(), n)).collect();
    for (chunk, out) in flat.chunks(BLOCK).zip(&outputs) {
        for (l, &(k, t)) in chunk.iter().enumerate() {
            embs[k].frame_mut(t).copy_from_slice(&out[l * n..(l + 1) * n]);
        }
    }
    Ok(embs)
}

fn unique_fragments(pairs: &[Pair]) -> Vec<usize> {
    let mut ids: Vec<usize> = pairs.iter().flat_map(|p| [p.a, p.b]).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Soft embeddings of the given fragments, keyed by fragment index.
pub fn encode_soft(
    layer: &SoftGateLayer,
    fragments: &[Vec<BinaryFrameVector>],
    ids: &[usize],
) -> Result<HashMap<usize, FragmentEmbedding>, TrainingError> {
    let embs = encode_many(&layer.prepare()?, fragments, ids)?;
    Ok(ids.iter().copied().zip(embs).collect())
}

/// Mean loss and parameter gradient over one batch.
pub fn batch_gradient(
    layer: &SoftGateLayer,
    fragments: &[Vec<BinaryFrameVector>],
    batch: &[Pair],
    similarity: SimilarityStrategy,
) -> Result<(f64, LayerGradients), TrainingError> {
    let prepared = layer.prepare()?;
    let ids = unique_fragments(batch);
    let embs = encode_many(&prepared, fragments, &ids)?;
    let slot: HashMap<usize, usize> = ids.iter().enumerate().map(|(k, &i)| (i, k)).collect();

    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad_emb: Vec<Vec<f64>> = embs.iter().map(|e| vec![0.0; e.values.len()]).collect();
    for p in batch {
        let (ka, kb) = (slot[&p.a], slot[&p.b]);
        let s = similarity.score(&embs[ka], &embs[kb])?;
        loss += bce_loss(s, p.label);
        let (ga, gb) = similarity.backward(&embs[ka], &embs[kb], bce_grad(s, p.label) / n)?;
        for (d, g) in grad_emb[ka].iter_mut().zip(ga) {
            *d += g;
        }
        for (d, g) in grad_emb[kb].iter_mut().zip(gb) {
            *d += g;
        }
    }

    let dim = layer.n_gates();
    // only frames that receive a gradient are revisited; fixed chunks and an
    // in-order merge keep the float sums independent of the thread count
    let flat: Vec<(usize, usize)> = grad_emb
        .iter()
        .enumerate()
        .flat_map(|(k, g)| {
            g.chunks(dim).enumerate().filter(|(_, row)| row.iter().any(|v| *v != 0.0)).map(move |(t, _)| (k, t))
        })
        .collect();
    let partials: Vec<GradAccumulator> = flat
        .par_chunks(BLOCK)
        .map(|chunk| -> Result<GradAccumulator, TrainingError> {
            let frames: Vec<&BinaryFrameVector> = chunk.iter().map(|&(k, t)| &fragments[ids[k]][t]).collect();
            let mut grad = Vec::with_capacity(chunk.len() * dim);
            for &(k, t) in chunk {
                grad.extend_from_slice(&grad_emb[k][t * dim..(t + 1) * dim]);
            }
            let mut acc = GradAccumulator::new(layer);
            prepared.accumulate_block(&FrameBlock::from_bits(&frames)?, &grad, &mut acc)?;
            Ok(acc)
        })
        .collect::<Result<_, _>>()?;
    let acc = partials.into_iter().reduce(GradAccumulator::merge).unwrap_or_else(|| GradAccumulator::new(layer));
    Ok((loss / n, acc.finish(&prepared)))
}

/// Mean loss over `pairs` without updating anything.
pub fn evaluate_loss(
    layer: &SoftGateLayer,
    fragments: &[Vec<BinaryFrameVector>],
    pairs: &[Pair],
    similarity: SimilarityStrategy,
) -> Result<f64, TrainingError> {
    let scores = score_soft(layer, fragments, pairs, similarity)?;
    Ok(scores.iter().map(|p| bce_loss(p.score, p.label)).sum::<f64>() / pairs.len().max(1) as f64)
}

/// One pass over shuffled mini-batches; returns the mean per-pair loss.
pub fn train_epoch(
    state: &mut TrainState,
    data: &TrainingData,
    config: &TrainConfig,
) -> Result<f64, TrainingError> {
    if data.train.is_empty() {
        return Err(TrainingError::Config("no training pairs".into()));
    }
    config.validate()?;
    let mut order = data.train.clone();
    order.shuffle(&mut config.seed.child(STREAM_SHUFFLE, state.epoch as u64).rng());
    let mut total = 0.0;
    for batch in order.chunks(config.batch_size) {
        let (loss, grads) = batch_gradient(&state.layer, &data.fragments, batch, config.similarity)?;
        total += loss * batch.len() as f64;
        state.step(&grads, config);
    }
    state.epoch += 1;
    Ok(total / order.len() as f64)
}

pub fn score_soft(
    layer: &SoftGateLayer,
    fragments: &[Vec<BinaryFrameVector>],
    pairs: &[Pair],
    similarity: SimilarityStrategy,
) -> Result<Vec<ScoredPair>, TrainingError> {
    let embs = encode_soft(layer, fragments, &unique_fragments(pairs))?;
    pairs
        .iter()
        .map(|p| Ok(ScoredPair { score: similarity.score(&embs[&p.a], &embs[&p.b])?, label: p.label }))
        .collect()
}

/// Hard descriptors of the given fragments through a discrete circuit.
pub fn encode_hard(
    circuit: &DiscreteCircuit,
    fragments: &[Vec<BinaryFrameVector>],
    ids: &[usize],
) -> Result<HashMap<usize, Vec<BinaryFrameVector>>, TrainingError> {
    let flat: Vec<BinaryFrameVector> = ids.iter().flat_map(|&i| fragments[i].iter().cloned()).collect();
    let desc = circuit.encode_frames(&flat)?;
    let mut out = HashMap::with_capacity(ids.len());
    let mut offset = 0;
    for &i in ids {
        let n = fragments[i].len();
        out.insert(i, desc[offset..offset + n].to_vec());
        offset += n;
    }
    Ok(out)
}

/// Scores pairs of already-binary descriptors (circuit outputs, or raw
/// binarized frames for the model-free baseline).
pub fn score_bits(
    descriptors: &HashMap<usize, Vec<BinaryFrameVector>>,
    pairs: &[Pair],
    similarity: SimilarityStrategy,
) -> Result<Vec<ScoredPair>, TrainingError> {
    pairs
        .iter()
        .map(|p| {
            let (a, b) = (&descriptors[&p.a], &descriptors[&p.b]);
            let score = match similarity {
                SimilarityStrategy::FramePairMax => framepair_max_bits(a, b),
                s => s.score(&FragmentEmbedding::from_bits(a), &FragmentEmbedding::from_bits(b))?,
            };
            Ok(ScoredPair { score, label: p.label })
        })
        .collect()
}

pub fn score_hard(
    circuit: &DiscreteCircuit,
    fragments: &[Vec<BinaryFrameVector>],
    pairs: &[Pair],
    similarity: SimilarityStrategy,
) -> Result<Vec<ScoredPair>, TrainingError> {
    score_bits(&encode_hard(circuit, fragments, &unique_fragments(pairs))?, pairs, similarity)
}

/// Scores binarized inputs directly, with no model in between.
pub fn score_baseline(
    fragments: &[Vec<BinaryFrameVector>],
    pairs: &[Pair],
    similarity: SimilarityStrategy,
) -> Result<Vec<ScoredPair>, TrainingError> {
    let ids = unique_fragments(pairs);
    let desc: HashMap<usize, Vec<BinaryFrameVector>> = ids.iter().map(|&i| (i, fragments[i].clone())).collect();
    score_bits(&desc, pairs, similarity)
}

/// F1-maximizing threshold over `{0, 1}` and the midpoints between
/// consecutive distinct scores; ties go to the lowest threshold.
pub fn select_threshold(scores: &[ScoredPair]) -> Result<(f64, f64), TrainingError> {
    let n_pos = scores.iter().filter(|p| p.label).count();
    if n_pos == 0 || n_pos == scores.len() {
        return Err(TrainingError::Config("threshold selection needs both positive and negative pairs".into()));
    }
    let mut distinct: Vec<f64> = scores.iter().map(|p| p.score).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut candidates = vec![0.0, 1.0];
    candidates.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    // sweep candidates in ascending order against scores sorted ascending
    let mut sorted: Vec<&ScoredPair> = scores.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    let mut below = 0usize;
    let mut c = Confusion { tp: n_pos, fp: scores.len() - n_pos, tn: 0, fn_: 0 };
    let mut best = (candidates[0], -1.0);
    for &t in &candidates {
        while below < sorted.len() && sorted[below].score <= t {
            if sorted[below].label {
                c.tp -= 1;
                c.fn_ += 1;
            } else {
                c.fp -= 1;
                c.tn += 1;
            }
            below += 1;
        }
        let f1 = c.f1();
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    Ok(best)
}

/// Where a trial's reported numbers come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeResult {
    pub threshold: f64,
    pub val_f1: f64,
    pub test: MetricsReport,
}

fn evaluate_regime(val: &[ScoredPair], test: &[ScoredPair]) -> Result<RegimeResult, TrainingError> {
    let (threshold, val_f1) = select_threshold(val)?;
    Ok(RegimeResult { threshold, val_f1, test: full_report(test, threshold)? })
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: Seed,
    pub best_epoch: usize,
    pub losses: Vec<f64>,
    pub val_f1_history: Vec<f64>,
    pub layer: SoftGateLayer,
    pub circuit: DiscreteCircuit,
    pub hard: RegimeResult,
    pub soft: RegimeResult,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub micro_ap: f64,
}

impl MeanMetrics {
    pub fn of<'a>(reports: impl IntoIterator<Item = &'a MetricsReport>) -> Self {
        let mut m = MeanMetrics::default();
        let mut n = 0.0;
        for r in reports {
            m.accuracy += r.accuracy;
            m.precision += r.precision;
            m.recall += r.recall;
            m.f1 += r.f1;
            m.micro_ap += r.micro_ap.unwrap_or(0.0);
            n += 1.0;
        }
        if n > 0.0 {
            for v in [&mut m.accuracy, &mut m.precision, &mut m.recall, &mut m.f1, &mut m.micro_ap] {
                *v /= n;
            }
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub trials: Vec<TrialResult>,
    pub mean_hard: MeanMetrics,
    pub mean_soft: MeanMetrics,
}

/// Seed of trial `t` under a base seed.
pub fn trial_seed(base: Seed, trial: usize) -> Seed {
    base.child(STREAM_TRIAL, trial as u64)
}

/// Trains one layer for `max_epochs`, keeping the snapshot whose discretized
/// circuit scores the best validation F1 (latest on ties, epoch 0 is the
/// initialization), then thresholds on validation and reports test metrics.
pub fn run_trial(
    model: &LgnConfig,
    config: &TrainConfig,
    data: &TrainingData,
    trial: usize,
    mut on_epoch: impl FnMut(usize, f64, f64),
) -> Result<TrialResult, TrainingError> {
    let seed = trial_seed(config.seed, trial);
    let mut model = model.clone();
    model.seed = seed.child(STREAM_INIT, 0);
    model.input_dim = data.input_dim();
    let layer = SoftGateLayer::init(model)?;
    let trial_config = TrainConfig { seed, ..config.clone() };

    let val_hard_f1 = |layer: &SoftGateLayer| -> Result<f64, TrainingError> {
        let scores = score_hard(&discretize(layer), &data.fragments, &data.val, config.similarity)?;
        Ok(select_threshold(&scores)?.1)
    };

    let mut state = TrainState::new(layer);
    let mut best = (0usize, val_hard_f1(&state.layer)?, state.layer.clone());
    let mut losses = Vec::with_capacity(config.max_epochs);
    let mut history = vec![best.1];
    for _ in 0..config.max_epochs {
        let loss = train_epoch(&mut state, data, &trial_config)?;
        let f1 = val_hard_f1(&state.layer)?;
        losses.push(loss);
        history.push(f1);
        on_epoch(state.epoch, loss, f1);
        if f1 >= best.1 {
            best = (state.epoch, f1, state.layer.clone());
        }
    }

    let layer = best.2;
    let circuit = discretize(&layer);
    let hard = evaluate_regime(
        &score_hard(&circuit, &data.fragments, &data.val, config.similarity)?,
        &score_hard(&circuit, &data.fragments, &data.test, config.similarity)?,
    )?;
    let soft = evaluate_regime(
        &score_soft(&layer, &data.fragments, &data.val, config.similarity)?,
        &score_soft(&layer, &data.fragments, &data.test, config.similarity)?,
    )?;
    Ok(TrialResult {
        trial,
        seed,
        best_epoch: best.0,
        losses,
        val_f1_history: history,
        layer,
        circuit,
        hard,
        soft,
    })
}

/// Runs `n_trials` independent trials with derived seeds.
pub fn fit(
    model: &LgnConfig,
    config: &TrainConfig,
    data: &TrainingData,
    n_trials: usize,
    mut on_epoch: impl FnMut(usize, usize, f64, f64),
) -> Result<FitResult, TrainingError> {
    if n_trials == 0 {
        return Err(TrainingError::Config("at least one trial is required".into()));
    }
    let mut trials = Vec::with_capacity(n_trials);
    for t in 0..n_trials {
        trials.push(run_trial(model, config, data, t, |e, l, f| on_epoch(t, e, l, f))?);
    }
    Ok(FitResult {
        mean_hard: MeanMetrics::of(trials.iter().map(|t| &t.hard.test)),
        mean_soft: MeanMetrics::of(trials.iter().map(|t| &t.soft.test)),
        trials,
    })
}
