//! Learnable wiring between the input vector and the two operand slots of
//! every gate.
//!
//! Both variants store one logit per (gate, slot, candidate). The dense
//! variant treats every input as a candidate; the Top-K variant fixes `k`
//! candidates per slot at initialization and learns only over those.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gates::softmax_in_place;
use crate::seed::Seed;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConnectomeError {
    #[error("top-k fan-in {k} exceeds input dimension {n_inputs}")]
    FanInTooLarge { k: usize, n_inputs: usize },
    #[error("top-k fan-in must be at least 2, got {0}")]
    FanInTooSmall(usize),
    #[error("connectome needs at least one gate and one input")]
    Empty,
}

/// Which of the two operand slots of a gate.
pub type Slot = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseConnectome {
    pub(crate) n_gates: usize,
    pub(crate) n_inputs: usize,
    /// `(gate * 2 + slot) * n_inputs + input`
    pub(crate) alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKConnectome {
    pub(crate) n_gates: usize,
    pub(crate) n_inputs: usize,
    pub(crate) k: usize,
    /// `(gate * 2 + slot) * k + j`
    pub(crate) candidates: Vec<u32>,
    pub(crate) alpha: Vec<f64>,
}

impl DenseConnectome {
    pub fn new(n_gates: usize, n_inputs: usize) -> Result<Self, ConnectomeError> {
        if n_gates == 0 || n_inputs == 0 {
            return Err(ConnectomeError::Empty);
        }
        Ok(Self { n_gates, n_inputs, alpha: vec![0.0; 2 * n_gates * n_inputs] })
    }

    /// Unit-normal logits. With every input a candidate of every slot, a
    /// uniform start would leave all gates identical under gradient descent.
    pub fn init(seed: Seed, n_gates: usize, n_inputs: usize) -> Result<Self, ConnectomeError> {
        let mut conn = Self::new(n_gates, n_inputs)?;
        let mut rng = seed.rng();
        conn.alpha.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        Ok(conn)
    }
}

impl TopKConnectome {
    /// Samples `k` distinct candidates per slot, uniformly without replacement
    /// and independently for each slot. Logits start at zero.
    pub fn init(seed: Seed, n_gates: usize, n_inputs: usize, k: usize) -> Result<Self, ConnectomeError> {
        if n_gates == 0 || n_inputs == 0 {
            return Err(ConnectomeError::Empty);
        }
        if k > n_inputs {
            return Err(ConnectomeError::FanInTooLarge { k, n_inputs });
        }
        if k < 2 {
            return Err(ConnectomeError::FanInTooSmall(k));
        }
        let mut rng = seed.rng();
        let mut candidates = Vec::with_capacity(2 * n_gates * k);
        for _ in 0..2 * n_gates {
            candidates.extend(index::sample(&mut rng, n_inputs, k).into_iter().map(|i| i as u32));
        }
        Ok(Self { n_gates, n_inputs, k, candidates, alpha: vec![0.0; 2 * n_gates * k] })
    }

    /// Builds a connectome from explicit candidate lists, validating them.
    pub fn from_parts(
        n_gates: usize,
        n_inputs: usize,
        k: usize,
        candidates: Vec<u32>,
        alpha: Vec<f64>,
    ) -> Result<Self, ConnectomeError> {
        if n_gates == 0 || n_inputs == 0 {
            return Err(ConnectomeError::Empty);
        }
        if k < 2 {
            return Err(ConnectomeError::FanInTooSmall(k));
        }
        if k > n_inputs {
            return Err(ConnectomeError::FanInTooLarge { k, n_inputs });
        }
        assert_eq!(candidates.len(), 2 * n_gates * k, "candidate table size");
        assert_eq!(alpha.len(), 2 * n_gates * k, "logit table size");
        Ok(Self { n_gates, n_inputs, k, candidates, alpha })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn slot_candidates(&self, gate: usize, slot: Slot) -> &[u32] {
        let base = (gate * 2 + slot) * self.k;
        &self.candidates[base..base + self.k]
    }

    pub fn candidates(&self) -> &[u32] {
        &self.candidates
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Connectome {
    Dense(DenseConnectome),
    TopK(TopKConnectome),
}

/// Gradient of one soft input selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotGrad {
    /// One entry per candidate, in candidate order.
    pub alpha: Vec<f64>,
    /// Sparse `(input index, gradient)` contributions.
    pub x: Vec<(usize, f64)>,
}

impl Connectome {
    pub fn n_gates(&self) -> usize {
        match self {
            Connectome::Dense(d) => d.n_gates,
            Connectome::TopK(t) => t.n_gates,
        }
    }

    pub fn n_inputs(&self) -> usize {
        match self {
            Connectome::Dense(d) => d.n_inputs,
            Connectome::TopK(t) => t.n_inputs,
        }
    }

    /// Candidates per slot: `k`, or the whole input for the dense variant.
    pub fn fan(&self) -> usize {
        match self {
            Connectome::Dense(d) => d.n_inputs,
            Connectome::TopK(t) => t.k,
        }
    }

    pub fn alpha(&self) -> &[f64] {
        match self {
            Connectome::Dense(d) => &d.alpha,
            Connectome::TopK(t) => &t.alpha,
        }
    }

    pub fn alpha_mut(&mut self) -> &mut [f64] {
        match self {
            Connectome::Dense(d) => &mut d.alpha,
            Connectome::TopK(t) => &mut t.alpha,
        }
    }

    pub fn slot_alpha(&self, gate: usize, slot: Slot) -> &[f64] {
        let fan = self.fan();
        let base = (gate * 2 + slot) * fan;
        &self.alpha()[base..base + fan]
    }

    #[inline]
    pub fn candidate(&self, gate: usize, slot: Slot, j: usize) -> usize {
        match self {
            Connectome::Dense(_) => j,
            Connectome::TopK(t) => t.candidates[(gate * 2 + slot) * t.k + j] as usize,
        }
    }

    /// Softmax of every slot, laid out like [`Connectome::alpha`].
    pub fn slot_probabilities(&self) -> Vec<f64> {
        let mut probs = self.alpha().to_vec();
        for chunk in probs.chunks_mut(self.fan()) {
            softmax_in_place(chunk);
        }
        probs
    }

    fn slot_softmax(&self, gate: usize, slot: Slot) -> Vec<f64> {
        let mut p = self.slot_alpha(gate, slot).to_vec();
        softmax_in_place(&mut p);
        p
    }

    /// `Σ_j softmax(alpha)_j · x[candidate_j]`.
    pub fn select_input_soft(&self, gate: usize, slot: Slot, x: &[f64]) -> f64 {
        let p = self.slot_softmax(gate, slot);
        p.iter()
            .enumerate()
            .map(|(j, pj)| pj * x[self.candidate(gate, slot, j)])
            .sum()
    }

    pub fn select_input_backward(&self, gate: usize, slot: Slot, x: &[f64], upstream: f64) -> SlotGrad {
        let p = self.slot_softmax(gate, slot);
        let values: Vec<f64> = (0..p.len()).map(|j| x[self.candidate(gate, slot, j)]).collect();
        let out: f64 = p.iter().zip(&values).map(|(pj, v)| pj * v).sum();
        let alpha = p
            .iter()
            .zip(&values)
            .map(|(pj, v)| upstream * pj * (v - out))
            .collect();
        let x = p
            .iter()
            .enumerate()
            .map(|(j, pj)| (self.candidate(gate, slot, j), upstream * pj))
            .collect();
        SlotGrad { alpha, x }
    }

    /// Mode of every slot distribution. Ties resolve to the lowest input index.
    pub fn discretize_connections(&self) -> Vec<[u32; 2]> {
        (0..self.n_gates())
            .map(|g| [self.slot_mode(g, 0) as u32, self.slot_mode(g, 1) as u32])
            .collect()
    }

    fn slot_mode(&self, gate: usize, slot: Slot) -> usize {
        let alpha = self.slot_alpha(gate, slot);
        let mut best_j = 0;
        for j in 1..alpha.len() {
            let better = alpha[j] > alpha[best_j]
                || (alpha[j] == alpha[best_j]
                    && self.candidate(gate, slot, j) < self.candidate(gate, slot, best_j));
            if better {
                best_j = j;
            }
        }
        self.candidate(gate, slot, best_j)
    }

    /// Trainable logits (Top-K candidate indices are not counted).
    pub fn n_logits(&self) -> usize {
        self.alpha().len()
    }
}
