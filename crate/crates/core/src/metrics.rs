//! Pair-level classification metrics and micro average precision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("micro AP is undefined without positive pairs")]
    NoPositives,
    #[error("no scored pairs")]
    Empty,
    #[error("score {0} is not a finite value in [0, 1]")]
    BadScore(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub score: f64,
    pub label: bool,
}

impl ScoredPair {
    pub fn new(score: f64, label: bool) -> Result<Self, MetricsError> {
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(MetricsError::BadScore(score));
        }
        Ok(Self { score, label })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    /// Counts with the prediction rule `score > threshold`.
    pub fn at(pairs: &[ScoredPair], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for p in pairs {
            match (p.score > threshold, p.label) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub micro_ap: Option<f64>,
    pub threshold: f64,
    pub counts: Confusion,
}

impl MetricsReport {
    pub fn with_micro_ap(mut self, pairs: &[ScoredPair]) -> Result<Self, MetricsError> {
        self.micro_ap = Some(micro_ap(pairs)?);
        Ok(self)
    }
}

pub fn classify_metrics(pairs: &[ScoredPair], threshold: f64) -> MetricsReport {
    let counts = Confusion::at(pairs, threshold);
    MetricsReport {
        accuracy: counts.accuracy(),
        precision: counts.precision(),
        recall: counts.recall(),
        f1: counts.f1(),
        micro_ap: None,
        threshold,
        counts,
    }
}

/// Classification metrics at `threshold` plus micro AP over the same pairs.
pub fn full_report(pairs: &[ScoredPair], threshold: f64) -> Result<MetricsReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    classify_metrics(pairs, threshold).with_micro_ap(pairs)
}

/// Average precision over the pooled ranking. Within a group of equal scores
/// negatives are ranked ahead of positives.
pub fn micro_ap(pairs: &[ScoredPair]) -> Result<f64, MetricsError> {
    let n_pos = pairs.iter().filter(|p| p.label).count();
    if n_pos == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut ranked: Vec<&ScoredPair> = pairs.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.label.cmp(&b.label)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, p) in ranked.iter().enumerate() {
        if p.label {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairs(v: &[(f64, u8)]) -> Vec<ScoredPair> {
        v.iter().map(|&(s, l)| ScoredPair::new(s, l == 1).unwrap()).collect()
    }

    /// Per-positive counting without sorting: a positive's pessimistic rank
    /// is everything strictly above it, every tied negative, and the tied
    /// positives placed before it.
    fn ap_oracle(p: &[ScoredPair]) -> f64 {
        let pos: Vec<&ScoredPair> = p.iter().filter(|x| x.label).collect();
        let mut total = 0.0;
        for (idx, x) in pos.iter().enumerate() {
            let above = p.iter().filter(|y| y.score > x.score).count();
            let pos_above = p.iter().filter(|y| y.label && y.score > x.score).count();
            let tied_neg = p.iter().filter(|y| !y.label && y.score == x.score).count();
            let tied_before = pos[..idx].iter().filter(|y| y.score == x.score).count();
            let rank = above + tied_neg + tied_before + 1;
            total += (pos_above + tied_before + 1) as f64 / rank as f64;
        }
        total / pos.len() as f64
    }

    #[test]
    fn classification_examples() {
        let r = classify_metrics(&pairs(&[(1.0, 1), (1.0, 1), (0.0, 0)]), 0.5);
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));

        let r = classify_metrics(&pairs(&[(0.2, 1), (0.1, 0), (0.3, 0)]), 0.9);
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);

        let r = classify_metrics(&pairs(&[(0.9, 1), (0.8, 0), (0.7, 1), (0.2, 0)]), 0.75);
        assert_eq!(r.counts, Confusion { tp: 1, fp: 1, tn: 1, fn_: 1 });
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (0.5, 0.5, 0.5, 0.5));

        // strict rule
        let r = classify_metrics(&pairs(&[(0.5, 1)]), 0.5);
        assert_eq!(r.counts.fn_, 1);
    }

    #[test]
    fn micro_ap_examples() {
        assert_eq!(micro_ap(&pairs(&[(0.9, 1), (0.8, 1), (0.3, 0), (0.1, 0)])).unwrap(), 1.0);
        let ap = micro_ap(&pairs(&[(0.9, 1), (0.8, 0), (0.7, 1)])).unwrap();
        assert!((ap - 0.833333).abs() < 1e-6);
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(micro_ap(&pairs(&[(0.4, 0)])).unwrap_err(), MetricsError::NoPositives);
        // tie: the negative goes first
        assert_eq!(micro_ap(&pairs(&[(0.5, 1), (0.5, 0)])).unwrap(), 0.5);
    }

    #[test]
    fn constant_scores_lower_bound_prevalence() {
        let p = pairs(&[(0.5, 1), (0.5, 0), (0.5, 1), (0.5, 0), (0.5, 1)]);
        let ap = micro_ap(&p).unwrap();
        assert!((ap - ap_oracle(&p)).abs() < 1e-12);
        assert!(ap <= 3.0 / 5.0);
    }

    #[test]
    fn bad_scores_are_rejected() {
        assert!(ScoredPair::new(1.5, true).is_err());
        assert!(ScoredPair::new(f64::NAN, true).is_err());
    }

    #[test]
    fn random_small_instances_match_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let n = rng.random_range(1..=12);
            // coarse scores so ties are common
            let mut p: Vec<ScoredPair> = (0..n)
                .map(|_| ScoredPair { score: rng.random_range(0..5) as f64 / 4.0, label: rng.random_bool(0.5) })
                .collect();
            if !p.iter().any(|x| x.label) {
                p[0].label = true;
            }
            assert!((micro_ap(&p).unwrap() - ap_oracle(&p)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn micro_ap_is_invariant_under_monotone_maps(
            raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 1..20)
        ) {
            let mut p: Vec<ScoredPair> = raw.iter().map(|&(s, l)| ScoredPair { score: s, label: l }).collect();
            p[0].label = true;
            let q: Vec<ScoredPair> = p.iter().map(|x| ScoredPair { score: x.score.powi(3) * 0.5 + 0.1, label: x.label }).collect();
            prop_assert!((micro_ap(&p).unwrap() - micro_ap(&q).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn micro_ap_is_one_iff_separated(
            raw in proptest::collection::vec((0u8..6, any::<bool>()), 1..12)
        ) {
            let mut p: Vec<ScoredPair> = raw.iter().map(|&(s, l)| ScoredPair { score: s as f64 / 5.0, label: l }).collect();
            p[0].label = true;
            let min_pos = p.iter().filter(|x| x.label).map(|x| x.score).fold(f64::INFINITY, f64::min);
            let max_neg = p.iter().filter(|x| !x.label).map(|x| x.score).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(micro_ap(&p).unwrap() == 1.0, min_pos > max_neg);
        }

        #[test]
        fn confusion_counts_cover_every_pair(
            raw in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..30),
            t in 0.0f64..=1.0,
        ) {
            let p: Vec<ScoredPair> = raw.iter().map(|&(s, l)| ScoredPair { score: s, label: l }).collect();
            let r = classify_metrics(&p, t);
            prop_assert_eq!(r.counts.total(), p.len());
            let c = r.counts;
            prop_assert!((r.accuracy - (c.tp + c.tn) as f64 / p.len() as f64).abs() < 1e-15);
        }
    }
}
