//! Acceptance checks, one line per criterion.
//!
//! Training-based criteria run a reduced number of epochs so the whole suite
//! stays within a test-run budget; set `LGN_ACCEPT_EPOCHS` to change it.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use lgn_vcd::circuit::{self, DiscreteCircuit, Gate, Operand, PackedBatch};
use lgn_vcd::connectome::Connectome;
use lgn_vcd::dataset::{self, Dataset, DatasetConfig, Split};
use lgn_vcd::experiment::{self, EvalModel, EvalRequest, ModelConfig, RunConfig};
use lgn_vcd::gates::{self, BoolOp, N_OPS};
use lgn_vcd::metrics::{full_report, micro_ap, MetricsReport, ScoredPair};
use lgn_vcd::network::{ConnectomeKind, LgnConfig, SoftGateLayer};
use lgn_vcd::pipeline::{FragmentEmbedding, PreprocessConfig, SimilarityStrategy, THRESHOLDS_4, THRESHOLDS_7};
use lgn_vcd::training::{self, FitResult, Pair, TrainConfig, TrainingData};
use lgn_vcd::Seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DEFAULT_EPOCHS: usize = 10;
const TRIALS: usize = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// ---------------------------------------------------------------------------
// 1. operator truth tables through the basis projection
// ---------------------------------------------------------------------------

fn c1_truth_tables() -> Outcome {
    let mut ok = 0;
    for op in BoolOp::ALL {
        let c = gates::project_coeffs(&gates::one_hot(op));
        for (a, b) in [(false, false), (false, true), (true, false), (true, true)] {
            let soft = gates::soft_gate_forward(&c, a as u8 as f64, b as u8 as f64);
            if soft == op.eval(a, b) as u8 as f64 {
                ok += 1;
            }
        }
    }
    outcome(ok == 64, format!("{ok}/64 assertions"))
}

// ---------------------------------------------------------------------------
// 2. finite-difference gradient checks
// ---------------------------------------------------------------------------

const FD_H: f64 = 1e-6;
const FD_TOL: f64 = 1e-5;

fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_H) - f(x - FD_H)) / (2.0 * FD_H)
}

#[derive(Default)]
struct FdTally {
    checks: usize,
    failures: usize,
    worst: f64,
}

impl FdTally {
    fn record(&mut self, analytic: f64, numeric: f64) {
        let err = (analytic - numeric).abs();
        self.checks += 1;
        self.worst = self.worst.max(err);
        if !(err <= FD_TOL) {
            self.failures += 1;
        }
    }
}

fn random_scores(rng: &mut ChaCha8Rng) -> [f64; N_OPS] {
    std::array::from_fn(|_| rng.random_range(-2.0..2.0))
}

fn c2_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tally = [FdTally::default(), FdTally::default(), FdTally::default(), FdTally::default(), FdTally::default()];

    // gate: inputs and raw scores
    for _ in 0..100 {
        let scores = random_scores(&mut rng);
        let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
        let p = gates::softmax16(&scores).unwrap();
        let c = gates::project_coeffs(&p);
        let g = gates::soft_gate_backward(&c, a, b, 1.0);
        tally[0].record(g.a, central(|v| gates::soft_gate_forward(&c, v, b), a));
        tally[0].record(g.b, central(|v| gates::soft_gate_forward(&c, a, v), b));
        let gs = gates::coeff_grad_to_scores(&p, &g.coeffs);
        for i in [rng.random_range(0..N_OPS), rng.random_range(0..N_OPS)] {
            let f = |v: f64| {
                let mut s = scores;
                s[i] = v;
                gates::soft_gate_from_scores(&s, a, b).unwrap()
            };
            tally[0].record(gs[i], central(f, scores[i]));
        }
    }

    // connectome: slot logits and selected inputs, both variants
    for round in 0..100 {
        let n_inputs = 20;
        let kind = if round % 2 == 0 { ConnectomeKind::TopK { k: 6 } } else { ConnectomeKind::Dense };
        let layer = SoftGateLayer::init(LgnConfig::new(3, kind, n_inputs, Seed(rng.random()))).unwrap();
        let mut conn = layer.connectome().clone();
        randomize_alpha(&mut conn, &mut rng);
        let x: Vec<f64> = (0..n_inputs).map(|_| rng.random()).collect();
        let (gate, slot) = (rng.random_range(0..3), rng.random_range(0..2));
        let grad = conn.select_input_backward(gate, slot, &x, 1.0);
        let j = rng.random_range(0..conn.fan());
        let idx = (gate * 2 + slot) * conn.fan() + j;
        let base = conn.alpha()[idx];
        let f = |v: f64| {
            let mut c = conn.clone();
            c.alpha_mut()[idx] = v;
            c.select_input_soft(gate, slot, &x)
        };
        tally[1].record(grad.alpha[j], central(f, base));
        // an input listed under several candidates collects every share
        let input = grad.x[rng.random_range(0..grad.x.len())].0;
        let total: f64 = grad.x.iter().filter(|(i, _)| *i == input).map(|(_, g)| g).sum();
        let f = |v: f64| {
            let mut xx = x.clone();
            xx[input] = v;
            conn.select_input_soft(gate, slot, &xx)
        };
        tally[1].record(total, central(f, x[input]));
    }

    // similarity strategies
    for round in 0..150 {
        let strategy = SimilarityStrategy::ALL[round % 3];
        let (frames, dim) = (rng.random_range(2..6), rng.random_range(3..10));
        let mut random_emb = || {
            FragmentEmbedding::new(frames, dim, (0..frames * dim).map(|_| rng.random_range(0.05..1.0)).collect()).unwrap()
        };
        let (e1, e2) = (random_emb(), random_emb());
        let (g1, g2) = strategy.backward(&e1, &e2, 1.0).unwrap();
        for (which, grad) in [(0, &g1), (1, &g2)] {
            let i = rng.random_range(0..frames * dim);
            let f = |v: f64| {
                let (mut a, mut b) = (e1.clone(), e2.clone());
                if which == 0 {
                    a.values[i] = v;
                } else {
                    b.values[i] = v;
                }
                strategy.score(&a, &b).unwrap()
            };
            let base = if which == 0 { e1.values[i] } else { e2.values[i] };
            tally[2].record(grad[i], central(f, base));
        }
    }

    // full layer backward against a random linear read-out
    for round in 0..40 {
        let kind = if round % 2 == 0 { ConnectomeKind::TopK { k: 8 } } else { ConnectomeKind::Dense };
        let n_inputs = 24;
        let mut layer = SoftGateLayer::init(LgnConfig::new(12, kind, n_inputs, Seed(rng.random()))).unwrap();
        {
            let (g, a) = layer.params_mut();
            g.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
            a.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
        }
        let x: Vec<f64> = (0..n_inputs).map(|_| rng.random()).collect();
        let r: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, cache) = layer.forward_soft(&x).unwrap();
        let grads = layer.backward(&cache, &r).unwrap();
        let readout = |l: &SoftGateLayer| -> f64 {
            l.forward_soft(&x).unwrap().0.values.iter().zip(&r).map(|(e, w)| e * w).sum()
        };
        for _ in 0..4 {
            let i = rng.random_range(0..grads.gate_logits.len());
            let base = layer.gate_logits()[i];
            let f = |v: f64| {
                let mut l = layer.clone();
                l.params_mut().0[i] = v;
                readout(&l)
            };
            tally[3].record(grads.gate_logits[i], central(f, base));
            let j = rng.random_range(0..grads.alpha.len());
            let base = layer.connectome().alpha()[j];
            let f = |v: f64| {
                let mut l = layer.clone();
                l.params_mut().1[j] = v;
                readout(&l)
            };
            tally[3].record(grads.alpha[j], central(f, base));
        }
    }

    // end-to-end batch loss through pooling and cross-entropy
    let mut frag = || -> Vec<lgn_vcd::pipeline::BinaryFrameVector> {
        (0..4)
            .map(|_| lgn_vcd::pipeline::BinaryFrameVector::from_bits(&(0..30).map(|_| rng.random_bool(0.5)).collect::<Vec<_>>()))
            .collect()
    };
    let fragments: Vec<_> = (0..6).map(|_| frag()).collect();
    let batch = vec![
        Pair { a: 0, b: 1, label: true },
        Pair { a: 2, b: 3, label: false },
        Pair { a: 4, b: 5, label: true },
        Pair { a: 1, b: 4, label: false },
    ];
    for strategy in SimilarityStrategy::ALL {
        let mut layer =
            SoftGateLayer::init(LgnConfig::new(10, ConnectomeKind::TopK { k: 5 }, 30, Seed(rng.random()))).unwrap();
        layer.params_mut().0.iter_mut().for_each(|v| *v = rng.random_range(-1.5..1.5));
        let (_, grads) = training::batch_gradient(&layer, &fragments, &batch, strategy).unwrap();
        let loss = |l: &SoftGateLayer| training::batch_gradient(l, &fragments, &batch, strategy).unwrap().0;
        for _ in 0..10 {
            let i = rng.random_range(0..grads.gate_logits.len());
            let base = layer.gate_logits()[i];
            let f = |v: f64| {
                let mut l = layer.clone();
                l.params_mut().0[i] = v;
                loss(&l)
            };
            tally[4].record(grads.gate_logits[i], central(f, base));
            let j = rng.random_range(0..grads.alpha.len());
            let base = layer.connectome().alpha()[j];
            let f = |v: f64| {
                let mut l = layer.clone();
                l.params_mut().1[j] = v;
                loss(&l)
            };
            tally[4].record(grads.alpha[j], central(f, base));
        }
    }

    let checks: usize = tally.iter().map(|t| t.checks).sum();
    let failures: usize = tally.iter().map(|t| t.failures).sum();
    let worst = tally.iter().map(|t| t.worst).fold(0.0, f64::max);
    let parts: Vec<String> = ["gate", "connectome", "similarity", "layer", "batch"]
        .iter()
        .zip(&tally)
        .map(|(n, t)| format!("{n} {}", t.checks))
        .collect();
    outcome(
        checks >= 1000 && failures == 0,
        format!("{checks} checks ({}), {failures} failures, max abs error {worst:.1e}", parts.join(", ")),
    )
}

fn randomize_alpha(conn: &mut Connectome, rng: &mut ChaCha8Rng) {
    conn.alpha_mut().iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
}

// ---------------------------------------------------------------------------
// 3. one-hot layers discretize exactly
// ---------------------------------------------------------------------------

fn one_hot_layer(rng: &mut ChaCha8Rng, n_gates: usize, n_inputs: usize, kind: ConnectomeKind) -> SoftGateLayer {
    let mut layer = SoftGateLayer::init(LgnConfig::new(n_gates, kind, n_inputs, Seed(rng.random()))).unwrap();
    let fan = layer.connectome().fan();
    let (g, a) = layer.params_mut();
    for gate in g.chunks_mut(N_OPS) {
        gate.fill(-400.0);
        gate[rng.random_range(0..N_OPS)] = 400.0;
    }
    for slot in a.chunks_mut(fan) {
        slot.fill(-400.0);
        slot[rng.random_range(0..fan)] = 400.0;
    }
    layer
}

fn agrees(layer: &SoftGateLayer, circuit: &DiscreteCircuit, bits: &[bool]) -> bool {
    let x: Vec<f64> = bits.iter().map(|&b| b as u8 as f64).collect();
    let soft = layer.forward_soft(&x).unwrap().0.values;
    let hard = circuit.eval_scalar(bits).unwrap();
    soft.iter().zip(&hard).all(|(s, &h)| *s == h as u8 as f64)
}

fn c3_discretization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for (n_inputs, kind) in [(12, ConnectomeKind::TopK { k: 4 }), (12, ConnectomeKind::Dense), (7, ConnectomeKind::TopK { k: 7 })] {
        let layer = one_hot_layer(&mut rng, 200, n_inputs, kind);
        let circuit = circuit::discretize(&layer);
        for x in 0..(1u32 << n_inputs) {
            let bits: Vec<bool> = (0..n_inputs).map(|i| x >> i & 1 == 1).collect();
            checked += 1;
            mismatches += !agrees(&layer, &circuit, &bits) as usize;
        }
    }
    let layer = one_hot_layer(&mut rng, 2000, 768, ConnectomeKind::TopK { k: 32 });
    let circuit = circuit::discretize(&layer);
    for _ in 0..10_000 {
        let bits: Vec<bool> = (0..768).map(|_| rng.random_bool(0.5)).collect();
        checked += 1;
        mismatches += !agrees(&layer, &circuit, &bits) as usize;
    }
    outcome(
        mismatches == 0,
        format!("{checked} inputs (exhaustive over 12 and 7 inputs, 10000 random over 768), {mismatches} mismatches"),
    )
}

// ---------------------------------------------------------------------------
// 4. bit-sliced evaluation matches scalar evaluation
// ---------------------------------------------------------------------------

fn random_circuit(rng: &mut ChaCha8Rng, n_inputs: usize, n_gates: usize, deep: bool) -> DiscreteCircuit {
    let gates = (0..n_gates)
        .map(|k| {
            let operand = |rng: &mut ChaCha8Rng| {
                if deep && k > 0 && rng.random_bool(0.5) {
                    Operand::Gate(rng.random_range(0..k) as u32)
                } else {
                    Operand::Input(rng.random_range(0..n_inputs) as u32)
                }
            };
            Gate { op: BoolOp::ALL[rng.random_range(0..N_OPS)], a: operand(rng), b: operand(rng) }
        })
        .collect();
    DiscreteCircuit::new(n_inputs, gates).unwrap()
}

fn c4_bit_sliced() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut lanes_checked, mut mismatched, mut largest) = (0usize, 0usize, 0usize);
    for i in 0..100 {
        let n_gates = if i % 10 == 0 { 8000 } else { rng.random_range(1..=8000) };
        let n_inputs = rng.random_range(1..=800);
        let circuit = random_circuit(&mut rng, n_inputs, n_gates, i % 2 == 1);
        largest = largest.max(n_gates);
        let lanes = rng.random_range(1..=64);
        let samples: Vec<Vec<bool>> = (0..lanes).map(|_| (0..n_inputs).map(|_| rng.random_bool(0.5)).collect()).collect();
        let packed = circuit.eval_packed(&PackedBatch::pack(&samples).unwrap()).unwrap().unpack();
        for (lane, sample) in samples.iter().enumerate() {
            lanes_checked += 1;
            mismatched += (packed[lane] != circuit.eval_scalar(sample).unwrap()) as usize;
        }
    }
    outcome(
        mismatched == 0,
        format!("100 circuits up to {largest} gates, {lanes_checked} lanes, {mismatched} mismatched"),
    )
}

// ---------------------------------------------------------------------------
// 5. micro AP against brute force
// ---------------------------------------------------------------------------

/// Average precision with each positive's rank counted directly: higher
/// scores, tied negatives, and tied positives listed earlier are ahead of it.
fn ap_brute(pairs: &[ScoredPair]) -> f64 {
    let n_pos = pairs.iter().filter(|p| p.label).count();
    let mut total = 0.0;
    for (idx, p) in pairs.iter().enumerate().filter(|(_, p)| p.label) {
        let ahead: Vec<&ScoredPair> = pairs
            .iter()
            .enumerate()
            .filter(|(j, q)| {
                q.score > p.score
                    || (q.score == p.score && !q.label)
                    || (q.score == p.score && q.label && *j < idx)
            })
            .map(|(_, q)| q)
            .collect();
        let hits = ahead.iter().filter(|q| q.label).count() + 1;
        total += hits as f64 / (ahead.len() + 1) as f64;
    }
    total / n_pos as f64
}

fn c5_micro_ap() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bad = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=12);
        let mut pairs: Vec<ScoredPair> = (0..n)
            .map(|_| ScoredPair { score: rng.random_range(0..6) as f64 / 5.0, label: rng.random_bool(0.5) })
            .collect();
        if !pairs.iter().any(|p| p.label) {
            pairs[0].label = true;
        }
        if (micro_ap(&pairs).unwrap() - ap_brute(&pairs)).abs() > 1e-12 {
            bad += 1;
        }
    }
    let hand = [(0.9, true), (0.8, false), (0.7, true)].map(|(score, label)| ScoredPair { score, label });
    let ap = micro_ap(&hand).unwrap();
    let hand_ok = (ap - 0.833333).abs() <= 1e-6 && (ap - 5.0 / 6.0).abs() <= 1e-9;
    outcome(bad == 0 && hand_ok, format!("10000 instances, {bad} mismatches; hand case {ap:.9}"))
}

// ---------------------------------------------------------------------------
// 6 and 7. sizes
// ---------------------------------------------------------------------------

fn c6_input_dims() -> Outcome {
    let big = PreprocessConfig::new(32, &THRESHOLDS_7).unwrap().input_dim();
    let small = PreprocessConfig::new(8, &THRESHOLDS_4).unwrap().input_dim();
    outcome(big == 21_504 && small == 768, format!("32x32x3x7 = {big}, 8x8x3x4 = {small}"))
}

fn c7_descriptor_size() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut parts = Vec::new();
    let mut pass = true;
    for (gates, kind, expected) in [(2000, ConnectomeKind::TopK { k: 32 }, 250), (4000, ConnectomeKind::Dense, 500)] {
        let layer = SoftGateLayer::init(LgnConfig::new(gates, kind, 768, Seed(rng.random()))).unwrap();
        let c = circuit::discretize(&layer);
        let frame = lgn_vcd::pipeline::BinaryFrameVector::from_bits(&(0..768).map(|_| rng.random_bool(0.5)).collect::<Vec<_>>());
        let desc = &c.encode_frames(&[frame]).unwrap()[0];
        let bytes = desc.len().div_ceil(8);
        pass &= c.descriptor_bytes() == expected && bytes == expected;
        parts.push(format!("{}-{gates}: {bytes} bytes", kind.label()));
    }
    outcome(pass, parts.join(", "))
}

// ---------------------------------------------------------------------------
// 8 to 11. desk-scale experiments
// ---------------------------------------------------------------------------

struct FoldData {
    dataset: Dataset,
    data: TrainingData,
}

fn load_fold(fold: u8) -> FoldData {
    let config = DatasetConfig { fold, ..DatasetConfig::default() };
    let dataset = dataset::generate(&config).expect("dataset generation");
    let data = experiment::training_data(&dataset, &PreprocessConfig::default()).expect("binarization");
    FoldData { dataset, data }
}

fn train_fold(data: &TrainingData, similarity: SimilarityStrategy, epochs: usize, tag: &str) -> FitResult {
    let model = ModelConfig::default().to_lgn(data.input_dim());
    let config = TrainConfig { max_epochs: epochs, similarity, ..TrainConfig::default() };
    let start = Instant::now();
    let fit = training::fit(&model, &config, data, TRIALS, |_, _, _, _| {}).expect("training");
    for t in &fit.trials {
        eprintln!(
            "  [{tag}] trial {} best_epoch {} hard f1 {:.3} uap {:.3} | soft f1 {:.3} uap {:.3}",
            t.trial,
            t.best_epoch,
            t.hard.test.f1,
            t.hard.test.micro_ap.unwrap_or(f64::NAN),
            t.soft.test.f1,
            t.soft.test.micro_ap.unwrap_or(f64::NAN)
        );
    }
    eprintln!("  [{tag}] {:.0} s", start.elapsed().as_secs_f64());
    fit
}

fn baseline(data: &TrainingData) -> MetricsReport {
    let sim = SimilarityStrategy::FramePairMax;
    let val = training::score_baseline(&data.fragments, &data.val, sim).unwrap();
    let (threshold, _) = training::select_threshold(&val).unwrap();
    full_report(&training::score_baseline(&data.fragments, &data.test, sim).unwrap(), threshold).unwrap()
}

fn c8_training(fit: &FitResult, epochs: usize) -> Outcome {
    let (f1, ap) = (fit.mean_hard.f1, fit.mean_hard.micro_ap);
    outcome(
        f1 >= 0.90 && ap >= 0.95,
        format!(
            "fold 1, Top32-2000, {epochs} epochs x {TRIALS} trials, discretized: F1 {f1:.3} (need 0.90), uAP {ap:.3} (need 0.95); soft F1 {:.3} uAP {:.3}",
            fit.mean_soft.f1, fit.mean_soft.micro_ap
        ),
    )
}

fn c9_ordering(fpm: &FitResult, avg: &FitResult, concat: &FitResult) -> Outcome {
    let (a, b, c) = (fpm.mean_hard.f1, avg.mean_hard.f1, concat.mean_hard.f1);
    outcome(a >= b && b >= c, format!("mean F1 framepair-max {a:.3}, average-pool {b:.3}, concat {c:.3}"))
}

fn c10_ablation(results: &[(u8, &FitResult, MetricsReport)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (fold, fit, base) in results {
        let base_ap = base.micro_ap.unwrap();
        let (f1, ap) = (fit.mean_hard.f1, fit.mean_hard.micro_ap);
        pass &= f1 > base.f1 && ap > base_ap;
        parts.push(format!("fold {fold}: LGN F1 {f1:.3} uAP {ap:.3} vs baseline F1 {:.3} uAP {base_ap:.3}", base.f1));
    }
    outcome(pass, parts.join("; "))
}

fn c11_throughput(fold: &FoldData, circuit: &DiscreteCircuit) -> Outcome {
    let pre = PreprocessConfig::default();
    let thumbs = fold.dataset.thumbnails(pre.frame_size).unwrap();
    let test = fold.dataset.pairs(Split::Test);
    let pairs: Vec<_> = (0..4096)
        .map(|i| {
            let p = test[i % test.len()];
            (thumbs[p.a as usize].clone(), thumbs[p.b as usize].clone())
        })
        .collect();
    let b = circuit::benchmark(circuit, &pre, &pairs, 5).unwrap();
    outcome(
        b.sps_mean >= 10_000.0,
        format!(
            "{:.1} +- {:.1} pair-samples/s over 5 runs, {} gates, {} byte descriptors, {} thread(s) (need 10000)",
            b.sps_mean, b.sps_std, b.gates, b.desc_bytes, b.threads
        ),
    )
}

// ---------------------------------------------------------------------------
// 12. determinism
// ---------------------------------------------------------------------------

fn run_once(root: &Path) -> Vec<(String, Vec<u8>)> {
    let data = root.join("data");
    let run = root.join("run");
    let mut dataset = DatasetConfig { seed: Seed(12), n_sources: 24, pairs_per_class: 96, ..DatasetConfig::default() };
    dataset.fold = 5;
    experiment::gen_data(&dataset, &data).unwrap();
    let config = RunConfig {
        trials: 2,
        dataset,
        model: ModelConfig { n_gates: 500, ..ModelConfig::default() },
        train: TrainConfig { max_epochs: 2, seed: Seed(12), ..TrainConfig::default() },
        ..RunConfig::default()
    };
    experiment::train_run(&config, &data, &run, |_, _, _, _| {}).unwrap();
    let eval = experiment::eval_run(&EvalRequest {
        model: EvalModel::Checkpoint(run.join("trial_1/layer.ckpt")),
        data_dir: data.clone(),
        preprocess: config.preprocess.clone(),
        similarity: config.train.similarity,
        split: Split::Test,
        threshold: None,
    })
    .unwrap();
    let mut files = vec![("eval report".to_string(), eval.to_string().into_bytes())];
    for f in ["data/manifest.json", "run/report.txt", "run/config.toml", "run/trial_0/layer.ckpt", "run/trial_1/layer.ckpt", "run/trial_0/circuit.lgnnet", "run/trial_1/circuit.lgnnet"] {
        files.push((f.to_string(), fs::read(root.join(f)).unwrap()));
    }
    files
}

fn c12_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (fa, fb) = (run_once(a.path()), run_once(b.path()));
    let differing: Vec<&str> = fa.iter().zip(&fb).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts byte-identical (manifest, reports, checkpoints, netlists)", fa.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

// ---------------------------------------------------------------------------

/// Runs one criterion; `budget` is a wall-clock limit in seconds that is part
/// of the criterion.
fn report(id: u8, name: &str, budget: Option<f64>, f: impl FnOnce() -> Outcome, failures: &mut usize) {
    let start = Instant::now();
    let mut o = f();
    let secs = start.elapsed().as_secs_f64();
    if let Some(limit) = budget.filter(|&l| secs >= l) {
        o.pass = false;
        o.detail.push_str(&format!(" (over the {limit} s limit)"));
    }
    if !o.pass {
        *failures += 1;
    }
    println!(
        "criterion {id:>2} {} {name}: {} [{:.1} s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        secs
    );
}

fn main() -> ExitCode {
    let epochs = std::env::var("LGN_ACCEPT_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(DEFAULT_EPOCHS);
    let mut failures = 0;
    report(1, "operator truth tables", Some(1.0), c1_truth_tables, &mut failures);
    report(2, "gradient checks", Some(60.0), c2_gradients, &mut failures);
    report(3, "soft/hard equivalence", None, c3_discretization, &mut failures);
    report(4, "bit-sliced evaluation", Some(60.0), c4_bit_sliced, &mut failures);
    report(5, "micro AP oracle", None, c5_micro_ap, &mut failures);
    report(6, "input dimension", None, c6_input_dims, &mut failures);
    report(7, "descriptor size", None, c7_descriptor_size, &mut failures);

    let start = Instant::now();
    eprintln!("generating folds 1 and 5, training {TRIALS} trials x {epochs} epochs per setting");
    let fold1 = load_fold(1);
    let fold5 = load_fold(5);
    let fpm = train_fold(&fold1.data, SimilarityStrategy::FramePairMax, epochs, "fold 1 framepair-max");
    let avg = train_fold(&fold1.data, SimilarityStrategy::AveragePool, epochs, "fold 1 average-pool");
    let concat = train_fold(&fold1.data, SimilarityStrategy::Concat, epochs, "fold 1 concat");
    let fpm5 = train_fold(&fold5.data, SimilarityStrategy::FramePairMax, epochs, "fold 5 framepair-max");
    let setup = start.elapsed().as_secs_f64();
    eprintln!("experiments took {setup:.0} s");

    report(8, "desk-scale training", None, || c8_training(&fpm, epochs), &mut failures);
    report(9, "strategy ordering", None, || c9_ordering(&fpm, &avg, &concat), &mut failures);
    let ablation = [(1u8, &fpm, baseline(&fold1.data)), (5u8, &fpm5, baseline(&fold5.data))];
    report(10, "ablation direction", None, || c10_ablation(&ablation), &mut failures);
    report(11, "throughput", None, || c11_throughput(&fold1, &fpm.trials[0].circuit), &mut failures);
    report(12, "determinism", None, c12_determinism, &mut failures);

    println!("acceptance: {} of 12 criteria passed", 12 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
