//! Base anomaly detector: a 2-layer GCN encoder, a two-linear-layer score
//! head squashed to [0, 1], deviation loss against a Gaussian reference
//! prior, and plain gradient-descent training over balanced batches.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::prelude::*;
use thiserror::Error;

use crate::autodiff::{self, ParamStore, Tape, Var};
use crate::graph::Csr;
use crate::labels::{split_classes, NodeLabels};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("balanced batch needs both classes ({0} anomalies, {1} normals)")]
    EmptyClass(usize, usize),
    #[error("degenerate reference prior (zero std)")]
    DegeneratePrior,
    #[error("training diverged: non-finite loss at step {0}")]
    Diverged(usize),
    #[error(transparent)]
    Kernel(#[from] crate::autodiff::KernelError),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DetectorConfig {
    pub hidden: usize,
    pub head_hidden: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Must be even: half anomalies, half normals.
    pub batch_size: usize,
    pub margin: f64,
    pub prior_samples: usize,
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            head_hidden: 64,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            batch_size: 16,
            margin: 5.0,
            prior_samples: 5000,
            pretrain_steps: 150,
            finetune_steps: 30,
        }
    }
}

/// Per-node anomaly scores in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| rng.random_range(-s..s)).collect()
}

/// Weights for the GCN encoder and score head. Biases start at zero.
pub fn init_detector_params<R: Rng>(d: usize, cfg: &DetectorConfig, rng: &mut R) -> ParamStore {
    let (h, hh) = (cfg.hidden, cfg.head_hidden);
    let mut p = ParamStore::new();
    p.insert("gcn.w0", d, h, glorot(d, h, rng));
    p.insert("gcn.w1", h, h, glorot(h, h, rng));
    p.insert("head.w1", h, hh, glorot(h, hh, rng));
    p.insert("head.b1", 1, hh, vec![0.0; hh]);
    p.insert("head.w2", hh, 1, glorot(hh, 1, rng));
    p.insert("head.b2", 1, 1, vec![0.0]);
    p
}

/// Tape forward of the encoder: `H = relu(A relu(A X W0) W1)`.
pub fn embed_var(
    tape: &mut Tape,
    adj: &Arc<Csr>,
    x: Var,
    vars: &BTreeMap<String, Var>,
) -> Var {
    let xw = tape.matmul(x, vars["gcn.w0"]);
    let a1 = tape.spmm(Arc::clone(adj), xw);
    let h1 = tape.relu(a1);
    let hw = tape.matmul(h1, vars["gcn.w1"]);
    let a2 = tape.spmm(Arc::clone(adj), hw);
    tape.relu(a2)
}

/// Tape forward of the score head on embeddings:
/// `s = sigmoid(W2 relu(W1 h + b1) + b2)` per node.
pub fn score_var(tape: &mut Tape, h: Var, vars: &BTreeMap<String, Var>) -> Var {
    let z = tape.matmul(h, vars["head.w1"]);
    let z = tape.add_bias(z, vars["head.b1"]);
    let z = tape.relu(z);
    let s = tape.matmul(z, vars["head.w2"]);
    let s = tape.add_bias(s, vars["head.b2"]);
    tape.sigmoid(s)
}

fn const_vars(tape: &mut Tape, params: &ParamStore) -> BTreeMap<String, Var> {
    params
        .iter()
        .map(|(n, p)| (n.clone(), tape.leaf(p.rows, p.cols, p.data.clone(), false)))
        .collect()
}

/// Node embeddings `H` (row-major n x hidden) under fixed parameters.
pub fn embed(adj: &Arc<Csr>, x: &[f64], d: usize, params: &ParamStore) -> Vec<f64> {
    let n = adj.n;
    let mut tape = Tape::new();
    let vars = const_vars(&mut tape, params);
    let xv = tape.leaf(n, d, x.to_vec(), false);
    let h = embed_var(&mut tape, adj, xv, &vars);
    tape.value(h).to_vec()
}

/// Anomaly scores for every node under fixed parameters. Deterministic:
/// re-scoring the same inputs is bitwise identical.
pub fn score(adj: &Arc<Csr>, x: &[f64], d: usize, params: &ParamStore) -> ScoreVector {
    let n = adj.n;
    let mut tape = Tape::new();
    let vars = const_vars(&mut tape, params);
    let xv = tape.leaf(n, d, x.to_vec(), false);
    let h = embed_var(&mut tape, adj, xv, &vars);
    let s = score_var(&mut tape, h, &vars);
    ScoreVector {
        scores: tape.value(s).to_vec(),
    }
}

/// Mean and std of `prior_samples` standard-normal draws (Box-Muller).
pub fn reference_prior<R: Rng>(samples: usize, rng: &mut R) -> Result<(f64, f64), DetectorError> {
    assert!(samples >= 2);
    let mut draws = Vec::with_capacity(samples);
    while draws.len() < samples {
        let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        draws.push(r * (2.0 * PI * u2).cos());
        if draws.len() < samples {
            draws.push(r * (2.0 * PI * u2).sin());
        }
    }
    let mu = draws.iter().sum::<f64>() / samples as f64;
    let var = draws.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / samples as f64;
    if var == 0.0 {
        return Err(DetectorError::DegeneratePrior);
    }
    Ok((mu, var.sqrt()))
}

/// Deviation loss on a batch: with `dev = (s - mu) / sigma`,
/// `(1 - y) |dev| + y max(0, margin - dev)`, averaged.
pub fn deviation_loss(
    batch_scores: &[f64],
    batch_labels: &[f64],
    mu: f64,
    sigma: f64,
    margin: f64,
) -> Result<f64, DetectorError> {
    if sigma == 0.0 {
        return Err(DetectorError::DegeneratePrior);
    }
    assert!(!batch_scores.is_empty());
    let mut total = 0.0;
    for (&s, &y) in batch_scores.iter().zip(batch_labels) {
        let dev = (s - mu) / sigma;
        total += (1.0 - y) * dev.abs() + y * (margin - dev).max(0.0);
    }
    Ok(total / batch_scores.len() as f64)
}

/// Same loss expressed on the tape so gradients flow to the score network.
pub fn deviation_loss_var(
    tape: &mut Tape,
    scores: Var,
    batch: &[u32],
    batch_labels: &[f64],
    mu: f64,
    sigma: f64,
    margin: f64,
) -> Var {
    let idx: Vec<usize> = batch.iter().map(|&v| v as usize).collect();
    let sb = tape.gather_rows(scores, &idx);
    let dev = tape.affine(sb, 1.0 / sigma, -mu / sigma);
    let absdev = tape.abs(dev);
    let w_norm: Vec<f64> = batch_labels.iter().map(|&y| 1.0 - y).collect();
    let norm_term = tape.mul_vec(absdev, w_norm);
    let hinge = tape.affine(dev, -1.0, margin);
    let hinge = tape.relu(hinge);
    let anom_term = tape.mul_vec(hinge, batch_labels.to_vec());
    let both = tape.add(norm_term, anom_term);
    tape.mean(both)
}

/// Draw `batch_size / 2` labeled anomalies and as many labeled normals.
/// Classes smaller than a half-batch are sampled with replacement.
pub fn sample_balanced_batch<R: Rng>(
    labels: &NodeLabels,
    rng: &mut R,
    batch_size: usize,
) -> Result<(Vec<u32>, Vec<f64>), DetectorError> {
    assert!(batch_size % 2 == 0, "batch size must be even");
    let (anoms, norms) = split_classes(labels);
    if anoms.is_empty() || norms.is_empty() {
        return Err(DetectorError::EmptyClass(anoms.len(), norms.len()));
    }
    let half = batch_size / 2;
    let draw = |pool: &[u32], rng: &mut R| -> Vec<u32> {
        if pool.len() >= half {
            let mut copy = pool.to_vec();
            copy.shuffle(rng);
            copy.truncate(half);
            copy
        } else {
            (0..half).map(|_| pool[rng.random_range(0..pool.len())]).collect()
        }
    };
    let mut batch = draw(&anoms, rng);
    let mut ys = vec![1.0; half];
    batch.extend(draw(&norms, rng));
    ys.extend(std::iter::repeat(0.0).take(half));
    Ok((batch, ys))
}

/// Gradient-descent training loop over balanced batches. Mutates `params`
/// in place (warm starts are the caller's choice of initial `params`).
/// Returns the per-step losses.
pub fn train_detector<R: Rng>(
    adj: &Arc<Csr>,
    x: &[f64],
    d: usize,
    labels: &NodeLabels,
    cfg: &DetectorConfig,
    steps: usize,
    params: &mut ParamStore,
    rng: &mut R,
) -> Result<Vec<f64>, DetectorError> {
    let n = adj.n;
    let (mu, sigma) = reference_prior(cfg.prior_samples, rng)?;
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let (batch, ys) = sample_balanced_batch(labels, rng, cfg.batch_size)?;
        let (loss, grads) = autodiff::loss_and_grads(params, |tape, vars| {
            let xv = tape.leaf(n, d, x.to_vec(), false);
            let h = embed_var(tape, adj, xv, vars);
            let s = score_var(tape, h, vars);
            deviation_loss_var(tape, s, &batch, &ys, mu, sigma, cfg.margin)
        })?;
        if !loss.is_finite() {
            return Err(DetectorError::Diverged(step));
        }
        autodiff::sgd_step(params, &grads, cfg.learning_rate, cfg.weight_decay);
        losses.push(loss);
    }
    Ok(losses)
}
