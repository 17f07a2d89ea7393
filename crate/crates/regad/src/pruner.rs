//! The edge-pruning agent: a 2-layer GCN policy over the current graph
//! state, masked per-candidate top-k action selection, state transitions
//! through the detector, AUC-delta rewards, and REINFORCE updates.
//!
//! One episode is strictly sequential. The policy is deterministic given
//! parameters and state; exploration comes from the sequential mask (each
//! step must pick edges not yet pruned) and from updates between episodes.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::prelude::*;
use thiserror::Error;

use crate::autodiff::{self, ParamStore, Tape, Var};
use crate::detector;
use crate::graph::{
    incident_edges, normalize_adjacency, prune_edges, AttributedGraph, Csr, Edge, EdgeSet,
    GraphError,
};
use crate::labels::NodeLabels;
use crate::metrics::{self, MetricError};

#[derive(Debug, Error)]
pub enum PrunerError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Kernel(#[from] crate::autodiff::KernelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("non-finite policy loss")]
    NonFiniteLoss,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PrunerConfig {
    /// Top-k incident edges taken per candidate node.
    pub top_k: usize,
    /// Per-step cap on the action size (n_t).
    pub edge_cap: usize,
    /// Prune budget as a multiple of |NC|.
    pub budget_rate: f64,
    pub discount: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Episodes rolled out (and updates applied) per outer epoch.
    pub episodes: usize,
    pub step_cap: usize,
    /// Policy GCN widths; input width is the detector's hidden size.
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Default for PrunerConfig {
    fn default() -> Self {
        Self {
            top_k: 2,
            edge_cap: 20,
            budget_rate: 2.0,
            discount: 0.95,
            learning_rate: 0.005,
            weight_decay: 5e-4,
            episodes: 5,
            step_cap: 50,
            hidden1: 64,
            hidden2: 32,
        }
    }
}

/// MDP state: current normalized adjacency, detector embeddings under it,
/// and the step index.
#[derive(Clone)]
pub struct MdpState {
    pub adj: Arc<Csr>,
    pub embeddings: Arc<Vec<f64>>,
    pub t: usize,
}

/// One selected edge batch with the selection-time probabilities.
#[derive(Debug, Clone)]
pub struct Action {
    pub edges: Vec<Edge>,
    pub probs: Vec<f64>,
}

impl Action {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// A recorded (state, action, reward) step. The state snapshot is kept so
/// the update can replay the policy forward exactly.
pub struct StepRecord {
    pub state: MdpState,
    pub action: Action,
    pub reward: f64,
}

pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub cut: EdgeSet,
    pub discount: f64,
}

impl Trajectory {
    pub fn total_discounted_reward(&self) -> f64 {
        self.steps
            .iter()
            .enumerate()
            .map(|(t, s)| self.discount.powi(t as i32) * s.reward)
            .sum()
    }
}

pub struct EpisodeOutcome {
    pub trajectory: Trajectory,
    pub final_graph: AttributedGraph,
}

pub fn init_policy_params<R: Rng>(
    input_dim: usize,
    cfg: &PrunerConfig,
    rng: &mut R,
) -> ParamStore {
    let glorot = |rows: usize, cols: usize, rng: &mut R| -> Vec<f64> {
        let s = (6.0 / (rows + cols) as f64).sqrt();
        (0..rows * cols).map(|_| rng.random_range(-s..s)).collect()
    };
    let mut p = ParamStore::new();
    p.insert("policy.w0", input_dim, cfg.hidden1, glorot(input_dim, cfg.hidden1, rng));
    p.insert("policy.w1", cfg.hidden1, cfg.hidden2, glorot(cfg.hidden1, cfg.hidden2, rng));
    p
}

/// Tape forward of the policy GCN: two propagation layers over the state.
pub fn policy_embed_var(
    tape: &mut Tape,
    adj: &Arc<Csr>,
    h: Var,
    vars: &BTreeMap<String, Var>,
) -> Var {
    let zw = tape.matmul(h, vars["policy.w0"]);
    let za = tape.spmm(Arc::clone(adj), zw);
    let z = tape.relu(za);
    let ew = tape.matmul(z, vars["policy.w1"]);
    let ea = tape.spmm(Arc::clone(adj), ew);
    tape.relu(ea)
}

/// Per-edge prune probabilities over the eligible action space
/// (candidate-incident edges minus the mask): `sigmoid(e_i . e_j)` from the
/// policy embeddings. Masked or already-pruned edges are absent.
pub fn policy_forward(
    state: &MdpState,
    graph: &AttributedGraph,
    policy: &ParamStore,
    candidates: &BTreeSet<u32>,
    mask: &EdgeSet,
) -> BTreeMap<Edge, f64> {
    let eligible = incident_edges(graph, candidates, mask);
    if eligible.is_empty() {
        return BTreeMap::new();
    }
    let hidden = state.embeddings.len() / state.adj.n;
    let mut tape = Tape::new();
    let vars: BTreeMap<String, Var> = policy
        .iter()
        .map(|(n, p)| (n.clone(), tape.leaf(p.rows, p.cols, p.data.clone(), false)))
        .collect();
    let h = tape.leaf(state.adj.n, hidden, state.embeddings.as_ref().clone(), false);
    let e = policy_embed_var(&mut tape, &state.adj, h, &vars);
    let pairs: Vec<(usize, usize)> = eligible
        .iter()
        .map(|&(i, j)| (i as usize, j as usize))
        .collect();
    let dots = tape.dot_pairs(e, &pairs);
    let probs = tape.sigmoid(dots);
    eligible
        .iter()
        .copied()
        .zip(tape.value(probs).iter().copied())
        .collect()
}

/// Per candidate, take its top-k eligible incident edges by probability
/// (ties by canonical edge order); union over candidates; cap the union at
/// `edge_cap` globally highest-probability edges.
pub fn select_action(
    probs: &BTreeMap<Edge, f64>,
    candidates: &BTreeSet<u32>,
    top_k: usize,
    edge_cap: usize,
) -> Action {
    let mut chosen: BTreeSet<Edge> = BTreeSet::new();
    for &v in candidates {
        let mut incident: Vec<(Edge, f64)> = probs
            .iter()
            .filter(|((i, j), _)| *i == v || *j == v)
            .map(|(&e, &p)| (e, p))
            .collect();
        incident.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        chosen.extend(incident.into_iter().take(top_k).map(|(e, _)| e));
    }
    let mut edges: Vec<(Edge, f64)> = chosen.into_iter().map(|e| (e, probs[&e])).collect();
    if edges.len() > edge_cap {
        edges.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        edges.truncate(edge_cap);
        edges.sort_by(|a, b| a.0.cmp(&b.0));
    }
    Action {
        edges: edges.iter().map(|&(e, _)| e).collect(),
        probs: edges.iter().map(|&(_, p)| p).collect(),
    }
}

/// Apply an action: prune, renormalize, re-embed through the detector.
pub fn transition(
    graph: &AttributedGraph,
    action: &Action,
    detector_params: &ParamStore,
    t_next: usize,
) -> Result<(AttributedGraph, MdpState), PrunerError> {
    let cut: EdgeSet = action.edges.iter().copied().collect();
    let next = prune_edges(graph, &cut)?;
    let adj = Arc::new(normalize_adjacency(&next).csr);
    let h = detector::embed(&adj, next.features(), next.feature_dim(), detector_params);
    Ok((
        next,
        MdpState {
            adj,
            embeddings: Arc::new(h),
            t: t_next,
        },
    ))
}

/// Detector AUC over the labeled part of a label view.
pub fn detector_auc(
    adj: &Arc<Csr>,
    x: &[f64],
    d: usize,
    detector_params: &ParamStore,
    labels: &NodeLabels,
) -> Result<f64, PrunerError> {
    let sv = detector::score(adj, x, d, detector_params);
    let mut s = Vec::new();
    let mut y = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        if let Some(lab) = l {
            s.push(sv.scores[i]);
            y.push(*lab as u8);
        }
    }
    Ok(metrics::auc(&s, &y)?)
}

/// AUC after minus AUC before the action, both over the same label view.
pub fn compute_reward(
    before: &Arc<Csr>,
    after: &Arc<Csr>,
    x: &[f64],
    d: usize,
    detector_params: &ParamStore,
    labels: &NodeLabels,
) -> Result<f64, PrunerError> {
    Ok(detector_auc(after, x, d, detector_params, labels)?
        - detector_auc(before, x, d, detector_params, labels)?)
}

/// Caches the previous step's "after" AUC so each step costs one detector
/// evaluation (the delta telescopes).
pub struct AucDeltaReward<'a> {
    detector_params: &'a ParamStore,
    labels: &'a NodeLabels,
    prev_auc: f64,
}

impl<'a> AucDeltaReward<'a> {
    pub fn new(
        start_adj: &Arc<Csr>,
        graph: &AttributedGraph,
        detector_params: &'a ParamStore,
        labels: &'a NodeLabels,
    ) -> Result<Self, PrunerError> {
        let prev_auc = detector_auc(
            start_adj,
            graph.features(),
            graph.feature_dim(),
            detector_params,
            labels,
        )?;
        Ok(Self {
            detector_params,
            labels,
            prev_auc,
        })
    }

    pub fn step(&mut self, next: &AttributedGraph, next_adj: &Arc<Csr>) -> Result<f64, PrunerError> {
        let after = detector_auc(
            next_adj,
            next.features(),
            next.feature_dim(),
            self.detector_params,
            self.labels,
        )?;
        let r = after - self.prev_auc;
        self.prev_auc = after;
        Ok(r)
    }
}

/// Roll out one episode with a caller-supplied reward. Terminates when the
/// cumulative cut reaches `budget_rate * |NC|`, the eligible action space
/// empties, or the step cap hits. The final action may overshoot the budget
/// by less than one action; actions are never truncated mid-selection.
pub fn run_episode_with<F>(
    graph: &AttributedGraph,
    detector_params: &ParamStore,
    policy_params: &ParamStore,
    candidates: &BTreeSet<u32>,
    cfg: &PrunerConfig,
    mut reward: F,
) -> Result<EpisodeOutcome, PrunerError>
where
    F: FnMut(&AttributedGraph, &Arc<Csr>, &Action) -> Result<f64, PrunerError>,
{
    let budget = cfg.budget_rate * candidates.len() as f64;
    let mut cut = EdgeSet::new();
    let mut steps = Vec::new();
    let mut current = graph.clone();
    let adj = Arc::new(normalize_adjacency(&current).csr);
    let h = detector::embed(&adj, current.features(), current.feature_dim(), detector_params);
    let mut state = MdpState {
        adj,
        embeddings: Arc::new(h),
        t: 0,
    };
    while (cut.len() as f64) < budget && state.t < cfg.step_cap {
        let probs = policy_forward(&state, &current, policy_params, candidates, &cut);
        if probs.is_empty() {
            break;
        }
        let action = select_action(&probs, candidates, cfg.top_k, cfg.edge_cap);
        if action.is_empty() {
            break;
        }
        let (next, next_state) = transition(&current, &action, detector_params, state.t + 1)?;
        let r = reward(&next, &next_state.adj, &action)?;
        for &e in &action.edges {
            cut.insert(e);
        }
        steps.push(StepRecord {
            state,
            action,
            reward: r,
        });
        current = next;
        state = next_state;
    }
    Ok(EpisodeOutcome {
        trajectory: Trajectory {
            steps,
            cut,
            discount: cfg.discount,
        },
        final_graph: current,
    })
}

/// Standard episode: rewards are detector AUC deltas on the rectified labels.
pub fn run_episode(
    graph: &AttributedGraph,
    detector_params: &ParamStore,
    policy_params: &ParamStore,
    candidates: &BTreeSet<u32>,
    rectified: &NodeLabels,
    cfg: &PrunerConfig,
) -> Result<EpisodeOutcome, PrunerError> {
    let start_adj = Arc::new(normalize_adjacency(graph).csr);
    let mut auc_delta = AucDeltaReward::new(&start_adj, graph, detector_params, rectified)?;
    run_episode_with(graph, detector_params, policy_params, candidates, cfg, |next, adj, _| {
        auc_delta.step(next, adj)
    })
}

/// REINFORCE update: `L = -sum_t gamma^t r_t sum_{e in a_t} log p_t(e)`,
/// replaying each recorded forward so gradients reach the policy weights.
/// A trajectory with all-zero rewards carries no signal and leaves the
/// parameters untouched.
pub fn policy_update(
    trajectory: &Trajectory,
    policy_params: &mut ParamStore,
    cfg: &PrunerConfig,
) -> Result<(), PrunerError> {
    if trajectory.steps.iter().all(|s| s.reward == 0.0) {
        return Ok(());
    }
    let (loss, grads) = autodiff::loss_and_grads(policy_params, |tape, vars| {
        policy_loss_var(tape, vars, trajectory)
    })?;
    if !loss.is_finite() {
        return Err(PrunerError::NonFiniteLoss);
    }
    autodiff::sgd_step(policy_params, &grads, cfg.learning_rate, cfg.weight_decay);
    Ok(())
}

/// The REINFORCE surrogate on a tape; exposed for gradient checking.
pub fn policy_loss_var(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    trajectory: &Trajectory,
) -> Var {
    let mut total: Option<Var> = None;
    for (t, step) in trajectory.steps.iter().enumerate() {
        if step.action.is_empty() {
            continue;
        }
        let n = step.state.adj.n;
        let hidden = step.state.embeddings.len() / n;
        let h = tape.leaf(n, hidden, step.state.embeddings.as_ref().clone(), false);
        let e = policy_embed_var(tape, &step.state.adj, h, vars);
        let pairs: Vec<(usize, usize)> = step
            .action
            .edges
            .iter()
            .map(|&(i, j)| (i as usize, j as usize))
            .collect();
        let dots = tape.dot_pairs(e, &pairs);
        let p = tape.sigmoid(dots);
        let logp = tape.ln(p);
        let s = tape.sum(logp);
        let weight = -trajectory.discount.powi(t as i32) * step.reward;
        let term = tape.affine(s, weight, 0.0);
        total = Some(match total {
            Some(acc) => tape.add(acc, term),
            None => term,
        });
    }
    total.unwrap_or_else(|| tape.leaf(1, 1, vec![0.0], false))
}
