//! The policy-in-the-loop trainer: pretrain the detector on the observed
//! labels, then per epoch rectify labels through confident sets, pick the
//! noisy-candidate band with the threshold bandit, prune candidate-incident
//! edges with the reinforcement policy, and fine-tune the detector on the
//! rectified labels over the pruned graph.
//!
//! This module never touches ground-truth labels; every quantity it
//! computes (rewards, stopping checks, epoch diagnostics) is a function of
//! the observed labels and their rectification.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::confidence::{
    self, BanditConfig, ConfidenceError, ConfidentSets,
};
use crate::detector::{self, DetectorConfig, DetectorError, ScoreVector};
use crate::graph::{normalize_adjacency, AttributedGraph, GraphError};
use crate::labels::NodeLabels;
use crate::pruner::{self, PrunerConfig, PrunerError};
use crate::autodiff::ParamStore;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
    #[error(transparent)]
    Pruner(#[from] PrunerError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid loop config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LoopConfig {
    /// Confident-set rate: the top and bottom `alpha` score fractions get
    /// their labels overwritten.
    pub alpha: f64,
    pub epochs: usize,
    pub seed: u64,
    pub detector: DetectorConfig,
    pub bandit: BanditConfig,
    pub pruner: PrunerConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            epochs: 5,
            seed: 0,
            detector: DetectorConfig::default(),
            bandit: BanditConfig::default(),
            pruner: PrunerConfig::default(),
        }
    }
}

/// Component switches for ablations. Everything on is the full method.
#[derive(Debug, Clone, Copy)]
pub struct Switches {
    pub rectify: bool,
    pub prune: bool,
    pub bandit: bool,
}

impl Default for Switches {
    fn default() -> Self {
        Self {
            rectify: true,
            prune: true,
            bandit: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Variant {
    Full,
    NoRectify,
    NoPrune,
    NoBandit,
    /// Rectification and pruning both off: the plain detector trained on
    /// the observed labels.
    Baseline,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoRectify,
        Variant::NoPrune,
        Variant::NoBandit,
        Variant::Baseline,
    ];

    pub fn switches(self) -> Switches {
        let mut s = Switches::default();
        match self {
            Variant::Full => {}
            Variant::NoRectify => s.rectify = false,
            Variant::NoPrune => s.prune = false,
            Variant::NoBandit => s.bandit = false,
            Variant::Baseline => {
                s.rectify = false;
                s.prune = false;
            }
        }
        s
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRectify => "no_rectify",
            Variant::NoPrune => "no_prune",
            Variant::NoBandit => "no_bandit",
            Variant::Baseline => "baseline",
        }
    }
}

/// One epoch of diagnostics, all computed from observed/rectified labels.
#[derive(Debug, Clone)]
pub struct EpochRow {
    pub epoch: usize,
    /// Winning band half-width.
    pub delta: f64,
    pub num_candidates: usize,
    /// Edges removed from the working graph this epoch.
    pub edges_cut: usize,
    /// Whether the best episode's graph passed the adoption check.
    pub adopted: bool,
    /// Detector AUC on the rectified-labeled nodes after fine-tuning.
    pub train_auc: f64,
}

/// One pruning step inside one episode.
#[derive(Debug, Clone)]
pub struct EpisodeRow {
    pub epoch: usize,
    pub episode: usize,
    pub step: usize,
    pub edges_cut: usize,
    pub reward: f64,
}

pub struct RunResult {
    /// Scores on the final working graph under the final detector.
    pub scores: ScoreVector,
    /// Rectified labels from the last epoch.
    pub rectified: NodeLabels,
    pub final_graph: AttributedGraph,
    pub detector_params: ParamStore,
    pub epoch_rows: Vec<EpochRow>,
    pub episode_rows: Vec<EpisodeRow>,
}

fn sub_rng(master: &mut ChaCha8Rng) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(master.random())
}

/// Run the full loop (or an ablation of it) on a graph with observed
/// labels. Deterministic in `cfg.seed`: repeated runs are bit-identical.
pub fn run_loop(
    graph: &AttributedGraph,
    noisy: &NodeLabels,
    cfg: &LoopConfig,
    switches: Switches,
) -> Result<RunResult, PipelineError> {
    if cfg.epochs == 0 {
        return Err(PipelineError::BadConfig("epochs must be >= 1".into()));
    }
    if noisy.len() != graph.n() {
        return Err(PipelineError::BadConfig(format!(
            "label view has {} entries for {} nodes",
            noisy.len(),
            graph.n()
        )));
    }
    let d = graph.feature_dim();
    // Fixed fan-out order keeps variants comparable under one seed.
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut init_rng = sub_rng(&mut master);
    let mut train_rng = sub_rng(&mut master);
    let mut bandit_rng = sub_rng(&mut master);
    let mut batch_rng = sub_rng(&mut master);

    let mut detector_params = detector::init_detector_params(d, &cfg.detector, &mut init_rng);
    let mut policy_params =
        pruner::init_policy_params(cfg.detector.hidden, &cfg.pruner, &mut init_rng);

    let mut current = graph.clone();
    let mut adj = Arc::new(normalize_adjacency(&current).csr);
    detector::train_detector(
        &adj,
        current.features(),
        d,
        noisy,
        &cfg.detector,
        cfg.detector.pretrain_steps,
        &mut detector_params,
        &mut train_rng,
    )?;

    let mut epoch_rows = Vec::with_capacity(cfg.epochs);
    let mut episode_rows = Vec::new();
    let mut rectified = noisy.clone();

    for epoch in 0..cfg.epochs {
        let scores = detector::score(&adj, current.features(), d, &detector_params);
        let sets = confidence::select_confident_sets(&scores, cfg.alpha)?;
        rectified = if switches.rectify {
            confidence::rectify_labels(noisy, &sets)
        } else {
            noisy.clone()
        };
        let s_bar =
            confidence::balanced_mean_score(&scores, &rectified, cfg.detector.batch_size, &mut batch_rng)?;
        let (delta, candidates) =
            pick_candidates(&scores, &rectified, &sets, s_bar, cfg, switches, &mut bandit_rng)?;

        let mut edges_cut = 0;
        let mut adopted = false;
        if switches.prune && !candidates.is_empty() {
            let start_auc = pruner::detector_auc(
                &adj,
                current.features(),
                d,
                &detector_params,
                &rectified,
            )?;
            let mut best: Option<(f64, AttributedGraph)> = None;
            for episode in 0..cfg.pruner.episodes {
                let outcome = pruner::run_episode(
                    &current,
                    &detector_params,
                    &policy_params,
                    &candidates,
                    &rectified,
                    &cfg.pruner,
                )?;
                for (step, rec) in outcome.trajectory.steps.iter().enumerate() {
                    episode_rows.push(EpisodeRow {
                        epoch,
                        episode,
                        step,
                        edges_cut: rec.action.edges.len(),
                        reward: rec.reward,
                    });
                }
                pruner::policy_update(&outcome.trajectory, &mut policy_params, &cfg.pruner)?;
                let total = outcome.trajectory.total_discounted_reward();
                if best.as_ref().is_none_or(|(b, _)| total > *b) {
                    best = Some((total, outcome.final_graph));
                }
            }
            // Adopt the best episode's graph only if it does not degrade the
            // detector on the rectified labels; otherwise keep the graph.
            if let Some((_, candidate_graph)) = best {
                let cand_adj = Arc::new(normalize_adjacency(&candidate_graph).csr);
                let cand_auc = pruner::detector_auc(
                    &cand_adj,
                    candidate_graph.features(),
                    d,
                    &detector_params,
                    &rectified,
                )?;
                if cand_auc >= start_auc && candidate_graph.num_edges() < current.num_edges() {
                    edges_cut = current.num_edges() - candidate_graph.num_edges();
                    current = candidate_graph;
                    adj = cand_adj;
                    adopted = true;
                }
            }
        }

        detector::train_detector(
            &adj,
            current.features(),
            d,
            &rectified,
            &cfg.detector,
            cfg.detector.finetune_steps,
            &mut detector_params,
            &mut train_rng,
        )?;
        let train_auc = pruner::detector_auc(
            &adj,
            current.features(),
            d,
            &detector_params,
            &rectified,
        )?;
        epoch_rows.push(EpochRow {
            epoch,
            delta,
            num_candidates: candidates.len(),
            edges_cut,
            adopted,
            train_auc,
        });
    }

    let scores = detector::score(&adj, current.features(), d, &detector_params);
    Ok(RunResult {
        scores,
        rectified,
        final_graph: current,
        detector_params,
        epoch_rows,
        episode_rows,
    })
}

fn pick_candidates(
    scores: &ScoreVector,
    rectified: &NodeLabels,
    sets: &ConfidentSets,
    s_bar: f64,
    cfg: &LoopConfig,
    switches: Switches,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, BTreeSet<u32>), PipelineError> {
    if switches.bandit {
        Ok(confidence::bandit_select_threshold(
            scores, rectified, sets, s_bar, &cfg.bandit, rng,
        )?)
    } else {
        // Fixed middle arm of the grid when the bandit is ablated.
        let arms = &cfg.bandit.arms;
        if arms.is_empty() {
            return Err(PipelineError::BadConfig("empty threshold grid".into()));
        }
        let delta = arms[arms.len() / 2];
        Ok((delta, confidence::candidate_set(scores, s_bar, delta, sets)))
    }
}

/// Run every ablation variant under the same config and seed.
pub fn ablate(
    graph: &AttributedGraph,
    noisy: &NodeLabels,
    cfg: &LoopConfig,
) -> Result<Vec<(Variant, RunResult)>, PipelineError> {
    Variant::ALL
        .iter()
        .map(|&v| Ok((v, run_loop(graph, noisy, cfg, v.switches())?)))
        .collect()
}
