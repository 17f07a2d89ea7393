//! Confident-set extraction, label rectification, and the epsilon-greedy
//! bandit that searches the candidate score-band threshold.
//!
//! The bandit minimizes the candidate-set AUC: the band whose nodes the
//! detector ranks worst is the band most likely to hold mislabeled nodes.
//! A maximize flag is kept for comparison runs.

use std::collections::BTreeSet;

use rand::prelude::*;
use thiserror::Error;

use crate::detector::ScoreVector;
use crate::labels::{split_classes, NodeLabels};
use crate::metrics::{self, MetricError};

#[derive(Debug, Error)]
pub enum ConfidenceError {
    #[error("selection rate alpha = {0} outside (0, 0.5]")]
    BadAlpha(f64),
    #[error("confident sets need 2*ceil(alpha*n) <= n (n = {n}, set size = {m})")]
    SetsOverlap { n: usize, m: usize },
    #[error("rectified labels contain no {0} node; bandit fallback impossible")]
    MissingClass(&'static str),
    #[error("bandit arm grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// High-confidence anomaly (`anomaly_set`) and normal (`normal_set`) nodes
/// selected from the score-ranking extremes at rate `alpha`.
#[derive(Debug, Clone)]
pub struct ConfidentSets {
    pub anomaly_set: BTreeSet<u32>,
    pub normal_set: BTreeSet<u32>,
    pub alpha: f64,
}

impl ConfidentSets {
    pub fn contains(&self, v: u32) -> bool {
        self.anomaly_set.contains(&v) || self.normal_set.contains(&v)
    }
}

/// Which end of the per-arm mean the bandit exploits and returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BanditObjective {
    /// Lowest candidate AUC = noisiest band.
    MinAuc,
    /// Kept only for comparison with the greedy-argmax reading.
    MaxAuc,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BanditConfig {
    /// Threshold grid; values in (0, 0.5).
    pub arms: Vec<f64>,
    pub epsilon: f64,
    pub iterations: usize,
    pub objective: BanditObjective,
}

impl Default for BanditConfig {
    fn default() -> Self {
        // 7 evenly spaced thresholds over [0.1, 0.4].
        Self {
            arms: (0..7).map(|i| 0.1 + 0.05 * i as f64).collect(),
            epsilon: 0.2,
            iterations: 100,
            objective: BanditObjective::MinAuc,
        }
    }
}

/// Top/bottom `ceil(alpha * n)` nodes by score. Ties resolved by ascending
/// node id on the ascending (score, id) order, so the anomaly set takes the
/// order's suffix and the normal set its prefix.
pub fn select_confident_sets(
    scores: &ScoreVector,
    alpha: f64,
) -> Result<ConfidentSets, ConfidenceError> {
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(ConfidenceError::BadAlpha(alpha));
    }
    let n = scores.scores.len();
    let m = (alpha * n as f64).ceil() as usize;
    if 2 * m > n {
        return Err(ConfidenceError::SetsOverlap { n, m });
    }
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| {
        scores.scores[a as usize]
            .partial_cmp(&scores.scores[b as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    Ok(ConfidentSets {
        normal_set: order[..m].iter().copied().collect(),
        anomaly_set: order[n - m..].iter().copied().collect(),
        alpha,
    })
}

/// Overwrite labels on the confident sets: anomaly-set members become 1,
/// normal-set members 0, everything else keeps its observed label.
/// Unlabeled nodes outside both sets stay unlabeled.
pub fn rectify_labels(noisy: &NodeLabels, sets: &ConfidentSets) -> NodeLabels {
    noisy
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let v = i as u32;
            if sets.anomaly_set.contains(&v) {
                Some(true)
            } else if sets.normal_set.contains(&v) {
                Some(false)
            } else {
                l
            }
        })
        .collect()
}

/// Nodes whose score lies in the closed band `[s_bar - delta, s_bar + delta]`,
/// excluding confident-set members.
pub fn candidate_set(
    scores: &ScoreVector,
    s_bar: f64,
    delta: f64,
    exclude: &ConfidentSets,
) -> BTreeSet<u32> {
    assert!(delta > 0.0);
    scores
        .scores
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| {
            let v = i as u32;
            (s >= s_bar - delta && s <= s_bar + delta && !exclude.contains(v)).then_some(v)
        })
        .collect()
}

/// AUC of the detector's scores restricted to the rectified-labeled part of
/// the candidate set. If that restriction is empty or single-class, one
/// rectified anomaly and one rectified normal from outside the set are
/// injected so the value stays computable.
pub fn bandit_reward<R: Rng>(
    candidates: &BTreeSet<u32>,
    scores: &ScoreVector,
    rectified: &NodeLabels,
    rng: &mut R,
) -> Result<f64, ConfidenceError> {
    let mut nodes: Vec<u32> = candidates
        .iter()
        .copied()
        .filter(|&v| rectified[v as usize].is_some())
        .collect();
    let has_pos = nodes.iter().any(|&v| rectified[v as usize] == Some(true));
    let has_neg = nodes.iter().any(|&v| rectified[v as usize] == Some(false));
    if !has_pos {
        let pool: Vec<u32> = anomalies_outside(rectified, candidates, true);
        let &pick = pool
            .as_slice()
            .choose(rng)
            .ok_or(ConfidenceError::MissingClass("anomaly"))?;
        nodes.push(pick);
    }
    if !has_neg {
        let pool: Vec<u32> = anomalies_outside(rectified, candidates, false);
        let &pick = pool
            .as_slice()
            .choose(rng)
            .ok_or(ConfidenceError::MissingClass("normal"))?;
        nodes.push(pick);
    }
    let s: Vec<f64> = nodes.iter().map(|&v| scores.scores[v as usize]).collect();
    let y: Vec<u8> = nodes
        .iter()
        .map(|&v| (rectified[v as usize] == Some(true)) as u8)
        .collect();
    Ok(metrics::auc(&s, &y)?)
}

fn anomalies_outside(rectified: &NodeLabels, exclude: &BTreeSet<u32>, anomaly: bool) -> Vec<u32> {
    rectified
        .iter()
        .enumerate()
        .filter_map(|(i, &l)| {
            let v = i as u32;
            (l == Some(anomaly) && !exclude.contains(&v)).then_some(v)
        })
        .collect()
}

/// Mean score over one freshly drawn balanced batch; the band center for
/// candidate selection.
pub fn balanced_mean_score<R: Rng>(
    scores: &ScoreVector,
    labels: &NodeLabels,
    batch_size: usize,
    rng: &mut R,
) -> Result<f64, crate::detector::DetectorError> {
    let (batch, _) = crate::detector::sample_balanced_batch(labels, rng, batch_size)?;
    Ok(batch.iter().map(|&v| scores.scores[v as usize]).sum::<f64>() / batch.len() as f64)
}

/// Epsilon-greedy loop over a reward closure, generic so tests can rig the
/// environment. Unpulled arms are treated as the current optimum, which
/// makes the first greedy pulls sweep the grid once.
pub fn bandit_core<R, F>(
    num_arms: usize,
    cfg: &BanditConfig,
    rng: &mut R,
    mut pull: F,
) -> Result<(usize, Vec<f64>, Vec<usize>), ConfidenceError>
where
    R: Rng,
    F: FnMut(usize, &mut R) -> Result<f64, ConfidenceError>,
{
    if num_arms == 0 {
        return Err(ConfidenceError::EmptyGrid);
    }
    let minimize = cfg.objective == BanditObjective::MinAuc;
    let mut sums = vec![0.0; num_arms];
    let mut counts = vec![0usize; num_arms];
    let best_arm = |sums: &[f64], counts: &[usize]| -> usize {
        let mut best = 0;
        let mut best_val = f64::INFINITY;
        for a in 0..num_arms {
            // Unpulled arms look optimal so they get swept first.
            let mean = if counts[a] == 0 {
                f64::NEG_INFINITY
            } else {
                let m = sums[a] / counts[a] as f64;
                if minimize {
                    m
                } else {
                    -m
                }
            };
            if mean < best_val {
                best_val = mean;
                best = a;
            }
        }
        best
    };
    for _ in 0..cfg.iterations {
        let arm = if rng.random_bool(cfg.epsilon) {
            rng.random_range(0..num_arms)
        } else {
            best_arm(&sums, &counts)
        };
        let r = pull(arm, rng)?;
        sums[arm] += r;
        counts[arm] += 1;
    }
    // Final answer among pulled arms only.
    let mut winner = None;
    let mut best_val = f64::INFINITY;
    for a in 0..num_arms {
        if counts[a] == 0 {
            continue;
        }
        let m = sums[a] / counts[a] as f64;
        let v = if minimize { m } else { -m };
        if v < best_val {
            best_val = v;
            winner = Some(a);
        }
    }
    let means = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect();
    Ok((winner.expect("iterations >= 1 pulls at least one arm"), means, counts))
}

/// Run the threshold bandit: per-arm candidate sets are fixed for the
/// invocation (scores and `s_bar` do not move), rewards are candidate AUCs.
/// Returns the winning threshold and its candidate set.
pub fn bandit_select_threshold<R: Rng>(
    scores: &ScoreVector,
    rectified: &NodeLabels,
    sets: &ConfidentSets,
    s_bar: f64,
    cfg: &BanditConfig,
    rng: &mut R,
) -> Result<(f64, BTreeSet<u32>), ConfidenceError> {
    let (anoms, norms) = split_classes(rectified);
    if anoms.is_empty() {
        return Err(ConfidenceError::MissingClass("anomaly"));
    }
    if norms.is_empty() {
        return Err(ConfidenceError::MissingClass("normal"));
    }
    let candidate_sets: Vec<BTreeSet<u32>> = cfg
        .arms
        .iter()
        .map(|&delta| candidate_set(scores, s_bar, delta, sets))
        .collect();
    let (winner, _, _) = bandit_core(cfg.arms.len(), cfg, rng, |arm, rng| {
        bandit_reward(&candidate_sets[arm], scores, rectified, rng)
    })?;
    Ok((cfg.arms[winner], candidate_sets[winner].clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn sv(scores: Vec<f64>) -> ScoreVector {
        ScoreVector { scores }
    }

    #[test]
    fn confident_sets_by_ranking() {
        let scores = sv((0..10).map(|i| 0.05 + 0.1 * i as f64).collect());
        let s = select_confident_sets(&scores, 0.1).unwrap();
        assert_eq!(s.anomaly_set, [9].into_iter().collect());
        assert_eq!(s.normal_set, [0].into_iter().collect());
    }

    #[test]
    fn confident_sets_tie_break_by_id() {
        let scores = sv(vec![0.5; 10]);
        let s = select_confident_sets(&scores, 0.1).unwrap();
        assert_eq!(s.anomaly_set, [9].into_iter().collect());
        assert_eq!(s.normal_set, [0].into_iter().collect());
    }

    #[test]
    fn confident_sets_match_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let n = 50;
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let s = select_confident_sets(&sv(scores.clone()), 0.05).unwrap();
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| {
                scores[a as usize]
                    .partial_cmp(&scores[b as usize])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let m = (0.05 * n as f64).ceil() as usize;
            let want_ns: BTreeSet<u32> = idx[..m].iter().copied().collect();
            let want_as: BTreeSet<u32> = idx[n - m..].iter().copied().collect();
            assert_eq!(s.normal_set, want_ns);
            assert_eq!(s.anomaly_set, want_as);
            assert!(s.anomaly_set.is_disjoint(&s.normal_set));
        }
    }

    #[test]
    fn alpha_validation() {
        let scores = sv(vec![0.5; 10]);
        assert!(select_confident_sets(&scores, 0.0).is_err());
        assert!(select_confident_sets(&scores, 0.6).is_err());
    }

    #[test]
    fn rectification_branches() {
        let noisy: NodeLabels = vec![Some(false), None, Some(true), None];
        let sets = ConfidentSets {
            anomaly_set: [0].into_iter().collect(),
            normal_set: [1].into_iter().collect(),
            alpha: 0.25,
        };
        let r = rectify_labels(&noisy, &sets);
        assert_eq!(r[0], Some(true)); // observed 0 overwritten to 1
        assert_eq!(r[1], Some(false)); // unlabeled gains pseudo-label
        assert_eq!(r[2], Some(true)); // outside both sets: unchanged
        assert_eq!(r[3], None); // unlabeled outside both: stays unlabeled
    }

    #[test]
    fn rectification_touches_only_set_members() {
        let noisy: NodeLabels = vec![Some(true); 20];
        let sets = ConfidentSets {
            anomaly_set: [3].into_iter().collect(),
            normal_set: [7].into_iter().collect(),
            alpha: 0.05,
        };
        let r = rectify_labels(&noisy, &sets);
        let changed: Vec<usize> = (0..20).filter(|&i| r[i] != noisy[i]).collect();
        assert_eq!(changed, vec![7]);
    }

    #[test]
    fn candidate_band_membership() {
        let scores = sv(vec![0.1, 0.45, 0.55, 0.9]);
        let sets = ConfidentSets {
            anomaly_set: BTreeSet::new(),
            normal_set: BTreeSet::new(),
            alpha: 0.1,
        };
        let nc = candidate_set(&scores, 0.5, 0.2, &sets);
        assert_eq!(nc, [1, 2].into_iter().collect());
        // Closed interval: boundary score included.
        let scores = sv(vec![0.7, 0.3]);
        let nc = candidate_set(&scores, 0.5, 0.2, &sets);
        assert_eq!(nc.len(), 2);
    }

    #[test]
    fn candidate_band_excludes_confident_sets() {
        let scores = sv(vec![0.5; 6]);
        let sets = ConfidentSets {
            anomaly_set: [0].into_iter().collect(),
            normal_set: [5].into_iter().collect(),
            alpha: 0.2,
        };
        let nc = candidate_set(&scores, 0.5, 0.4, &sets);
        assert_eq!(nc, [1, 2, 3, 4].into_iter().collect());
    }

    #[test]
    fn reward_perfect_separation() {
        let scores = sv(vec![0.9, 0.1]);
        let rect: NodeLabels = vec![Some(true), Some(false)];
        let nc: BTreeSet<u32> = [0, 1].into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(bandit_reward(&nc, &scores, &rect, &mut rng).unwrap(), 1.0);
    }

    #[test]
    fn reward_single_class_fallback() {
        let scores = sv(vec![0.2, 0.3, 0.8, 0.1]);
        let rect: NodeLabels = vec![Some(false), Some(false), Some(true), Some(false)];
        let nc: BTreeSet<u32> = [0, 1].into_iter().collect(); // all normal
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = bandit_reward(&nc, &scores, &rect, &mut rng).unwrap();
        assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn reward_matches_pairwise_oracle() {
        let scores = sv(vec![0.1, 0.7, 0.4, 0.9, 0.2, 0.6]);
        let rect: NodeLabels = vec![
            Some(false),
            Some(true),
            Some(false),
            Some(true),
            Some(false),
            Some(false),
        ];
        let nc: BTreeSet<u32> = (0..6).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = bandit_reward(&nc, &scores, &rect, &mut rng).unwrap();
        // Brute-force pairwise count.
        let mut num = 0.0;
        let mut pairs = 0.0;
        for i in 0..6u32 {
            for j in 0..6u32 {
                if rect[i as usize] == Some(true) && rect[j as usize] == Some(false) {
                    pairs += 1.0;
                    let (a, b) = (scores.scores[i as usize], scores.scores[j as usize]);
                    num += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
                }
            }
        }
        assert_eq!(r, num / pairs);
    }

    #[test]
    fn reward_all_one_class_errors() {
        let scores = sv(vec![0.2, 0.3]);
        let rect: NodeLabels = vec![Some(false), Some(false)];
        let nc: BTreeSet<u32> = [0].into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            bandit_reward(&nc, &scores, &rect, &mut rng),
            Err(ConfidenceError::MissingClass("anomaly"))
        ));
    }

    #[test]
    fn bandit_returns_min_arm_on_deterministic_rewards() {
        let cfg = BanditConfig {
            arms: vec![0.1, 0.2],
            ..BanditConfig::default()
        };
        let rewards = [0.5, 0.75];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (winner, _, _) =
            bandit_core(2, &cfg, &mut rng, |arm, _| Ok(rewards[arm])).unwrap();
        assert_eq!(winner, 0);
    }

    #[test]
    fn one_arm_grid_degenerate() {
        let cfg = BanditConfig {
            arms: vec![0.25],
            ..BanditConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (winner, _, counts) = bandit_core(1, &cfg, &mut rng, |_, _| Ok(0.4)).unwrap();
        assert_eq!(winner, 0);
        assert_eq!(counts[0], 100);
    }

    #[test]
    fn pure_exploration_pulls_every_arm() {
        let cfg = BanditConfig {
            arms: vec![0.0; 10],
            epsilon: 1.0,
            ..BanditConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, _, counts) = bandit_core(10, &cfg, &mut rng, |_, _| Ok(0.5)).unwrap();
        assert!(counts.iter().all(|&c| c >= 1), "counts {counts:?}");
    }

    #[test]
    fn max_objective_flips_winner() {
        let cfg = BanditConfig {
            arms: vec![0.1, 0.2],
            objective: BanditObjective::MaxAuc,
            ..BanditConfig::default()
        };
        let rewards = [0.5, 0.75];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (winner, _, _) =
            bandit_core(2, &cfg, &mut rng, |arm, _| Ok(rewards[arm])).unwrap();
        assert_eq!(winner, 1);
    }

    #[test]
    fn candidate_sets_never_meet_confident_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let n = 40;
            let scores = sv((0..n).map(|_| rng.random_range(0.0..1.0)).collect());
            let sets = select_confident_sets(&scores, 0.1).unwrap();
            let nc = candidate_set(&scores, 0.5, 0.3, &sets);
            for v in &nc {
                assert!(!sets.contains(*v));
            }
        }
    }
}
