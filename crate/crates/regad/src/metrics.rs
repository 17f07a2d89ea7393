//! Ranking metrics (AUC, average-precision AUPR) and label-noise injection.

use rand::prelude::*;
use thiserror::Error;

use crate::labels::LabelTable;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric needs both classes (pos = {pos}, neg = {neg})")]
    SingleClass { pos: usize, neg: usize },
    #[error("scores and labels length mismatch")]
    LengthMismatch,
    #[error("noise injection infeasible: need {need} {class} nodes, have {have}")]
    NoiseBudget {
        need: usize,
        have: usize,
        class: &'static str,
    },
}

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub auc: f64,
    pub aupr: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub split: String,
}

/// AUC as the pairwise probability `P(s_pos > s_neg) + 0.5 P(s_pos = s_neg)`.
/// Computed by grouping tied scores; exact, matching pairwise counting.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch);
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass { pos, neg });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));

    let mut num = 0.0_f64;
    let mut cum_neg = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut pos_g = 0usize;
        let mut neg_g = 0usize;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                pos_g += 1;
            } else {
                neg_g += 1;
            }
            j += 1;
        }
        num += pos_g as f64 * cum_neg as f64 + 0.5 * (pos_g * neg_g) as f64;
        cum_neg += neg_g;
        i = j;
    }
    Ok(num / (pos as f64 * neg as f64))
}

/// Average precision: in descending-score order (ties broken by ascending
/// node id), sum precision at each positive's rank, divided by the positive
/// count. Step integration, no interpolation.
pub fn aupr(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch);
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 {
        return Err(MetricError::SingleClass {
            pos,
            neg: labels.len(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0_f64;
    for (rank0, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(sum / pos as f64)
}

pub fn report(scores: &[f64], labels: &[u8], split: &str) -> Result<MetricReport, MetricError> {
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    Ok(MetricReport {
        auc: auc(scores, labels)?,
        aupr: aupr(scores, labels)?,
        n_pos,
        n_neg,
        split: split.to_string(),
    })
}

fn sample<R: Rng>(pool: &[u32], k: usize, rng: &mut R) -> Vec<u32> {
    let mut pool = pool.to_vec();
    pool.shuffle(rng);
    pool.truncate(k);
    pool
}

/// Corrupt clean labels by uniform flipping: the observed labeled-anomaly
/// set has `budget` members, of which `round(budget * (1 - noise_ratio))`
/// are true anomalies and the rest are normal nodes flagged anomalous.
/// Labeled normals are drawn uniformly at `normal_multiple * budget`
/// (capped by availability). Only `pool` nodes (the training split) are
/// eligible for labels; everything else stays unlabeled.
pub fn inject_label_noise<R: Rng>(
    clean: &[u8],
    pool: &[u32],
    budget: usize,
    noise_ratio: f64,
    normal_multiple: usize,
    rng: &mut R,
) -> Result<LabelTable, MetricError> {
    let n_true = (budget as f64 * (1.0 - noise_ratio)).round() as usize;
    let n_flip = budget - n_true;
    let anomalies: Vec<u32> = pool.iter().copied().filter(|&v| clean[v as usize] == 1).collect();
    let normals: Vec<u32> = pool.iter().copied().filter(|&v| clean[v as usize] == 0).collect();
    if anomalies.len() < n_true {
        return Err(MetricError::NoiseBudget {
            need: n_true,
            have: anomalies.len(),
            class: "anomaly",
        });
    }
    if normals.len() < n_flip {
        return Err(MetricError::NoiseBudget {
            need: n_flip,
            have: normals.len(),
            class: "normal",
        });
    }
    let true_picked = sample(&anomalies, n_true, rng);
    let mut shuffled_normals = normals.clone();
    shuffled_normals.shuffle(rng);
    let flipped: Vec<u32> = shuffled_normals[..n_flip].to_vec();
    let normal_budget = (normal_multiple * budget).min(shuffled_normals.len() - n_flip);
    let labeled_normals: Vec<u32> = shuffled_normals[n_flip..n_flip + normal_budget].to_vec();

    let mut noisy = vec![None; clean.len()];
    for &v in true_picked.iter().chain(&flipped) {
        noisy[v as usize] = Some(true);
    }
    for &v in &labeled_normals {
        noisy[v as usize] = Some(false);
    }
    Ok(LabelTable::new(noisy, clean.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn auc_pairwise_example() {
        // 3 of 4 (pos, neg) pairs correctly ordered.
        let a = auc(&[0.9, 0.8, 0.2, 0.1], &[1, 0, 1, 0]).unwrap();
        assert_eq!(a, 0.75);
    }

    #[test]
    fn auc_extremes() {
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.4, 0.4, 0.4], &[1, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn auc_rejects_single_class() {
        assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(aupr(&[0.9, 0.1], &[0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn noise_counts_match_protocol() {
        // Budget 30 across the five ratios gives {27, 21, 15, 9, 3}
        // correctly labeled anomalies.
        let mut clean = vec![0u8; 500];
        for i in 0..50 {
            clean[i] = 1;
        }
        let pool: Vec<u32> = (0..500).collect();
        for (rho, want) in [(0.1, 27), (0.3, 21), (0.5, 15), (0.7, 9), (0.9, 3)] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let t = inject_label_noise(&clean, &pool, 30, rho, 10, &mut rng).unwrap();
            let correct = t
                .labeled_nodes()
                .filter(|&(v, y)| y && clean[v as usize] == 1)
                .count();
            let labeled_anoms = t.labeled_nodes().filter(|&(_, y)| y).count();
            assert_eq!(labeled_anoms, 30);
            assert_eq!(correct, want, "ratio {rho}");
        }
    }

    #[test]
    fn zero_noise_flips_nothing() {
        let mut clean = vec![0u8; 100];
        for i in 0..20 {
            clean[i] = 1;
        }
        let pool: Vec<u32> = (0..100).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = inject_label_noise(&clean, &pool, 10, 0.0, 2, &mut rng).unwrap();
        for (v, y) in t.labeled_nodes() {
            assert_eq!(y, clean[v as usize] == 1);
        }
    }

    #[test]
    fn noise_preserves_clean_table() {
        let mut clean = vec![0u8; 100];
        for i in 0..20 {
            clean[i] = 1;
        }
        let pool: Vec<u32> = (0..100).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = inject_label_noise(&clean, &pool, 10, 0.5, 2, &mut rng).unwrap();
        assert_eq!(t.clean_for_eval(), &clean[..]);
        // Flipped ids are disjoint from true anomalies.
        for (v, y) in t.labeled_nodes() {
            if y && clean[v as usize] == 0 {
                assert_eq!(clean[v as usize], 0);
            }
        }
    }

    #[test]
    fn infeasible_budget_rejected() {
        let clean = vec![1u8, 0, 0];
        let pool: Vec<u32> = vec![0, 1, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(inject_label_noise(&clean, &pool, 5, 0.0, 1, &mut rng).is_err());
    }
}
