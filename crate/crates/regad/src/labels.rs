//! Per-node label state: observed (possibly noisy) labels, rectified labels,
//! and the hidden clean labels used only for evaluation.
//!
//! Clean labels sit behind a counting accessor so the pipeline can assert
//! that no training path ever reads them.

use std::sync::atomic::{AtomicUsize, Ordering};

/// `Some(true)` anomaly, `Some(false)` normal, `None` unlabeled.
pub type NodeLabels = Vec<Option<bool>>;

#[derive(Debug)]
pub struct LabelTable {
    noisy: NodeLabels,
    clean: Vec<u8>,
    clean_reads: AtomicUsize,
}

impl LabelTable {
    pub fn new(noisy: NodeLabels, clean: Vec<u8>) -> Self {
        assert_eq!(noisy.len(), clean.len());
        Self {
            noisy,
            clean,
            clean_reads: AtomicUsize::new(0),
        }
    }

    pub fn n(&self) -> usize {
        self.noisy.len()
    }

    /// Observed labels, possibly corrupted. Safe for training paths.
    pub fn noisy(&self) -> &NodeLabels {
        &self.noisy
    }

    /// Hidden clean labels. Counted: call this only from metric reporting.
    pub fn clean_for_eval(&self) -> &[u8] {
        self.clean_reads.fetch_add(1, Ordering::Relaxed);
        &self.clean
    }

    /// How many times the clean labels have been read.
    pub fn clean_read_count(&self) -> usize {
        self.clean_reads.load(Ordering::Relaxed)
    }

    pub fn labeled_nodes(&self) -> impl Iterator<Item = (u32, bool)> + '_ {
        self.noisy
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|y| (i as u32, y)))
    }
}

impl Clone for LabelTable {
    fn clone(&self) -> Self {
        Self {
            noisy: self.noisy.clone(),
            clean: self.clean.clone(),
            clean_reads: AtomicUsize::new(0),
        }
    }
}

/// Nodes of each class under a label view.
pub fn split_classes(labels: &NodeLabels) -> (Vec<u32>, Vec<u32>) {
    let mut anomalies = Vec::new();
    let mut normals = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match l {
            Some(true) => anomalies.push(i as u32),
            Some(false) => normals.push(i as u32),
            None => {}
        }
    }
    (anomalies, normals)
}
