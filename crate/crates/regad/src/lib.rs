//! Graph anomaly detection that is robust to noisy labels.
//!
//! The library trains a GCN anomaly scorer with a deviation loss, then
//! iterates a policy-in-the-loop refinement: high-confidence score extremes
//! rectify the observed labels, an epsilon-greedy bandit locates the band of
//! ambiguous "noisy candidate" nodes around the mean score, and a
//! REINFORCE-trained policy prunes edges incident to those candidates so
//! message passing stops propagating their influence. The detector is then
//! fine-tuned on the rectified labels over the pruned graph.
//!
//! Modules:
//! - [`graph`]: attributed graphs, normalized adjacency, pruning.
//! - [`autodiff`]: a small tape-based reverse-mode kernel over `f64`.
//! - [`labels`]: observed-label views with a firewalled clean-label store.
//! - [`metrics`]: exact AUC / AUPR and label-noise injection.
//! - [`detector`]: the GCN scorer and deviation-loss training.
//! - [`confidence`]: confident sets, rectification, the threshold bandit.
//! - [`pruner`]: the edge-pruning MDP and its REINFORCE update.
//! - [`pipeline`]: the outer loop and ablation variants.
//! - [`data`]: dataset IO, a synthetic generator, checkpoints.
//! - [`harness`]: experiment configs, CSV/JSON reporting, the CLI core.

pub mod autodiff;
pub mod confidence;
pub mod data;
pub mod detector;
pub mod graph;
pub mod harness;
pub mod labels;
pub mod metrics;
pub mod pipeline;
pub mod pruner;
