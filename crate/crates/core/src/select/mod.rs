//! Sparse selection: learn per-weight scores over fixed weights and keep the
//! top-K per layer. Also hosts the conventional sparse-training baselines.

mod baseline;
mod mask;
mod train;

pub use baseline::{
    baseline_kept, baseline_sparse_train, magnitude_global_mask, random_global_mask, weight_step, BaselineOutcome,
    PruneMode,
};
pub use mask::{make_mask, top_k_indices, KeepRatio, MaskSet};
pub use train::{cosine_lr, init_scores, select_step, train, EpochMetrics, ScoreState, SelectConfig, SelectOutcome};
