//! Dense forward/backward engine for bias-free feed-forward networks whose
//! weights are multiplied elementwise by masks.

mod engine;
mod kernels;
mod loss;
mod spec;

#[cfg(test)]
use engine::forward_effective;
pub use engine::{accuracy, backward_scores, backward_weights, check_layer_tensors, forward, predict, ForwardTrace};
pub use loss::cross_entropy;
pub use spec::{LayerSpec, NetworkSpec};

#[cfg(test)]
mod tests;
