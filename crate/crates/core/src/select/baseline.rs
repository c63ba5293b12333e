use serde::{Deserialize, Serialize};

use super::mask::{top_k_indices, MaskSet};
use super::train::{cosine_lr, epoch_order, evaluate, sgd_update, EpochMetrics, SelectConfig};
use crate::container::sparsity_for_equiv_ratio;
use crate::data::Dataset;
use crate::error::SelectError;
use crate::gradcore::{backward_weights, cross_entropy, forward, NetworkSpec};
use crate::protogen::{fill, rng_stream, InitScheme, PrototypeSource, Strategy, PRUNE_STREAM_BASE};
use crate::tensor::{Scalar, Tensor};

/// How a conventional sparse baseline chooses its surviving weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    /// Uniformly random global mask fixed at initialization.
    RandomPrune,
    /// Dense warm-up for a quarter of the epochs, then keep the largest |w|.
    MagnitudePrune,
}

impl PruneMode {
    pub fn name(self) -> &'static str {
        match self {
            PruneMode::RandomPrune => "random_prune",
            PruneMode::MagnitudePrune => "magnitude_prune",
        }
    }
}

/// Result of training a conventional sparse network.
#[derive(Clone, Debug)]
pub struct BaselineOutcome {
    /// Trained weights, already zero wherever the mask is zero.
    pub weights: Vec<Tensor<f32>>,
    pub mask: MaskSet<f32>,
    pub metrics: Vec<EpochMetrics>,
    /// Fraction of weights removed.
    pub sparsity: f64,
    pub kept: usize,
}

/// Number of weights kept by a conventional sparse model that matches
/// `target_ratio` on the equivalent-storage axis.
pub fn baseline_kept(parameters: usize, target_ratio: f64) -> Result<(f64, usize), SelectError> {
    let r = sparsity_for_equiv_ratio(target_ratio).ok_or(SelectError::UnreachableTarget(target_ratio))?;
    let kept = ((1.0 - r) * parameters as f64).round() as usize;
    if kept == 0 {
        return Err(SelectError::UnreachableTarget(target_ratio));
    }
    Ok((r, kept.min(parameters)))
}

/// Global mask keeping exactly `kept` weights chosen uniformly at random.
pub fn random_global_mask(shapes: &[Vec<usize>], kept: usize, seed: u64) -> MaskSet<f32> {
    let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    let mut order: Vec<usize> = (0..total).collect();
    rng_stream(seed, PRUNE_STREAM_BASE).shuffle(&mut order);
    let mut flat = vec![0.0f32; total];
    for &i in &order[..kept.min(total)] {
        flat[i] = 1.0;
    }
    split_flat(shapes, &flat)
}

/// Global mask keeping the `kept` largest-magnitude weights; ties go to the
/// lower position in layer-major flat order.
pub fn magnitude_global_mask<T: Scalar>(weights: &[Tensor<T>], kept: usize) -> MaskSet<T> {
    let mags: Vec<T> = weights.iter().flat_map(|w| w.data().iter().map(|v| v.abs())).collect();
    let mut flat = vec![T::zero(); mags.len()];
    for i in top_k_indices(&mags, kept.min(mags.len())) {
        flat[i] = T::one();
    }
    let shapes: Vec<Vec<usize>> = weights.iter().map(|w| w.shape().to_vec()).collect();
    split_flat(&shapes, &flat)
}

fn split_flat<T: Scalar>(shapes: &[Vec<usize>], flat: &[T]) -> MaskSet<T> {
    let mut at = 0;
    let layers = shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let t = Tensor::new(s.clone(), flat[at..at + n].to_vec()).expect("mask shape");
            at += n;
            t
        })
        .collect();
    MaskSet { layers }
}

/// One SGD step on the surviving weights of a masked network.
#[allow(clippy::too_many_arguments)]
pub fn weight_step<T: Scalar>(
    net: &NetworkSpec,
    weights: &mut [Tensor<T>],
    momentum: &mut [Tensor<T>],
    mask: &[Tensor<T>],
    batch: &Tensor<T>,
    labels: &[usize],
    cfg: &SelectConfig,
    step: usize,
    total_steps: usize,
) -> Result<f64, SelectError> {
    let (logits, trace) = forward(net, weights, mask, batch)?;
    let (loss, grad_logits) = cross_entropy(&logits, labels)?;
    let loss = loss.as_f64();
    if !loss.is_finite() {
        return Err(SelectError::Diverged { step, loss });
    }
    let grads = backward_weights(net, weights, mask, &trace, &grad_logits)?;
    let lr = cosine_lr(cfg.lr, step, total_steps);
    sgd_update(weights, momentum, &grads, lr, cfg.momentum, cfg.weight_decay);
    apply_mask(weights, mask);
    apply_mask(momentum, mask);
    Ok(loss)
}

fn apply_mask<T: Scalar>(tensors: &mut [Tensor<T>], mask: &[Tensor<T>]) {
    for (t, m) in tensors.iter_mut().zip(mask) {
        for (v, &b) in t.data_mut().iter_mut().zip(m.data()) {
            *v = *v * b;
        }
    }
}

/// Trains a conventional sparse network from a kaiming-normal initialization
/// seeded by `cfg.seed`. `cfg.k` is ignored; the sparsity is implied by
/// `target_ratio` through the conventional storage model. A target of 0 is
/// plain dense training.
pub fn baseline_sparse_train(
    net: &NetworkSpec,
    cfg: &SelectConfig,
    mode: PruneMode,
    target_ratio: f64,
    data: &Dataset,
) -> Result<BaselineOutcome, SelectError> {
    cfg.validate()?;
    let p = net.parameter_count();
    let (sparsity, kept) = baseline_kept(p, target_ratio)?;
    let src = PrototypeSource::new(Strategy::Dense, cfg.seed, InitScheme::KaimingNormal);
    let mut weights = fill(net, &src)?.effective();
    let shapes = net.weight_shapes();
    let mut momentum: Vec<Tensor<f32>> = shapes
        .iter()
        .map(|s| Tensor::zeros(s.clone()).expect("shape"))
        .collect();

    let prune_epoch = match mode {
        PruneMode::RandomPrune => 0,
        PruneMode::MagnitudePrune => cfg.epochs / 4,
    };
    let mut mask = match mode {
        PruneMode::RandomPrune => random_global_mask(&shapes, kept, cfg.seed),
        PruneMode::MagnitudePrune => MaskSet::ones(&shapes),
    };
    apply_mask(&mut weights, &mask.layers);

    let n = data.train.len();
    let steps = cfg.steps_per_epoch(n);
    let total = steps * cfg.epochs;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    let mut pruned = mode == PruneMode::RandomPrune;
    for epoch in 0..cfg.epochs {
        if !pruned && epoch == prune_epoch {
            mask = magnitude_global_mask(&weights, kept);
            apply_mask(&mut weights, &mask.layers);
            apply_mask(&mut momentum, &mask.layers);
            pruned = true;
        }
        let lr = cosine_lr(cfg.lr, step, total);
        let order = epoch_order(cfg.seed, epoch, n);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (batch, labels) = data.train.batch(chunk).expect("non-empty chunk");
            loss_sum += weight_step(
                net,
                &mut weights,
                &mut momentum,
                &mask.layers,
                &batch,
                &labels,
                cfg,
                step,
                total,
            )?;
            step += 1;
        }
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            lr,
            train_loss: if steps > 0 { loss_sum / steps as f64 } else { 0.0 },
            test_acc: evaluate(net, &weights, &mask.layers, &data.test)?,
        });
    }
    if !pruned {
        mask = magnitude_global_mask(&weights, kept);
        apply_mask(&mut weights, &mask.layers);
    }
    Ok(BaselineOutcome {
        weights,
        mask,
        metrics,
        sparsity,
        kept,
    })
}
