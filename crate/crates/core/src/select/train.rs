use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::mask::{make_mask, KeepRatio, MaskSet};
use crate::data::{Dataset, Split};
use crate::error::SelectError;
use crate::gradcore::{accuracy, backward_scores, cross_entropy, forward, NetworkSpec};
use crate::protogen::{rng_stream, DATA_STREAM_BASE, SCORE_STREAM_BASE};
use crate::tensor::{Scalar, Tensor};

/// Optimizer and selection hyperparameters. Defaults follow the SGD recipe:
/// lr 0.1, momentum 0.9, weight decay 5e-4, cosine schedule, K = 0.5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectConfig {
    pub k: KeepRatio,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Seeds score initialization and the per-epoch data order.
    pub seed: u64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            k: KeepRatio::HALF,
            epochs: 30,
            batch_size: 128,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

impl SelectConfig {
    pub fn validate(&self) -> Result<(), SelectError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(SelectError::Config(format!(
                "learning rate must be > 0, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(SelectError::Config("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(SelectError::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(SelectError::Config(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        KeepRatio::new(self.k.num(), self.k.den())?;
        Ok(())
    }

    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size)
    }
}

/// `lr_max · ½ · (1 + cos(π·t / T))`.
pub fn cosine_lr(lr_max: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return lr_max;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    lr_max * 0.5 * (1.0 + (PI * t).cos())
}

/// Learnable scores with their momentum buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreState<T = f32> {
    pub scores: Vec<Tensor<T>>,
    pub momentum: Vec<Tensor<T>>,
}

impl<T: Scalar> ScoreState<T> {
    pub fn all_finite(&self) -> bool {
        self.scores.iter().all(Tensor::all_finite)
    }
}

/// Kaiming-uniform scores, `U(-√(6/fan_in), √(6/fan_in))`, from a stream
/// separate from the weights.
pub fn init_scores<T: Scalar>(spec: &NetworkSpec, seed: u64) -> ScoreState<T> {
    let mut scores = Vec::new();
    let mut momentum = Vec::new();
    for (i, layer) in spec.weighted_specs().enumerate() {
        let shape = layer.weight_shape().expect("weighted");
        let bound = (6.0 / layer.fan_in() as f64).sqrt();
        let mut rng = rng_stream(seed, SCORE_STREAM_BASE + i as u64);
        let values: Vec<f64> = (0..layer.weight_count())
            .map(|_| (2.0 * rng.uniform() - 1.0) * bound)
            .collect();
        scores.push(Tensor::from_f64(shape.clone(), &values).expect("weight shape"));
        momentum.push(Tensor::zeros(shape).expect("weight shape"));
    }
    ScoreState { scores, momentum }
}

/// In-place SGD with momentum and L2 weight decay:
/// `buf = μ·buf + (g + λ·p)`, `p -= lr·buf`.
pub(crate) fn sgd_update<T: Scalar>(
    params: &mut [Tensor<T>],
    buffers: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    let (lr, mu, wd) = (T::of(lr), T::of(momentum), T::of(weight_decay));
    for ((p, b), g) in params.iter_mut().zip(buffers.iter_mut()).zip(grads) {
        for ((pv, bv), &gv) in p.data_mut().iter_mut().zip(b.data_mut()).zip(g.data()) {
            let d = gv + wd * *pv;
            *bv = mu * *bv + d;
            *pv = *pv - lr * *bv;
        }
    }
}

/// One sparse-selection step: mask the fixed weights by the current top-K
/// scores, back-propagate with the straight-through estimator and update the
/// scores. The weights are never written.
#[allow(clippy::too_many_arguments)]
pub fn select_step<T: Scalar>(
    net: &NetworkSpec,
    weights: &[Tensor<T>],
    state: &mut ScoreState<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    cfg: &SelectConfig,
    step: usize,
    total_steps: usize,
) -> Result<f64, SelectError> {
    let mask = make_mask(&state.scores, cfg.k);
    let (logits, trace) = forward(net, weights, &mask.layers, batch)?;
    let (loss, grad_logits) = cross_entropy(&logits, labels)?;
    let loss = loss.as_f64();
    if !loss.is_finite() {
        return Err(SelectError::Diverged { step, loss });
    }
    let grads = backward_scores(net, weights, &mask.layers, &trace, &grad_logits)?;
    let lr = cosine_lr(cfg.lr, step, total_steps);
    sgd_update(
        &mut state.scores,
        &mut state.momentum,
        &grads,
        lr,
        cfg.momentum,
        cfg.weight_decay,
    );
    if !state.all_finite() {
        return Err(SelectError::Diverged { step, loss: f64::NAN });
    }
    Ok(loss)
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Learning rate at the epoch's first step.
    pub lr: f64,
    pub train_loss: f64,
    pub test_acc: f64,
}

/// Shuffled mini-batch order for one epoch.
pub(crate) fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    rng_stream(seed, DATA_STREAM_BASE + epoch as u64).shuffle(&mut order);
    order
}

pub(crate) const EVAL_CHUNK: usize = 1000;

pub(crate) fn evaluate(
    net: &NetworkSpec,
    weights: &[Tensor<f32>],
    masks: &[Tensor<f32>],
    split: &Split,
) -> Result<f64, SelectError> {
    match split.tensor() {
        None => Ok(0.0),
        Some(images) => Ok(accuracy(net, weights, masks, &images, split.labels(), EVAL_CHUNK)?),
    }
}

/// Result of a sparse-selection run.
#[derive(Clone, Debug)]
pub struct SelectOutcome {
    pub scores: ScoreState<f32>,
    pub mask: MaskSet<f32>,
    pub metrics: Vec<EpochMetrics>,
}

/// Learns scores over fixed `weights` for `cfg.epochs` epochs and returns the
/// final top-K mask.
pub fn train(
    net: &NetworkSpec,
    weights: &[Tensor<f32>],
    cfg: &SelectConfig,
    data: &Dataset,
) -> Result<SelectOutcome, SelectError> {
    cfg.validate()?;
    let mut state = init_scores::<f32>(net, cfg.seed);
    let n = data.train.len();
    let steps = cfg.steps_per_epoch(n);
    let total = steps * cfg.epochs;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg.lr, step, total);
        let order = epoch_order(cfg.seed, epoch, n);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (batch, labels) = data.train.batch(chunk).expect("non-empty chunk");
            loss_sum += select_step(net, weights, &mut state, &batch, &labels, cfg, step, total)?;
            step += 1;
        }
        let mask = make_mask(&state.scores, cfg.k);
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            lr,
            train_loss: if steps > 0 { loss_sum / steps as f64 } else { 0.0 },
            test_acc: evaluate(net, weights, &mask.layers, &data.test)?,
        });
    }
    let mask = make_mask(&state.scores, cfg.k);
    Ok(SelectOutcome {
        scores: state,
        mask,
        metrics,
    })
}
