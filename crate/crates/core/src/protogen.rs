//! Deterministic generation of the fixed random weights.
//!
//! Every strategy draws a small *payload* of unit-variance values from a
//! seeded stream and expands it into full layers:
//!
//! * `dense` draws every layer independently,
//! * `one_layer` draws one prototype per distinct layer shape and copies it
//!   into later layers of the same shape,
//! * `mp` draws the largest layer and slices its prefix into every layer,
//! * `rp` draws a short vector and tiles it cyclically.
//!
//! For `mp` and `rp` the payload is stored unscaled and each layer carries a
//! multiplicative scale `sqrt(2 / fan_in)`, so every layer keeps kaiming
//! variance even though its values come from a shared source.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::ProtoError;
use crate::gradcore::{LayerSpec, NetworkSpec};
use crate::tensor::Tensor;

/// Stream ids below this value belong to weight generation (one per weighted
/// layer).
pub const SCORE_STREAM_BASE: u64 = 1 << 32;
/// Stream ids used for data ordering and synthetic data.
pub const DATA_STREAM_BASE: u64 = 2 << 32;
/// Stream ids used by baseline pruning.
pub const PRUNE_STREAM_BASE: u64 = 3 << 32;

/// A reproducible variate source: ChaCha8 keyed by `seed`, with `stream_id`
/// selecting an independent stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

pub fn rng_stream(seed: u64, stream_id: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    RngStream { rng }
}

impl RngStream {
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    KaimingNormal,
    KaimingUniform,
}

impl InitScheme {
    /// Draws `n` unit-variance values: `N(0, 1)` or `U(-√3, √3)`.
    pub fn draw_unit(self, stream: &mut RngStream, n: usize) -> Vec<f32> {
        let bound = 3f64.sqrt();
        (0..n)
            .map(|_| match self {
                InitScheme::KaimingNormal => stream.normal() as f32,
                InitScheme::KaimingUniform => ((2.0 * stream.uniform() - 1.0) * bound) as f32,
            })
            .collect()
    }
}

/// Kaiming standard deviation `sqrt(2 / fan_in)`; the uniform variant's bound
/// `sqrt(6 / fan_in)` is the same deviation times `√3`.
pub fn kaiming_std(fan_in: usize) -> f32 {
    (2.0 / fan_in as f64).sqrt() as f32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Dense,
    OneLayer,
    Mp,
    Rp,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Dense => "dense",
            Strategy::OneLayer => "one_layer",
            Strategy::Mp => "mp",
            Strategy::Rp => "rp",
        }
    }
}

/// How the random-vector length is specified before resolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorLength {
    /// Fraction of the largest layer's size.
    Rate(f64),
    Length(usize),
}

/// Everything needed to regenerate the fixed weights of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSource {
    pub strategy: Strategy,
    pub seed: u64,
    pub vector: Option<VectorLength>,
    pub init: InitScheme,
}

impl PrototypeSource {
    pub fn new(strategy: Strategy, seed: u64, init: InitScheme) -> Self {
        Self {
            strategy,
            seed,
            vector: None,
            init,
        }
    }

    pub fn rp_rate(seed: u64, rate: f64, init: InitScheme) -> Self {
        Self {
            strategy: Strategy::Rp,
            seed,
            vector: Some(VectorLength::Rate(rate)),
            init,
        }
    }

    pub fn rp_len(seed: u64, d_v: usize, init: InitScheme) -> Self {
        Self {
            strategy: Strategy::Rp,
            seed,
            vector: Some(VectorLength::Length(d_v)),
            init,
        }
    }

    /// Replaces a rate by the concrete vector length for `spec`.
    pub fn resolve(&self, spec: &NetworkSpec) -> Result<Self, ProtoError> {
        match (self.strategy, self.vector) {
            (Strategy::Rp, Some(VectorLength::Rate(rate))) => Ok(Self {
                vector: Some(VectorLength::Length(rp_len_from_rate(rate, spec)?)),
                ..self.clone()
            }),
            (Strategy::Rp, Some(VectorLength::Length(0))) => Err(ProtoError::ZeroLength),
            (Strategy::Rp, Some(VectorLength::Length(_))) => Ok(self.clone()),
            (Strategy::Rp, None) => Err(ProtoError::AmbiguousLength),
            (_, Some(_)) => Err(ProtoError::AmbiguousLength),
            (_, None) => Ok(self.clone()),
        }
    }

    /// Resolved vector length `d_v`, if this is an `rp` source with a length.
    pub fn vector_len(&self) -> Option<usize> {
        match self.vector {
            Some(VectorLength::Length(n)) => Some(n),
            _ => None,
        }
    }
}

/// Generated weights: per-layer raw values and scales plus the payload of
/// unique values they were expanded from.
#[derive(Clone, Debug, PartialEq)]
pub struct FilledWeights {
    raw: Vec<Tensor<f32>>,
    scales: Vec<f32>,
    payload: Vec<f32>,
}

impl FilledWeights {
    /// Raw (unscaled) values per weighted layer.
    pub fn raw(&self) -> &[Tensor<f32>] {
        &self.raw
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    /// The unique stored values the layers were built from.
    pub fn payload(&self) -> &[f32] {
        &self.payload
    }

    /// Weights as used by the network: `raw * scale` per layer.
    pub fn effective(&self) -> Vec<Tensor<f32>> {
        self.raw
            .iter()
            .zip(&self.scales)
            .map(|(t, &s)| {
                if s == 1.0 {
                    t.clone()
                } else {
                    let data = t.data().iter().map(|&v| v * s).collect();
                    Tensor::new(t.shape().to_vec(), data).expect("same shape")
                }
            })
            .collect()
    }
}

/// Index (among weighted layers) of the largest layer; ties go to the
/// shallowest.
pub fn max_layer(spec: &NetworkSpec) -> Result<usize, ProtoError> {
    let counts = spec.weight_counts();
    let mut best: Option<usize> = None;
    for (i, &d) in counts.iter().enumerate() {
        if best.is_none_or(|b| d > counts[b]) {
            best = Some(i);
        }
    }
    best.ok_or(ProtoError::NoWeightedLayers)
}

/// For every weighted layer, the index of the layer whose values it shares
/// under `one_layer`: the first layer with the same kind and full shape.
pub fn one_layer_groups(spec: &NetworkSpec) -> Vec<usize> {
    let mut first: HashMap<(&'static str, Vec<usize>), usize> = HashMap::new();
    spec.weighted_specs()
        .enumerate()
        .map(|(i, layer)| {
            let key = (layer.name(), layer.weight_shape().expect("weighted"));
            *first.entry(key).or_insert(i)
        })
        .collect()
}

/// `max(1, round(rate * d_m))`, rounding half away from zero.
pub fn rp_len_from_rate(rate: f64, spec: &NetworkSpec) -> Result<usize, ProtoError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(ProtoError::InvalidRate(rate));
    }
    let d_m = spec.weight_counts()[max_layer(spec)?];
    Ok(((rate * d_m as f64).round() as usize).max(1))
}

/// Number of unique stored values for a resolved source (scales excluded).
pub fn unique_count(src: &PrototypeSource, spec: &NetworkSpec) -> Result<usize, ProtoError> {
    let counts = spec.weight_counts();
    Ok(match src.strategy {
        Strategy::Dense => counts.iter().sum(),
        Strategy::OneLayer => one_layer_groups(spec)
            .iter()
            .enumerate()
            .filter(|(i, g)| i == *g)
            .map(|(i, _)| counts[i])
            .sum(),
        Strategy::Mp => counts[max_layer(spec)?],
        Strategy::Rp => src.resolve(spec)?.vector_len().expect("resolved"),
    })
}

fn expect_strategy(src: &PrototypeSource, want: Strategy) -> Result<(), ProtoError> {
    if src.strategy != want {
        return Err(ProtoError::WrongStrategy {
            expected: want.name(),
            found: src.strategy.name(),
        });
    }
    Ok(())
}

fn weight_stream(seed: u64, layer: usize) -> RngStream {
    rng_stream(seed, layer as u64)
}

fn scaled(unit: Vec<f32>, std: f32) -> Vec<f32> {
    unit.into_iter().map(|v| v * std).collect()
}

fn fans(spec: &NetworkSpec) -> Vec<usize> {
    spec.weighted_specs().map(LayerSpec::fan_in).collect()
}

/// Independent kaiming draws for every weighted layer.
pub fn init_dense(spec: &NetworkSpec, src: &PrototypeSource) -> Result<FilledWeights, ProtoError> {
    expect_strategy(src, Strategy::Dense)?;
    let mut payload = Vec::with_capacity(spec.parameter_count());
    for (i, (d, fan)) in spec.weight_counts().into_iter().zip(fans(spec)).enumerate() {
        let unit = src.init.draw_unit(&mut weight_stream(src.seed, i), d);
        payload.extend(scaled(unit, kaiming_std(fan)));
    }
    expand_payload(spec, Strategy::Dense, payload, None)
}

/// One prototype per distinct layer shape, copied into later layers of that
/// shape.
pub fn one_layer_fill(spec: &NetworkSpec, src: &PrototypeSource) -> Result<FilledWeights, ProtoError> {
    expect_strategy(src, Strategy::OneLayer)?;
    let groups = one_layer_groups(spec);
    let mut payload = Vec::new();
    for (i, (d, fan)) in spec.weight_counts().into_iter().zip(fans(spec)).enumerate() {
        if groups[i] == i {
            let unit = src.init.draw_unit(&mut weight_stream(src.seed, i), d);
            payload.extend(scaled(unit, kaiming_std(fan)));
        }
    }
    expand_payload(spec, Strategy::OneLayer, payload, None)
}

/// The largest layer is drawn once; every layer takes its first `d_l` values.
pub fn mp_fill(spec: &NetworkSpec, src: &PrototypeSource) -> Result<FilledWeights, ProtoError> {
    expect_strategy(src, Strategy::Mp)?;
    let m = max_layer(spec)?;
    let d_m = spec.weight_counts()[m];
    let payload = src.init.draw_unit(&mut weight_stream(src.seed, m), d_m);
    expand_payload(spec, Strategy::Mp, payload, None)
}

/// A length-`d_v` vector tiled cyclically into every layer. The vector is
/// drawn from the largest layer's stream, so with `d_v >= d_m` it reproduces
/// `mp` exactly.
pub fn rp_fill(spec: &NetworkSpec, src: &PrototypeSource) -> Result<FilledWeights, ProtoError> {
    expect_strategy(src, Strategy::Rp)?;
    let d_v = src.resolve(spec)?.vector_len().expect("resolved");
    let m = max_layer(spec)?;
    let payload = src.init.draw_unit(&mut weight_stream(src.seed, m), d_v);
    expand_payload(spec, Strategy::Rp, payload, None)
}

/// Dispatches to the fill routine of `src.strategy`.
pub fn fill(spec: &NetworkSpec, src: &PrototypeSource) -> Result<FilledWeights, ProtoError> {
    match src.strategy {
        Strategy::Dense => init_dense(spec, src),
        Strategy::OneLayer => one_layer_fill(spec, src),
        Strategy::Mp => mp_fill(spec, src),
        Strategy::Rp => rp_fill(spec, src),
    }
}

/// Rebuilds full layers from a payload. `scales` defaults to the strategy's
/// own scales (1 for `dense`/`one_layer`, `sqrt(2 / fan_in)` otherwise).
pub fn expand_payload(
    spec: &NetworkSpec,
    strategy: Strategy,
    payload: Vec<f32>,
    scales: Option<Vec<f32>>,
) -> Result<FilledWeights, ProtoError> {
    let counts = spec.weight_counts();
    let shapes = spec.weight_shapes();
    let layers = counts.len();
    let raw_values: Vec<Vec<f32>> = match strategy {
        Strategy::Dense => {
            let total: usize = counts.iter().sum();
            if payload.len() != total {
                return Err(ProtoError::PayloadLength {
                    expected: total,
                    found: payload.len(),
                });
            }
            let mut offset = 0;
            counts
                .iter()
                .map(|&d| {
                    offset += d;
                    payload[offset - d..offset].to_vec()
                })
                .collect()
        }
        Strategy::OneLayer => {
            let groups = one_layer_groups(spec);
            let expected: usize = (0..layers).filter(|&i| groups[i] == i).map(|i| counts[i]).sum();
            if payload.len() != expected {
                return Err(ProtoError::PayloadLength {
                    expected,
                    found: payload.len(),
                });
            }
            let mut offset = 0;
            let mut out: Vec<Vec<f32>> = Vec::with_capacity(layers);
            for i in 0..layers {
                if groups[i] == i {
                    out.push(payload[offset..offset + counts[i]].to_vec());
                    offset += counts[i];
                } else {
                    let copy = out[groups[i]].clone();
                    out.push(copy);
                }
            }
            out
        }
        Strategy::Mp => {
            let d_m = counts[max_layer(spec)?];
            if payload.len() != d_m {
                return Err(ProtoError::PayloadLength {
                    expected: d_m,
                    found: payload.len(),
                });
            }
            counts.iter().map(|&d| payload[..d].to_vec()).collect()
        }
        Strategy::Rp => {
            if payload.is_empty() {
                return Err(ProtoError::ZeroLength);
            }
            if layers == 0 {
                return Err(ProtoError::NoWeightedLayers);
            }
            counts
                .iter()
                .map(|&d| payload.iter().copied().cycle().take(d).collect())
                .collect()
        }
    };
    let scales = match scales {
        Some(s) if s.len() != layers => {
            return Err(ProtoError::ScaleCount {
                expected: layers,
                found: s.len(),
            })
        }
        Some(s) => s,
        None => default_scales(spec, strategy),
    };
    let raw = raw_values
        .into_iter()
        .zip(shapes)
        .map(|(v, s)| Tensor::new(s, v).expect("payload sized to layer"))
        .collect();
    Ok(FilledWeights { raw, scales, payload })
}

pub fn default_scales(spec: &NetworkSpec, strategy: Strategy) -> Vec<f32> {
    match strategy {
        Strategy::Dense | Strategy::OneLayer => vec![1.0; spec.weighted_layers().len()],
        Strategy::Mp | Strategy::Rp => fans(spec).into_iter().map(kaiming_std).collect(),
    }
}
