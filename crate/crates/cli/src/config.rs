use std::path::{Path, PathBuf};

use clap::ValueEnum;
use pemn_core::data::{load_cifar10, load_mnist, synth_blobs, Dataset};
use pemn_core::gradcore::{LayerSpec, NetworkSpec};
use pemn_core::protogen::{InitScheme, PrototypeSource, Strategy};
use pemn_core::select::{PruneMode, SelectConfig};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError};

/// Desk-scale network shapes; input size and class count come from the
/// dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Preset {
    /// in-256-256-classes
    MlpSmall,
    /// in-512-512-512-classes; the two 512x512 layers share a shape.
    MlpWide,
    /// conv3x3(16) relu conv3x3/2(32) relu avgpool flatten linear
    ConvSmall,
}

impl Preset {
    pub fn build(self, input: &[usize], classes: usize) -> Result<NetworkSpec, CliError> {
        let flat: usize = input.iter().product();
        let spec = match self {
            Preset::MlpSmall => NetworkSpec::mlp(&[flat, 256, 256, classes])?,
            Preset::MlpWide => NetworkSpec::mlp(&[flat, 512, 512, 512, classes])?,
            Preset::ConvSmall => {
                let [c, h, w] = input else {
                    return Err(CliError::Validation(format!(
                        "conv_small needs [channels, height, width] samples, got {input:?}"
                    )));
                };
                // After the stride-2 conv the map is ceil(h/2); pool it down to 2x2.
                let (h2, w2) = (h.div_ceil(2), w.div_ceil(2));
                if h2 != w2 || h2 % 2 != 0 {
                    return Err(CliError::Validation(format!(
                        "conv_small needs square inputs with even half-size, got {h}x{w}"
                    )));
                }
                let layers = vec![
                    LayerSpec::conv2d(*c, 16, 3, 1, 1),
                    LayerSpec::Relu,
                    LayerSpec::conv2d(16, 32, 3, 2, 1),
                    LayerSpec::Relu,
                    LayerSpec::AvgPool2d { kernel: h2 / 2 },
                    LayerSpec::Flatten,
                    LayerSpec::linear(32 * 4, classes),
                ];
                NetworkSpec::new(layers, input.to_vec(), classes)?
            }
        };
        Ok(spec)
    }
}

/// Weight source and training mode of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum StrategyArg {
    /// Ordinary dense training of the weights.
    Dense,
    /// Mask learned over a fully random dense initialization.
    DenseMask,
    OneLayer,
    Mp,
    Rp,
}

impl StrategyArg {
    pub fn prototype(self) -> Option<Strategy> {
        match self {
            StrategyArg::Dense => None,
            StrategyArg::DenseMask => Some(Strategy::Dense),
            StrategyArg::OneLayer => Some(Strategy::OneLayer),
            StrategyArg::Mp => Some(Strategy::Mp),
            StrategyArg::Rp => Some(Strategy::Rp),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StrategyArg::Dense => "dense",
            StrategyArg::DenseMask => "dense-mask",
            StrategyArg::OneLayer => "one-layer",
            StrategyArg::Mp => "mp",
            StrategyArg::Rp => "rp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    /// Gaussian blobs sized to the preset; needs no files.
    Blobs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ModeArg {
    Random,
    Magnitude,
}

impl From<ModeArg> for PruneMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Random => PruneMode::RandomPrune,
            ModeArg::Magnitude => PruneMode::MagnitudePrune,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub mode: ModeArg,
    /// Target on the equivalent storage ratio axis.
    pub target_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub kind: DatasetKind,
    pub dir: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub blobs_classes: usize,
    pub blobs_samples: usize,
    pub blobs_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Mnist,
            dir: None,
            train_limit: None,
            blobs_classes: 10,
            blobs_samples: 2000,
            blobs_seed: 0,
        }
    }
}

impl DataConfig {
    pub fn default_dir(&self) -> PathBuf {
        match self.kind {
            DatasetKind::Mnist => PathBuf::from("data/mnist"),
            DatasetKind::Cifar10 => PathBuf::from("data/cifar-10-batches-bin"),
            DatasetKind::Blobs => PathBuf::new(),
        }
    }

    /// Loads the dataset. Blobs take their dimension from `preset`.
    pub fn load(&self, preset: Preset) -> Result<Dataset, CliError> {
        let dir = self.dir.clone().unwrap_or_else(|| self.default_dir());
        let data = match self.kind {
            DatasetKind::Mnist => load_mnist(&dir)?,
            DatasetKind::Cifar10 => load_cifar10(&dir)?,
            DatasetKind::Blobs => {
                let dim = match preset {
                    Preset::ConvSmall => 28 * 28,
                    _ => 64,
                };
                let mut d = synth_blobs(self.blobs_classes, self.blobs_samples, dim, self.blobs_seed)?;
                if preset == Preset::ConvSmall {
                    d.train = d.train.reshaped(vec![1, 28, 28])?;
                    d.test = d.test.reshaped(vec![1, 28, 28])?;
                }
                d
            }
        };
        Ok(match self.train_limit {
            Some(n) => data.limit_train(n),
            None => data,
        })
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub strategy: StrategyArg,
    /// rp vector length as a fraction of the largest layer.
    pub rate: Option<f64>,
    pub init: InitScheme,
    pub select: SelectConfig,
    pub data: DataConfig,
    pub out: PathBuf,
    pub repeats: usize,
    /// Explicit per-run seeds; defaults to `select.seed + i`.
    pub seeds: Option<Vec<u64>>,
    pub explicit_prototype: bool,
    pub baseline: Option<BaselineConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: Preset::MlpSmall,
            strategy: StrategyArg::DenseMask,
            rate: None,
            init: InitScheme::KaimingNormal,
            select: SelectConfig::default(),
            data: DataConfig::default(),
            out: PathBuf::from("runs/latest"),
            repeats: 1,
            seeds: None,
            explicit_prototype: false,
            baseline: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.select.validate()?;
        if self.repeats == 0 {
            return Err(CliError::Validation("repeats must be >= 1".into()));
        }
        if let Some(seeds) = &self.seeds {
            if seeds.len() != self.repeats {
                return Err(CliError::Validation(format!(
                    "{} seeds given for {} repeats",
                    seeds.len(),
                    self.repeats
                )));
            }
        }
        match (self.strategy, self.rate) {
            (StrategyArg::Rp, None) => return Err(CliError::Validation("rp needs --rate".into())),
            (StrategyArg::Rp, Some(r)) if !(r > 0.0 && r <= 1.0) => {
                return Err(CliError::Validation(format!("rate must lie in (0, 1], got {r}")))
            }
            (s, Some(_)) if s != StrategyArg::Rp => {
                return Err(CliError::Validation(format!(
                    "--rate only applies to rp, not {}",
                    s.name()
                )))
            }
            _ => {}
        }
        if let Some(b) = &self.baseline {
            if self.strategy != StrategyArg::Dense {
                return Err(CliError::Validation(
                    "baselines train dense weights; use strategy dense".into(),
                ));
            }
            if pemn_core::container::sparsity_for_equiv_ratio(b.target_ratio).is_none() {
                return Err(CliError::Validation(format!(
                    "target ratio {} is unreachable; use 0 or a value in [0.5, 1)",
                    b.target_ratio
                )));
            }
            if self.explicit_prototype {
                return Err(CliError::Validation("baselines have no prototype".into()));
            }
        }
        if self.strategy == StrategyArg::Dense && self.explicit_prototype {
            return Err(CliError::Validation("dense training has no prototype".into()));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.repeats as u64).map(|i| self.select.seed + i).collect(),
        }
    }

    pub fn prototype(&self, seed: u64) -> Option<PrototypeSource> {
        let strategy = self.strategy.prototype()?;
        Some(match (strategy, self.rate) {
            (Strategy::Rp, Some(rate)) => PrototypeSource::rp_rate(seed, rate, self.init),
            _ => PrototypeSource::new(strategy, seed, self.init),
        })
    }

    /// The configuration of the single run with `seed`, written next to its
    /// outputs.
    pub fn for_run(&self, seed: u64, out: PathBuf) -> Self {
        Self {
            select: SelectConfig {
                seed,
                ..self.select.clone()
            },
            out,
            repeats: 1,
            seeds: None,
            ..self.clone()
        }
    }
}
