use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pemn_core::container::{
    conventional_cost, deserialize, equiv_storage_ratio, PemnModel, StorageReport, WeightSource,
};
use pemn_core::data::{Dataset, Split};
use pemn_core::gradcore::accuracy;
use pemn_core::protogen::{fill, unique_count, InitScheme};
use pemn_core::select::{baseline_sparse_train, train, EpochMetrics, PruneMode};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{io_err, CliError};

pub const MODEL_FILE: &str = "model.pemn";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const RESULT_FILE: &str = "result.json";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Summary of one finished run, stored as `result.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub strategy: String,
    pub seed: u64,
    pub dataset: String,
    /// Accuracy of the saved container on the full test split.
    pub test_acc: f64,
    pub final_train_loss: Option<f64>,
    pub unique_params: usize,
    pub storage: StorageReport,
    /// Position on the equivalent storage ratio axis.
    pub ratio: f64,
}

const EVAL_CHUNK: usize = 1000;

/// Accuracy of a container's network on `split`.
pub fn evaluate(model: &PemnModel, split: &Split) -> Result<f64, CliError> {
    let Some(images) = split.tensor() else {
        return Ok(0.0);
    };
    let weights = model.weights()?;
    Ok(accuracy(
        &model.spec,
        &weights,
        &model.masks.layers,
        &images,
        split.labels(),
        EVAL_CHUNK,
    )?)
}

/// Unique stored weight values of a model.
pub fn model_unique_count(model: &PemnModel) -> Result<usize, CliError> {
    Ok(match &model.weights {
        WeightSource::Prototype { source, .. } => unique_count(source, &model.spec)?,
        WeightSource::Trained { values, .. } => values.len(),
    })
}

/// Equivalent storage ratio. Conventionally trained models sit at their own
/// sparsity; prototype models are placed by their container size.
pub fn model_ratio(model: &PemnModel, report: &StorageReport) -> f64 {
    match model.weights {
        WeightSource::Trained { .. } => equiv_storage_ratio(
            conventional_cost(report.parameters, 1.0 - report.kept as f64 / report.parameters as f64).total(),
            report.parameters,
        ),
        WeightSource::Prototype { .. } => report.equiv_ratio(),
    }
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,lr,train_loss,test_acc\n");
    for m in metrics {
        writeln!(s, "{},{},{},{}", m.epoch, m.lr, m.train_loss, m.test_acc).expect("string write");
    }
    s
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write(path, text)
}

/// Trains one model and writes its container, metrics, config snapshot and
/// result into `dir`.
pub fn run_single(cfg: &ExperimentConfig, seed: u64, data: &Dataset, dir: &Path) -> Result<RunResult, CliError> {
    let run_cfg = cfg.for_run(seed, dir.to_path_buf());
    let spec = cfg.preset.build(data.train.sample_shape(), data.classes)?;
    let (model, metrics) = match run_cfg.prototype(seed) {
        None => {
            let (mode, target) = match &cfg.baseline {
                Some(b) => (PruneMode::from(b.mode), b.target_ratio),
                None => (PruneMode::RandomPrune, 0.0),
            };
            let out = baseline_sparse_train(&spec, &run_cfg.select, mode, target, data)?;
            let model = PemnModel::from_trained(&spec, seed, InitScheme::KaimingNormal, &out.weights, out.mask)?;
            (model, out.metrics)
        }
        Some(src) => {
            let src = src.resolve(&spec)?;
            let filled = fill(&spec, &src)?;
            let out = train(&spec, &filled.effective(), &run_cfg.select, data)?;
            let mut model = PemnModel::from_prototype(&spec, &src, &filled, run_cfg.select.k, out.mask)?;
            if cfg.explicit_prototype {
                model = model.with_explicit_prototype(filled.payload().to_vec())?;
            }
            (model, out.metrics)
        }
    };
    let bytes = model.serialize()?;
    let storage = model.storage_cost();
    let result = RunResult {
        strategy: model_label(cfg),
        seed,
        dataset: data.name.clone(),
        test_acc: evaluate(&model, &data.test)?,
        final_train_loss: metrics.last().map(|m| m.train_loss),
        unique_params: model_unique_count(&model)?,
        ratio: model_ratio(&model, &storage),
        storage,
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write(&dir.join(MODEL_FILE), &bytes)?;
    write(&dir.join(METRICS_FILE), metrics_csv(&metrics))?;
    write_json(&dir.join(CONFIG_FILE), &run_cfg)?;
    write_json(&dir.join(RESULT_FILE), &result)?;
    Ok(result)
}

fn model_label(cfg: &ExperimentConfig) -> String {
    match (&cfg.baseline, cfg.rate) {
        (Some(b), _) => format!("{}@{}", PruneMode::from(b.mode).name(), b.target_ratio),
        (None, Some(rate)) => format!("{}({rate})", cfg.strategy.name()),
        (None, None) => cfg.strategy.name().to_string(),
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

pub fn summary_csv(results: &[RunResult]) -> String {
    let rows: [(&str, Vec<f64>); 4] = [
        ("test_acc", results.iter().map(|r| r.test_acc).collect()),
        (
            "final_train_loss",
            results.iter().filter_map(|r| r.final_train_loss).collect(),
        ),
        (
            "total_bytes",
            results.iter().map(|r| r.storage.total_bytes as f64).collect(),
        ),
        ("ratio", results.iter().map(|r| r.ratio).collect()),
    ];
    let mut s = String::from("metric,mean,std,n\n");
    for (name, v) in rows {
        if v.is_empty() {
            continue;
        }
        let (m, sd) = mean_std(&v);
        writeln!(s, "{name},{m},{sd},{}", v.len()).expect("string write");
    }
    s
}

/// Runs every repeat of an experiment. A single run writes straight into
/// `cfg.out`; repeats get one `seed-<n>` directory each plus `summary.csv`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunResult>, CliError> {
    cfg.validate()?;
    let data = cfg.data.load(cfg.preset)?;
    let seeds = cfg.seeds();
    if seeds.len() == 1 {
        return Ok(vec![run_single(cfg, seeds[0], &data, &cfg.out)?]);
    }
    let mut results = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let dir: PathBuf = cfg.out.join(format!("seed-{seed}"));
        results.push(run_single(cfg, seed, &data, &dir)?);
    }
    write(&cfg.out.join(SUMMARY_FILE), summary_csv(&results))?;
    write_json(&cfg.out.join(CONFIG_FILE), cfg)?;
    Ok(results)
}

pub fn read_model(path: &Path) -> Result<PemnModel, CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(deserialize(&bytes)?)
}

pub fn read_result(path: &Path) -> Result<RunResult, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}
