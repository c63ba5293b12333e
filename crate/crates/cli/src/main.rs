use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pemn_cli::config::{BaselineConfig, DataConfig, DatasetKind, ExperimentConfig, ModeArg, Preset, StrategyArg};
use pemn_cli::error::{io_err, CliError};
use pemn_cli::report::{build_rows, collect_artifacts, to_csv, to_text};
use pemn_cli::run::{evaluate, read_model, read_result, run_experiment, RESULT_FILE};
use pemn_core::container::WeightSource;
use pemn_core::protogen::InitScheme;
use pemn_core::select::KeepRatio;

#[derive(Parser)]
#[command(
    name = "pemn",
    version,
    about = "Masked random-weight networks: train, restore and measure"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn masks over generated weights (or train dense weights with --strategy dense).
    Train(RunArgs),
    /// Train a conventional sparse network at a target equivalent storage ratio.
    Baseline {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "magnitude")]
        mode: ModeArg,
        /// Target on the equivalent storage ratio axis: 0, or within [0.5, 1).
        #[arg(long)]
        target: f64,
    },
    /// Evaluate a container on a dataset's test split.
    Eval {
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Regenerate a container's network and check it against the recorded accuracy.
    Restore {
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Recorded result; defaults to result.json beside the container.
        #[arg(long)]
        expect: Option<PathBuf>,
    },
    /// Compare containers by size, equivalent ratio and accuracy.
    Report {
        /// Container files or directories holding them.
        #[arg(required = true)]
        artifacts: Vec<PathBuf>,
        /// Write the CSV table here instead of printing it.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print a container's header and storage breakdown.
    Inspect { model: PathBuf },
}

#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long, value_enum)]
    dataset: Option<DatasetKind>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// rp vector length as a fraction of the largest layer.
    #[arg(long)]
    rate: Option<f64>,
    /// Fraction of weights kept per layer.
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    #[command(flatten)]
    data: DataArgs,
    /// Use only the first N training samples.
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Store prototype values in the container instead of only the seed.
    #[arg(long)]
    explicit_prototype: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum InitArg {
    KaimingNormal,
    KaimingUniform,
}

impl RunArgs {
    fn into_config(self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.preset {
            cfg.preset = v;
        }
        if let Some(v) = self.strategy {
            cfg.strategy = v;
        }
        if let Some(v) = self.rate {
            cfg.rate = Some(v);
        }
        if let Some(v) = self.k {
            cfg.select.k = KeepRatio::from_f64(v)?;
        }
        if let Some(v) = self.epochs {
            cfg.select.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.select.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.select.batch_size = v;
        }
        if let Some(v) = self.seed {
            cfg.select.seed = v;
            cfg.seeds = None;
        }
        if let Some(v) = self.repeats {
            cfg.repeats = v;
            cfg.seeds = None;
        }
        if let Some(v) = self.init {
            cfg.init = match v {
                InitArg::KaimingNormal => InitScheme::KaimingNormal,
                InitArg::KaimingUniform => InitScheme::KaimingUniform,
            };
        }
        apply_data(&mut cfg.data, &self.data);
        if let Some(v) = self.train_limit {
            cfg.data.train_limit = Some(v);
        }
        if let Some(v) = self.out {
            cfg.out = v;
        }
        if self.explicit_prototype {
            cfg.explicit_prototype = true;
        }
        Ok(cfg)
    }
}

fn apply_data(cfg: &mut DataConfig, args: &DataArgs) {
    if let Some(v) = args.dataset {
        cfg.kind = v;
    }
    if let Some(v) = &args.data_dir {
        cfg.dir = Some(v.clone());
    }
}

fn train(cfg: ExperimentConfig) -> Result<(), CliError> {
    let results = run_experiment(&cfg)?;
    for r in &results {
        println!(
            "seed {}: {} test_acc {:.4}  {} bytes  ratio {:.4}",
            r.seed, r.strategy, r.test_acc, r.storage.total_bytes, r.ratio
        );
    }
    println!("outputs in {}", cfg.out.display());
    Ok(())
}

/// Dataset matching the model's input; blobs are sized by the preset that fits.
fn load_for(
    model_path: &Path,
    args: &DataArgs,
) -> Result<(pemn_core::container::PemnModel, pemn_core::data::Dataset), CliError> {
    let model = read_model(model_path)?;
    let mut data = DataConfig::default();
    apply_data(&mut data, args);
    let preset = if model.spec.input_shape().len() == 3 {
        Preset::ConvSmall
    } else {
        Preset::MlpSmall
    };
    let dataset = data.load(preset)?;
    Ok((model, dataset))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => train(args.into_config()?),
        Command::Baseline { run, mode, target } => {
            let mut cfg = run.into_config()?;
            cfg.strategy = StrategyArg::Dense;
            cfg.baseline = Some(BaselineConfig {
                mode,
                target_ratio: target,
            });
            train(cfg)
        }
        Command::Eval { model, data } => {
            let (model, dataset) = load_for(&model, &data)?;
            println!("test_acc {}", evaluate(&model, &dataset.test)?);
            Ok(())
        }
        Command::Restore {
            model: path,
            data,
            expect,
        } => {
            let (model, dataset) = load_for(&path, &data)?;
            let restored = evaluate(&model, &dataset.test)?;
            println!("restored test_acc {restored}");
            let required = expect.is_some();
            let expect = expect.unwrap_or_else(|| path.with_file_name(RESULT_FILE));
            if required || expect.exists() {
                let recorded = read_result(&expect)?.test_acc;
                if recorded != restored {
                    return Err(CliError::RestoreMismatch { recorded, restored });
                }
                println!("matches recorded accuracy");
            }
            Ok(())
        }
        Command::Report { artifacts, csv } => {
            let (rows, failed) = build_rows(&collect_artifacts(&artifacts));
            print!("{}", to_text(&rows));
            let table = to_csv(&rows);
            match csv {
                Some(path) => std::fs::write(&path, table).map_err(io_err(path))?,
                None => print!("\n{table}"),
            }
            for (path, err) in &failed {
                eprintln!("skipped {}: {err}", path.display());
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Skipped(failed.len()))
            }
        }
        Command::Inspect { model: path } => {
            let model = read_model(&path)?;
            inspect(&model);
            Ok(())
        }
    }
}

fn inspect(model: &pemn_core::container::PemnModel) {
    let r = model.storage_cost();
    println!("strategy      {}", model.strategy_name());
    println!("seed          {}", model.seed());
    println!("init          {:?}", model.init());
    println!("d_v           {}", model.d_v());
    println!("K             {}/{}", model.k.num(), model.k.den());
    println!(
        "prototype     {}",
        match &model.weights {
            WeightSource::Prototype { explicit: Some(v), .. } => format!("explicit, {} values", v.len()),
            WeightSource::Prototype { explicit: None, .. } => "regenerated from seed".into(),
            WeightSource::Trained { values, .. } => format!("trained, {} kept values", values.len()),
        }
    );
    println!(
        "digest        {}",
        model.prototype_digest.map_or("none".into(), |d| format!("{d:#010x}"))
    );
    println!("input         {:?}", model.spec.input_shape());
    println!("classes       {}", model.spec.classes());
    let mut w = 0;
    for (i, layer) in model.spec.layers().iter().enumerate() {
        if layer.is_weighted() {
            let m = &model.masks.layers[w];
            let (enc, payload) = pemn_core::container::encode_mask(m);
            println!(
                "layer {i:<2}      {:<8} {:?} scale {} ones {}/{} {} {} bytes",
                layer.name(),
                m.shape(),
                model.scales[w],
                model.masks.counts()[w],
                m.len(),
                enc.name(),
                payload.len()
            );
            w += 1;
        } else {
            println!("layer {i:<2}      {}", layer.name());
        }
    }
    println!("C_w           {}", r.weight_bytes);
    println!("C_m           {}", r.mask_bytes);
    println!("overhead      {}", r.overhead_bytes);
    println!("total         {}", r.total_bytes);
    println!("dense         {}", r.dense_bytes);
    println!("conventional  {}", r.conventional_bytes);
    println!("csr exact     {}", r.csr_exact_bytes);
    println!("compression   {:.6}", r.compression_ratio);
    println!("equiv ratio   {:.6}", r.equiv_ratio());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
