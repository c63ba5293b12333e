use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use crate::error::CliError;
use crate::run::{model_ratio, model_unique_count, read_model, read_result, MODEL_FILE, RESULT_FILE};

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub strategy: String,
    pub unique_params: usize,
    pub total_bytes: usize,
    pub ratio: f64,
    pub accuracy: Option<f64>,
}

/// Containers named on the command line: files as given, directories searched
/// recursively for `model.pemn`.
pub fn collect_artifacts(paths: &[PathBuf]) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            out.extend(
                WalkDir::new(p)
                    .sort_by_file_name()
                    .into_iter()
                    .filter_map(Result::ok)
                    .filter(|e| e.file_type().is_file() && e.file_name() == MODEL_FILE)
                    .map(|e| e.into_path()),
            );
        } else {
            out.push(p.clone());
        }
    }
    out
}

/// One row per readable container, sorted by ratio, highest first. Accuracy
/// comes from a `result.json` beside the container when present. Unreadable
/// artifacts are returned with their errors.
pub fn build_rows(artifacts: &[PathBuf]) -> (Vec<ReportRow>, Vec<(PathBuf, CliError)>) {
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for path in artifacts {
        match row(path) {
            Ok(r) => rows.push(r),
            Err(e) => failed.push((path.clone(), e)),
        }
    }
    rows.sort_by(|a, b| b.ratio.total_cmp(&a.ratio).then_with(|| a.name.cmp(&b.name)));
    (rows, failed)
}

fn row(path: &Path) -> Result<ReportRow, CliError> {
    let model = read_model(path)?;
    let report = model.storage_cost();
    let result_path = path.with_file_name(RESULT_FILE);
    let result = result_path.exists().then(|| read_result(&result_path)).transpose()?;
    Ok(ReportRow {
        name: path.display().to_string(),
        strategy: result
            .as_ref()
            .map_or_else(|| model.strategy_name().to_string(), |r| r.strategy.clone()),
        unique_params: model_unique_count(&model)?,
        total_bytes: report.total_bytes,
        ratio: model_ratio(&model, &report),
        accuracy: result.map(|r| r.test_acc),
    })
}

pub fn to_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from("name,strategy,unique_params,total_bytes,ratio,accuracy\n");
    for r in rows {
        let acc = r.accuracy.map_or(String::new(), |a| a.to_string());
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.name, r.strategy, r.unique_params, r.total_bytes, r.ratio, acc
        )
        .expect("string write");
    }
    s
}

pub fn to_text(rows: &[ReportRow]) -> String {
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.name.clone(),
                r.strategy.clone(),
                r.unique_params.to_string(),
                r.total_bytes.to_string(),
                format!("{:.4}", r.ratio),
                r.accuracy.map_or("-".into(), |a| format!("{:.2}", 100.0 * a)),
            ]
        })
        .collect();
    let header = ["artifact", "strategy", "unique", "bytes", "ratio", "acc%"].map(String::from);
    let mut widths = header.clone().map(|h| h.len());
    for c in &cells {
        for (w, v) in widths.iter_mut().zip(c) {
            *w = (*w).max(v.len());
        }
    }
    let mut s = String::new();
    for line in std::iter::once(&header).chain(&cells) {
        let parts: Vec<String> = line
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (v, w))| if i < 2 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        writeln!(s, "{}", parts.join("  ").trim_end()).expect("string write");
    }
    s
}
