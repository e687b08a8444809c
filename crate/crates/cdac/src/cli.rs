//! Experiment commands and their artifacts.
//!
//! `run` executes a config and writes four artifacts into the output
//! directory: the config echo (rerunnable as-is), the metrics CSV, a JSON
//! summary, and optionally a feature dump. None of them contain timestamps,
//! so a rerun of the same config is byte-identical. `sweep` runs the
//! ablation grid of a config; `compare` aligns the final/best accuracies of
//! several metrics files and aggregates mean and standard deviation per arm.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{parse_config, ConfigError, ExperimentConfig};
use crate::data::DataError;
use crate::trainer::{run_experiment, EvalRecord, LossToggles, RunReport, TrainError};

/// Environment variable that overrides the root for relative output dirs.
pub const OUTPUT_ROOT_ENV: &str = "CDAC_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}: metrics schema mismatch: {msg}")]
    SchemaMismatch { file: PathBuf, msg: String },
    #[error("compare needs at least two metrics files")]
    NotEnoughFiles,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Resolves a configured output directory against the env override. Absolute
/// paths are used as-is.
pub fn resolve_output_dir(configured: &str) -> PathBuf {
    let dir = PathBuf::from(configured);
    if dir.is_absolute() {
        return dir;
    }
    match std::env::var(OUTPUT_ROOT_ENV) {
        Ok(root) if !root.is_empty() => PathBuf::from(root).join(dir),
        _ => dir,
    }
}

/// Paths of the artifacts one run writes.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub config_echo: PathBuf,
    pub metrics_csv: PathBuf,
    pub summary_json: PathBuf,
    pub features_csv: Option<PathBuf>,
}

fn metrics_csv_text(records: &[EvalRecord], num_classes: usize) -> String {
    let mut out = EvalRecord::csv_header(num_classes);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn summary_json_text(config: &ExperimentConfig, report: &RunReport) -> String {
    let mut config_map = serde_json::Map::new();
    for (k, v) in config.as_pairs() {
        config_map.insert(k, serde_json::Value::String(v));
    }
    let summary = serde_json::json!({
        "method": config.train.method.name(),
        "setting": config.train.setting.name(),
        "seed": config.train.hyper.seed,
        "final_accuracy": report.metrics.final_accuracy,
        "best_accuracy": report.metrics.best_accuracy,
        "evaluations": report.metrics.records.len(),
        "config": serde_json::Value::Object(config_map),
    });
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serialization");
    text.push('\n');
    text
}

fn features_csv_text(
    config: &ExperimentConfig,
    report: &RunReport,
    dataset: &crate::data::SsdaDataset,
) -> Result<String, CliError> {
    let dim = config.train.feature_dim;
    let mut out = String::from("domain,split,class");
    for d in 0..dim {
        write!(out, ",feat_{d}").unwrap();
    }
    out.push('\n');
    let mut dump =
        |domain: &str, split: &str, xs: &[Vec<f64>], labels: &[usize]| -> Result<(), CliError> {
            if xs.is_empty() {
                return Ok(());
            }
            let feats = crate::trainer::normalized_features(&report.params, xs)?;
            for (r, &label) in labels.iter().enumerate() {
                write!(out, "{domain},{split},{label}").unwrap();
                for d in 0..dim {
                    write!(out, ",{}", feats[r * dim + d]).unwrap();
                }
                out.push('\n');
            }
            Ok(())
        };
    let src_x: Vec<Vec<f64>> = dataset.source.iter().map(|s| s.features.clone()).collect();
    let src_y: Vec<usize> = dataset.source.iter().map(|s| s.label).collect();
    dump("source", "src", &src_x, &src_y)?;
    let tl_x: Vec<Vec<f64>> = dataset
        .target_labeled
        .iter()
        .map(|s| s.features.clone())
        .collect();
    let tl_y: Vec<usize> = dataset.target_labeled.iter().map(|s| s.label).collect();
    dump("target", "tgt-l", &tl_x, &tl_y)?;
    dump(
        "target",
        "tgt-u",
        &dataset.target_unlabeled,
        &dataset.unlabeled_truth,
    )?;
    let te_x: Vec<Vec<f64>> = dataset
        .target_test
        .iter()
        .map(|s| s.features.clone())
        .collect();
    let te_y: Vec<usize> = dataset.target_test.iter().map(|s| s.label).collect();
    dump("target", "test", &te_x, &te_y)?;
    Ok(out)
}

/// Builds the dataset, trains, and writes all artifacts. The returned report
/// mirrors what was written.
pub fn run(config: &ExperimentConfig) -> Result<(RunArtifacts, RunReport), CliError> {
    let dataset = config.data.build_dataset()?;
    let report = run_experiment(&config.train, &dataset)?;

    let out_dir = resolve_output_dir(&config.output_dir);
    std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;

    let config_echo = out_dir.join("config.echo.txt");
    std::fs::write(&config_echo, config.serialize()).map_err(io_err(&config_echo))?;

    let metrics_csv = out_dir.join("metrics.csv");
    std::fs::write(
        &metrics_csv,
        metrics_csv_text(&report.metrics.records, dataset.num_classes),
    )
    .map_err(io_err(&metrics_csv))?;

    let summary_json = out_dir.join("summary.json");
    std::fs::write(&summary_json, summary_json_text(config, &report))
        .map_err(io_err(&summary_json))?;

    let features_csv = if config.emit_features {
        let path = out_dir.join("features.csv");
        std::fs::write(&path, features_csv_text(config, &report, &dataset)?)
            .map_err(io_err(&path))?;
        Some(path)
    } else {
        None
    };

    Ok((
        RunArtifacts {
            out_dir,
            config_echo,
            metrics_csv,
            summary_json,
            features_csv,
        },
        report,
    ))
}

/// Reads and runs a config file.
pub fn run_from_file(path: &Path) -> Result<(RunArtifacts, RunReport), CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let config = parse_config(&text)?;
    run(&config)
}

// ── Ablation sweep ───────────────────────────────────────────────────

/// The ablation grid: which unlabeled terms accompany cross-entropy.
pub const ABLATION_ROWS: &[(&str, LossToggles)] = &[
    (
        "ce",
        LossToggles {
            aac: false,
            pl: false,
            con: false,
        },
    ),
    (
        "ce_aac",
        LossToggles {
            aac: true,
            pl: false,
            con: false,
        },
    ),
    (
        "ce_pl",
        LossToggles {
            aac: false,
            pl: true,
            con: false,
        },
    ),
    (
        "ce_aac_pl",
        LossToggles {
            aac: true,
            pl: true,
            con: false,
        },
    ),
    (
        "full",
        LossToggles {
            aac: true,
            pl: true,
            con: true,
        },
    ),
];

/// Runs every ablation row of a config, one output subdirectory (and one
/// metrics file) per row.
pub fn sweep(config: &ExperimentConfig) -> Result<Vec<(String, RunArtifacts)>, CliError> {
    let mut results = Vec::new();
    for (name, toggles) in ABLATION_ROWS {
        let mut row_cfg = config.clone();
        row_cfg.train.toggles = *toggles;
        row_cfg.output_dir = format!("{}/{}", config.output_dir.trim_end_matches('/'), name);
        let (artifacts, _) = run(&row_cfg)?;
        results.push((name.to_string(), artifacts));
    }
    Ok(results)
}

// ── Compare ──────────────────────────────────────────────────────────

/// One metrics file in a comparison.
#[derive(Debug, Clone)]
pub struct CompareRow {
    pub file: PathBuf,
    pub arm: String,
    pub seed: Option<u64>,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
}

/// Per-arm aggregate over seeds.
#[derive(Debug, Clone)]
pub struct ArmSummary {
    pub arm: String,
    pub runs: usize,
    pub final_mean: f64,
    pub final_std: f64,
    pub best_mean: f64,
    pub best_std: f64,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub arms: Vec<ArmSummary>,
}

fn parse_metrics_file(path: &Path) -> Result<(f64, f64), CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let expected_prefix =
        "step,accuracy,loss_ce,loss_aac,loss_pl,loss_con,pl_coverage,pl_precision,ccd_mean";
    if !header.starts_with(expected_prefix) {
        return Err(CliError::SchemaMismatch {
            file: path.to_path_buf(),
            msg: format!("unexpected header `{header}`"),
        });
    }
    let mut last = None;
    let mut best = f64::NEG_INFINITY;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let acc: f64 = line
            .split(',')
            .nth(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::SchemaMismatch {
                file: path.to_path_buf(),
                msg: format!("bad accuracy on data row {}", i + 1),
            })?;
        last = Some(acc);
        best = best.max(acc);
    }
    let last = last.ok_or_else(|| CliError::SchemaMismatch {
        file: path.to_path_buf(),
        msg: "no data rows".into(),
    })?;
    Ok((last, best))
}

/// Arm identity from the sibling `summary.json`, falling back to the parent
/// directory name when no summary exists.
fn arm_of(path: &Path) -> (String, Option<u64>) {
    let fallback = || {
        path.parent()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| path.to_string_lossy().to_string())
    };
    let summary = path.with_file_name("summary.json");
    let Ok(text) = std::fs::read_to_string(&summary) else {
        return (fallback(), None);
    };
    let Ok(value) = serde_json::from_str::<serde_json::Value>(&text) else {
        return (fallback(), None);
    };
    let seed = value.get("seed").and_then(|v| v.as_u64());
    let method = value.get("method").and_then(|v| v.as_str()).unwrap_or("?");
    let setting = value.get("setting").and_then(|v| v.as_str()).unwrap_or("?");
    let losses = value
        .get("config")
        .map(|c| {
            let flag = |key: &str, tag: &str| -> String {
                match c.get(key).and_then(|v| v.as_str()) {
                    Some("true") => format!("+{tag}"),
                    _ => String::new(),
                }
            };
            format!(
                "{}{}{}",
                flag("train.loss.aac", "aac"),
                flag("train.loss.pl", "pl"),
                flag("train.loss.con", "con")
            )
        })
        .unwrap_or_default();
    (format!("{method}/{setting}{losses}"), seed)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aligns final/best accuracies across metrics files and aggregates per arm.
pub fn compare(files: &[PathBuf]) -> Result<Comparison, CliError> {
    if files.len() < 2 {
        return Err(CliError::NotEnoughFiles);
    }
    let mut rows = Vec::new();
    for file in files {
        let (final_accuracy, best_accuracy) = parse_metrics_file(file)?;
        let (arm, seed) = arm_of(file);
        rows.push(CompareRow {
            file: file.clone(),
            arm,
            seed,
            final_accuracy,
            best_accuracy,
        });
    }
    let mut by_arm: BTreeMap<String, Vec<&CompareRow>> = BTreeMap::new();
    for row in &rows {
        by_arm.entry(row.arm.clone()).or_default().push(row);
    }
    let arms = by_arm
        .into_iter()
        .map(|(arm, rs)| {
            let finals: Vec<f64> = rs.iter().map(|r| r.final_accuracy).collect();
            let bests: Vec<f64> = rs.iter().map(|r| r.best_accuracy).collect();
            let (final_mean, final_std) = mean_std(&finals);
            let (best_mean, best_std) = mean_std(&bests);
            ArmSummary {
                arm,
                runs: rs.len(),
                final_mean,
                final_std,
                best_mean,
                best_std,
            }
        })
        .collect();
    Ok(Comparison { rows, arms })
}

impl Comparison {
    /// Plain-text table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<40} {:>10} {:>10}", "file", "final", "best").unwrap();
        for r in &self.rows {
            writeln!(
                out,
                "{:<40} {:>10.4} {:>10.4}",
                r.file.display(),
                r.final_accuracy,
                r.best_accuracy
            )
            .unwrap();
        }
        writeln!(out).unwrap();
        writeln!(
            out,
            "{:<28} {:>5} {:>18} {:>18}",
            "arm", "runs", "final mean±std", "best mean±std"
        )
        .unwrap();
        for a in &self.arms {
            writeln!(
                out,
                "{:<28} {:>5} {:>9.4}±{:<8.4} {:>9.4}±{:<8.4}",
                a.arm, a.runs, a.final_mean, a.final_std, a.best_mean, a.best_std
            )
            .unwrap();
        }
        out
    }

    /// CSV form of the per-arm aggregate.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("arm,runs,final_mean,final_std,best_mean,best_std\n");
        for a in &self.arms {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                a.arm, a.runs, a.final_mean, a.final_std, a.best_mean, a.best_std
            )
            .unwrap();
        }
        out
    }
}
