//! Command-line front end. Exit code 0 on success, 1 on invalid input and
//! 2 on a failed computation; errors go to standard error as one JSON line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::{concatenate, Axis};
use serde_json::json;

use crate::data::Dataset;
use crate::error::{FcrError, Result};
use crate::eval::{counterfactual_predict, evaluate};
use crate::io::{atomic_write, export_dataset, load_dataset_dir, RunConfig};
use crate::model::FcrModel;
use crate::simgen::{check_interaction_rank, generate_synthetic};
use crate::train::{grid_search, load_checkpoint, save_checkpoint, split_dataset, train, Splits};

pub const CHECKPOINT_FILE: &str = "model.fcrc";
pub const SPLITS_FILE: &str = "splits.json";

#[derive(Debug, Parser)]
#[command(name = "fcr", version, about = "Factorized causal representation learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// Flat `section.key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Bundled profile applied before the configuration file.
    #[arg(long)]
    pub profile: Option<String>,
    /// Override any configuration key, e.g. `--set train.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for simulation, initialization, splitting, training and evaluation.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with ground-truth latents.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a model and write its checkpoint, history and splits.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Compute the metrics report for a trained model.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the splits file beside the checkpoint.
        #[arg(long)]
        splits: Option<PathBuf>,
    },
    /// Predict treated expression for held-out control cells.
    Predict {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        splits: Option<PathBuf>,
    },
    /// Train every cell of the loss-weight grid and rank by validation loss.
    Gridsearch {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Write per-cell posterior means of every latent block.
    ExportEmbeddings {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Report the numerical rank of the interaction-identifiability matrix.
    RankCheck {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

impl Command {
    fn config_args(&self) -> &ConfigArgs {
        match self {
            Command::Simulate { cfg }
            | Command::Train { cfg, .. }
            | Command::Evaluate { cfg, .. }
            | Command::Predict { cfg, .. }
            | Command::Gridsearch { cfg, .. }
            | Command::ExportEmbeddings { cfg, .. }
            | Command::RankCheck { cfg } => cfg,
        }
    }
}

/// Defaults, then profile, then file, then `--seed`, then `--set`.
pub fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.profile {
        Some(p) => RunConfig::profile(p)?,
        None => RunConfig::default(),
    };
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_path(dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| FcrError::io(dir, e))?;
    Ok(dir.join(name))
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<PathBuf> {
    let path = out_path(dir, name)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(&path, text.as_bytes())?;
    Ok(path)
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    let ingested = load_dataset_dir(dir)?;
    for w in &ingested.warnings {
        eprintln!("{}", json!({ "warning": w }));
    }
    Ok(ingested.dataset)
}

fn load_model(checkpoint: &Path, ds: &Dataset) -> Result<FcrModel> {
    let model = load_checkpoint(checkpoint)?;
    model.config.check_dataset(ds)?;
    Ok(model)
}

/// Explicit splits file, else the one saved beside the checkpoint, else a
/// fresh split from the configured seed.
fn resolve_splits(explicit: Option<&Path>, checkpoint: &Path, ds: &Dataset, cfg: &RunConfig) -> Result<Splits> {
    let beside = checkpoint.with_file_name(SPLITS_FILE);
    let path = match explicit {
        Some(p) => Some(p.to_path_buf()),
        None => beside.exists().then_some(beside),
    };
    let splits: Splits = match path {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| FcrError::io(&p, e))?;
            serde_json::from_str(&text).map_err(|e| FcrError::Format {
                path: p.clone(),
                message: e.to_string(),
            })?
        }
        None => split_dataset(ds, &cfg.train.split, cfg.train.seed)?,
    };
    let n = ds.n_cells();
    if let Some(&bad) = [&splits.train, &splits.validation, &splits.test, &splits.prediction]
        .iter()
        .flat_map(|s| s.iter())
        .find(|&&r| r >= n)
    {
        return Err(FcrError::Index { index: bad, len: n });
    }
    Ok(splits)
}

fn csv_table(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| FcrError::Format {
        path: PathBuf::new(),
        message: e.to_string(),
    };
    w.write_record(&header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| FcrError::Format {
        path: PathBuf::new(),
        message: e.to_string(),
    })
}

/// Runs one parsed command and returns its summary for standard output.
pub fn execute(command: &Command) -> Result<serde_json::Value> {
    let cfg = resolve_config(command.config_args())?;
    let out = &command.config_args().out_dir;
    match command {
        Command::Simulate { .. } => {
            let ds = generate_synthetic(&cfg.sim)?;
            export_dataset(&ds, out)?;
            atomic_write(&out_path(out, "config.toml")?, cfg.to_toml().as_bytes())?;
            Ok(json!({ "command": "simulate", "cells": ds.n_cells(), "genes": ds.n_genes(), "out_dir": out }))
        }
        Command::Train { dataset, .. } => {
            let ds = load_dataset(dataset)?;
            let mc = cfg.model_config(&ds);
            let outcome = train(&ds, &mc, &cfg.train)?;
            save_checkpoint(&outcome.model, &out_path(out, CHECKPOINT_FILE)?)?;
            write_json(out, SPLITS_FILE, &outcome.splits)?;
            write_json(out, "status.json", &outcome.status)?;
            atomic_write(&out_path(out, "history.jsonl")?, outcome.history.to_jsonl().as_bytes())?;
            atomic_write(&out_path(out, "config.toml")?, cfg.to_toml().as_bytes())?;
            let best = outcome.history.best_val_total;
            let steps = outcome.history.steps.len();
            outcome.into_result()?;
            Ok(json!({ "command": "train", "steps": steps, "best_val_total": best, "out_dir": out }))
        }
        Command::Evaluate {
            dataset,
            checkpoint,
            splits,
            ..
        } => {
            let ds = load_dataset(dataset)?;
            let model = load_model(checkpoint, &ds)?;
            let splits = resolve_splits(splits.as_deref(), checkpoint, &ds, &cfg)?;
            let report = evaluate(&model, &ds, Some(&splits), &cfg.eval)?;
            let path = write_json(out, "metrics.json", &report)?;
            Ok(json!({ "command": "evaluate", "mcc": report.mcc, "r2": report.r2, "report": path }))
        }
        Command::Predict {
            dataset,
            checkpoint,
            splits,
            ..
        } => {
            let ds = load_dataset(dataset)?;
            let model = load_model(checkpoint, &ds)?;
            let splits = resolve_splits(splits.as_deref(), checkpoint, &ds, &cfg)?;
            predict(&model, &ds, &splits, out)
        }
        Command::Gridsearch { dataset, .. } => {
            let ds = load_dataset(dataset)?;
            let mc = cfg.model_config(&ds);
            let cache = out_path(out, "cache")?;
            std::fs::create_dir_all(&cache).map_err(|e| FcrError::io(&cache, e))?;
            let report = grid_search(&ds, &mc, &cfg.train, &cfg.grid, Some(&cache))?;
            let path = write_json(out, "grid.json", &report)?;
            Ok(json!({
                "command": "gridsearch",
                "cells": cfg.grid.len(),
                "failures": report.failures.len(),
                "best": report.ranked.first(),
                "report": path,
            }))
        }
        Command::ExportEmbeddings { dataset, checkpoint, .. } => {
            let ds = load_dataset(dataset)?;
            let model = load_model(checkpoint, &ds)?;
            let rows: Vec<usize> = (0..ds.n_cells()).collect();
            let b = model.encode_rows(&ds, &rows)?;
            let z = b.stacked_means();
            let d = model.dims();
            let mut header = vec!["cell_id".to_string(), "covariate".into(), "treatment".into()];
            header.extend((0..d.n_x).map(|i| format!("z_x{i}")));
            header.extend((0..d.n_tx).map(|i| format!("z_tx{i}")));
            header.extend((0..d.n_t).map(|i| format!("z_t{i}")));
            let body = csv_table(
                header,
                rows.iter().map(|&r| {
                    let mut v = vec![ds.cell_ids[r].clone(), ds.covariates.name(r).into(), ds.treatments.name(r).into()];
                    v.extend(z.row(r).iter().map(|x| format!("{x}")));
                    v
                }),
            )?;
            let path = out_path(out, "embeddings.csv")?;
            atomic_write(&path, &body)?;
            Ok(json!({ "command": "export-embeddings", "cells": ds.n_cells(), "file": path }))
        }
        Command::RankCheck { .. } => {
            let report = check_interaction_rank(&cfg.sim)?;
            let path = write_json(out, "rank.json", &report)?;
            Ok(json!({ "command": "rank-check", "rank": report.matrix_rank, "required": report.required_rank, "satisfied": report.satisfied, "file": path }))
        }
    }
}

/// Decodes every held-out control under each non-control treatment seen
/// in the test split.
fn predict(model: &FcrModel, ds: &Dataset, splits: &Splits, out: &Path) -> Result<serde_json::Value> {
    let mut blocks = Vec::new();
    let mut index = Vec::new();
    for level in 0..ds.treatments.n_levels() {
        if Some(level) == ds.control_level {
            continue;
        }
        let refs: Vec<usize> = splits.test.iter().copied().filter(|&r| ds.treatments.codes[r] == level).collect();
        if refs.is_empty() {
            continue;
        }
        let cf = counterfactual_predict(model, ds, &splits.prediction, &refs)?;
        for (c, r) in cf.control_rows.iter().zip(&cf.reference_rows) {
            index.push(vec![
                ds.cell_ids[*c].clone(),
                ds.cell_ids[*r].clone(),
                ds.covariates.name(*c).to_string(),
                ds.treatments.name(*r).to_string(),
            ]);
        }
        blocks.push(cf.predictions);
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let pred = if views.is_empty() {
        ndarray::Array2::zeros((0, ds.n_genes()))
    } else {
        concatenate(Axis(0), &views).expect("gene counts agree")
    };
    let matrix = out_path(out, "predictions.csv")?;
    crate::io::write_csv_matrix(&matrix, &pred, Some(&ds.gene_names))?;
    let header = ["control_id", "reference_id", "covariate", "treatment"].map(String::from).to_vec();
    atomic_write(&out_path(out, "predictions_index.csv")?, &csv_table(header, index.into_iter())?)?;
    Ok(json!({ "command": "predict", "rows": pred.nrows(), "file": matrix }))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", json!({ "error": "usage", "message": e.to_string().trim() }));
            return 1;
        }
    };
    match execute(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
