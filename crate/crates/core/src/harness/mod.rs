//! End-to-end plumbing: dataset files, labeling, training, evaluation and
//! single-instance prediction.
//!
//! A run directory holds
//!
//! ```text
//! config.toml            resolved configuration
//! data/{train,val,test}.jsonl
//! train_log.jsonl        one line per optimizer step
//! last.ckpt  best.ckpt
//! metrics.tsv  records.jsonl
//! ```

pub mod config;
pub mod train;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{
    EvaluationConfig, ExperimentConfig, OptimizerConfig, PathsConfig, TrainingConfig, RUN_DIR_ENV,
};
pub use train::{
    predict, train, Checkpoint, Featurizer, StepLog, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT,
    TRAIN_LOG,
};

use crate::datagen::{generate, label_dataset, Dataset, Split};
use crate::error::{Error, Result};
use crate::milp::series::{read_jsonl, write_jsonl};
use crate::milp::{InstanceSeries, OracleOptions, SolveStatus};
use crate::model::ModelOutput;
use crate::select::{
    beta_moments, evaluate_records, reduce_and_solve, score_and_select, summarize, tune_gamma,
    write_metric_table, Backend, EvalItem, EvalRecord, MetricRow,
};

pub const DATA_DIR: &str = "data";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const RECORDS_FILE: &str = "records.jsonl";

pub fn split_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(DATA_DIR).join(format!("{}.jsonl", split.as_str()))
}

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir.join(DATA_DIR))?;
    for split in Split::ALL {
        let out = BufWriter::new(File::create(split_path(dir, split))?);
        write_jsonl(data.split(split), out)?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let mut data = Dataset::default();
    for split in Split::ALL {
        let input = BufReader::new(File::open(split_path(dir, split))?);
        *data.split_mut(split) = read_jsonl(input)?;
    }
    Ok(data)
}

/// Generates the dataset and writes it with the resolved configuration.
pub fn cmd_generate(config: &ExperimentConfig, run_dir: &Path) -> Result<Dataset> {
    let data = generate(&config.generator)?;
    write_dataset(run_dir, &data)?;
    std::fs::write(run_dir.join("config.toml"), config.to_toml()?)?;
    Ok(data)
}

/// Labels `fraction` of the training instances (default
/// `training.labeled_fraction`) and every validation and test instance.
/// Each label carries its solve time, the full-problem baseline.
pub fn label_splits(
    config: &ExperimentConfig,
    data: &mut Dataset,
    fraction: Option<f64>,
) -> Result<()> {
    let opts = config.evaluation.oracle();
    let fraction = fraction.unwrap_or(config.training.labeled_fraction);
    let seed = config.label_seed();
    label_dataset(&mut data.train, &opts, fraction, seed)?;
    label_dataset(&mut data.val, &opts, 1.0, seed)?;
    label_dataset(&mut data.test, &opts, 1.0, seed)?;
    Ok(())
}

pub fn cmd_label(
    config: &ExperimentConfig,
    run_dir: &Path,
    fraction: Option<f64>,
) -> Result<Dataset> {
    let mut data = read_dataset(run_dir)?;
    label_splits(config, &mut data, fraction)?;
    write_dataset(run_dir, &data)?;
    Ok(data)
}

/// Trains on the run directory's dataset; `resume` continues from
/// `last.ckpt`.
pub fn cmd_train(config: &ExperimentConfig, run_dir: &Path, resume: bool) -> Result<Checkpoint> {
    let data = read_dataset(run_dir)?;
    let mut trainer = Trainer::new(config, &data)?;
    if resume {
        trainer.resume(&run_dir.join(LAST_CHECKPOINT))?;
    }
    trainer.run(Some(run_dir))?;
    Ok(trainer.into_checkpoint())
}

/// Each row carries the `γ` used at its `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<MetricRow>,
    pub records: Vec<EvalRecord>,
}

fn items<'a>(series: &'a [InstanceSeries], outputs: &'a [Vec<ModelOutput>]) -> Vec<EvalItem<'a>> {
    series
        .iter()
        .zip(outputs)
        .flat_map(|(s, outs)| {
            s.instances.iter().zip(&s.labels).zip(outs).enumerate().map(
                |(t, ((instance, label), output))| EvalItem {
                    series: &s.id,
                    t,
                    instance,
                    label: label.as_ref(),
                    output,
                },
            )
        })
        .collect()
}

/// Tunes `γ` on `val` (per `ρ`, or once at `eval.tune_rho`), then scores
/// `test` on the `ρ` grid. Model outputs are computed once and reused.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    val: &[InstanceSeries],
    test: &[InstanceSeries],
    eval: &EvaluationConfig,
) -> Result<EvaluationReport> {
    let opts = eval.oracle();
    let val_outs = if val.is_empty() || eval.gamma_grid.len() == 1 {
        None
    } else {
        Some(ckpt.predict(val)?)
    };
    let tune = |rho: f64| -> Result<f64> {
        match &val_outs {
            Some(outs) => tune_gamma(&items(val, outs), rho, &eval.gamma_grid, &opts),
            None => Ok(eval.gamma_grid[0]),
        }
    };
    let shared = eval.tune_rho.map(tune).transpose()?;
    let test_outs = ckpt.predict(test)?;
    let test_items = items(test, &test_outs);
    let mut records = Vec::new();
    for &rho in &eval.rho_grid {
        let gamma = match shared {
            Some(g) => g,
            None => tune(rho)?,
        };
        records.extend(evaluate_records(&test_items, &[rho], gamma, &opts)?);
    }
    let rows = summarize(&eval.method, &records);
    Ok(EvaluationReport { rows, records })
}

pub fn cmd_evaluate(
    config: &ExperimentConfig,
    run_dir: &Path,
    checkpoint: Option<&Path>,
) -> Result<EvaluationReport> {
    let path = checkpoint.map_or_else(|| run_dir.join(BEST_CHECKPOINT), Path::to_path_buf);
    let ckpt = Checkpoint::load(&path)?;
    let data = read_dataset(run_dir)?;
    let report = evaluate_checkpoint(&ckpt, &data.val, &data.test, &config.evaluation)?;
    write_metric_table(
        &report.rows,
        BufWriter::new(File::create(run_dir.join(METRICS_FILE))?),
    )?;
    let mut out = BufWriter::new(File::create(run_dir.join(RECORDS_FILE))?);
    for r in &report.records {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
    }
    out.flush()?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariablePrediction {
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub sigma: f64,
    pub score: f64,
    /// Value the variable is fixed to, if selected.
    pub fixed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub series: String,
    pub t: usize,
    pub rho: f64,
    pub gamma: f64,
    pub binaries: Vec<VariablePrediction>,
    /// Selected indices in score order.
    pub fixed: Vec<usize>,
    /// Completed solution when the residual fits the oracle.
    pub status: Option<SolveStatus>,
    pub objective: Option<f64>,
    pub assignment: Option<Vec<f64>>,
}

/// Scores, fixes and (when possible) completes every instance of `series`.
pub fn predict_series(
    ckpt: &Checkpoint,
    series: &[InstanceSeries],
    rho: f64,
    gamma: f64,
    opts: &OracleOptions,
) -> Result<Vec<Prediction>> {
    let outputs = ckpt.predict(series)?;
    let mut out = Vec::new();
    for (s, outs) in series.iter().zip(&outputs) {
        for (t, (inst, o)) in s.instances.iter().zip(outs).enumerate() {
            let sel = score_and_select(&o.alpha, &o.beta, gamma, rho)?;
            let mask = sel.fixed_mask();
            let binaries = (0..o.alpha.len())
                .map(|j| {
                    let (mu, sigma) = beta_moments(o.alpha[j], o.beta[j]);
                    VariablePrediction {
                        alpha: o.alpha[j],
                        beta: o.beta[j],
                        mu,
                        sigma,
                        score: sel.scores[j],
                        fixed: mask[j],
                    }
                })
                .collect();
            let (status, objective, assignment) =
                match reduce_and_solve(inst, &sel, &Backend::Oracle(*opts)) {
                    Ok(r) => (Some(r.status), Some(r.objective), Some(r.assignment)),
                    Err(Error::TooManyBinaries { .. }) => (None, None, None),
                    Err(e) => return Err(e),
                };
            out.push(Prediction {
                series: s.id.clone(),
                t,
                rho,
                gamma,
                binaries,
                fixed: sel.selected.clone(),
                status,
                objective,
                assignment,
            });
        }
    }
    Ok(out)
}

/// Reads series from `input`, writes one JSON prediction per line to `output`.
pub fn cmd_predict(
    checkpoint: &Path,
    input: &Path,
    rho: f64,
    gamma: f64,
    output: &Path,
) -> Result<Vec<Prediction>> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let series = read_jsonl(BufReader::new(File::open(input)?))?;
    let preds = predict_series(&ckpt, &series, rho, gamma, &ckpt.config.evaluation.oracle())?;
    let mut out = BufWriter::new(File::create(output)?);
    for p in &preds {
        writeln!(out, "{}", serde_json::to_string(p)?)?;
    }
    out.flush()?;
    Ok(preds)
}
