//! Confidence scores, variable fixing, reduced solves, and evaluation metrics.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::milp::mps::export_mps;
use crate::milp::{
    solve_exact, Label, MilpInstance, OracleOptions, SolveReport, SolveStatus, FEAS_TOL,
};
use crate::model::ModelOutput;
use crate::sparse::CsrMatrix;

/// Beta mean and standard deviation.
pub fn beta_moments(alpha: f64, beta: f64) -> (f64, f64) {
    let s = alpha + beta;
    (alpha / s, (alpha * beta / (s * s * (s + 1.0))).sqrt())
}

/// `min(μ, 1 − μ) + γσ`.
pub fn score(mu: f64, sigma: f64, gamma: f64) -> f64 {
    mu.min(1.0 - mu) + gamma * sigma
}

/// `⌈ρ·n⌉`, treating products within 1e-9 of an integer as that integer so
/// that e.g. `0.3 · 10` fixes 3 variables, not 4.
pub fn fixed_count(rho: f64, n: usize) -> usize {
    let x = rho * n as f64;
    let r = x.round();
    let k = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (k.max(0.0) as usize).min(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Chosen binaries, lowest score first.
    pub selected: Vec<usize>,
    /// Value each selected binary is fixed to, aligned with `selected`.
    pub values: Vec<f64>,
    pub scores: Vec<f64>,
    pub rho: f64,
    pub gamma: f64,
}

impl SelectionResult {
    pub fn num_binary(&self) -> usize {
        self.scores.len()
    }

    /// `Some(value)` for fixed binaries.
    pub fn fixed_mask(&self) -> Vec<Option<f64>> {
        let mut mask = vec![None; self.scores.len()];
        for (&j, &v) in self.selected.iter().zip(&self.values) {
            mask[j] = Some(v);
        }
        mask
    }
}

pub fn score_and_select(
    alpha: &[f64],
    beta: &[f64],
    gamma: f64,
    rho: f64,
) -> Result<SelectionResult> {
    if alpha.len() != beta.len() {
        return Err(Error::dims("score_and_select", alpha.len(), beta.len()));
    }
    if !(0.0..=1.0).contains(&rho) || gamma < 0.0 || !gamma.is_finite() {
        return Err(Error::Config(format!(
            "need ρ ∈ [0, 1] and γ ≥ 0, got ρ={rho}, γ={gamma}"
        )));
    }
    let moments: Vec<(f64, f64)> = alpha
        .iter()
        .zip(beta)
        .map(|(a, b)| beta_moments(*a, *b))
        .collect();
    let scores: Vec<f64> = moments.iter().map(|(m, s)| score(*m, *s, gamma)).collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]).then(i.cmp(&j)));
    order.truncate(fixed_count(rho, scores.len()));
    let values = order
        .iter()
        .map(|&j| if moments[j].0 >= 0.5 { 1.0 } else { 0.0 })
        .collect();
    Ok(SelectionResult {
        selected: order,
        values,
        scores,
        rho,
        gamma,
    })
}

/// The residual problem after fixing, plus what is needed to map back.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub reduced: MilpInstance,
    /// Original index of each reduced column.
    pub free: Vec<usize>,
    /// Full-length vector holding the fixed values (zeros elsewhere).
    pub base: Vec<f64>,
}

impl Reduction {
    pub fn new(instance: &MilpInstance, selection: &SelectionResult) -> Result<Self> {
        let nb = instance.num_binary();
        if selection.num_binary() != nb {
            return Err(Error::dims("reduce", nb, selection.num_binary()));
        }
        let mask = selection.fixed_mask();
        let mut base = vec![0.0; instance.num_vars()];
        for (j, v) in mask.iter().enumerate() {
            if let Some(v) = v {
                base[j] = *v;
            }
        }
        let shift = instance.a().mul_vec(&base);
        let b: Vec<f64> = instance
            .b()
            .iter()
            .zip(&shift)
            .map(|(b, s)| b - s)
            .collect();
        let free: Vec<usize> = (0..instance.num_vars())
            .filter(|&j| j >= nb || mask[j].is_none())
            .collect();
        let a: CsrMatrix = instance.a().select_columns(&free);
        let c = free.iter().map(|&j| instance.c()[j]).collect();
        let free_binary = free.iter().filter(|&&j| j < nb).count();
        let reduced = MilpInstance::new(c, a, b, free_binary)?;
        Ok(Self {
            reduced,
            free,
            base,
        })
    }

    pub fn complete(&self, reduced_z: &[f64]) -> Vec<f64> {
        let mut z = self.base.clone();
        for (&j, v) in self.free.iter().zip(reduced_z) {
            z[j] = *v;
        }
        z
    }
}

#[derive(Debug, Clone)]
pub enum Backend {
    Oracle(OracleOptions),
    /// Write the reduced problem as MPS and defer solving to an external tool.
    Export {
        path: PathBuf,
    },
}

/// Fix, reduce, solve. The returned assignment and objective refer to the
/// full instance.
pub fn reduce_and_solve(
    instance: &MilpInstance,
    selection: &SelectionResult,
    backend: &Backend,
) -> Result<SolveReport> {
    let red = Reduction::new(instance, selection)?;
    match backend {
        Backend::Oracle(opts) => {
            let report = solve_exact(&red.reduced, opts)?;
            if report.status != SolveStatus::Optimal {
                return Ok(SolveReport {
                    assignment: red.complete(&report.assignment),
                    ..report
                });
            }
            let z = red.complete(&report.assignment);
            let objective = instance.objective(&z)?;
            Ok(SolveReport {
                status: SolveStatus::Optimal,
                assignment: z,
                objective,
                duration: report.duration,
                work: report.work,
            })
        }
        Backend::Export { path } => {
            export_mps(&red.reduced, path)?;
            Ok(SolveReport {
                status: SolveStatus::Deferred,
                assignment: red.base.clone(),
                objective: f64::NAN,
                duration: Duration::ZERO,
                work: 0,
            })
        }
    }
}

/// Reads a solution file in the common `name value` layout (as written by
/// SCIP and others) for an instance exported with [`export_mps`]. Columns
/// not listed are zero.
pub fn read_solution(text: &str, num_vars: usize) -> Result<Vec<f64>> {
    let mut z = vec![0.0; num_vars];
    for line in text.lines() {
        let mut fields = line.split_whitespace();
        let (Some(name), Some(value)) = (fields.next(), fields.next()) else {
            continue;
        };
        let Some(idx) = name.strip_prefix('C').and_then(|d| d.parse::<usize>().ok()) else {
            continue;
        };
        if idx >= num_vars {
            return Err(Error::Format(format!(
                "solution names column {name} beyond {num_vars}"
            )));
        }
        z[idx] = value
            .parse()
            .map_err(|_| Error::Format(format!("bad value {value} for {name}")))?;
    }
    Ok(z)
}

/// Completes an externally solved reduced problem back to the full instance.
pub fn import_solution(
    instance: &MilpInstance,
    selection: &SelectionResult,
    solution: &Path,
) -> Result<Vec<f64>> {
    let red = Reduction::new(instance, selection)?;
    let text = std::fs::read_to_string(solution)?;
    let z = read_solution(&text, red.reduced.num_vars())?;
    Ok(red.complete(&z))
}

/// One instance scored at one `ρ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub series: String,
    pub t: usize,
    pub rho: f64,
    pub gamma: f64,
    pub num_fixed: usize,
    /// Correct fixes over fixes; 1 when nothing is fixed.
    pub accuracy: f64,
    pub feasible: bool,
    pub objective: f64,
    pub reference_objective: f64,
    pub t_p: f64,
    pub t_100: f64,
}

impl EvalRecord {
    pub fn gap_abs(&self) -> Option<f64> {
        self.feasible
            .then(|| self.objective - self.reference_objective)
    }

    pub fn gap_rel_pct(&self) -> Option<f64> {
        self.gap_abs()
            .map(|g| 100.0 * g / self.reference_objective.abs().max(1e-6))
    }
}

/// Model output and ground truth for one test instance.
#[derive(Debug, Clone)]
pub struct EvalItem<'a> {
    pub series: &'a str,
    pub t: usize,
    pub instance: &'a MilpInstance,
    pub label: Option<&'a Label>,
    pub output: &'a ModelOutput,
}

fn evaluate_item(
    item: &EvalItem,
    rhos: &[f64],
    gamma: f64,
    opts: &OracleOptions,
) -> Result<Vec<EvalRecord>> {
    let label = item
        .label
        .filter(|l| l.is_optimal())
        .ok_or(Error::MissingLabels(1))?;
    let full = solve_exact(item.instance, opts)?;
    let t_100 = full.duration.as_secs_f64();
    let mut records = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let sel = score_and_select(&item.output.alpha, &item.output.beta, gamma, rho)?;
        let report = reduce_and_solve(item.instance, &sel, &Backend::Oracle(*opts))?;
        let correct = sel
            .selected
            .iter()
            .zip(&sel.values)
            .filter(|(j, v)| (label.z[**j] - **v).abs() < 0.5)
            .count();
        let accuracy = if sel.selected.is_empty() {
            1.0
        } else {
            correct as f64 / sel.selected.len() as f64
        };
        let feasible = report.status == SolveStatus::Optimal
            && item
                .instance
                .check_feasibility(&report.assignment, FEAS_TOL)?;
        records.push(EvalRecord {
            series: item.series.to_string(),
            t: item.t,
            rho,
            gamma,
            num_fixed: sel.selected.len(),
            accuracy,
            feasible,
            objective: report.objective,
            reference_objective: label.objective,
            t_p: report.duration.as_secs_f64(),
            t_100,
        });
    }
    Ok(records)
}

/// Per-instance records for every `ρ`, in input order.
pub fn evaluate_records(
    items: &[EvalItem],
    rhos: &[f64],
    gamma: f64,
    opts: &OracleOptions,
) -> Result<Vec<EvalRecord>> {
    let missing = items
        .iter()
        .filter(|i| !i.label.is_some_and(Label::is_optimal))
        .count();
    if missing > 0 {
        return Err(Error::MissingLabels(missing));
    }
    let per_item: Vec<Vec<EvalRecord>> = items
        .par_iter()
        .map(|item| evaluate_item(item, rhos, gamma, opts))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(items.len() * rhos.len());
    for &rho in rhos {
        for recs in &per_item {
            out.extend(recs.iter().filter(|r| r.rho == rho).cloned());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Aggregate metrics at one `ρ`. Percentages are in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub rho: f64,
    pub gamma: f64,
    pub instances: usize,
    pub accuracy_pct: MeanStd,
    pub infeasibility_pct: MeanStd,
    /// Mean of `obj − obj*` over feasible instances.
    pub gap_abs: MeanStd,
    /// Same difference relative to `|obj*|`, in percent.
    pub gap_rel_pct: MeanStd,
    pub time_ratio: MeanStd,
}

pub fn summarize(method: &str, records: &[EvalRecord]) -> Vec<MetricRow> {
    let mut rhos: Vec<f64> = Vec::new();
    for r in records {
        if !rhos.contains(&r.rho) {
            rhos.push(r.rho);
        }
    }
    rhos.into_iter()
        .map(|rho| {
            let rs: Vec<&EvalRecord> = records.iter().filter(|r| r.rho == rho).collect();
            let acc: Vec<f64> = rs.iter().map(|r| 100.0 * r.accuracy).collect();
            let inf: Vec<f64> = rs
                .iter()
                .map(|r| if r.feasible { 0.0 } else { 100.0 })
                .collect();
            let gap: Vec<f64> = rs.iter().filter_map(|r| r.gap_abs()).collect();
            let rel: Vec<f64> = rs.iter().filter_map(|r| r.gap_rel_pct()).collect();
            let ratio: Vec<f64> = rs.iter().map(|r| r.t_p / r.t_100.max(1e-9)).collect();
            MetricRow {
                method: method.to_string(),
                rho,
                gamma: rs.first().map_or(0.0, |r| r.gamma),
                instances: rs.len(),
                accuracy_pct: MeanStd::of(&acc),
                infeasibility_pct: MeanStd::of(&inf),
                gap_abs: MeanStd::of(&gap),
                gap_rel_pct: MeanStd::of(&rel),
                time_ratio: MeanStd::of(&ratio),
            }
        })
        .collect()
}

pub fn evaluate(
    items: &[EvalItem],
    rhos: &[f64],
    gamma: f64,
    opts: &OracleOptions,
) -> Result<Vec<MetricRow>> {
    let records = evaluate_records(items, rhos, gamma, opts)?;
    Ok(summarize("predict-and-fix", &records))
}

/// Tab-separated table with one row per `ρ`.
pub fn write_metric_table<W: Write>(rows: &[MetricRow], mut out: W) -> Result<()> {
    writeln!(
        out,
        "method\trho\tgamma\tinstances\taccuracy_mean\taccuracy_std\tinfeasibility_mean\tinfeasibility_std\tgap_rel_pct_mean\tgap_rel_pct_std\tgap_abs_mean\tgap_abs_std\ttime_ratio_mean\ttime_ratio_std"
    )?;
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.6}\t{:.6}\t{:.6e}\t{:.6e}\t{:.4}\t{:.4}",
            r.method,
            r.rho,
            r.gamma,
            r.instances,
            r.accuracy_pct.mean,
            r.accuracy_pct.std,
            r.infeasibility_pct.mean,
            r.infeasibility_pct.std,
            r.gap_rel_pct.mean,
            r.gap_rel_pct.std,
            r.gap_abs.mean,
            r.gap_abs.std,
            r.time_ratio.mean,
            r.time_ratio.std
        )?;
    }
    Ok(())
}

pub const DEFAULT_GAMMA_GRID: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 4.0];

/// Grid value with the fewest infeasible reduced problems; ties go to higher
/// accuracy, then to the smaller `γ`.
pub fn tune_gamma(items: &[EvalItem], rho: f64, grid: &[f64], opts: &OracleOptions) -> Result<f64> {
    let mut best: Option<(usize, f64, f64)> = None;
    for &gamma in grid {
        let records = evaluate_records(items, &[rho], gamma, opts)?;
        let infeasible = records.iter().filter(|r| !r.feasible).count();
        let accuracy =
            records.iter().map(|r| r.accuracy).sum::<f64>() / records.len().max(1) as f64;
        let better = match best {
            None => true,
            Some((bi, ba, bg)) => {
                infeasible < bi
                    || (infeasible == bi && (accuracy > ba || (accuracy == ba && gamma < bg)))
            }
        };
        if better {
            best = Some((infeasible, accuracy, gamma));
        }
    }
    best.map(|b| b.2)
        .ok_or_else(|| Error::Config("empty γ grid".into()))
}
