//! Semi-supervised loss: Beta-Bernoulli NLL with optional class weights and
//! an uncertainty regularizer on labeled instances, and a relaxed objective
//! plus constraint penalty on every instance.

mod beta;
mod quadrature;
mod schedule;

use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize};

pub use beta::{beta_bernoulli_nll, closed_form_marginal, regularizer, WithGrad};
pub use quadrature::{
    cc_table, cc_table_with, cc_weights, NodeMap, QuadratureTable, DEFAULT_ORDER, MAX_ORDER,
};
pub use schedule::{LrSchedule, Schedule};

use crate::autodiff::{sigmoid, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::milp::InstanceSeries;
use crate::sparse::CsrMatrix;

pub const RATE_FLOOR: f64 = 1e-3;

/// How binaries are relaxed for the unsupervised term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SoftAssignment {
    /// `σ(α/(α+β))`.
    #[default]
    Literal,
    /// `σ(k(μ − ½))`.
    Sharpened { k: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    // A partial table overrides only the keys it names.
    #[serde(deserialize_with = "partial_lambda")]
    pub lambda: Schedule,
    #[serde(deserialize_with = "partial_lambda_reg")]
    pub lambda_reg: Schedule,
    #[serde(deserialize_with = "partial_lambda_c")]
    pub lambda_c: Schedule,
    pub class_weights: bool,
    pub quadrature_order: usize,
    pub node_map: NodeMap,
    pub soft_assignment: SoftAssignment,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: Schedule {
                warmup_steps: 500,
                warmup_initial: 0.01,
                warmup_final: 0.1,
                final_value: 1.0,
            },
            lambda_reg: Schedule {
                warmup_steps: 250,
                warmup_initial: 0.01,
                warmup_final: 0.1,
                final_value: 1.0,
            },
            lambda_c: Schedule {
                warmup_steps: 1000,
                warmup_initial: 0.1,
                warmup_final: 1.0,
                final_value: 10.0,
            },
            class_weights: false,
            quadrature_order: DEFAULT_ORDER,
            node_map: NodeMap::Cubic,
            soft_assignment: SoftAssignment::Literal,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialSchedule {
    warmup_steps: Option<u64>,
    warmup_initial: Option<f64>,
    warmup_final: Option<f64>,
    final_value: Option<f64>,
}

impl PartialSchedule {
    fn over(self, base: Schedule) -> Schedule {
        Schedule {
            warmup_steps: self.warmup_steps.unwrap_or(base.warmup_steps),
            warmup_initial: self.warmup_initial.unwrap_or(base.warmup_initial),
            warmup_final: self.warmup_final.unwrap_or(base.warmup_final),
            final_value: self.final_value.unwrap_or(base.final_value),
        }
    }
}

fn partial_lambda<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Schedule, D::Error> {
    Ok(PartialSchedule::deserialize(d)?.over(LossConfig::default().lambda))
}

fn partial_lambda_reg<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Schedule, D::Error> {
    Ok(PartialSchedule::deserialize(d)?.over(LossConfig::default().lambda_reg))
}

fn partial_lambda_c<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Schedule, D::Error> {
    Ok(PartialSchedule::deserialize(d)?.over(LossConfig::default().lambda_c))
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("lambda", &self.lambda),
            ("lambda_reg", &self.lambda_reg),
            ("lambda_c", &self.lambda_c),
        ] {
            if !s.is_nonnegative() {
                return Err(Error::Config(format!(
                    "{name} schedule must be nonnegative"
                )));
            }
        }
        cc_weights(self.quadrature_order).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn weights_at(&self, step: u64, total_steps: u64) -> LossWeights {
        LossWeights {
            lambda: self.lambda.value(step, total_steps),
            lambda_reg: self.lambda_reg.value(step, total_steps),
            lambda_c: self.lambda_c.value(step, total_steps),
        }
    }
}

/// Scheduled multipliers at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub lambda_reg: f64,
    pub lambda_c: f64,
}

/// Fraction of labeled instances with `z_j = 1` per binary, clamped to
/// `[1e-3, 1 − 1e-3]`. Only optimal labels count.
pub fn class_rates(series: &[InstanceSeries]) -> Result<Vec<f64>> {
    let mut ones: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for s in series {
        for (inst, label) in s.instances.iter().zip(&s.labels) {
            let Some(label) = label.as_ref().filter(|l| l.is_optimal()) else {
                continue;
            };
            let nb = inst.num_binary();
            if ones.is_empty() {
                ones = vec![0.0; nb];
            } else if ones.len() != nb {
                return Err(Error::dims("class_rates", ones.len(), nb));
            }
            for (o, z) in ones.iter_mut().zip(&label.z[..nb]) {
                if *z > 0.5 {
                    *o += 1.0;
                }
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(ones
        .into_iter()
        .map(|o| (o / count as f64).clamp(RATE_FLOOR, 1.0 - RATE_FLOOR))
        .collect())
}

fn check_pair(tape: &Tape, alpha: Var, beta: Var, z: &[f64]) -> Result<()> {
    if tape.shape(alpha) != tape.shape(beta) || tape.value(alpha).len() != z.len() {
        return Err(Error::shape(
            "beta loss",
            format!(
                "α {:?}, β {:?}, labels {}",
                tape.shape(alpha),
                tape.shape(beta),
                z.len()
            ),
        ));
    }
    Ok(())
}

fn pairwise(
    tape: &mut Tape,
    name: &str,
    alpha: Var,
    beta: Var,
    z: &[f64],
    f: impl Fn(f64, f64, f64) -> Result<WithGrad>,
) -> Result<Var> {
    check_pair(tape, alpha, beta, z)?;
    let n = z.len();
    let (mut values, mut da, mut db) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    let (a, b) = (tape.value(alpha).data(), tape.value(beta).data());
    for j in 0..n {
        let (v, ga, gb) = f(a[j], b[j], z[j])?;
        values.push(v);
        da.push(ga);
        db.push(gb);
    }
    tape.elementwise(name, alpha, values, vec![(alpha, da), (beta, db)])
}

/// Per-variable NLL vector.
pub fn nll_terms(
    tape: &mut Tape,
    alpha: Var,
    beta: Var,
    z: &[f64],
    table: &QuadratureTable,
) -> Result<Var> {
    pairwise(tape, "beta_bernoulli_nll", alpha, beta, z, |a, b, z| {
        beta_bernoulli_nll(a, b, z, table)
    })
}

/// Per-variable regularizer vector.
pub fn regularizer_terms(tape: &mut Tape, alpha: Var, beta: Var, z: &[f64]) -> Result<Var> {
    pairwise(tape, "regularizer", alpha, beta, z, |a, b, z| {
        Ok(regularizer(a, b, z))
    })
}

/// `Σ_j w_j·nll_j + λ_reg Σ_j r_j` for one labeled instance, where
/// `w_j = 1 / (r_j^z (1−r_j)^(1−z))` when class rates are supplied.
pub fn supervised_loss(
    tape: &mut Tape,
    alpha: Var,
    beta: Var,
    z_binary: &[f64],
    table: &QuadratureTable,
    rates: Option<&[f64]>,
    lambda_reg: f64,
) -> Result<Var> {
    let nll = nll_terms(tape, alpha, beta, z_binary, table)?;
    let nll = match rates {
        Some(r) => {
            if r.len() != z_binary.len() {
                return Err(Error::dims("class rates", z_binary.len(), r.len()));
            }
            let w: Vec<f64> = r
                .iter()
                .zip(z_binary)
                .map(|(r, z)| {
                    let r = r.clamp(RATE_FLOOR, 1.0 - RATE_FLOOR);
                    1.0 / if *z > 0.5 { r } else { 1.0 - r }
                })
                .collect();
            let shape = tape.shape(nll).to_vec();
            let wv = tape.constant(Tensor::new(shape, w)?);
            tape.mul(nll, wv)?
        }
        None => nll,
    };
    let sup = tape.sum(nll)?;
    if lambda_reg == 0.0 {
        return Ok(sup);
    }
    let reg = regularizer_terms(tape, alpha, beta, z_binary)?;
    let reg = tape.sum(reg)?;
    let reg = tape.scale(reg, lambda_reg)?;
    tape.add(sup, reg)
}

pub fn soft_assignment(
    tape: &mut Tape,
    alpha: Var,
    beta: Var,
    mode: SoftAssignment,
) -> Result<Var> {
    let total = tape.add(alpha, beta)?;
    let mu = tape.div(alpha, total)?;
    match mode {
        SoftAssignment::Literal => tape.sigmoid(mu),
        SoftAssignment::Sharpened { k } => tape.map(mu, "sharpened_sigmoid", |m| {
            let s = sigmoid(k * (m - 0.5));
            (s, k * s * (1.0 - s))
        }),
    }
}

/// Scalar soft assignment for inspection outside a tape.
pub fn soft_value(alpha: f64, beta: f64, mode: SoftAssignment) -> f64 {
    let mu = alpha / (alpha + beta);
    match mode {
        SoftAssignment::Literal => sigmoid(mu),
        SoftAssignment::Sharpened { k } => sigmoid(k * (mu - 0.5)),
    }
}

/// Constant data of one normalized instance, shared by reference.
#[derive(Debug, Clone)]
pub struct PenaltyData {
    pub a: Arc<CsrMatrix>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

/// `cᵀẑ + λ_c ‖(Aẑ − b)₊‖²` with `ẑ = [ẑ_b; ẑ_c]`.
pub fn unsupervised_loss(
    tape: &mut Tape,
    data: &PenaltyData,
    z_binary: Var,
    z_continuous: Option<Var>,
    lambda_c: f64,
) -> Result<Var> {
    let z = match z_continuous {
        Some(zc) if !tape.value(zc).is_empty() => tape.concat(&[z_binary, zc], 0)?,
        _ => z_binary,
    };
    let n = tape.value(z).len();
    if n != data.c.len() {
        return Err(Error::dims("unsupervised_loss", data.c.len(), n));
    }
    let c = tape.constant(Tensor::vector(data.c.clone()));
    let obj = tape.mul(c, z)?;
    let obj = tape.sum(obj)?;
    if data.b.is_empty() {
        return Ok(obj);
    }
    let col = tape.reshape(z, &[n, 1])?;
    let az = tape.spmm(&data.a, col)?;
    let b = tape.constant(Tensor::matrix(data.b.len(), 1, data.b.clone())?);
    let slack = tape.sub(az, b)?;
    let hinge = tape.relu(slack)?;
    let sq = tape.square(hinge)?;
    let pen = tape.sum(sq)?;
    let pen = tape.scale(pen, lambda_c)?;
    tape.add(obj, pen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParameterStore;
    use crate::milp::{Label, MilpInstance, SolveStatus};

    fn pair(tape: &mut Tape, a: &[f64], b: &[f64]) -> (Var, Var) {
        (
            tape.constant(Tensor::vector(a.to_vec())),
            tape.constant(Tensor::vector(b.to_vec())),
        )
    }

    #[test]
    fn supervised_reduces_to_nll_and_doubles_with_half_rates() {
        let table = cc_table(64).unwrap();
        let mut tape = Tape::new();
        let (a, b) = pair(&mut tape, &[2.5], &[1.5]);
        let plain = supervised_loss(&mut tape, a, b, &[1.0], &table, None, 0.0).unwrap();
        let expected = beta_bernoulli_nll(2.5, 1.5, 1.0, &table).unwrap().0;
        assert_eq!(tape.value(plain).item(), expected);
        let weighted = supervised_loss(&mut tape, a, b, &[1.0], &table, Some(&[0.5]), 0.0).unwrap();
        assert!((tape.value(weighted).item() - 2.0 * expected).abs() < 1e-15);
    }

    #[test]
    fn soft_assignment_values() {
        assert!(
            (soft_value(3.0, 3.0, SoftAssignment::Literal) - 0.622_459_331_201_854_6).abs() < 1e-12
        );
        assert!(
            (soft_value(1e9, 1.0, SoftAssignment::Literal) - 0.731_058_578_630_004_9).abs() < 1e-8
        );
        assert!((soft_value(9.0, 1.0, SoftAssignment::Sharpened { k: 1e6 }) - 1.0).abs() < 1e-12);
        let mut tape = Tape::new();
        let (a, b) = pair(&mut tape, &[2.0, 9.0], &[2.0, 1.0]);
        let s = soft_assignment(&mut tape, a, b, SoftAssignment::Literal).unwrap();
        assert!((tape.value(s).data()[0] - sigmoid(0.5)).abs() < 1e-15);
    }

    #[test]
    fn hinge_penalty_arithmetic() {
        // one row z ≤ 0 with c = 3 and ẑ = 2: 3·2 + 1·2²
        let inst = MilpInstance::from_dense(vec![3.0], &[vec![1.0]], vec![0.0], 0).unwrap();
        let data = PenaltyData {
            a: Arc::new(inst.a().clone()),
            b: inst.b().to_vec(),
            c: inst.c().to_vec(),
        };
        let mut tape = Tape::new();
        let zb = tape.constant(Tensor::vector(vec![]));
        let zc = tape.constant(Tensor::vector(vec![2.0]));
        let l = unsupervised_loss(&mut tape, &data, zb, Some(zc), 1.0).unwrap();
        assert_eq!(tape.value(l).item(), 10.0);
        // feasible point: no penalty
        let zc = tape.constant(Tensor::vector(vec![-1.0]));
        let l = unsupervised_loss(&mut tape, &data, zb, Some(zc), 5.0).unwrap();
        assert_eq!(tape.value(l).item(), -3.0);
    }

    #[test]
    fn class_rates_follow_label_frequencies() {
        let inst =
            MilpInstance::from_dense(vec![1.0, 1.0], &[vec![1.0, 1.0]], vec![2.0], 2).unwrap();
        let mut s = InstanceSeries::new("s", vec![inst; 5]);
        for t in 0..5 {
            s.labels[t] = Some(Label {
                status: SolveStatus::Optimal,
                z: vec![if t == 0 { 1.0 } else { 0.0 }, 1.0],
                objective: 0.0,
                solve_seconds: 0.0,
            });
        }
        let r = class_rates(&[s.clone()]).unwrap();
        assert!((r[0] - 0.2).abs() < 1e-15);
        assert_eq!(r[1], 0.999);
        s.labels = vec![None; 5];
        assert!(matches!(class_rates(&[s]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let table = cc_table(64).unwrap();
        let inst = MilpInstance::from_dense(
            vec![0.3, -0.5, 0.2],
            &[vec![0.6, 0.8, 0.0], vec![-0.2, 0.4, 1.0]],
            vec![0.5, 0.1],
            2,
        )
        .unwrap();
        let data = PenaltyData {
            a: Arc::new(inst.a().clone()),
            b: inst.b().to_vec(),
            c: inst.c().to_vec(),
        };
        let mut store = ParameterStore::new();
        let ua = store.add("ua", Tensor::vector(vec![0.3, -1.2])).unwrap();
        let ub = store.add("ub", Tensor::vector(vec![1.1, 0.4])).unwrap();
        let zc = store.add("zc", Tensor::vector(vec![0.7])).unwrap();
        let build = |store: &ParameterStore| -> (Tape, Var) {
            let mut t = Tape::new();
            let (a, b, c) = (t.param(store, ua), t.param(store, ub), t.param(store, zc));
            let a = t.softplus(a).unwrap();
            let a = t.add_scalar(a, 1.0).unwrap();
            let b = t.softplus(b).unwrap();
            let b = t.add_scalar(b, 1.0).unwrap();
            let sup =
                supervised_loss(&mut t, a, b, &[1.0, 0.0], &table, Some(&[0.3, 0.6]), 0.7).unwrap();
            let zb = soft_assignment(&mut t, a, b, SoftAssignment::Sharpened { k: 4.0 }).unwrap();
            let un = unsupervised_loss(&mut t, &data, zb, Some(c), 3.0).unwrap();
            let tot = t.add(sup, un).unwrap();
            (t, tot)
        };
        let (tape, loss) = build(&store);
        let grads = tape.gradients(loss).unwrap();
        let h = 1e-6;
        for id in [ua, ub, zc] {
            for k in 0..store.value(id).len() {
                let orig = store.value(id).data()[k];
                store.value_mut(id).data_mut()[k] = orig + h;
                let (t, l) = build(&store);
                let up = t.value(l).item();
                store.value_mut(id).data_mut()[k] = orig - h;
                let (t, l) = build(&store);
                let down = t.value(l).item();
                store.value_mut(id).data_mut()[k] = orig;
                let fd = (up - down) / (2.0 * h);
                let g = grads.get(id).unwrap()[k];
                assert!((g - fd).abs() <= 1e-4 * fd.abs().max(1e-3), "{g} vs {fd}");
            }
        }
    }
}
