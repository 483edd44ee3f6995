//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Built with `harness = false`: the criteria run in order and a failing one
//! does not stop the rest. Numeric arguments pick a subset, e.g.
//! `cargo test --test acceptance -- 6 7`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use predfix::autodiff::{ParameterStore, Tape, Tensor, Var};
use predfix::datagen::{self, Dataset, Family, GeneratorSpec};
use predfix::featurize::maxima_of;
use predfix::harness::{
    evaluate_checkpoint, label_splits, EvaluationReport, ExperimentConfig, Trainer,
};
use predfix::loss::{
    beta_bernoulli_nll, cc_table, regularizer, soft_assignment, supervised_loss, unsupervised_loss,
    PenaltyData, QuadratureTable, SoftAssignment,
};
use predfix::milp::{
    enumerate_solve, solve_exact, solve_lp, Bounds, Enumeration, MilpInstance, OracleOptions,
    SolveStatus,
};
use predfix::model::{GraphInput, Model, ModelConfig, StepOutput};
use predfix::select::{
    fixed_count, reduce_and_solve, score_and_select, Backend, MetricRow, Reduction,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// shared helpers

/// Dense random MILP with every row and column touched at least once.
fn random_milp(r: &mut ChaCha8Rng, nb: usize, nc: usize, m: usize) -> MilpInstance {
    let n = nb + nc;
    let mut a = vec![vec![0.0; n]; m];
    for row in a.iter_mut() {
        for v in row.iter_mut() {
            if r.random_bool(0.6) {
                *v = r.random_range(-2.0..2.0);
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        if row.iter().all(|v| *v == 0.0) {
            row[i % n] = 1.0;
        }
    }
    for j in 0..n {
        if a.iter().all(|row| row[j] == 0.0) {
            a[j % m][j] = r.random_range(0.5..2.0);
        }
    }
    let c = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
    let b = (0..m).map(|_| r.random_range(0.5..4.0)).collect();
    MilpInstance::from_dense(c, &a, b, nb).unwrap()
}

/// The same structure over `len` steps with jittered `c` and `b`.
fn random_series(
    r: &mut ChaCha8Rng,
    nb: usize,
    nc: usize,
    m: usize,
    len: usize,
) -> Vec<MilpInstance> {
    let base = random_milp(r, nb, nc, m);
    let a = base.a().to_dense();
    (0..len)
        .map(|_| {
            let c = base
                .c()
                .iter()
                .map(|c| c + r.random_range(-0.2..0.2))
                .collect();
            let b = base
                .b()
                .iter()
                .map(|b| b + r.random_range(-0.2..0.2))
                .collect();
            MilpInstance::from_dense(c, &a, b, nb).unwrap()
        })
        .collect()
}

fn inputs(series: &[MilpInstance]) -> Vec<GraphInput> {
    let (m_c, m_v) = maxima_of(series).unwrap();
    series
        .iter()
        .map(|i| GraphInput::new(&i.normalize(2.0).unwrap(), m_c, m_v).unwrap())
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn row_at(rows: &[MetricRow], rho: f64) -> &MetricRow {
    rows.iter().find(|r| r.rho == rho).expect("ρ row")
}

/// Generate, label, train and evaluate one configuration.
struct ToyRun {
    report: EvaluationReport,
    train_seconds: f64,
    finite: bool,
}

fn run_toy(config: &ExperimentConfig) -> ToyRun {
    let mut data: Dataset = datagen::generate(&config.generator).unwrap();
    label_splits(config, &mut data, None).unwrap();
    let mut trainer = Trainer::new(config, &data).unwrap();
    let start = Instant::now();
    trainer.run(None).unwrap();
    let train_seconds = start.elapsed().as_secs_f64();
    let finite = trainer
        .log()
        .iter()
        .all(|l| l.total.is_finite() && l.grad_norm.is_finite());
    let ckpt = trainer.into_checkpoint();
    let report = evaluate_checkpoint(&ckpt, &data.val, &data.test, &config.evaluation).unwrap();
    ToyRun {
        report,
        train_seconds,
        finite,
    }
}

fn toy_config(family: Family, seed: u64, steps: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.seed = seed;
    c.generator.family = family;
    c.generator.train_series = 80;
    c.generator.val_series = 20;
    c.generator.test_series = 20;
    c.generator.timesteps = 30;
    c.training.validate_every = 50;
    c.fit_schedules_to(steps);
    c.propagate_seed();
    c
}

// ---------------------------------------------------------------------------
// 1

fn quadrature_matches_closed_form() -> Outcome {
    let grid = [1.0, 1.5, 2.0, 5.0, 10.0, 50.0];
    let start = Instant::now();
    let table = cc_table(64).unwrap();
    let mut worst: f64 = 0.0;
    for &a in &grid {
        for &b in &grid {
            for z in [0.0, 1.0] {
                let (nll, _, _) = beta_bernoulli_nll(a, b, z, &table).unwrap();
                // E[π] = α/(α+β) for z = 1, its complement for z = 0
                let exact = if z == 1.0 { a / (a + b) } else { b / (a + b) };
                worst = worst.max(((-nll).exp() - exact).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-8 && secs < 1.0,
        format!(
            "max |p − closed form| = {worst:.2e} over 72 cases in {secs:.3}s (need < 1e-8, < 1s)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 2

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

/// Relative error with a floor so entries that are zero on both sides
/// compare absolutely.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = FD_STEP * x.abs().max(1.0);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Worst relative error between tape gradients of `loss` and central
/// differences over every scalar in `store`.
fn store_fd_error(
    store: &mut ParameterStore,
    loss: &dyn Fn(&mut Tape, &ParameterStore) -> Var,
) -> f64 {
    let mut tape = Tape::new();
    let l = loss(&mut tape, store);
    let grads = tape.gradients(l).unwrap();
    let ids: Vec<_> = store.ids().collect();
    let mut worst: f64 = 0.0;
    let value = |store: &ParameterStore| {
        let mut tape = Tape::new();
        let l = loss(&mut tape, store);
        tape.value(l).item()
    };
    for id in ids {
        let analytic = grads
            .get(id)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; store.value(id).len()]);
        for k in 0..analytic.len() {
            let x = store.value(id).data()[k];
            let h = FD_STEP * x.abs().max(1.0);
            store.value_mut(id).data_mut()[k] = x + h;
            let up = value(store);
            store.value_mut(id).data_mut()[k] = x - h;
            let down = value(store);
            store.value_mut(id).data_mut()[k] = x;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(analytic[k], fd));
        }
    }
    worst
}

fn total_loss(
    tape: &mut Tape,
    outs: &[StepOutput],
    inputs: &[GraphInput],
    labels: &[Vec<f64>],
    rates: &[f64],
    table: &QuadratureTable,
) -> Var {
    let mut total = tape.scalar(0.0);
    for ((out, input), z) in outs.iter().zip(inputs).zip(labels) {
        let sup = supervised_loss(tape, out.alpha, out.beta, z, table, Some(rates), 0.5).unwrap();
        let zb = soft_assignment(tape, out.alpha, out.beta, SoftAssignment::Literal).unwrap();
        let zc = (input.num_continuous() > 0).then_some(out.z_continuous);
        let un = unsupervised_loss(tape, &input.penalty, zb, zc, 2.0).unwrap();
        total = tape.add(total, sup).unwrap();
        total = tape.add(total, un).unwrap();
    }
    total
}

fn gradients_match_finite_differences() -> Outcome {
    let table = cc_table(64).unwrap();
    let (mut nll_err, mut reg_err, mut unsup_err, mut model_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for seed in 0..5u64 {
        let mut r = rng(100 + seed);

        // scalar terms
        for _ in 0..20 {
            let a = r.random_range(1.05..20.0);
            let b = r.random_range(1.05..20.0);
            let z = if r.random_bool(0.5) { 1.0 } else { 0.0 };
            let (_, da, db) = beta_bernoulli_nll(a, b, z, &table).unwrap();
            let nll = |a: f64, b: f64| beta_bernoulli_nll(a, b, z, &table).unwrap().0;
            nll_err = nll_err.max(rel_err(da, central(|x| nll(x, b), a)));
            nll_err = nll_err.max(rel_err(db, central(|x| nll(a, x), b)));
            let (_, ra, rb) = regularizer(a, b, z);
            reg_err = reg_err.max(rel_err(ra, central(|x| regularizer(x, b, z).0, a)));
            reg_err = reg_err.max(rel_err(rb, central(|x| regularizer(a, x, z).0, b)));
        }

        // unsupervised objective + penalty through the tape
        let inst = random_milp(&mut r, 4, 2, 4).normalize(2.0).unwrap();
        let data = PenaltyData {
            a: std::sync::Arc::new(inst.a().clone()),
            b: inst.b().to_vec(),
            c: inst.c().to_vec(),
        };
        let mut store = ParameterStore::new();
        let raw = |r: &mut ChaCha8Rng, n: usize| {
            Tensor::vector((0..n).map(|_| r.random_range(-2.0..2.0)).collect())
        };
        let pa = store.add("a", raw(&mut r, 4)).unwrap();
        let pb = store.add("b", raw(&mut r, 4)).unwrap();
        let pc = store.add("zc", raw(&mut r, 2)).unwrap();
        let loss = move |tape: &mut Tape, store: &ParameterStore| {
            let a = tape.param(store, pa);
            let a = tape.softplus(a).unwrap();
            let a = tape.add_scalar(a, 1.0).unwrap();
            let b = tape.param(store, pb);
            let b = tape.softplus(b).unwrap();
            let b = tape.add_scalar(b, 1.0).unwrap();
            let zc = tape.param(store, pc);
            let zb = soft_assignment(tape, a, b, SoftAssignment::Literal).unwrap();
            unsupervised_loss(tape, &data, zb, Some(zc), 3.0).unwrap()
        };
        unsup_err = unsup_err.max(store_fd_error(&mut store, &loss));

        // full model, 2 GCN layers, 1 LSTM layer, widths 8
        let config = ModelConfig {
            feature_dim: 8,
            gcn_layers: 2,
            gcn_width: 8,
            lstm_layers: 1,
            lstm_width: 8,
            head_width: 8,
            continuous_head_width: 8,
            seed,
            ..ModelConfig::default()
        };
        let mut store = ParameterStore::new();
        let model = Model::new(config, &mut store).unwrap();
        let series = random_series(&mut r, 4, 2, 4, 3);
        let ins = inputs(&series);
        let labels: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                (0..4)
                    .map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let rates: Vec<f64> = (0..4).map(|_| r.random_range(0.2..0.8)).collect();
        let loss = |tape: &mut Tape, store: &ParameterStore| {
            let outs = model.forward_series(tape, store, &ins).unwrap();
            total_loss(tape, &outs, &ins, &labels, &rates, &table)
        };
        model_err = model_err.max(store_fd_error(&mut store, &loss));
    }
    let worst = nll_err.max(reg_err).max(unsup_err).max(model_err);
    outcome(
        worst < FD_TOL,
        format!(
            "max rel err: nll {nll_err:.1e}, regularizer {reg_err:.1e}, unsupervised {unsup_err:.1e}, model {model_err:.1e} (need < 1e-4, 5 seeds)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3

fn normalized_parts(inst: &MilpInstance) -> Vec<f64> {
    let n = inst.normalize(2.0).unwrap();
    let mut v = n.c().to_vec();
    v.extend_from_slice(n.b());
    v.extend(n.a().to_dense().into_iter().flatten());
    v
}

fn outputs_flat(o: &predfix::model::ModelOutput) -> Vec<f64> {
    o.alpha
        .iter()
        .chain(&o.beta)
        .chain(&o.z_continuous)
        .copied()
        .collect()
}

fn invariances_hold() -> Outcome {
    let (nb, nc, m) = (5, 2, 5);
    let mut perm_err: f64 = 0.0;
    let mut scale_err: f64 = 0.0;
    let mut scale_out_err: f64 = 0.0;
    for seed in 0..20u64 {
        let mut r = rng(300 + seed);
        let series = random_series(&mut r, nb, nc, m, 3);
        let mut store = ParameterStore::new();
        let model = Model::new(
            ModelConfig {
                seed,
                ..ModelConfig::default()
            },
            &mut store,
        )
        .unwrap();
        let base = model.predict_series(&store, &inputs(&series)).unwrap();

        // permutation equivariance
        let mut bin: Vec<usize> = (0..nb).collect();
        bin.shuffle(&mut r);
        let mut cont: Vec<usize> = (nb..nb + nc).collect();
        cont.shuffle(&mut r);
        let var_perm: Vec<usize> = bin.iter().chain(&cont).copied().collect();
        let mut row_perm: Vec<usize> = (0..m).collect();
        row_perm.shuffle(&mut r);
        let permuted: Vec<MilpInstance> = series
            .iter()
            .map(|i| i.permute(&var_perm, &row_perm).unwrap())
            .collect();
        let out = model.predict_series(&store, &inputs(&permuted)).unwrap();
        for (o, p) in base.iter().zip(&out) {
            for j in 0..nb {
                perm_err = perm_err.max((p.alpha[j] - o.alpha[var_perm[j]]).abs());
                perm_err = perm_err.max((p.beta[j] - o.beta[var_perm[j]]).abs());
            }
            for k in 0..nc {
                perm_err =
                    perm_err.max((p.z_continuous[k] - o.z_continuous[var_perm[nb + k] - nb]).abs());
            }
        }

        // row scaling leaves the normalized instance (and the model) alone
        let scaled: Vec<MilpInstance> = series
            .iter()
            .map(|inst| {
                let mut s = inst.clone();
                for i in 0..m {
                    s = s.scale_row(i, r.random_range(0.1..10.0));
                }
                s
            })
            .collect();
        for (a, b) in series.iter().zip(&scaled) {
            scale_err = scale_err.max(max_abs_diff(&normalized_parts(a), &normalized_parts(b)));
        }
        let out = model.predict_series(&store, &inputs(&scaled)).unwrap();
        for (o, s) in base.iter().zip(&out) {
            scale_out_err = scale_out_err.max(max_abs_diff(&outputs_flat(o), &outputs_flat(s)));
        }
    }
    // Scaling by k and dividing by the scaled norm is exact in real
    // arithmetic; in floating point it is exact up to a few ulps.
    outcome(
        perm_err < 1e-6 && scale_err < 1e-12 && scale_out_err < 1e-9,
        format!(
            "permutation max diff {perm_err:.1e} (need < 1e-6); normalized params under row scaling {scale_err:.1e} (< 1e-12), model output {scale_out_err:.1e} (< 1e-9); 20 instances"
        ),
    )
}

// ---------------------------------------------------------------------------
// 4

fn reduced_solves_match_the_oracle() -> Outcome {
    let exhaustive = OracleOptions {
        strategy: Enumeration::Exhaustive,
        ..OracleOptions::default()
    };
    let backend = Backend::Oracle(OracleOptions::default());
    let mut free_err: f64 = 0.0;
    let mut perfect_err: f64 = 0.0;
    let mut perfect_z_ok = true;
    let mut status_ok = true;
    let mut count = 0;
    for (fi, family) in Family::ALL.into_iter().enumerate() {
        let spec = GeneratorSpec {
            train_series: 10,
            val_series: 0,
            test_series: 0,
            timesteps: 5,
            seed: 40 + fi as u64,
            ..GeneratorSpec::for_family(family)
        };
        let data = datagen::generate(&spec).unwrap();
        for inst in data.train.iter().flat_map(|s| &s.instances) {
            count += 1;
            let nb = inst.num_binary();
            let reference = solve_exact(inst, &exhaustive).unwrap();

            // ρ = 0 fixes nothing
            let none = score_and_select(&vec![2.0; nb], &vec![2.0; nb], 1.0, 0.0).unwrap();
            let got = reduce_and_solve(inst, &none, &backend).unwrap();
            status_ok &= got.status == reference.status;
            free_err = free_err.max((got.objective - reference.objective).abs());

            // ρ = 1 with a predictor that knows the label
            let label = enumerate_solve(inst, OracleOptions::default().max_binaries).unwrap();
            let zb = &label.z[..nb];
            let alpha: Vec<f64> = zb
                .iter()
                .map(|z| if *z == 1.0 { 50.0 } else { 1.0 })
                .collect();
            let beta: Vec<f64> = zb
                .iter()
                .map(|z| if *z == 1.0 { 1.0 } else { 50.0 })
                .collect();
            let all = score_and_select(&alpha, &beta, 1.0, 1.0).unwrap();
            let got = reduce_and_solve(inst, &all, &backend).unwrap();
            status_ok &= got.status == SolveStatus::Optimal;
            perfect_z_ok &= got.assignment[..nb] == *zb;
            perfect_err = perfect_err.max((got.objective - label.objective).abs());
        }
    }
    outcome(
        status_ok && perfect_z_ok && free_err <= 1e-7 && perfect_err <= 1e-7,
        format!(
            "{count} instances over 6 families: ρ=0 vs exhaustive max |Δobj| {free_err:.1e}, ρ=1 perfect predictor |Δobj| {perfect_err:.1e}, binaries reproduced: {perfect_z_ok}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5

/// Brute force over every choice of `n` active constraints among the rows
/// and the bound faces. `None` when no vertex is feasible.
fn vertex_optimum(c: &[f64], a: &[Vec<f64>], b: &[f64], lo: &[f64], hi: &[f64]) -> Option<f64> {
    let n = c.len();
    let mut faces: Vec<(Vec<f64>, f64)> = a.iter().cloned().zip(b.iter().copied()).collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        faces.push((e.clone(), hi[j]));
        faces.push((e, lo[j]));
    }
    let feasible = |x: &[f64]| {
        let rows = a
            .iter()
            .zip(b)
            .all(|(r, b)| r.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() <= b + 1e-9);
        rows && x
            .iter()
            .zip(lo.iter().zip(hi))
            .all(|(x, (l, h))| *x >= l - 1e-9 && *x <= h + 1e-9)
    };
    let mut best: Option<f64> = None;
    let mut pick: Vec<usize> = (0..n).collect();
    loop {
        let m = DMatrix::from_fn(n, n, |i, j| faces[pick[i]].0[j]);
        let rhs = DVector::from_fn(n, |i, _| faces[pick[i]].1);
        if m.determinant().abs() > 1e-9 {
            if let Some(x) = m.lu().solve(&rhs) {
                let x: Vec<f64> = x.iter().copied().collect();
                if feasible(&x) {
                    let v: f64 = c.iter().zip(&x).map(|(c, x)| c * x).sum();
                    best = Some(best.map_or(v, |b: f64| b.min(v)));
                }
            }
        }
        // next n-combination of faces
        let total = faces.len();
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if pick[i] < total - n + i {
                break;
            }
        }
        pick[i] += 1;
        for k in i + 1..n {
            pick[k] = pick[k - 1] + 1;
        }
    }
}

fn simplex_matches_vertex_enumeration() -> Outcome {
    let mut r = rng(500);
    let mut worst: f64 = 0.0;
    let mut status_ok = true;
    let mut infeasible = 0;
    for _ in 0..100 {
        let n = r.random_range(1..=4);
        let m = r.random_range(0..=6);
        let c: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let a: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let b: Vec<f64> = (0..m).map(|_| r.random_range(-0.5..1.0)).collect();
        let lo: Vec<f64> = (0..n)
            .map(|_| if r.random_bool(0.5) { 0.0 } else { -1.0 })
            .collect();
        let hi: Vec<f64> = (0..n)
            .map(|_| if r.random_bool(0.5) { 1.0 } else { 3.0 })
            .collect();
        let bounds: Vec<Bounds> = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| Bounds::new(*l, *h))
            .collect();
        let report = solve_lp(&c, &a, &b, &bounds).unwrap();
        match vertex_optimum(&c, &a, &b, &lo, &hi) {
            Some(v) => {
                status_ok &= report.status == SolveStatus::Optimal;
                worst = worst.max((report.objective - v).abs());
            }
            None => {
                infeasible += 1;
                status_ok &= report.status == SolveStatus::Infeasible;
            }
        }
    }
    outcome(
        status_ok && worst <= 1e-7,
        format!("100 LPs ({infeasible} infeasible): statuses agree: {status_ok}, max |Δobj| {worst:.1e} (need ≤ 1e-7)"),
    )
}

// ---------------------------------------------------------------------------
// 6

fn caching_toy_is_learned() -> Outcome {
    let mut config = toy_config(Family::Caching, 1, 200);
    config.generator.caching.items = 30;
    config.generator.max_binaries = 30;
    config.evaluation.max_binaries = 30;
    config.evaluation.rho_grid = vec![0.3];
    let run = run_toy(&config);
    let row = row_at(&run.report.rows, 0.3);
    let acc = row.accuracy_pct.mean;
    let infeas = row.infeasibility_pct.mean;
    let gap = row.gap_rel_pct.mean;
    outcome(
        acc >= 99.0 && infeas == 0.0 && gap <= 1.0 && run.train_seconds <= 600.0,
        format!(
            "ρ=0.3: accuracy {acc:.2}% (≥ 99), infeasible {infeas:.2}% (= 0), rel gap {gap:.3}% (≤ 1); trained in {:.0}s (≤ 600)",
            run.train_seconds
        ),
    )
}

// ---------------------------------------------------------------------------
// 7

fn revenue_toy_is_learned() -> Outcome {
    let mut config = toy_config(Family::RevenueMax, 1, 1000);
    config.evaluation.rho_grid = vec![0.3, 0.5];
    let run = run_toy(&config);
    let mut pass = true;
    let mut parts = Vec::new();
    for rho in [0.3, 0.5] {
        let row = row_at(&run.report.rows, rho);
        let (acc, infeas) = (row.accuracy_pct.mean, row.infeasibility_pct.mean);
        pass &= acc >= 97.0 && infeas <= 2.0;
        parts.push(format!(
            "ρ={rho}: accuracy {acc:.2}%, infeasible {infeas:.2}%"
        ));
    }
    outcome(pass, format!("{} (need ≥ 97 and ≤ 2)", parts.join("; ")))
}

// ---------------------------------------------------------------------------
// 8

fn reduction_counts_are_exact() -> Outcome {
    // ρ as p/q so the ceiling can be taken in integers
    let rhos = [
        (0, 1),
        (1, 10),
        (1, 4),
        (3, 10),
        (1, 2),
        (7, 10),
        (9, 10),
        (1, 1),
    ];
    let exhaustive = OracleOptions {
        strategy: Enumeration::Exhaustive,
        max_binaries: 30,
    };
    let mut r = rng(800);
    let mut checked = 0;
    let mut ok = true;
    let mut instances = Vec::new();
    for (family, seed) in [
        (Family::Caching, 1),
        (Family::FacilityLoc, 2),
        (Family::Tsp, 3),
        (Family::EnergyGrid, 4),
    ] {
        let spec = GeneratorSpec {
            train_series: 2,
            val_series: 0,
            test_series: 0,
            timesteps: 2,
            seed,
            ..GeneratorSpec::for_family(family)
        };
        instances.extend(
            datagen::generate(&spec)
                .unwrap()
                .train
                .into_iter()
                .flat_map(|s| s.instances),
        );
    }
    for inst in &instances {
        let d = inst.num_binary();
        let full = solve_exact(inst, &exhaustive).unwrap().work;
        ok &= full == 1u64 << d;
        for &(p, q) in &rhos {
            let k = (p * d).div_ceil(q);
            let rho = p as f64 / q as f64;
            let alpha: Vec<f64> = (0..d).map(|_| r.random_range(1.0..10.0)).collect();
            let beta: Vec<f64> = (0..d).map(|_| r.random_range(1.0..10.0)).collect();
            let sel = score_and_select(&alpha, &beta, 0.5, rho).unwrap();
            let red = Reduction::new(inst, &sel).unwrap();
            let work = solve_exact(&red.reduced, &exhaustive).unwrap().work;
            ok &= fixed_count(rho, d) == k;
            ok &= red.reduced.num_binary() == d - k;
            ok &= red.reduced.num_continuous() == inst.num_continuous();
            ok &= work << k == full;
            checked += 1;
        }
    }
    outcome(
        ok,
        format!("{checked} (instance, ρ) pairs: free binaries = D − ⌈ρD⌉ and exhaustive work shrinks by 2^⌈ρD⌉: {ok}"),
    )
}

// ---------------------------------------------------------------------------
// 9

fn unlabeled_data_helps_tsp() -> Outcome {
    let mut semi = Vec::new();
    let mut sup = Vec::new();
    let mut finite = true;
    for seed in 1..=3u64 {
        for unsupervised in [true, false] {
            let mut config = toy_config(Family::Tsp, seed, 250);
            config.generator.tsp.cities = 6;
            config.generator.train_series = 32;
            config.generator.val_series = 8;
            config.generator.test_series = 8;
            config.generator.timesteps = 20;
            config.generator.max_binaries = 30;
            config.evaluation.max_binaries = 30;
            config.evaluation.rho_grid = vec![0.3];
            config.training.labeled_fraction = 0.2;
            config.training.unsupervised = unsupervised;
            let run = run_toy(&config);
            finite &= run.finite;
            let acc = row_at(&run.report.rows, 0.3).accuracy_pct.mean;
            if unsupervised { &mut semi } else { &mut sup }.push(acc);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (s, u) = (mean(&semi), mean(&sup));
    outcome(
        finite && s >= u,
        format!(
            "ρ=0.3 accuracy over 3 seeds with 20% labels: semi-supervised {s:.2}% {semi:.1?} vs supervised-only {u:.2}% {sup:.1?}; losses finite: {finite}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 10

/// Tanh-sinh quadrature on `[0, 1]`. `f` receives `x` and `1 − x`, both
/// computed without cancellation near the ends.
fn tanh_sinh(f: impl Fn(f64, f64) -> f64) -> f64 {
    let h = 1.0 / 64.0;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut sum = 0.0;
    let kmax = (4.5 / h) as i64;
    for k in -kmax..=kmax {
        let t = k as f64 * h;
        let u = half_pi * t.sinh();
        let x = 1.0 / (1.0 + (-2.0 * u).exp());
        let y = 1.0 / (1.0 + (2.0 * u).exp());
        if x <= 0.0 || y <= 0.0 {
            continue;
        }
        let w = 0.5 * half_pi * t.cosh() / u.cosh().powi(2);
        sum += w * f(x, y);
    }
    h * sum
}

fn regularizer_identities_hold() -> Outcome {
    let zero = [0.0, 1.0]
        .iter()
        .map(|&z| regularizer(1.0, 1.0, z).0.abs())
        .fold(0.0, f64::max);

    let mut min_r = f64::INFINITY;
    for i in 0..10 {
        for j in 0..10 {
            let a = 1.0 + 19.0 * i as f64 / 9.0;
            let b = 1.0 + 19.0 * j as f64 / 9.0;
            for z in [0.0, 1.0] {
                min_r = min_r.min(regularizer(a, b, z).0);
            }
        }
    }

    // E_Beta|z − π| · KL(U ‖ Beta) by quadrature
    let mut r = rng(1000);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let a: f64 = r.random_range(1.0..20.0);
        let b: f64 = r.random_range(1.0..20.0);
        let z = if r.random_bool(0.5) { 1.0 } else { 0.0 };
        let ln_b = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
        let log_pdf = |x: f64, y: f64| (a - 1.0) * x.ln() + (b - 1.0) * y.ln() - ln_b;
        let mean_abs = tanh_sinh(|x, y| log_pdf(x, y).exp() * if z == 1.0 { y } else { x });
        let kl = tanh_sinh(|x, y| -log_pdf(x, y));
        let numeric = mean_abs * kl;
        worst = worst.max((regularizer(a, b, z).0 - numeric).abs());
    }
    outcome(
        zero == 0.0 && min_r >= 0.0 && worst < 1e-6,
        format!("|r(1,1,z)| = {zero:.1e}; min r on a 10×10 grid over [1,20]² = {min_r:.2e}; closed form vs quadrature max diff {worst:.1e} on 20 points (need < 1e-6)"),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        (
            "quadrature matches the closed-form marginal",
            quadrature_matches_closed_form,
        ),
        (
            "gradients match finite differences",
            gradients_match_finite_differences,
        ),
        (
            "permutation equivariance and row-scale invariance",
            invariances_hold,
        ),
        (
            "reduced solves match the exact oracle",
            reduced_solves_match_the_oracle,
        ),
        (
            "simplex matches vertex enumeration",
            simplex_matches_vertex_enumeration,
        ),
        ("caching toy is learned", caching_toy_is_learned),
        ("revenue toy is learned", revenue_toy_is_learned),
        ("reduction counts are exact", reduction_counts_are_exact),
        ("unlabeled data helps on tsp", unlabeled_data_helps_tsp),
        ("regularizer identities hold", regularizer_identities_hold),
    ];
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "{} {n:>2} {name}: {} [{:.1}s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
