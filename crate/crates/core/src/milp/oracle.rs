//! Exact solver by enumeration of binary assignments.
//!
//! Assignments are visited depth-first with `z_j = 0` before `z_j = 1`, so
//! leaves appear in lexicographic order and the first optimum found is the
//! lexicographically smallest one. Continuous tails are solved as the
//! residual LP `min c_cᵀz_c s.t. A_c z_c ≤ b − A_b z_b`.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::milp::simplex::{solve_lp, Bounds};
use crate::milp::{Label, MilpInstance, SolveReport, SolveStatus, FEAS_TOL};

pub const DEFAULT_MAX_BINARIES: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enumeration {
    /// Visit every one of the `2^n` assignments.
    Exhaustive,
    /// Skip subtrees that provably contain no feasible assignment strictly
    /// better than the incumbent. Gives the same answer as `Exhaustive`.
    Pruned,
}

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    pub max_binaries: usize,
    pub strategy: Enumeration,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            max_binaries: DEFAULT_MAX_BINARIES,
            strategy: Enumeration::Pruned,
        }
    }
}

/// Exact optimum with the default strategy; see [`solve_exact`].
pub fn enumerate_solve(instance: &MilpInstance, max_binaries: usize) -> Result<Label> {
    let report = solve_exact(
        instance,
        &OracleOptions {
            max_binaries,
            ..Default::default()
        },
    )?;
    Ok(Label::from_report(&report))
}

/// Global optimum over all binary assignments. `work` in the report counts
/// evaluated leaves (exhaustive) or visited search nodes (pruned).
pub fn solve_exact(instance: &MilpInstance, options: &OracleOptions) -> Result<SolveReport> {
    let start = Instant::now();
    let nb = instance.num_binary();
    if nb > options.max_binaries {
        return Err(Error::TooManyBinaries {
            count: nb,
            max: options.max_binaries,
        });
    }
    let mut search = Search::new(instance, options.strategy);
    search.descend(0)?;
    let n = instance.num_vars();
    let report = match (search.unbounded, search.best) {
        (true, _) => SolveReport {
            status: SolveStatus::Unbounded,
            assignment: vec![0.0; n],
            objective: f64::NEG_INFINITY,
            duration: start.elapsed(),
            work: search.work,
        },
        (false, Some((objective, assignment))) => SolveReport {
            status: SolveStatus::Optimal,
            objective,
            assignment,
            duration: start.elapsed(),
            work: search.work,
        },
        (false, None) => SolveReport::infeasible(n, start.elapsed(), search.work),
    };
    Ok(report)
}

fn tie_tol(best: f64) -> f64 {
    1e-9 * best.abs().max(1.0)
}

struct Search<'a> {
    inst: &'a MilpInstance,
    nb: usize,
    prune: bool,
    /// Column-major view of the binary block: `(row, value)` per variable.
    columns: Vec<Vec<(usize, f64)>>,
    /// Binary entries of each row, ascending by variable.
    row_terms: Vec<Vec<(usize, f64)>>,
    /// Rows touching a continuous variable never prune.
    has_continuous: Vec<bool>,
    /// `rem_min[d][i] = Σ_{j ≥ d, j binary} min(0, a_ij)`.
    rem_min: Vec<Vec<f64>>,
    activity: Vec<f64>,
    partial_obj: f64,
    z: Vec<f64>,
    best: Option<(f64, Vec<f64>)>,
    unbounded: bool,
    work: u64,
    /// Dense continuous block for the residual LPs.
    cont_rows: Vec<Vec<f64>>,
}

impl<'a> Search<'a> {
    fn new(inst: &'a MilpInstance, strategy: Enumeration) -> Self {
        let nb = inst.num_binary();
        let m = inst.num_rows();
        let mut columns = vec![Vec::new(); nb];
        let mut row_terms = vec![Vec::new(); m];
        let mut has_continuous = vec![false; m];
        let nc = inst.num_continuous();
        let mut cont_rows = vec![vec![0.0; nc]; if nc > 0 { m } else { 0 }];
        for (i, j, v) in inst.a().triplets() {
            if j < nb {
                columns[j].push((i, v));
                row_terms[i].push((j, v));
            } else {
                has_continuous[i] = true;
                cont_rows[i][j - nb] = v;
            }
        }
        let mut rem_min = vec![vec![0.0; m]; nb + 1];
        for d in (0..nb).rev() {
            let mut next = rem_min[d + 1].clone();
            for &(i, v) in &columns[d] {
                next[i] += v.min(0.0);
            }
            rem_min[d] = next;
        }
        Self {
            inst,
            nb,
            prune: strategy == Enumeration::Pruned,
            columns,
            row_terms,
            has_continuous,
            rem_min,
            activity: vec![0.0; m],
            partial_obj: 0.0,
            z: vec![0.0; inst.num_vars()],
            best: None,
            unbounded: false,
            work: 0,
            cont_rows,
        }
    }

    fn descend(&mut self, depth: usize) -> Result<()> {
        if self.unbounded {
            return Ok(());
        }
        if self.prune {
            self.work += 1;
            if self.can_prune(depth) {
                return Ok(());
            }
        }
        if depth == self.nb {
            if !self.prune {
                self.work += 1;
            }
            return self.evaluate_leaf();
        }
        for value in [0.0, 1.0] {
            self.z[depth] = value;
            if value == 1.0 {
                self.partial_obj += self.inst.c()[depth];
                for &(i, v) in &self.columns[depth] {
                    self.activity[i] += v;
                }
            }
            self.descend(depth + 1)?;
            if value == 1.0 {
                self.partial_obj -= self.inst.c()[depth];
                for &(i, v) in &self.columns[depth] {
                    self.activity[i] -= v;
                }
            }
        }
        self.z[depth] = 0.0;
        Ok(())
    }

    fn can_prune(&self, depth: usize) -> bool {
        let b = self.inst.b();
        let rem = &self.rem_min[depth];
        for i in 0..b.len() {
            if !self.has_continuous[i] && self.activity[i] + rem[i] > b[i] + FEAS_TOL {
                return true;
            }
        }
        let Some((best, _)) = &self.best else {
            return false;
        };
        if self.inst.num_continuous() > 0 {
            return false;
        }
        let bound = self.partial_obj + self.relaxation_bound(depth);
        bound - 1e-9 * (1.0 + bound.abs()) >= best - tie_tol(*best)
    }

    /// Best single-row Lagrangian bound on `Σ_{j≥depth} c_j z_j` over the
    /// box `[0,1]`: `max_i max_{λ≥0} −λ rᵢ + Σ_j min(0, c_j + λ a_ij)`.
    fn relaxation_bound(&self, depth: usize) -> f64 {
        let c = self.inst.c();
        let free: f64 = c[depth..self.nb].iter().map(|v| v.min(0.0)).sum();
        let mut best = free;
        let mut events: Vec<(f64, f64)> = Vec::new();
        for (i, terms) in self.row_terms.iter().enumerate() {
            let row = &terms[terms.partition_point(|&(j, _)| j < depth)..];
            if row.is_empty() {
                continue;
            }
            let residual = self.inst.b()[i] - self.activity[i];
            let mut slope = -residual;
            events.clear();
            for &(j, a) in row {
                let cj = c[j];
                if a > 0.0 && cj < 0.0 {
                    // active on [0, -c/a)
                    slope += a;
                    events.push((-cj / a, -a));
                } else if a < 0.0 {
                    if cj <= 0.0 {
                        slope += a;
                    } else {
                        events.push((-cj / a, a));
                    }
                }
            }
            events.sort_by(|x, y| x.0.total_cmp(&y.0));
            let mut lambda = 0.0;
            let mut value = free;
            for &(at, change) in &events {
                if slope <= 0.0 {
                    break;
                }
                value += slope * (at - lambda);
                lambda = at;
                slope += change;
            }
            if slope > 0.0 {
                return f64::INFINITY;
            }
            best = best.max(value);
        }
        best
    }

    fn evaluate_leaf(&mut self) -> Result<()> {
        let inst = self.inst;
        let b = inst.b();
        let nc = inst.num_continuous();
        let (objective, assignment) = if nc == 0 {
            for i in 0..b.len() {
                if self.activity[i] - b[i] > FEAS_TOL {
                    return Ok(());
                }
            }
            (self.partial_obj, self.z.clone())
        } else {
            let residual: Vec<f64> = b.iter().zip(&self.activity).map(|(b, a)| b - a).collect();
            let lp = solve_lp(
                &inst.c()[self.nb..],
                &self.cont_rows,
                &residual,
                &vec![Bounds::FREE; nc],
            )?;
            match lp.status {
                SolveStatus::Optimal => {
                    let mut z = self.z.clone();
                    z[self.nb..].copy_from_slice(&lp.assignment);
                    (self.partial_obj + lp.objective, z)
                }
                SolveStatus::Unbounded => {
                    self.unbounded = true;
                    return Ok(());
                }
                _ => return Ok(()),
            }
        };
        let improves = match &self.best {
            None => true,
            Some((best, _)) => objective < best - tie_tol(*best),
        };
        if improves {
            self.best = Some((objective, assignment));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn knapsack() -> MilpInstance {
        // maximize 3a + 2b + 2c, weights 2 each, capacity 4
        MilpInstance::from_dense(vec![-3.0, -2.0, -2.0], &[vec![2.0, 2.0, 2.0]], vec![4.0], 3)
            .unwrap()
    }

    #[test]
    fn knapsack_tie_break_is_lexicographic() {
        // (1,1,0) and (1,0,1) both reach 5; (1,0,1) < (1,1,0) lexicographically.
        for strategy in [Enumeration::Exhaustive, Enumeration::Pruned] {
            let r = solve_exact(
                &knapsack(),
                &OracleOptions {
                    strategy,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(r.status, SolveStatus::Optimal);
            assert_eq!(r.objective, -5.0);
            assert_eq!(r.assignment, vec![1.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn exhaustive_counts_every_assignment() {
        let r = solve_exact(
            &knapsack(),
            &OracleOptions {
                strategy: Enumeration::Exhaustive,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.work, 8);
    }

    #[test]
    fn nonnegative_costs_give_zero() {
        let inst =
            MilpInstance::from_dense(vec![1.0, 0.5, 2.0], &[vec![1.0, 1.0, 1.0]], vec![2.0], 3)
                .unwrap();
        let label = enumerate_solve(&inst, DEFAULT_MAX_BINARIES).unwrap();
        assert_eq!(label.z, vec![0.0; 3]);
        assert_eq!(label.objective, 0.0);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let inst =
            MilpInstance::from_dense(vec![1.0], &[vec![1.0], vec![-1.0]], vec![0.5, -0.7], 1)
                .unwrap();
        let label = enumerate_solve(&inst, DEFAULT_MAX_BINARIES).unwrap();
        assert_eq!(label.status, SolveStatus::Infeasible);
    }

    #[test]
    fn cap_is_enforced() {
        let inst = MilpInstance::from_dense(vec![1.0; 5], &[], vec![], 5).unwrap();
        assert!(matches!(
            enumerate_solve(&inst, 4),
            Err(Error::TooManyBinaries { count: 5, max: 4 })
        ));
    }

    #[test]
    fn mixed_instance_solves_residual_lp() {
        // min -x_c + 0.5 z  s.t. x_c <= 1 + z, x_c <= 3 (free continuous)
        let inst = MilpInstance::from_dense(
            vec![0.5, -1.0],
            &[vec![-1.0, 1.0], vec![0.0, 1.0]],
            vec![1.0, 3.0],
            1,
        )
        .unwrap();
        let label = enumerate_solve(&inst, DEFAULT_MAX_BINARIES).unwrap();
        assert_eq!(label.status, SolveStatus::Optimal);
        assert_eq!(label.z[0], 1.0);
        assert!((label.z[1] - 2.0).abs() < 1e-9);
        assert!((label.objective + 1.5).abs() < 1e-9);
    }

    #[test]
    fn unbounded_continuous_tail() {
        let inst =
            MilpInstance::from_dense(vec![0.0, -1.0], &[vec![1.0, 0.0]], vec![1.0], 1).unwrap();
        let label = enumerate_solve(&inst, DEFAULT_MAX_BINARIES).unwrap();
        assert_eq!(label.status, SolveStatus::Unbounded);
    }
}
