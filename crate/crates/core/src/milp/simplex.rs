//! Dense two-phase primal simplex with Bland's rule.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::milp::{SolveReport, SolveStatus};

const EPS: f64 = 1e-9;
const PHASE_ONE_TOL: f64 = 1e-8;

/// Variable bounds `lower ≤ x ≤ upper`; infinite values mean unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const FREE: Bounds = Bounds {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };
    pub const NONNEG: Bounds = Bounds {
        lower: 0.0,
        upper: f64::INFINITY,
    };

    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }
}

/// How an original variable is expressed in nonnegative tableau columns.
#[derive(Debug, Clone, Copy)]
enum Column {
    /// `x = offset + y`
    Shifted { col: usize, offset: f64 },
    /// `x = offset − y`
    Mirrored { col: usize, offset: f64 },
    /// `x = y⁺ − y⁻`
    Split { pos: usize, neg: usize },
}

/// Solves `min cᵀx s.t. Ax ≤ b, bounds`. `a` is dense row-major with one
/// entry per row.
pub fn solve_lp(c: &[f64], a: &[Vec<f64>], b: &[f64], bounds: &[Bounds]) -> Result<SolveReport> {
    let start = Instant::now();
    let n = c.len();
    if bounds.len() != n {
        return Err(Error::dims("bounds length", n, bounds.len()));
    }
    if a.len() != b.len() {
        return Err(Error::dims("right-hand side length", a.len(), b.len()));
    }
    if let Some(row) = a.iter().find(|row| row.len() != n) {
        return Err(Error::dims("constraint row length", n, row.len()));
    }
    if c.iter()
        .chain(b)
        .chain(a.iter().flatten())
        .any(|v| !v.is_finite())
    {
        return Err(Error::Format("LP data must be finite".into()));
    }
    if bounds.iter().any(|bd| bd.lower > bd.upper) {
        return Ok(SolveReport::infeasible(n, start.elapsed(), 0));
    }

    // Map variables onto nonnegative columns.
    let mut columns = Vec::with_capacity(n);
    let mut num_y = 0;
    let mut extra_rows: Vec<(usize, f64)> = Vec::new();
    for bd in bounds {
        let col = match (bd.lower.is_finite(), bd.upper.is_finite()) {
            (true, upper_finite) => {
                if upper_finite {
                    extra_rows.push((num_y, bd.upper - bd.lower));
                }
                Column::Shifted {
                    col: num_y,
                    offset: bd.lower,
                }
            }
            (false, true) => Column::Mirrored {
                col: num_y,
                offset: bd.upper,
            },
            (false, false) => {
                num_y += 1;
                Column::Split {
                    pos: num_y - 1,
                    neg: num_y,
                }
            }
        };
        num_y += 1;
        columns.push(col);
    }

    // Transformed rows `a' y ≤ b'`.
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(a.len() + extra_rows.len());
    for (row, &rhs) in a.iter().zip(b) {
        let mut coeffs = vec![0.0; num_y];
        let mut rhs = rhs;
        for (j, &v) in row.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            match columns[j] {
                Column::Shifted { col, offset } => {
                    coeffs[col] += v;
                    rhs -= v * offset;
                }
                Column::Mirrored { col, offset } => {
                    coeffs[col] -= v;
                    rhs -= v * offset;
                }
                Column::Split { pos, neg } => {
                    coeffs[pos] += v;
                    coeffs[neg] -= v;
                }
            }
        }
        rows.push((coeffs, rhs));
    }
    for &(col, width) in &extra_rows {
        let mut coeffs = vec![0.0; num_y];
        coeffs[col] = 1.0;
        rows.push((coeffs, width));
    }
    let mut cost = vec![0.0; num_y];
    for (j, &cj) in c.iter().enumerate() {
        match columns[j] {
            Column::Shifted { col, .. } => cost[col] += cj,
            Column::Mirrored { col, .. } => cost[col] -= cj,
            Column::Split { pos, neg } => {
                cost[pos] += cj;
                cost[neg] -= cj;
            }
        }
    }

    let m = rows.len();
    let limit = (10 * (m + num_y + m)).max(100);
    let mut tab = Tableau::new(&rows, num_y);
    let mut pivots = 0usize;

    // Phase one.
    if tab.num_artificial > 0 {
        let mut phase_one = vec![0.0; tab.width];
        for k in 0..tab.num_artificial {
            phase_one[tab.artificial_start + k] = 1.0;
        }
        match tab.optimize(&phase_one, limit, &mut pivots, true)? {
            Outcome::Optimal => {}
            Outcome::Unbounded => unreachable!("phase one objective is bounded below"),
        }
        if tab.objective_value(&phase_one) > PHASE_ONE_TOL {
            return Ok(SolveReport::infeasible(n, start.elapsed(), pivots as u64));
        }
        tab.drive_out_artificials(&mut pivots);
    }

    // Phase two.
    let mut phase_two = vec![0.0; tab.width];
    phase_two[..num_y].copy_from_slice(&cost);
    let outcome = tab.optimize(&phase_two, limit, &mut pivots, false)?;
    if let Outcome::Unbounded = outcome {
        return Ok(SolveReport {
            status: SolveStatus::Unbounded,
            assignment: vec![0.0; n],
            objective: f64::NEG_INFINITY,
            duration: start.elapsed(),
            work: pivots as u64,
        });
    }

    let y = tab.primal();
    let x: Vec<f64> = columns
        .iter()
        .map(|col| match *col {
            Column::Shifted { col, offset } => offset + y[col],
            Column::Mirrored { col, offset } => offset - y[col],
            Column::Split { pos, neg } => y[pos] - y[neg],
        })
        .collect();
    let objective = c.iter().zip(&x).map(|(c, x)| c * x).sum();
    Ok(SolveReport {
        status: SolveStatus::Optimal,
        assignment: x,
        objective,
        duration: start.elapsed(),
        work: pivots as u64,
    })
}

enum Outcome {
    Optimal,
    Unbounded,
}

/// Columns: structural `y`, one slack per row, then artificials for rows
/// whose right-hand side was negative.
struct Tableau {
    m: usize,
    width: usize,
    artificial_start: usize,
    num_artificial: usize,
    data: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    /// Artificial columns that may no longer enter the basis.
    blocked: Vec<bool>,
}

impl Tableau {
    fn new(rows: &[(Vec<f64>, f64)], num_y: usize) -> Self {
        let m = rows.len();
        let num_artificial = rows.iter().filter(|(_, rhs)| *rhs < 0.0).count();
        let artificial_start = num_y + m;
        let width = artificial_start + num_artificial;
        let mut data = vec![0.0; m * width];
        let mut rhs = vec![0.0; m];
        let mut basis = vec![0; m];
        let mut next_art = artificial_start;
        for (i, (coeffs, b)) in rows.iter().enumerate() {
            let sign = if *b < 0.0 { -1.0 } else { 1.0 };
            let row = &mut data[i * width..(i + 1) * width];
            for (dst, v) in row.iter_mut().zip(coeffs) {
                *dst = sign * v;
            }
            row[num_y + i] = sign;
            rhs[i] = sign * b;
            if sign < 0.0 {
                row[next_art] = 1.0;
                basis[i] = next_art;
                next_art += 1;
            } else {
                basis[i] = num_y + i;
            }
        }
        Self {
            m,
            width,
            artificial_start,
            num_artificial,
            data,
            rhs,
            basis,
            blocked: vec![false; width],
        }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut reduced = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            let row = &self.data[i * self.width..(i + 1) * self.width];
            for (r, a) in reduced.iter_mut().zip(row) {
                *r -= cb * a;
            }
        }
        reduced
    }

    fn objective_value(&self, cost: &[f64]) -> f64 {
        (0..self.m).map(|i| cost[self.basis[i]] * self.rhs[i]).sum()
    }

    fn optimize(
        &mut self,
        cost: &[f64],
        limit: usize,
        pivots: &mut usize,
        phase_one: bool,
    ) -> Result<Outcome> {
        loop {
            let reduced = self.reduced_costs(cost);
            // Bland: lowest-index improving column.
            let entering = (0..self.width).find(|&j| {
                reduced[j] < -EPS && !self.blocked[j] && (phase_one || j < self.artificial_start)
            });
            let Some(q) = entering else {
                return Ok(Outcome::Optimal);
            };
            // Ratio test, ties broken by lowest basic index.
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, q);
                if a > EPS {
                    let ratio = self.rhs[i] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - EPS
                                || (ratio <= lr + EPS && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((p, _)) = leave else {
                return Ok(Outcome::Unbounded);
            };
            if *pivots >= limit {
                return Err(Error::IterationLimit { limit });
            }
            self.pivot(p, q);
            *pivots += 1;
        }
    }

    fn pivot(&mut self, p: usize, q: usize) {
        let w = self.width;
        let piv = self.data[p * w + q];
        for v in &mut self.data[p * w..(p + 1) * w] {
            *v /= piv;
        }
        self.rhs[p] /= piv;
        let pivot_row: Vec<f64> = self.data[p * w..(p + 1) * w].to_vec();
        let pivot_rhs = self.rhs[p];
        for i in 0..self.m {
            if i == p {
                continue;
            }
            let factor = self.data[i * w + q];
            if factor == 0.0 {
                continue;
            }
            let row = &mut self.data[i * w..(i + 1) * w];
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                *v -= factor * pv;
            }
            row[q] = 0.0;
            self.rhs[i] -= factor * pivot_rhs;
            if self.rhs[i].abs() < 1e-12 {
                self.rhs[i] = 0.0;
            }
        }
        self.basis[p] = q;
    }

    /// After phase one, pivots remaining (zero-valued) artificials out of the
    /// basis where possible and bars every artificial from re-entering.
    fn drive_out_artificials(&mut self, pivots: &mut usize) {
        for i in 0..self.m {
            if self.basis[i] < self.artificial_start {
                continue;
            }
            if let Some(q) = (0..self.artificial_start).find(|&j| self.at(i, j).abs() > EPS) {
                self.pivot(i, q);
                *pivots += 1;
            }
        }
        for j in self.artificial_start..self.width {
            self.blocked[j] = true;
        }
    }

    fn primal(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.width];
        for i in 0..self.m {
            y[self.basis[i]] = self.rhs[i];
        }
        y
    }
}
