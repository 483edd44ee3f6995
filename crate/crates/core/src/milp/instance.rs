use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Feasibility tolerance on normalized data (absolute).
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Binary,
    Continuous,
}

/// Relation of a row before conversion to standard form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowSense {
    Le,
    Ge,
    Eq,
}

/// A binary MILP `min cᵀz s.t. Az ≤ b`, binaries first.
///
/// Every row is a `≤` row; equalities only exist in [`RawInstance`] and are
/// split on conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct MilpInstance {
    c: Vec<f64>,
    a: CsrMatrix,
    b: Vec<f64>,
    n_binary: usize,
}

impl MilpInstance {
    pub fn new(c: Vec<f64>, a: CsrMatrix, b: Vec<f64>, n_binary: usize) -> Result<Self> {
        if a.cols() != c.len() {
            return Err(Error::dims("constraint matrix columns", c.len(), a.cols()));
        }
        if a.rows() != b.len() {
            return Err(Error::dims("right-hand side length", a.rows(), b.len()));
        }
        if n_binary > c.len() {
            return Err(Error::dims("binary count", c.len(), n_binary));
        }
        if c.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::Format(
                "non-finite objective or right-hand side".into(),
            ));
        }
        Ok(Self { c, a, b, n_binary })
    }

    /// Dense convenience constructor, mostly for tests and examples.
    pub fn from_dense(c: Vec<f64>, a: &[Vec<f64>], b: Vec<f64>, n_binary: usize) -> Result<Self> {
        let a = CsrMatrix::from_dense(a, c.len())?;
        Self::new(c, a, b, n_binary)
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn a(&self) -> &CsrMatrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// `D_z`.
    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    /// `D_c`.
    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    pub fn num_binary(&self) -> usize {
        self.n_binary
    }

    pub fn num_continuous(&self) -> usize {
        self.c.len() - self.n_binary
    }

    pub fn kind(&self, j: usize) -> VarKind {
        if j < self.n_binary {
            VarKind::Binary
        } else {
            VarKind::Continuous
        }
    }

    pub fn objective(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.num_vars() {
            return Err(Error::dims("assignment length", self.num_vars(), z.len()));
        }
        Ok(self.c.iter().zip(z).map(|(c, z)| c * z).sum())
    }

    /// `max_i (aᵢᵀz − bᵢ)`, or `-inf` when there are no rows.
    pub fn max_violation(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.num_vars() {
            return Err(Error::dims("assignment length", self.num_vars(), z.len()));
        }
        Ok(self
            .a
            .mul_vec(z)
            .iter()
            .zip(&self.b)
            .map(|(lhs, rhs)| lhs - rhs)
            .fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn check_feasibility(&self, z: &[f64], tol: f64) -> Result<bool> {
        Ok(self.max_violation(z)? <= tol)
    }

    /// Row-wise `p`-norm normalization; returns a new instance.
    pub fn normalize(&self, p: f64) -> Result<Self> {
        self.normalize_scaled(p, 1.0, 1.0)
    }

    /// Normalization for an instance of a different size than the training
    /// reference: rows get an extra `√((D̄+1)/(D+1))`, the objective `√(D̄/D)`.
    pub fn normalize_rescaled(&self, reference_size: usize) -> Result<Self> {
        if reference_size == 0 {
            return Err(Error::Config("reference size must be positive".into()));
        }
        let size = self.num_vars() as f64;
        let reference = reference_size as f64;
        let row_factor = ((size + 1.0) / (reference + 1.0)).sqrt();
        let obj_factor = (size / reference).sqrt();
        self.normalize_scaled(2.0, row_factor, obj_factor)
    }

    fn normalize_scaled(&self, p: f64, row_factor: f64, obj_factor: f64) -> Result<Self> {
        let c_norm = p_norm(self.c.iter().copied(), p);
        if c_norm == 0.0 {
            return Err(Error::ZeroObjective);
        }
        let mut row_scale = Vec::with_capacity(self.num_rows());
        for i in 0..self.num_rows() {
            let (_, vals) = self.a.row(i);
            let norm = p_norm(vals.iter().copied().chain([self.b[i]]), p);
            if norm == 0.0 {
                return Err(Error::ZeroNormRow { row: i });
            }
            row_scale.push(norm);
        }
        let a = self
            .a
            .map_entries(|i, _, v| row_factor * (v / row_scale[i]));
        let b = self
            .b
            .iter()
            .zip(&row_scale)
            .map(|(b, s)| row_factor * (b / s))
            .collect();
        let c = self.c.iter().map(|c| obj_factor * (c / c_norm)).collect();
        Ok(Self {
            c,
            a,
            b,
            n_binary: self.n_binary,
        })
    }

    /// Returns the instance with row `i` (both `aᵢ` and `bᵢ`) multiplied by `k`.
    pub fn scale_row(&self, i: usize, k: f64) -> Self {
        let a = self.a.map_entries(|r, _, v| if r == i { v * k } else { v });
        let mut b = self.b.clone();
        b[i] *= k;
        Self {
            c: self.c.clone(),
            a,
            b,
            n_binary: self.n_binary,
        }
    }

    pub fn scale_objective(&self, k: f64) -> Self {
        Self {
            c: self.c.iter().map(|c| c * k).collect(),
            ..self.clone()
        }
    }

    /// Reorders variables and rows: new variable `j` is old `var_perm[j]`,
    /// new row `i` is old `row_perm[i]`. The permutation must keep binaries
    /// ahead of continuous variables.
    pub fn permute(&self, var_perm: &[usize], row_perm: &[usize]) -> Result<Self> {
        if var_perm.len() != self.num_vars() {
            return Err(Error::dims(
                "variable permutation",
                self.num_vars(),
                var_perm.len(),
            ));
        }
        if row_perm.len() != self.num_rows() {
            return Err(Error::dims(
                "row permutation",
                self.num_rows(),
                row_perm.len(),
            ));
        }
        for (new, &old) in var_perm.iter().enumerate() {
            if self.kind(new) != self.kind(old) {
                return Err(Error::Format(
                    "variable permutation mixes binary and continuous blocks".into(),
                ));
            }
        }
        let mut inverse = vec![0; var_perm.len()];
        for (new, &old) in var_perm.iter().enumerate() {
            inverse[old] = new;
        }
        let rows = self.a.select_rows(row_perm);
        let a = CsrMatrix::from_triplets(
            rows.rows(),
            rows.cols(),
            rows.triplets()
                .map(|(i, j, v)| (i, inverse[j], v))
                .collect::<Vec<_>>(),
        )?;
        Ok(Self {
            c: var_perm.iter().map(|&j| self.c[j]).collect(),
            a,
            b: row_perm.iter().map(|&i| self.b[i]).collect(),
            n_binary: self.n_binary,
        })
    }
}

fn p_norm(values: impl Iterator<Item = f64>, p: f64) -> f64 {
    if p.is_infinite() {
        return values.fold(0.0, |m, v| m.max(v.abs()));
    }
    if p == 2.0 {
        // hypot-style accumulation avoids overflow for large coefficients
        let values: Vec<f64> = values.collect();
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        return scale
            * values
                .iter()
                .map(|v| (v / scale).powi(2))
                .sum::<f64>()
                .sqrt();
    }
    values.map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

/// A problem whose rows may be `≤`, `≥` or `=`; generators build these and
/// convert with [`RawInstance::to_standard_form`].
#[derive(Debug, Clone, PartialEq)]
pub struct RawInstance {
    pub c: Vec<f64>,
    pub rows: Vec<RawRow>,
    pub n_binary: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub terms: Vec<(usize, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

impl RawInstance {
    pub fn new(n_binary: usize, n_continuous: usize) -> Self {
        Self {
            c: vec![0.0; n_binary + n_continuous],
            rows: Vec::new(),
            n_binary,
        }
    }

    pub fn add_row(&mut self, terms: Vec<(usize, f64)>, sense: RowSense, rhs: f64) {
        self.rows.push(RawRow { terms, sense, rhs });
    }

    pub fn num_equalities(&self) -> usize {
        self.rows.iter().filter(|r| r.sense == RowSense::Eq).count()
    }

    /// Emits every equality `aᵀz = b` as the adjacent pair `aᵀz ≤ b`,
    /// `−aᵀz ≤ −b`; `≥` rows are negated. Variable order is unchanged.
    pub fn to_standard_form(&self) -> Result<MilpInstance> {
        let mut triplets = Vec::new();
        let mut b = Vec::new();
        let mut push = |terms: &[(usize, f64)], sign: f64, rhs: f64, b: &mut Vec<f64>| {
            let i = b.len();
            triplets.extend(terms.iter().map(|&(j, v)| (i, j, sign * v)));
            b.push(sign * rhs);
        };
        for row in &self.rows {
            match row.sense {
                RowSense::Le => push(&row.terms, 1.0, row.rhs, &mut b),
                RowSense::Ge => push(&row.terms, -1.0, row.rhs, &mut b),
                RowSense::Eq => {
                    push(&row.terms, 1.0, row.rhs, &mut b);
                    push(&row.terms, -1.0, row.rhs, &mut b);
                }
            }
        }
        let a = CsrMatrix::from_triplets(b.len(), self.c.len(), triplets)?;
        MilpInstance::new(self.c.clone(), a, b, self.n_binary)
    }

    /// Feasibility of the original (unsplit) system.
    pub fn satisfied_by(&self, z: &[f64], tol: f64) -> bool {
        self.rows.iter().all(|row| {
            let lhs: f64 = row.terms.iter().map(|&(j, v)| v * z[j]).sum();
            match row.sense {
                RowSense::Le => lhs - row.rhs <= tol,
                RowSense::Ge => row.rhs - lhs <= tol,
                RowSense::Eq => (lhs - row.rhs).abs() <= tol,
            }
        })
    }
}
