//! Padded per-node feature triplets `(a_ij, b_i, c_j)`.
//!
//! Each variable node gets one triplet per constraint it appears in, each
//! constraint node one per variable it touches. Blocks are padded with zero
//! triplets up to dataset-wide maxima so every node has the same count.

use crate::error::{Error, Result};
use crate::milp::{InstanceSeries, MilpInstance};

#[derive(Debug, Clone, PartialEq)]
pub struct NodeTriplets {
    pub num_vars: usize,
    pub num_rows: usize,
    /// Padded width of the variable block.
    pub m_c: usize,
    /// Padded width of the constraint block.
    pub m_v: usize,
    /// `num_vars × m_c × 3`, row-major.
    pub var: Vec<f64>,
    pub var_mask: Vec<bool>,
    /// `num_rows × m_v × 3`, row-major.
    pub con: Vec<f64>,
    pub con_mask: Vec<bool>,
}

impl NodeTriplets {
    pub fn var_triplet(&self, j: usize, k: usize) -> [f64; 3] {
        let at = (j * self.m_c + k) * 3;
        [self.var[at], self.var[at + 1], self.var[at + 2]]
    }

    pub fn con_triplet(&self, i: usize, k: usize) -> [f64; 3] {
        let at = (i * self.m_v + k) * 3;
        [self.con[at], self.con[at + 1], self.con[at + 2]]
    }

    pub fn var_count(&self, j: usize) -> usize {
        self.var_mask[j * self.m_c..(j + 1) * self.m_c]
            .iter()
            .filter(|m| **m)
            .count()
    }

    pub fn con_count(&self, i: usize) -> usize {
        self.con_mask[i * self.m_v..(i + 1) * self.m_v]
            .iter()
            .filter(|m| **m)
            .count()
    }
}

/// Largest per-variable and per-constraint nonzero counts in one instance.
pub fn instance_maxima(instance: &MilpInstance) -> (usize, usize) {
    let m_c = instance.a().col_counts().into_iter().max().unwrap_or(0);
    let m_v = (0..instance.num_rows())
        .map(|i| instance.a().row_nnz(i))
        .max()
        .unwrap_or(0);
    (m_c, m_v)
}

/// `(m_c, m_v)` over every instance of every series.
pub fn dataset_maxima(series: &[InstanceSeries]) -> Result<(usize, usize)> {
    maxima_of(series.iter().flat_map(|s| s.instances.iter()))
}

pub fn maxima_of<'a>(
    instances: impl IntoIterator<Item = &'a MilpInstance>,
) -> Result<(usize, usize)> {
    let mut seen = false;
    let (mut m_c, mut m_v) = (0, 0);
    for inst in instances {
        seen = true;
        let (c, v) = instance_maxima(inst);
        m_c = m_c.max(c);
        m_v = m_v.max(v);
    }
    if !seen {
        return Err(Error::EmptyDataset);
    }
    Ok((m_c, m_v))
}

pub fn build_triplets(instance: &MilpInstance, m_c: usize, m_v: usize) -> Result<NodeTriplets> {
    let (nv, nr) = (instance.num_vars(), instance.num_rows());
    let (c, b) = (instance.c(), instance.b());
    let mut var = vec![0.0; nv * m_c * 3];
    let mut var_mask = vec![false; nv * m_c];
    let mut con = vec![0.0; nr * m_v * 3];
    let mut con_mask = vec![false; nr * m_v];

    // CSR rows come out with ascending column indices; walking rows in order
    // fills each variable's slots in ascending constraint order.
    let mut var_fill = vec![0usize; nv];
    for i in 0..nr {
        let (cols, vals) = instance.a().row(i);
        if cols.len() > m_v {
            return Err(Error::MaximaExceeded {
                count: cols.len(),
                max: m_v,
            });
        }
        for (k, (&j, &a)) in cols.iter().zip(vals).enumerate() {
            let at = (i * m_v + k) * 3;
            con[at..at + 3].copy_from_slice(&[a, b[i], c[j]]);
            con_mask[i * m_v + k] = true;

            let slot = var_fill[j];
            if slot >= m_c {
                let count = instance.a().col_counts()[j];
                return Err(Error::MaximaExceeded { count, max: m_c });
            }
            let at = (j * m_c + slot) * 3;
            var[at..at + 3].copy_from_slice(&[a, b[i], c[j]]);
            var_mask[j * m_c + slot] = true;
            var_fill[j] += 1;
        }
    }
    Ok(NodeTriplets {
        num_vars: nv,
        num_rows: nr,
        m_c,
        m_v,
        var,
        var_mask,
        con,
        con_mask,
    })
}
