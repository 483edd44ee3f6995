//! Standard-form binary MILPs, their graph encoding, and the exact solvers
//! used as ground truth.

mod graph;
mod instance;
pub mod mps;
pub mod oracle;
pub mod series;
pub mod simplex;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use graph::BipartiteGraph;
pub use instance::{MilpInstance, RawInstance, RawRow, RowSense, VarKind, FEAS_TOL};
pub use oracle::{enumerate_solve, solve_exact, Enumeration, OracleOptions, DEFAULT_MAX_BINARIES};
pub use series::InstanceSeries;
pub use simplex::{solve_lp, Bounds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Written out for an external solver; no result yet.
    Deferred,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub assignment: Vec<f64>,
    pub objective: f64,
    pub duration: Duration,
    /// Enumerated assignments / search nodes, or simplex pivots for LPs.
    pub work: u64,
}

impl SolveReport {
    pub(crate) fn infeasible(n: usize, duration: Duration, work: u64) -> Self {
        Self {
            status: SolveStatus::Infeasible,
            assignment: vec![0.0; n],
            objective: f64::INFINITY,
            duration,
            work,
        }
    }
}

/// Optimal solution attached to an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub status: SolveStatus,
    pub z: Vec<f64>,
    pub objective: f64,
    /// Wall-clock time of the solve that produced the label.
    #[serde(default)]
    pub solve_seconds: f64,
}

impl Label {
    pub fn from_report(report: &SolveReport) -> Self {
        Self {
            status: report.status,
            z: report.assignment.clone(),
            objective: report.objective,
            solve_seconds: report.duration.as_secs_f64(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}
