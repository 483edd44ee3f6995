//! Instance builders for the six problem families and the per-series
//! generators that drive them through time.
//!
//! Builders take plain parameter arrays so small cases can be written by
//! hand; generators sample those arrays and advance them with a
//! [`TemporalProcess`].

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::process::{stable_transition, Noise, TemporalProcess};
use crate::error::{Error, Result};
use crate::milp::{MilpInstance, RawInstance, RowSense, FEAS_TOL};

/// Resample budget for a timestep whose witness assignment is infeasible.
pub const MAX_RESAMPLES: usize = 100;

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn feasible(raw: &RawInstance, witness: &[f64]) -> bool {
    raw.satisfied_by(witness, FEAS_TOL)
}

/// Advances `processes` one step, redrawing the noise until `accept` holds.
fn advance_until<R, F>(
    processes: &mut [TemporalProcess],
    t: usize,
    rng: &mut R,
    what: &str,
    accept: F,
) -> Result<()>
where
    R: Rng + ?Sized,
    F: Fn(&[TemporalProcess]) -> bool,
{
    for _ in 0..MAX_RESAMPLES {
        let mut trial = processes.to_vec();
        for p in &mut trial {
            p.advance(t, rng);
        }
        if accept(&trial) {
            processes.clone_from_slice(&trial);
            return Ok(());
        }
    }
    Err(Error::GenerationFailed(format!(
        "{what}: no feasible draw at step {} after {MAX_RESAMPLES} attempts",
        t + 1
    )))
}

// ---------------------------------------------------------------- routing

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingSpec {
    pub nodes: usize,
    pub edges: usize,
    pub commodities: usize,
    /// Each commodity gets between 2 and this many candidate paths.
    pub max_paths: usize,
    pub installment_types: usize,
    pub edge_length: (f64, f64),
    pub base_capacity: (f64, f64),
    pub installment_cost: (f64, f64),
    pub installment_capacity: (f64, f64),
    pub base_demand: (f64, f64),
    pub diurnal_period: f64,
    pub diurnal_amplitude: f64,
    /// Standard deviation of the demand noise, relative to the base demand.
    pub demand_noise: f64,
}

impl Default for RoutingSpec {
    fn default() -> Self {
        Self {
            nodes: 6,
            edges: 9,
            commodities: 4,
            max_paths: 3,
            installment_types: 1,
            edge_length: (1.0, 3.0),
            base_capacity: (0.5, 2.0),
            installment_cost: (1.0, 3.0),
            installment_capacity: (2.0, 5.0),
            base_demand: (0.5, 1.5),
            diurnal_period: 24.0,
            diurnal_amplitude: 0.4,
            demand_noise: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Installment {
    pub cost: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutePath {
    pub edges: Vec<usize>,
    /// Routing cost per unit of traffic.
    pub cost: f64,
}

/// Topology, capacities and candidate paths; everything but the demand.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingNetwork {
    pub num_edges: usize,
    pub base_capacity: Vec<f64>,
    pub installments: Vec<Installment>,
    /// Candidate paths per commodity.
    pub commodities: Vec<Vec<RoutePath>>,
}

impl RoutingNetwork {
    pub fn num_path_vars(&self) -> usize {
        self.commodities.iter().map(Vec::len).sum()
    }

    pub fn num_binary(&self) -> usize {
        self.num_path_vars() + self.num_edges * self.installments.len()
    }

    /// Variables are `p_{k,l}` commodity-major, then `q_{e,i}` edge-major.
    pub fn raw(&self, demand: &[f64]) -> Result<RawInstance> {
        if demand.len() != self.commodities.len() {
            return Err(Error::dims(
                "routing demand",
                self.commodities.len(),
                demand.len(),
            ));
        }
        let np = self.num_path_vars();
        let ni = self.installments.len();
        let mut raw = RawInstance::new(self.num_binary(), 0);
        let mut load: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.num_edges];
        let mut j = 0;
        for (k, paths) in self.commodities.iter().enumerate() {
            let mut choice = Vec::with_capacity(paths.len());
            for path in paths {
                raw.c[j] = path.cost * demand[k];
                for &e in &path.edges {
                    load[e].push((j, demand[k]));
                }
                choice.push((j, 1.0));
                j += 1;
            }
            raw.add_row(choice, RowSense::Eq, 1.0);
        }
        for (e, mut terms) in load.into_iter().enumerate() {
            for (i, inst) in self.installments.iter().enumerate() {
                let q = np + e * ni + i;
                raw.c[q] = inst.cost;
                terms.push((q, -inst.capacity));
            }
            raw.add_row(terms, RowSense::Le, self.base_capacity[e]);
        }
        Ok(raw)
    }

    pub fn instance(&self, demand: &[f64]) -> Result<MilpInstance> {
        self.raw(demand)?.to_standard_form()
    }

    /// Whether some path choice fits once every installment is bought.
    pub fn admits_witness(&self, demand: &[f64]) -> bool {
        let extra: f64 = self.installments.iter().map(|i| i.capacity).sum();
        let cap: Vec<f64> = self
            .base_capacity
            .iter()
            .map(|b| b + extra + FEAS_TOL)
            .collect();
        let mut load = vec![0.0; self.num_edges];
        self.fits(0, demand, &cap, &mut load)
    }

    fn fits(&self, k: usize, demand: &[f64], cap: &[f64], load: &mut [f64]) -> bool {
        if k == self.commodities.len() {
            return true;
        }
        for path in &self.commodities[k] {
            let ok = path.edges.iter().all(|&e| load[e] + demand[k] <= cap[e]);
            if ok {
                path.edges.iter().for_each(|&e| load[e] += demand[k]);
                let found = self.fits(k + 1, demand, cap, load);
                path.edges.iter().for_each(|&e| load[e] -= demand[k]);
                if found {
                    return true;
                }
            }
        }
        false
    }

    /// Ring over `nodes` plus random chords; commodities between random
    /// node pairs, each with its cheapest simple paths.
    pub fn sample<R: Rng + ?Sized>(spec: &RoutingSpec, rng: &mut R) -> Result<Self> {
        let n = spec.nodes;
        if n < 3 || spec.edges < n || spec.edges > n * (n - 1) / 2 {
            return Err(Error::Config(format!(
                "routing needs 3 ≤ nodes and nodes ≤ edges ≤ nodes·(nodes−1)/2, got {} nodes, {} edges",
                n, spec.edges
            )));
        }
        if spec.max_paths < 2 || spec.commodities == 0 {
            return Err(Error::Config(
                "routing needs max_paths ≥ 2 and at least one commodity".into(),
            ));
        }
        let mut edges: Vec<(usize, usize)> = (0..n)
            .map(|i| (i.min((i + 1) % n), i.max((i + 1) % n)))
            .collect();
        let mut chords: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|e| !edges.contains(e))
            .collect();
        chords.shuffle(rng);
        edges.extend(chords.into_iter().take(spec.edges - n));
        let length: Vec<f64> = edges
            .iter()
            .map(|_| uniform(rng, spec.edge_length))
            .collect();

        let mut commodities = Vec::with_capacity(spec.commodities);
        for _ in 0..spec.commodities {
            let s = rng.random_range(0..n);
            let d = (s + rng.random_range(1..n)) % n;
            let mut paths = simple_paths(n, &edges, s, d);
            for p in &mut paths {
                p.cost = p.edges.iter().map(|&e| length[e]).sum();
            }
            paths.sort_by(|a, b| {
                a.cost
                    .total_cmp(&b.cost)
                    .then_with(|| a.edges.cmp(&b.edges))
            });
            let keep = rng.random_range(2..=spec.max_paths).min(paths.len());
            paths.truncate(keep);
            commodities.push(paths);
        }
        let base_capacity = edges
            .iter()
            .map(|_| uniform(rng, spec.base_capacity))
            .collect();
        let installments = (0..spec.installment_types)
            .map(|_| Installment {
                cost: uniform(rng, spec.installment_cost),
                capacity: uniform(rng, spec.installment_capacity),
            })
            .collect();
        Ok(Self {
            num_edges: edges.len(),
            base_capacity,
            installments,
            commodities,
        })
    }
}

fn simple_paths(n: usize, edges: &[(usize, usize)], s: usize, d: usize) -> Vec<RoutePath> {
    fn walk(
        at: usize,
        d: usize,
        adj: &[Vec<(usize, usize)>],
        seen: &mut [bool],
        trail: &mut Vec<usize>,
        out: &mut Vec<RoutePath>,
    ) {
        if at == d {
            out.push(RoutePath {
                edges: trail.clone(),
                cost: 0.0,
            });
            return;
        }
        for &(next, e) in &adj[at] {
            if !seen[next] {
                seen[next] = true;
                trail.push(e);
                walk(next, d, adj, seen, trail, out);
                trail.pop();
                seen[next] = false;
            }
        }
    }
    let mut adj = vec![Vec::new(); n];
    for (e, &(u, v)) in edges.iter().enumerate() {
        adj[u].push((v, e));
        adj[v].push((u, e));
    }
    let mut seen = vec![false; n];
    seen[s] = true;
    let mut out = Vec::new();
    walk(s, d, &adj, &mut seen, &mut Vec::new(), &mut out);
    out
}

pub(crate) fn routing_series<R: Rng + ?Sized>(
    spec: &RoutingSpec,
    net: &RoutingNetwork,
    timesteps: usize,
    rng: &mut R,
) -> Result<Vec<MilpInstance>> {
    let k = net.commodities.len();
    let base: Vec<f64> = (0..k).map(|_| uniform(rng, spec.base_demand)).collect();
    let phases: Vec<f64> = (0..k)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let noise = Noise::Gaussian {
        std: spec.demand_noise,
    };
    let mut demand = [TemporalProcess::diurnal(
        base,
        spec.diurnal_amplitude,
        spec.diurnal_period,
        phases,
        noise,
    )];
    if !net.admits_witness(demand[0].state()) {
        return Err(Error::GenerationFailed(
            "routing: initial demand cannot be routed".into(),
        ));
    }
    let mut out = Vec::with_capacity(timesteps);
    for t in 0..timesteps {
        if t > 0 {
            advance_until(&mut demand, t - 1, rng, "routing", |p| {
                net.admits_witness(p[0].state())
            })?;
        }
        out.push(net.instance(demand[0].state())?);
    }
    Ok(out)
}

// ---------------------------------------------------------------- facility location

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FacilitySpec {
    pub clients: usize,
    pub facilities: usize,
    /// Opening costs are redrawn from this range for every instance.
    pub opening_cost: (f64, f64),
    pub eigenvalues: (f64, f64),
    pub periods: [f64; 2],
    pub amplitude1: (f64, f64),
    pub amplitude2: (f64, f64),
    pub noise_std: f64,
    pub initial_demand: (f64, f64),
}

impl Default for FacilitySpec {
    fn default() -> Self {
        Self {
            clients: 5,
            facilities: 3,
            opening_cost: (10.0, 60.0),
            eigenvalues: (0.98, 0.999),
            periods: [20.0, 70.0],
            amplitude1: (1.0, 5.0),
            amplitude2: (2.0, 10.0),
            noise_std: 1.0,
            initial_demand: (0.0, 10.0),
        }
    }
}

/// `assign_cost[j][i]` is the per-unit cost of serving client `j` from
/// facility `i`. Variables are `z_{j,i}` client-major, then `x_i`.
pub fn facility_raw(
    assign_cost: &[Vec<f64>],
    demand: &[f64],
    opening: &[f64],
) -> Result<RawInstance> {
    let (nj, ni) = (assign_cost.len(), opening.len());
    if demand.len() != nj {
        return Err(Error::dims("facility demand", nj, demand.len()));
    }
    if let Some(row) = assign_cost.iter().find(|r| r.len() != ni) {
        return Err(Error::dims("facility cost row", ni, row.len()));
    }
    let mut raw = RawInstance::new(nj * ni + ni, 0);
    for j in 0..nj {
        for i in 0..ni {
            raw.c[j * ni + i] = assign_cost[j][i] * demand[j];
        }
        raw.add_row(
            (0..ni).map(|i| (j * ni + i, 1.0)).collect(),
            RowSense::Eq,
            1.0,
        );
    }
    for i in 0..ni {
        raw.c[nj * ni + i] = opening[i];
        let mut terms: Vec<(usize, f64)> = (0..nj).map(|j| (j * ni + i, 1.0)).collect();
        terms.push((nj * ni + i, -2.0 * nj as f64));
        raw.add_row(terms, RowSense::Le, 0.0);
    }
    Ok(raw)
}

pub fn facility_instance(
    assign_cost: &[Vec<f64>],
    demand: &[f64],
    opening: &[f64],
) -> Result<MilpInstance> {
    facility_raw(assign_cost, demand, opening)?.to_standard_form()
}

/// Client-to-facility distances between points in the unit square.
pub fn facility_sites<R: Rng + ?Sized>(spec: &FacilitySpec, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if spec.clients == 0 || spec.facilities == 0 {
        return Err(Error::Config(
            "facility location needs clients and facilities".into(),
        ));
    }
    let mut point = || (rng.random::<f64>(), rng.random::<f64>());
    let clients: Vec<(f64, f64)> = (0..spec.clients).map(|_| point()).collect();
    let sites: Vec<(f64, f64)> = (0..spec.facilities).map(|_| point()).collect();
    Ok(clients
        .iter()
        .map(|c| sites.iter().map(|s| (c.0 - s.0).hypot(c.1 - s.1)).collect())
        .collect())
}

pub(crate) fn facility_series<R: Rng + ?Sized>(
    spec: &FacilitySpec,
    assign_cost: &[Vec<f64>],
    timesteps: usize,
    rng: &mut R,
) -> Result<Vec<MilpInstance>> {
    let nj = spec.clients;
    let transition = stable_transition(nj, spec.eigenvalues.0, spec.eigenvalues.1, rng);
    let amplitudes = [uniform(rng, spec.amplitude1), uniform(rng, spec.amplitude2)];
    let state = (0..nj).map(|_| uniform(rng, spec.initial_demand)).collect();
    let mut demand = [TemporalProcess::ArSinusoid {
        transition,
        amplitudes,
        periods: spec.periods,
        noise: Noise::Gaussian {
            std: spec.noise_std,
        },
        state,
    }];
    let mut out = Vec::with_capacity(timesteps);
    for t in 0..timesteps {
        if t > 0 {
            // any demand admits "open everything, serve from facility 0"
            advance_until(&mut demand, t - 1, rng, "facility", |_| true)?;
        }
        let opening: Vec<f64> = (0..spec.facilities)
            .map(|_| uniform(rng, spec.opening_cost))
            .collect();
        out.push(facility_instance(assign_cost, demand[0].state(), &opening)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------- tsp

/// Largest city count whose subtour rows are enumerated in full.
pub const MAX_TSP_CITIES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TspSpec {
    pub cities: usize,
    /// Per-step cost noise is uniform on ±this fraction of the mean arc cost.
    pub walk_fraction: f64,
}

impl Default for TspSpec {
    fn default() -> Self {
        Self {
            cities: 5,
            walk_fraction: 0.05,
        }
    }
}

/// Column of arc `i → j` (`i ≠ j`); self-arcs have no variable.
pub fn tsp_arc(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i != j && i < n && j < n);
    i * (n - 1) + if j < i { j } else { j - 1 }
}

/// Number of subtour rows: subsets `S` with `2 ≤ |S| ≤ N − 1`.
pub fn tsp_subtour_rows(n: usize) -> usize {
    if n < 3 {
        return 0;
    }
    (1usize << n) - n - 2
}

/// Degree equalities (in, then out) followed by every subtour row in
/// increasing bitmask order. `cost[i][j]` with the diagonal ignored.
pub fn tsp_raw(cost: &[Vec<f64>]) -> Result<RawInstance> {
    let n = cost.len();
    if !(2..=MAX_TSP_CITIES).contains(&n) {
        return Err(Error::Config(format!(
            "tsp needs 2 ≤ N ≤ {MAX_TSP_CITIES}, got {n}"
        )));
    }
    if let Some(row) = cost.iter().find(|r| r.len() != n) {
        return Err(Error::dims("tsp cost row", n, row.len()));
    }
    let mut raw = RawInstance::new(n * (n - 1), 0);
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            raw.c[tsp_arc(n, i, j)] = cost[i][j];
        }
    }
    for j in 0..n {
        let terms = (0..n)
            .filter(|&i| i != j)
            .map(|i| (tsp_arc(n, i, j), 1.0))
            .collect();
        raw.add_row(terms, RowSense::Eq, 1.0);
    }
    for i in 0..n {
        let terms = (0..n)
            .filter(|&j| j != i)
            .map(|j| (tsp_arc(n, i, j), 1.0))
            .collect();
        raw.add_row(terms, RowSense::Eq, 1.0);
    }
    for mask in 1u32..(1 << n) {
        let size = mask.count_ones() as usize;
        if size < 2 || size > n - 1 {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let terms = members
            .iter()
            .flat_map(|&i| {
                members
                    .iter()
                    .filter(move |&&j| j != i)
                    .map(move |&j| (tsp_arc(n, i, j), 1.0))
            })
            .collect();
        raw.add_row(terms, RowSense::Le, size as f64 - 1.0);
    }
    Ok(raw)
}

pub fn tsp_instance(cost: &[Vec<f64>]) -> Result<MilpInstance> {
    tsp_raw(cost)?.to_standard_form()
}

pub(crate) fn tsp_series<R: Rng + ?Sized>(
    spec: &TspSpec,
    timesteps: usize,
    rng: &mut R,
) -> Result<Vec<MilpInstance>> {
    let n = spec.cities;
    if !(2..=MAX_TSP_CITIES).contains(&n) {
        return Err(Error::Config(format!(
            "tsp needs 2 ≤ N ≤ {MAX_TSP_CITIES}, got {n}"
        )));
    }
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
        .collect();
    let arcs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let state: Vec<f64> = arcs
        .iter()
        .map(|&(i, j)| (pts[i].0 - pts[j].0).hypot(pts[i].1 - pts[j].1))
        .collect();
    let half = spec.walk_fraction * state.iter().sum::<f64>() / state.len() as f64;
    let mut cost = [TemporalProcess::RandomWalk {
        noise: Noise::Uniform {
            lo: -half,
            hi: half,
        },
        floor: Some(0.0),
        state,
    }];
    let matrix = |flat: &[f64]| {
        let mut m = vec![vec![0.0; n]; n];
        for (&(i, j), &v) in arcs.iter().zip(flat) {
            m[i][j] = v;
        }
        m
    };
    let mut out = Vec::with_capacity(timesteps);
    for t in 0..timesteps {
        if t > 0 {
            // the tour 0 → 1 → … → N−1 → 0 is always feasible
            advance_until(&mut cost, t - 1, rng, "tsp", |_| true)?;
        }
        out.push(tsp_instance(&matrix(cost[0].state()))?);
    }
    Ok(out)
}

// ---------------------------------------------------------------- revenue maximization

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RevenueSpec {
    pub items: usize,
    pub rows: usize,
    pub resource: (f64, f64),
    /// Initial capacity of each row as a fraction of its total demand.
    pub capacity_fraction: f64,
    pub initial_revenue: (f64, f64),
    /// Sinusoid amplitudes are drawn per series from this range.
    pub amplitude: (f64, f64),
    pub periods: [f64; 2],
    pub revenue_noise: f64,
    /// Capacity noise, relative to the mean initial capacity.
    pub capacity_noise: f64,
}

impl Default for RevenueSpec {
    fn default() -> Self {
        Self {
            items: 12,
            rows: 3,
            resource: (0.0, 1.0),
            capacity_fraction: 0.25,
            initial_revenue: (0.1, 1.0),
            amplitude: (0.0, 0.02),
            periods: [20.0, 70.0],
            revenue_noise: 0.02,
            capacity_noise: 0.02,
        }
    }
}

/// `max cᵀz s.t. Az ≤ b`, stored as `min −cᵀz`.
pub fn revenue_raw(
    resource: &[Vec<f64>],
    revenue: &[f64],
    capacity: &[f64],
) -> Result<RawInstance> {
    let n = revenue.len();
    if capacity.len() != resource.len() {
        return Err(Error::dims(
            "revenue capacity",
            resource.len(),
            capacity.len(),
        ));
    }
    let mut raw = RawInstance::new(n, 0);
    for (j, c) in revenue.iter().enumerate() {
        raw.c[j] = -c;
    }
    for (row, &b) in resource.iter().zip(capacity) {
        if row.len() != n {
            return Err(Error::dims("revenue resource row", n, row.len()));
        }
        raw.add_row(row.iter().copied().enumerate().collect(), RowSense::Le, b);
    }
    Ok(raw)
}

pub fn revenue_instance(
    resource: &[Vec<f64>],
    revenue: &[f64],
    capacity: &[f64],
) -> Result<MilpInstance> {
    revenue_raw(resource, revenue, capacity)?.to_standard_form()
}

/// Resource matrix `a[i][n]`, shared by every series of a dataset.
pub fn revenue_resources<R: Rng + ?Sized>(
    spec: &RevenueSpec,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if spec.items == 0 || spec.rows == 0 {
        return Err(Error::Config(
            "revenue maximization needs items and rows".into(),
        ));
    }
    Ok((0..spec.rows)
        .map(|_| {
            (0..spec.items)
                .map(|_| uniform(rng, spec.resource))
                .collect()
        })
        .collect())
}

pub(crate) fn revenue_series<R: Rng + ?Sized>(
    spec: &RevenueSpec,
    resource: &[Vec<f64>],
    timesteps: usize,
    rng: &mut R,
) -> Result<Vec<MilpInstance>> {
    let b0: Vec<f64> = resource
        .iter()
        .map(|r| spec.capacity_fraction * r.iter().sum::<f64>())
        .collect();
    let b_scale = b0.iter().sum::<f64>() / b0.len() as f64;
    let c0: Vec<f64> = (0..spec.items)
        .map(|_| uniform(rng, spec.initial_revenue))
        .collect();
    let amplitudes = vec![uniform(rng, spec.amplitude), uniform(rng, spec.amplitude)];
    let mut procs = [
        TemporalProcess::SinusoidWalk {
            amplitudes,
            periods: spec.periods.to_vec(),
            noise: Noise::Gaussian {
                std: spec.revenue_noise,
            },
            floor: None,
            state: c0,
        },
        TemporalProcess::RandomWalk {
            noise: Noise::Gaussian {
                std: spec.capacity_noise * b_scale,
            },
            floor: None,
            state: b0,
        },
    ];
    // z = 0 is the witness: capacities must stay nonnegative
    let witness_ok = |p: &[TemporalProcess]| p[1].state().iter().all(|b| *b >= 0.0);
    let mut out = Vec::with_capacity(timesteps);
    for t in 0..timesteps {
        if t > 0 {
            advance_until(&mut procs, t - 1, rng, "revenue-max", witness_ok)?;
        }
        out.push(revenue_instance(
            resource,
            procs[0].state(),
            procs[1].state(),
        )?);
    }
    Ok(out)
}

// ---------------------------------------------------------------- energy grid

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergySpec {
    pub prosumers: usize,
    /// Secondary batteries; these are the binaries.
    pub batteries: usize,
    /// Primary batteries; one capacity row each.
    pub primary: usize,
    /// Box `|z^(c)_f| ≤ transfer_limit` on every prosumer transfer.
    pub transfer_limit: f64,
    pub loss: (f64, f64),
    pub relief: (f64, f64),
    pub battery_cost: (f64, f64),
    pub initial_price: (f64, f64),
    /// Slack above the all-batteries witness load at `t = 0`.
    pub initial_capacity: (f64, f64),
    pub amplitude: (f64, f64),
    pub period: f64,
    pub price_noise: f64,
    pub capacity_noise: f64,
}

impl Default for EnergySpec {
    fn default() -> Self {
        Self {
            prosumers: 4,
            batteries: 4,
            primary: 3,
            transfer_limit: 1.0,
            loss: (0.1, 1.0),
            relief: (0.1, 0.5),
            battery_cost: (0.1, 0.5),
            initial_price: (1.0, 2.0),
            initial_capacity: (0.0, 0.3),
            amplitude: (0.0, 0.02),
            period: 20.0,
            price_noise: 0.02,
            capacity_noise: 0.02,
        }
    }
}

/// Coefficients fixed over a series.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyParams {
    /// `loss[n][f]`: transfer loss from prosumer `f` into primary battery `n`.
    pub loss: Vec<Vec<f64>>,
    /// `relief[n][i]`: capacity that secondary battery `i` adds to `n`.
    pub relief: Vec<Vec<f64>>,
    pub battery_cost: Vec<f64>,
    pub transfer_limit: f64,
}

impl EnergyParams {
    pub fn num_prosumers(&self) -> usize {
        self.loss.first().map_or(0, Vec::len)
    }

    /// Binaries `z^(b)` first, then continuous `z^(c)`. Rows: primary
    /// capacities, the unit-energy equality, then the transfer box.
    pub fn raw(&self, price: &[f64], capacity: &[f64]) -> Result<RawInstance> {
        let (ni, nf) = (self.battery_cost.len(), price.len());
        if capacity.len() != self.loss.len() || self.relief.len() != self.loss.len() {
            return Err(Error::dims(
                "energy primary batteries",
                self.loss.len(),
                capacity.len(),
            ));
        }
        let mut raw = RawInstance::new(ni, nf);
        raw.c[..ni].copy_from_slice(&self.battery_cost);
        for f in 0..nf {
            raw.c[ni + f] = -price[f];
        }
        for n in 0..self.loss.len() {
            if self.loss[n].len() != nf || self.relief[n].len() != ni {
                return Err(Error::dims(
                    "energy coefficient row",
                    nf,
                    self.loss[n].len(),
                ));
            }
            let mut terms: Vec<(usize, f64)> = (0..nf).map(|f| (ni + f, self.loss[n][f])).collect();
            terms.extend((0..ni).map(|i| (i, -self.relief[n][i])));
            raw.add_row(terms, RowSense::Le, capacity[n]);
        }
        raw.add_row((0..nf).map(|f| (ni + f, 1.0)).collect(), RowSense::Eq, 1.0);
        for f in 0..nf {
            raw.add_row(vec![(ni + f, 1.0)], RowSense::Le, self.transfer_limit);
            raw.add_row(vec![(ni + f, -1.0)], RowSense::Le, self.transfer_limit);
        }
        Ok(raw)
    }

    pub fn instance(&self, price: &[f64], capacity: &[f64]) -> Result<MilpInstance> {
        self.raw(price, capacity)?.to_standard_form()
    }

    /// Every battery deployed, energy split evenly.
    pub fn witness(&self) -> Vec<f64> {
        let nf = self.num_prosumers();
        let mut z = vec![1.0; self.battery_cost.len()];
        z.extend(std::iter::repeat_n(1.0 / nf as f64, nf));
        z
    }
}

pub(crate) fn energy_series<R: Rng + ?Sized>(
    spec: &EnergySpec,
    timesteps: usize,
    rng: &mut R,
) -> Result<Vec<MilpInstance>> {
    let (nf, ni, nn) = (spec.prosumers, spec.batteries, spec.primary);
    if nf == 0 || nn == 0 || spec.transfer_limit * nf as f64 <= 1.0 - FEAS_TOL {
        return Err(Error::Config(
            "energy grid needs prosumers, primary batteries and transfer_limit · prosumers ≥ 1"
                .into(),
        ));
    }
    let params = EnergyParams {
        loss: (0..nn)
            .map(|_| (0..nf).map(|_| uniform(rng, spec.loss)).collect())
            .collect(),
        relief: (0..nn)
            .map(|_| (0..ni).map(|_| uniform(rng, spec.relief)).collect())
            .collect(),
        battery_cost: (0..ni).map(|_| uniform(rng, spec.battery_cost)).collect(),
        transfer_limit: spec.transfer_limit,
    };
    let witness = params.witness();
    let b0: Vec<f64> = (0..nn)
        .map(|n| {
            let load: f64 = params.loss[n].iter().sum::<f64>() / nf as f64;
            let relief: f64 = params.relief[n].iter().sum();
            (load - relief).max(0.0) + uniform(rng, spec.initial_capacity)
        })
        .collect();
    let b_scale = b0.iter().sum::<f64>() / nn as f64;
    let c0: Vec<f64> = (0..nf).map(|_| uniform(rng, spec.initial_price)).collect();
    let mut procs = [
        TemporalProcess::SinusoidWalk {
            amplitudes: vec![uniform(rng, spec.amplitude)],
            periods: vec![spec.period],
            noise: Noise::Gaussian {
                std: spec.price_noise,
            },
            floor: None,
            state: c0,
        },
        TemporalProcess::RandomWalk {
            noise: Noise::Gaussian {
                std: spec.capacity_noise * b_scale.max(0.1),
            },
            floor: Some(0.0),
            state: b0,
        },
    ];
    let check = |p: &[TemporalProcess]| -> bool {
        params
            .raw(p[0].state(), p[1].state())
            .is_ok_and(|raw| feasible(&raw, &witness))
    };
    if !check(&procs) {
        return Err(Error::GenerationFailed(
            "energy grid: initial witness infeasible".into(),
        ));
    }
    let mut out = Vec::with_capacity(timesteps);
    for t in 0..timesteps {
        if t > 0 {
            advance_until(&mut procs, t - 1, rng, "energy-grid", check)?;
        }
        out.push(params.instance(procs[0].state(), procs[1].state())?);
    }
    Ok(out)
}

// ---------------------------------------------------------------- caching

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CachingSpec {
    pub items: usize,
    /// Item sizes are drawn once per dataset from this range.
    pub size: (f64, f64),
    /// Cache capacity as a fraction of the total catalog size.
    pub capacity_fraction: f64,
    pub zipf_exponent: f64,
    pub popularity_scale: f64,
    /// Probability that two adjacent ranks trade places in a step.
    pub swap_prob: f64,
}

impl Default for CachingSpec {
    fn default() -> Self {
        Self {
            items: 20,
            size: (1.0, 10.0),
            capacity_fraction: 0.3,
            zipf_exponent: 1.0,
            popularity_scale: 100.0,
            swap_prob: 0.05,
        }
    }
}

/// `max pᵀx s.t. qᵀx ≤ C`, stored as `min −pᵀx`.
pub fn caching_instance(popularity: &[f64], sizes: &[f64], capacity: f64) -> Result<MilpInstance> {
    if popularity.len() != sizes.len() {
        return Err(Error::dims("caching sizes", popularity.len(), sizes.len()));
    }
    let mut raw = RawInstance::new(sizes.len(), 0);
    for (j, p) in popularity.iter().enumerate() {
        raw.c[j] = -p;
    }
    raw.add_row(
        sizes.iter().copied().enumerate().collect(),
        RowSense::Le,
        capacity,
    );
    raw.to_standard_form()
}

pub fn caching_catalog<R: Rng + ?Sized>(spec: &CachingSpec, rng: &mut R) -> Result<Vec<f64>> {
    if spec.items == 0 {
        return Err(Error::Config("caching needs at least one item".into()));
    }
    Ok((0..spec.items).map(|_| uniform(rng, spec.size)).collect())
}

pub(crate) fn caching_series<R: Rng + ?Sized>(
    spec: &CachingSpec,
    sizes: &[f64],
    timesteps: usize,
    rng: &mut R,
) -> Result<Vec<MilpInstance>> {
    let capacity = spec.capacity_fraction * sizes.iter().sum::<f64>();
    let mut ranks: Vec<usize> = (1..=sizes.len()).collect();
    ranks.shuffle(rng);
    let mut popularity = [TemporalProcess::popularity(
        ranks,
        spec.zipf_exponent,
        spec.popularity_scale,
        spec.swap_prob,
    )];
    let mut out = Vec::with_capacity(timesteps);
    for t in 0..timesteps {
        if t > 0 {
            // the empty cache is always feasible
            advance_until(&mut popularity, t - 1, rng, "caching", |_| true)?;
        }
        out.push(caching_instance(popularity[0].state(), sizes, capacity)?);
    }
    Ok(out)
}
