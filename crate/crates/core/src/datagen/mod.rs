//! Synthetic time series of binary MILPs and their exact labels.
//!
//! Every series draws from its own ChaCha stream keyed by the dataset seed,
//! the split and the series index, so datasets are reproducible regardless
//! of how many threads generate them. Structure shared by a whole dataset
//! (routing topology, facility sites, the caching catalog) comes from a
//! dedicated stream.

pub mod families;
pub mod process;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::milp::{solve_exact, InstanceSeries, Label, OracleOptions, DEFAULT_MAX_BINARIES};

pub use families::{
    caching_instance, facility_instance, facility_raw, revenue_instance, revenue_raw,
    revenue_resources, tsp_arc, tsp_instance, tsp_raw, tsp_subtour_rows, CachingSpec, EnergyParams,
    EnergySpec, FacilitySpec, Installment, RevenueSpec, RoutePath, RoutingNetwork, RoutingSpec,
    TspSpec,
};
pub use process::{Noise, TemporalProcess};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Routing,
    FacilityLoc,
    Tsp,
    RevenueMax,
    EnergyGrid,
    Caching,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Routing,
        Family::FacilityLoc,
        Family::Tsp,
        Family::RevenueMax,
        Family::EnergyGrid,
        Family::Caching,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Routing => "routing",
            Family::FacilityLoc => "facility-loc",
            Family::Tsp => "tsp",
            Family::RevenueMax => "revenue-max",
            Family::EnergyGrid => "energy-grid",
            Family::Caching => "caching",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown family {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub family: Family,
    pub train_series: usize,
    pub val_series: usize,
    pub test_series: usize,
    pub timesteps: usize,
    pub seed: u64,
    /// Generation refuses sizes whose binary count exceeds this.
    pub max_binaries: usize,
    pub routing: RoutingSpec,
    pub facility: FacilitySpec,
    pub tsp: TspSpec,
    pub revenue: RevenueSpec,
    pub energy: EnergySpec,
    pub caching: CachingSpec,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            family: Family::Caching,
            train_series: 16,
            val_series: 4,
            test_series: 4,
            timesteps: 20,
            seed: 0,
            max_binaries: DEFAULT_MAX_BINARIES,
            routing: RoutingSpec::default(),
            facility: FacilitySpec::default(),
            tsp: TspSpec::default(),
            revenue: RevenueSpec::default(),
            energy: EnergySpec::default(),
            caching: CachingSpec::default(),
        }
    }
}

impl GeneratorSpec {
    pub fn for_family(family: Family) -> Self {
        Self {
            family,
            ..Self::default()
        }
    }

    pub fn series_count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_series,
            Split::Val => self.val_series,
            Split::Test => self.test_series,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: Vec<InstanceSeries>,
    pub val: Vec<InstanceSeries>,
    pub test: Vec<InstanceSeries>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[InstanceSeries] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<InstanceSeries> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

/// Dataset-wide structure drawn once from the shared stream.
enum Shared {
    Routing(RoutingNetwork),
    Facility(Vec<Vec<f64>>),
    Revenue(Vec<Vec<f64>>),
    Caching(Vec<f64>),
    None,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const SHARED_STREAM: u64 = 0;

fn num_binary(spec: &GeneratorSpec, shared: &Shared) -> usize {
    match (spec.family, shared) {
        (Family::Routing, Shared::Routing(net)) => net.num_binary(),
        (Family::FacilityLoc, _) => {
            spec.facility.clients * spec.facility.facilities + spec.facility.facilities
        }
        (Family::Tsp, _) => spec.tsp.cities * spec.tsp.cities.saturating_sub(1),
        (Family::RevenueMax, _) => spec.revenue.items,
        (Family::EnergyGrid, _) => spec.energy.batteries,
        (Family::Caching, _) => spec.caching.items,
        _ => 0,
    }
}

/// Generates all three splits.
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    if spec.timesteps == 0 {
        return Err(Error::Config("timesteps must be positive".into()));
    }
    let mut rng = stream_rng(spec.seed, SHARED_STREAM);
    let shared = match spec.family {
        Family::Routing => Shared::Routing(RoutingNetwork::sample(&spec.routing, &mut rng)?),
        Family::FacilityLoc => {
            Shared::Facility(families::facility_sites(&spec.facility, &mut rng)?)
        }
        Family::RevenueMax => {
            Shared::Revenue(families::revenue_resources(&spec.revenue, &mut rng)?)
        }
        Family::Caching => Shared::Caching(families::caching_catalog(&spec.caching, &mut rng)?),
        _ => Shared::None,
    };
    let nb = num_binary(spec, &shared);
    if nb > spec.max_binaries {
        return Err(Error::SizeExceedsOracle(format!(
            "{} instances would have {nb} binaries, cap is {}",
            spec.family, spec.max_binaries
        )));
    }
    let mut data = Dataset::default();
    for split in Split::ALL {
        let series = (0..spec.series_count(split))
            .into_par_iter()
            .map(|idx| {
                let mut rng = stream_rng(spec.seed, split.stream() << 32 | idx as u64);
                let id = format!("{}-{}-{idx:04}", spec.family, split.as_str());
                let instances = generate_series(spec, &shared, &mut rng)?;
                Ok(InstanceSeries::new(id, instances))
            })
            .collect::<Result<Vec<_>>>()?;
        *data.split_mut(split) = series;
    }
    Ok(data)
}

fn generate_series(
    spec: &GeneratorSpec,
    shared: &Shared,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<crate::milp::MilpInstance>> {
    let t = spec.timesteps;
    match (spec.family, shared) {
        (Family::Routing, Shared::Routing(net)) => {
            families::routing_series(&spec.routing, net, t, rng)
        }
        (Family::FacilityLoc, Shared::Facility(cost)) => {
            families::facility_series(&spec.facility, cost, t, rng)
        }
        (Family::Tsp, _) => families::tsp_series(&spec.tsp, t, rng),
        (Family::RevenueMax, Shared::Revenue(a)) => {
            families::revenue_series(&spec.revenue, a, t, rng)
        }
        (Family::EnergyGrid, _) => families::energy_series(&spec.energy, t, rng),
        (Family::Caching, Shared::Caching(sizes)) => {
            families::caching_series(&spec.caching, sizes, t, rng)
        }
        _ => unreachable!("shared structure always matches the family"),
    }
}

/// Labels a seeded random subset of `round(fraction · total)` instances
/// with the exact oracle and clears every other label.
pub fn label_dataset(
    series: &mut [InstanceSeries],
    options: &OracleOptions,
    fraction: f64,
    seed: u64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "labeled fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let mut slots: Vec<(usize, usize)> = series
        .iter()
        .enumerate()
        .flat_map(|(s, ser)| (0..ser.len()).map(move |t| (s, t)))
        .collect();
    let keep = (fraction * slots.len() as f64).round() as usize;
    slots.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    slots.truncate(keep);
    slots.sort_unstable();

    let labels = slots
        .par_iter()
        .map(|&(s, t)| {
            solve_exact(&series[s].instances[t], options).map(|r| Label::from_report(&r))
        })
        .collect::<Result<Vec<_>>>()?;
    for ser in series.iter_mut() {
        ser.labels.iter_mut().for_each(|l| *l = None);
    }
    for ((s, t), label) in slots.into_iter().zip(labels) {
        series[s].labels[t] = Some(label);
    }
    Ok(())
}
