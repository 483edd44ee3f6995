//! Experiment configuration, read from TOML.
//!
//! Every key has a default, so an empty file is a valid configuration;
//! unknown keys are rejected. A minimal file:
//!
//! ```toml
//! seed = 7
//!
//! [generator]
//! family = "caching"
//! timesteps = 30
//!
//! [training]
//! steps = 1500
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamOptions;
use crate::datagen::GeneratorSpec;
use crate::error::{Error, Result};
use crate::loss::{LossConfig, LrSchedule};
use crate::milp::{Enumeration, OracleOptions, DEFAULT_MAX_BINARIES};
use crate::model::ModelConfig;
use crate::select::DEFAULT_GAMMA_GRID;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Linear warm-up `initial → peak` over `warmup_steps`, then a cosine
    /// envelope from `peak` down to `peak·(1 − decay)` at the last step.
    pub lr: LrSchedule,
    pub adam: AdamOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub steps: u64,
    /// Series per mini-batch; the usual choices are 8, 12, 16 or 32.
    pub batch_size: usize,
    /// Validation NLL is computed every this many steps and at the end.
    pub validate_every: u64,
    /// Fraction of training instances that keep their label.
    pub labeled_fraction: f64,
    /// Include the unsupervised term; `false` trains on labels only.
    pub unsupervised: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            validate_every: 50,
            labeled_fraction: 1.0,
            unsupervised: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub rho_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    /// Fixing rate at which one γ is tuned for the whole grid. Unset, γ is
    /// tuned on validation separately for every ρ in the grid.
    pub tune_rho: Option<f64>,
    /// Enumeration cap for labeling and reduced solves.
    pub max_binaries: usize,
    /// Label for the metric tables.
    pub method: String,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            rho_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            gamma_grid: DEFAULT_GAMMA_GRID.to_vec(),
            tune_rho: None,
            max_binaries: DEFAULT_MAX_BINARIES,
            method: "predict-and-fix".into(),
        }
    }
}

impl EvaluationConfig {
    pub fn oracle(&self) -> OracleOptions {
        OracleOptions {
            max_binaries: self.max_binaries,
            strategy: Enumeration::Pruned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Falls back to `$PREDFIX_RUN_DIR`, then `runs/default`.
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; overrides `generator.seed` and `model.seed` and drives
    /// label subsets and batch order.
    pub seed: u64,
    pub generator: GeneratorSpec,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
    pub paths: PathsConfig,
}

pub const RUN_DIR_ENV: &str = "PREDFIX_RUN_DIR";

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.propagate_seed();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Copies the master seed into the components that carry their own.
    pub fn propagate_seed(&mut self) {
        self.generator.seed = self.seed;
        self.model.seed = self.seed;
    }

    pub fn label_seed(&self) -> u64 {
        self.seed ^ 0x6c61_6265_6c73
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        let t = &self.training;
        if t.batch_size == 0 || t.validate_every == 0 {
            return Err(Error::Config(
                "training.batch_size and validate_every must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&t.labeled_fraction) {
            return Err(Error::Config(
                "training.labeled_fraction must lie in [0, 1]".into(),
            ));
        }
        let warmups = [
            ("loss.lambda", self.loss.lambda.warmup_steps),
            ("loss.lambda_reg", self.loss.lambda_reg.warmup_steps),
            ("loss.lambda_c", self.loss.lambda_c.warmup_steps),
            ("optimizer.lr", self.optimizer.lr.warmup_steps),
        ];
        for (name, w) in warmups {
            if w > t.steps {
                return Err(Error::Config(format!(
                    "{name} warm-up ({w} steps) is longer than training ({} steps)",
                    t.steps
                )));
            }
        }
        let lr = &self.optimizer.lr;
        if lr.initial < 0.0 || lr.peak <= 0.0 || !(0.0..=1.0).contains(&lr.decay) {
            return Err(Error::Config(
                "optimizer.lr needs initial ≥ 0, peak > 0, decay ∈ [0, 1]".into(),
            ));
        }
        let e = &self.evaluation;
        if e.rho_grid
            .iter()
            .chain(e.tune_rho.as_ref())
            .any(|r| !(0.0..=1.0).contains(r))
        {
            return Err(Error::Config(
                "evaluation ρ values must lie in [0, 1]".into(),
            ));
        }
        if e.gamma_grid.is_empty() || e.gamma_grid.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::Config(
                "evaluation.gamma_grid must be nonempty with γ ≥ 0".into(),
            ));
        }
        Ok(())
    }

    /// Shrinks every warm-up to fit `steps`, keeping their proportions to
    /// the default 1000-step horizon. Useful for short desk runs.
    pub fn fit_schedules_to(&mut self, steps: u64) {
        let scale = |w: u64| (w as f64 * steps as f64 / 1000.0).round() as u64;
        self.training.steps = steps;
        self.loss.lambda.warmup_steps = scale(self.loss.lambda.warmup_steps).min(steps);
        self.loss.lambda_reg.warmup_steps = scale(self.loss.lambda_reg.warmup_steps).min(steps);
        self.loss.lambda_c.warmup_steps = scale(self.loss.lambda_c.warmup_steps).min(steps);
        self.optimizer.lr.warmup_steps = scale(self.optimizer.lr.warmup_steps).min(steps);
    }

    /// `paths.run_dir`, else `$PREDFIX_RUN_DIR`, else `runs/default`.
    pub fn run_dir(&self) -> PathBuf {
        self.paths
            .run_dir
            .clone()
            .or_else(|| std::env::var_os(RUN_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs/default"))
    }
}
