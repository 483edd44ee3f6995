//! Mini-batch training over whole series.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::autodiff::{adam_step, Gradients, ParameterStore, Tape, Var};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::featurize::dataset_maxima;
use crate::loss::{
    beta_bernoulli_nll, cc_table_with, class_rates, regularizer_terms, soft_assignment,
    supervised_loss, unsupervised_loss, LossWeights, QuadratureTable,
};
use crate::milp::{InstanceSeries, MilpInstance};
use crate::model::{GraphInput, Model, ModelOutput};

/// How raw instances become model inputs: padding maxima taken from the
/// training split and the training instance size used for rescaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Featurizer {
    pub m_c: usize,
    pub m_v: usize,
    pub reference_size: usize,
}

impl Featurizer {
    pub fn fit(train: &[InstanceSeries]) -> Result<Self> {
        let (m_c, m_v) = dataset_maxima(train)?;
        let reference_size = train
            .iter()
            .find_map(|s| s.instances.first())
            .map(MilpInstance::num_vars)
            .ok_or(Error::EmptyDataset)?;
        Ok(Self {
            m_c,
            m_v,
            reference_size,
        })
    }

    pub fn input(&self, instance: &MilpInstance) -> Result<GraphInput> {
        let normalized = instance.normalize_rescaled(self.reference_size)?;
        GraphInput::new(&normalized, self.m_c, self.m_v)
    }

    pub fn inputs(&self, series: &InstanceSeries) -> Result<Vec<GraphInput>> {
        series.instances.iter().map(|i| self.input(i)).collect()
    }
}

/// Per-timestep outputs for every series, in input order.
pub fn predict(
    model: &Model,
    store: &ParameterStore,
    featurizer: &Featurizer,
    series: &[InstanceSeries],
) -> Result<Vec<Vec<ModelOutput>>> {
    series
        .par_iter()
        .map(|s| model.predict_series(store, &featurizer.inputs(s)?))
        .collect()
}

struct Prepared {
    inputs: Vec<GraphInput>,
    /// Binary part of each optimal label.
    labels: Vec<Option<Vec<f64>>>,
}

fn prepare(featurizer: &Featurizer, series: &[InstanceSeries]) -> Result<Vec<Prepared>> {
    series
        .par_iter()
        .map(|s| {
            let labels = s
                .instances
                .iter()
                .zip(&s.labels)
                .map(|(inst, l)| {
                    l.as_ref()
                        .filter(|l| l.is_optimal())
                        .map(|l| l.z[..inst.num_binary()].to_vec())
                })
                .collect();
            Ok(Prepared {
                inputs: featurizer.inputs(s)?,
                labels,
            })
        })
        .collect()
}

/// Loss components of one optimizer step, summed over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub lambda: f64,
    pub lambda_reg: f64,
    pub lambda_c: f64,
    /// Negative log-likelihood over labeled instances (class-weighted if on).
    pub nll: f64,
    pub regularizer: f64,
    pub unsupervised: f64,
    pub total: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub labeled_instances: usize,
    pub val_nll: Option<f64>,
}

impl StepLog {
    fn absorb(&mut self, other: &StepLog) {
        self.nll += other.nll;
        self.regularizer += other.regularizer;
        self.unsupervised += other.unsupervised;
        self.total += other.total;
        self.labeled_instances += other.labeled_instances;
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: ExperimentConfig,
    featurizer: Featurizer,
    best_val: Option<f64>,
    best_step: u64,
}

/// Parameters plus everything needed to use them.
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub featurizer: Featurizer,
    pub model: Model,
    pub store: ParameterStore,
    pub best_val: Option<f64>,
    pub best_step: u64,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let (loaded, meta) = ParameterStore::load(path)?;
        let meta: CheckpointMeta = serde_json::from_value(meta)?;
        let mut store = ParameterStore::new();
        let model = Model::new(meta.config.model.clone(), &mut store)?;
        store.restore_from(&loaded)?;
        Ok(Self {
            config: meta.config,
            featurizer: meta.featurizer,
            model,
            store,
            best_val: meta.best_val,
            best_step: meta.best_step,
        })
    }

    pub fn predict(&self, series: &[InstanceSeries]) -> Result<Vec<Vec<ModelOutput>>> {
        predict(&self.model, &self.store, &self.featurizer, series)
    }
}

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";

pub struct Trainer {
    config: ExperimentConfig,
    featurizer: Featurizer,
    model: Model,
    store: ParameterStore,
    train: Vec<Prepared>,
    val: Vec<Prepared>,
    /// Training series indices grouped by length.
    groups: Vec<Vec<usize>>,
    table: QuadratureTable,
    rates: Option<Vec<f64>>,
    best: Option<(Option<f64>, u64, ParameterStore)>,
    log: Vec<StepLog>,
}

impl Trainer {
    pub fn new(config: &ExperimentConfig, data: &Dataset) -> Result<Self> {
        config.validate()?;
        if data.train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let featurizer = Featurizer::fit(&data.train)?;
        let mut store = ParameterStore::new();
        let model = Model::new(config.model.clone(), &mut store)?;
        let table = cc_table_with(config.loss.quadrature_order, config.loss.node_map)?;
        let rates = if config.loss.class_weights {
            match class_rates(&data.train) {
                Ok(r) => Some(r),
                Err(Error::EmptyDataset) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for (i, s) in data.train.iter().enumerate() {
            match groups.iter_mut().find(|(len, _)| *len == s.len()) {
                Some((_, g)) => g.push(i),
                None => groups.push((s.len(), vec![i])),
            }
        }
        Ok(Self {
            config: config.clone(),
            featurizer,
            model,
            store,
            train: prepare(&featurizer, &data.train)?,
            val: prepare(&featurizer, &data.val)?,
            groups: groups.into_iter().map(|(_, g)| g).collect(),
            table,
            rates,
            best: None,
            log: Vec::new(),
        })
    }

    pub fn step(&self) -> u64 {
        self.store.step()
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn log(&self) -> &[StepLog] {
        &self.log
    }

    /// Best-validation parameters so far (the latest ones before any
    /// validation has run).
    pub fn best_store(&self) -> &ParameterStore {
        self.best.as_ref().map_or(&self.store, |b| &b.2)
    }

    pub fn best_val(&self) -> Option<f64> {
        self.best.as_ref().and_then(|b| b.0)
    }

    /// Series drawn for `step`; depends only on the seed and the step.
    pub fn batch(&self, step: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step + 1);
        let pick = *self
            .groups
            .iter()
            .flatten()
            .collect::<Vec<_>>()
            .choose(&mut rng)
            .expect("training split is nonempty");
        let mut group = self
            .groups
            .iter()
            .find(|g| g.contains(pick))
            .expect("every series is grouped")
            .clone();
        group.shuffle(&mut rng);
        group.truncate(self.config.training.batch_size);
        group
    }

    fn series_loss(&self, series: &Prepared, w: LossWeights) -> Result<(Gradients, StepLog)> {
        let mut tape = Tape::new();
        let outs = self
            .model
            .forward_series(&mut tape, &self.store, &series.inputs)?;
        let mut parts = StepLog::default();
        let mut terms: Vec<Var> = Vec::new();
        let use_unsup = self.config.training.unsupervised && w.lambda > 0.0;
        for ((out, input), label) in outs.iter().zip(&series.inputs).zip(&series.labels) {
            if let Some(z) = label {
                let nll = supervised_loss(
                    &mut tape,
                    out.alpha,
                    out.beta,
                    z,
                    &self.table,
                    self.rates.as_deref(),
                    0.0,
                )?;
                parts.nll += tape.value(nll).item();
                terms.push(nll);
                let reg = regularizer_terms(&mut tape, out.alpha, out.beta, z)?;
                let reg = tape.sum(reg)?;
                parts.regularizer += tape.value(reg).item();
                if w.lambda_reg > 0.0 {
                    terms.push(tape.scale(reg, w.lambda_reg)?);
                }
                parts.labeled_instances += 1;
            }
            if use_unsup {
                let zb = soft_assignment(
                    &mut tape,
                    out.alpha,
                    out.beta,
                    self.config.loss.soft_assignment,
                )?;
                let zc = (input.num_continuous() > 0).then_some(out.z_continuous);
                let un = unsupervised_loss(&mut tape, &input.penalty, zb, zc, w.lambda_c)?;
                parts.unsupervised += tape.value(un).item();
                terms.push(tape.scale(un, w.lambda)?);
            }
        }
        let Some((&first, rest)) = terms.split_first() else {
            return Ok((Gradients::default(), parts));
        };
        let mut total = first;
        for &t in rest {
            total = tape.add(total, t)?;
        }
        parts.total = tape.value(total).item();
        Ok((tape.gradients(total)?, parts))
    }

    /// One optimizer step on the batch for the current step.
    pub fn train_step(&mut self) -> Result<StepLog> {
        let step = self.store.step();
        let horizon = self.config.training.steps;
        let w = self.config.loss.weights_at(step, horizon);
        let lr = self.config.optimizer.lr.value(step, horizon);
        let batch = self.batch(step);
        let results: Vec<Result<(Gradients, StepLog)>> = batch
            .par_iter()
            .map(|&i| self.series_loss(&self.train[i], w))
            .collect();
        let mut grads = Gradients::default();
        let mut log = StepLog {
            step,
            lr,
            lambda: w.lambda,
            lambda_reg: w.lambda_reg,
            lambda_c: w.lambda_c,
            ..StepLog::default()
        };
        // fixed reduction order: batch order
        for r in results {
            let (g, parts) = r.map_err(|e| match e {
                Error::NonFiniteValue { op } => Error::NonFiniteValue {
                    op: format!("{op} at training step {step}"),
                },
                other => other,
            })?;
            grads.add_assign(&g);
            log.absorb(&parts);
        }
        self.store.accumulate(&grads);
        log.grad_norm = self.store.grad_norm();
        if !log.total.is_finite() || !log.grad_norm.is_finite() {
            log::error!("non-finite loss or gradient at step {step}: {log:?}");
            self.store.zero_grad();
            return Err(Error::NonFiniteValue {
                op: format!(
                    "training step {step} (loss {}, gradient norm {})",
                    log.total, log.grad_norm
                ),
            });
        }
        adam_step(&mut self.store, lr, &self.config.optimizer.adam);
        self.log.push(log);
        Ok(log)
    }

    /// Mean plain NLL per labeled validation instance; `None` without labels.
    pub fn validation_nll(&self) -> Result<Option<f64>> {
        validation_nll(&self.model, &self.store, &self.val, &self.table)
    }

    fn metadata(&self) -> Result<serde_json::Value> {
        let (best_val, best_step) = self.best.as_ref().map_or((None, 0), |b| (b.0, b.1));
        Ok(serde_json::to_value(CheckpointMeta {
            config: self.config.clone(),
            featurizer: self.featurizer,
            best_val,
            best_step,
        })?)
    }

    /// Saves the current parameters and optimizer state.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.store.save(path, &self.metadata()?)
    }

    /// Continues from a checkpoint written by [`Trainer::save`].
    pub fn resume(&mut self, path: &Path) -> Result<()> {
        let (loaded, meta) = ParameterStore::load(path)?;
        let meta: CheckpointMeta = serde_json::from_value(meta)?;
        if meta.featurizer != self.featurizer {
            return Err(Error::Config(
                "checkpoint was trained on a different dataset layout".into(),
            ));
        }
        self.store.restore_from(&loaded)?;
        let best_path = path.with_file_name(BEST_CHECKPOINT);
        if best_path.exists() {
            let (best, _) = ParameterStore::load(&best_path)?;
            let mut store = self.store.clone();
            store.restore_from(&best)?;
            self.best = Some((meta.best_val, meta.best_step, store));
        }
        Ok(())
    }

    fn validate_and_keep(&mut self, run_dir: Option<&Path>) -> Result<Option<f64>> {
        let val = self.validation_nll()?;
        let step = self.store.step();
        let improved = match (&self.best, val) {
            (None, _) => true,
            (Some((Some(best), _, _)), Some(v)) => v < *best,
            (Some((None, _, _)), _) => true,
            (Some((Some(_), _, _)), None) => false,
        };
        if improved {
            self.best = Some((val, step, self.store.clone()));
        }
        if let Some(dir) = run_dir {
            if improved {
                self.store
                    .save(&dir.join(BEST_CHECKPOINT), &self.metadata()?)?;
            }
            self.save(&dir.join(LAST_CHECKPOINT))?;
        }
        log::info!(
            "step {step}: validation nll {val:?}{}",
            if improved { " (best)" } else { "" }
        );
        Ok(val)
    }

    /// Trains up to `training.steps`, validating periodically. With a run
    /// directory, checkpoints and the per-step log are written there.
    pub fn run(&mut self, run_dir: Option<&Path>) -> Result<()> {
        let mut log_file = match run_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                Some(
                    OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(dir.join(TRAIN_LOG))?,
                )
            }
            None => None,
        };
        if self.best.is_none() {
            self.validate_and_keep(run_dir)?;
        }
        let every = self.config.training.validate_every;
        while self.store.step() < self.config.training.steps {
            let mut entry = self.train_step()?;
            let done = self.store.step();
            if done % every == 0 || done == self.config.training.steps {
                entry.val_nll = self.validate_and_keep(run_dir)?;
                if let Some(last) = self.log.last_mut() {
                    last.val_nll = entry.val_nll;
                }
            }
            if let Some(f) = log_file.as_mut() {
                writeln!(f, "{}", serde_json::to_string(&entry)?)?;
            }
        }
        Ok(())
    }

    /// Hands back the best parameters as a checkpoint value.
    pub fn into_checkpoint(self) -> Checkpoint {
        let (best_val, best_step, store) = match self.best {
            Some((v, s, store)) => (v, s, store),
            None => (None, self.store.step(), self.store),
        };
        Checkpoint {
            config: self.config,
            featurizer: self.featurizer,
            model: self.model,
            store,
            best_val,
            best_step,
        }
    }
}

fn validation_nll(
    model: &Model,
    store: &ParameterStore,
    val: &[Prepared],
    table: &QuadratureTable,
) -> Result<Option<f64>> {
    let sums = val
        .par_iter()
        .filter(|s| s.labels.iter().any(Option::is_some))
        .map(|s| -> Result<(f64, usize)> {
            let outs = model.predict_series(store, &s.inputs)?;
            let mut total = 0.0;
            let mut count = 0;
            for (out, label) in outs.iter().zip(&s.labels) {
                let Some(z) = label else { continue };
                for j in 0..z.len() {
                    total += beta_bernoulli_nll(out.alpha[j], out.beta[j], z[j], table)?.0;
                }
                count += 1;
            }
            Ok((total, count))
        })
        .collect::<Result<Vec<_>>>()?;
    let (total, count) = sums
        .iter()
        .fold((0.0, 0), |acc, s| (acc.0 + s.0, acc.1 + s.1));
    Ok((count > 0).then(|| total / count as f64))
}

/// Trains from scratch and returns the best-validation checkpoint.
pub fn train(
    config: &ExperimentConfig,
    data: &Dataset,
    run_dir: Option<&Path>,
) -> Result<Checkpoint> {
    let mut trainer = Trainer::new(config, data)?;
    trainer.run(run_dir)?;
    Ok(trainer.into_checkpoint())
}
