//! The training loop.
//!
//! Each epoch visits every dataset record once, in an order shuffled from
//! `(seed, SHUFFLE, epoch)`. A record's measurements form one minibatch;
//! collocation points are redrawn for every step from
//! `(seed, COLLOCATION, epoch, step_in_epoch)`. Both networks share one Adam
//! optimizer over their concatenated parameters.
//!
//! Training state can be checkpointed at epoch boundaries. Resuming from a
//! checkpoint replays exactly the steps an uninterrupted run would take.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::dataset::DatasetRecord;
use crate::model::{DataBatch, DhpModel, LossBreakdown};
use crate::network::AdamState;
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    /// Global gradient-step index, starting at 0.
    pub step: u64,
    pub epoch: usize,
    /// Id of the record used as the minibatch.
    pub batch: usize,
    pub losses: LossBreakdown,
    /// Seconds since the start of this `train` call. Not part of the CSV export.
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<TrainLogEntry>,
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extend(&mut self, other: TrainLog) {
        self.entries.extend(other.entries);
    }

    /// Total loss of the first and last step.
    pub fn first_last(&self) -> Option<(f64, f64)> {
        Some((self.entries.first()?.losses.total, self.entries.last()?.losses.total))
    }

    /// Mean total loss over the epoch's steps.
    pub fn epoch_mean(&self, epoch: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.epoch == epoch)
            .map(|e| e.losses.total)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// `step,epoch,batch,data_loss,equation_loss,total_loss`, floats in
    /// shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,epoch,batch,data_loss,equation_loss,total_loss\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{},{},{},{:?},{:?},{:?}",
                e.step, e.epoch, e.batch, e.losses.data_loss, e.losses.equation_loss, e.losses.total
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Everything needed to continue training bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub model: DhpModel,
    pub adam: AdamState,
    pub epochs_completed: usize,
    pub global_step: u64,
    pub config_hash: String,
}

impl TrainState {
    /// Fresh optimizer state for `model` under `config`.
    pub fn new(model: DhpModel, config: &TrainConfig) -> Self {
        let adam = AdamState::new(model.n_params(), config.adam);
        Self {
            model,
            adam,
            epochs_completed: 0,
            global_step: 0,
            config_hash: config.hash(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let state: TrainState = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if state.adam.len() != state.model.n_params() {
            return Err(Error::format(path, "optimizer state does not match the model size"));
        }
        Ok(state)
    }
}

/// Where and how often to write checkpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointPolicy {
    pub dir: PathBuf,
    /// Write after every `every` completed epochs and after the last one.
    pub every: usize,
}

impl CheckpointPolicy {
    pub fn path_for(&self, epochs_completed: usize) -> PathBuf {
        self.dir.join(format!("checkpoint-epoch{epochs_completed:05}.json"))
    }

    pub fn latest_path(&self) -> PathBuf {
        self.dir.join("checkpoint-latest.json")
    }
}

/// Optional knobs for [`run`].
#[derive(Default)]
pub struct TrainOptions<'a> {
    pub checkpoints: Option<CheckpointPolicy>,
    /// Stop after this many epochs in total (a partial run that can be resumed).
    pub stop_after: Option<usize>,
    /// Called after every step.
    pub on_step: Option<&'a mut dyn FnMut(&TrainLogEntry)>,
}

/// Train a freshly initialized `model` for the whole schedule.
pub fn train(model: DhpModel, records: &[DatasetRecord], config: &TrainConfig) -> Result<(DhpModel, TrainLog)> {
    let (state, log) = run(TrainState::new(model, config), records, config, TrainOptions::default())?;
    Ok((state.model, log))
}

/// Continue from a checkpoint to the end of the schedule.
pub fn resume(
    checkpoint: TrainState,
    records: &[DatasetRecord],
    config: &TrainConfig,
    options: TrainOptions,
) -> Result<(TrainState, TrainLog)> {
    if checkpoint.epochs_completed >= config.total_epochs() {
        return Err(Error::InvalidArgument(format!(
            "checkpoint already completed {} of {} epochs",
            checkpoint.epochs_completed,
            config.total_epochs()
        )));
    }
    run(checkpoint, records, config, options)
}

fn check_inputs(state: &TrainState, records: &[DatasetRecord], config: &TrainConfig) -> Result<()> {
    config.validate()?;
    let hash = config.hash();
    if state.config_hash != hash {
        return Err(Error::ConfigMismatch {
            expected: hash,
            found: state.config_hash.clone(),
        });
    }
    if records.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    if state.model.scenario != config.scenario {
        return Err(Error::InvalidArgument(format!(
            "model is {} but the configuration is {}",
            state.model.scenario, config.scenario
        )));
    }
    if state.adam.len() != state.model.n_params() {
        return Err(Error::Shape("optimizer state does not match the model size".into()));
    }
    let combos = config.combinations();
    let mut ids = BTreeSet::new();
    for (i, r) in records.iter().enumerate() {
        let known = combos.iter().any(|(p, l)| *p == r.params && *l == r.spec.length);
        if !known {
            return Err(Error::InvalidArgument(format!(
                "record {i} ({}) is outside the configured parameter grid",
                r.label()
            )));
        }
        if !ids.insert(r.id) {
            return Err(Error::InvalidArgument(format!("record id {} appears twice", r.id)));
        }
    }
    Ok(())
}

/// Record visiting order for `epoch`.
pub fn epoch_order(master: u64, epoch: usize, n_records: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_records).collect();
    order.shuffle(&mut seed::rng(master, &[seed::stream::SHUFFLE, epoch as u64]));
    order
}

/// Advance `state` epoch by epoch until the schedule (or `stop_after`) ends.
pub fn run(
    mut state: TrainState,
    records: &[DatasetRecord],
    config: &TrainConfig,
    mut options: TrainOptions,
) -> Result<(TrainState, TrainLog)> {
    check_inputs(&state, records, config)?;
    let scenario = config.scenario;
    let batches: Vec<DataBatch> = records.iter().map(|r| r.data_batch(scenario)).collect::<Result<_>>()?;
    let end = options.stop_after.unwrap_or(usize::MAX).min(config.total_epochs());
    if let Some(policy) = &options.checkpoints {
        if policy.every == 0 {
            return Err(Error::InvalidArgument("checkpoint interval must be at least 1".into()));
        }
        std::fs::create_dir_all(&policy.dir).map_err(|e| Error::io(&policy.dir, e))?;
    }

    let started = Instant::now();
    let mut log = TrainLog::default();
    let mut params = state.model.flat_params();
    for epoch in state.epochs_completed..end {
        let lr = config.learning_rate(epoch);
        for (pos, &r) in epoch_order(config.seed, epoch, records.len()).iter().enumerate() {
            let record = &records[r];
            let mut rng = seed::rng(config.seed, &[seed::stream::COLLOCATION, epoch as u64, pos as u64]);
            let colloc = record.collocation_batch(scenario, config.n_colloc, &mut rng)?;
            let at = |e: Error| {
                Error::NonFinite(format!(
                    "training aborted at step {} (epoch {epoch}, record {}): {e}",
                    state.global_step, record.id
                ))
            };
            let (losses, grad) = match state.model.loss_parameter_gradient(&batches[r], &colloc) {
                Ok(v) => v,
                Err(e @ Error::NonFinite(_)) => return Err(at(e)),
                Err(e) => return Err(e),
            };
            state.adam.step(&mut params, &grad, lr).map_err(at)?;
            state.model.set_flat_params(&params)?;
            let entry = TrainLogEntry {
                step: state.global_step,
                epoch,
                batch: record.id,
                losses,
                wall_time: started.elapsed().as_secs_f64(),
            };
            if let Some(cb) = options.on_step.as_mut() {
                cb(&entry);
            }
            log.entries.push(entry);
            state.global_step += 1;
        }
        state.epochs_completed = epoch + 1;
        if let Some(policy) = &options.checkpoints {
            if state.epochs_completed.is_multiple_of(policy.every) || state.epochs_completed == end {
                state.save(&policy.path_for(state.epochs_completed))?;
                state.save(&policy.latest_path())?;
            }
        }
    }
    Ok((state, log))
}
