//! Adam, the epoch loop, grid search and checkpoints.

mod adam;
mod checkpoint;

pub use adam::{adam_step, AdamState, DEFAULT_LR};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use crate::data::{batch_iter, Batch, BatchOptions, SplitData};
use crate::error::{Error, Result};
use crate::model::{self, predict, ForwardPass, Model, ModelConfig, ModelState, ParamBinder};
use crate::preprocess::AugmentPolicy;
use crate::rng::{derive_seed, Rng};
use crate::tape::{Mode, Tape};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Largest difference between numeric fields of two equally long
    /// histories, ignoring wall time.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        if self.len() != other.len() {
            return None;
        }
        let mut worst = 0.0f64;
        for (a, b) in self.records.iter().zip(&other.records) {
            if a.epoch != b.epoch {
                return None;
            }
            for (x, y) in [
                (a.train_loss, b.train_loss),
                (a.train_acc, b.train_acc),
                (a.val_loss, b.val_loss),
                (a.val_acc, b.val_acc),
            ] {
                worst = worst.max((x - y).abs());
            }
        }
        Some(worst)
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub augment: AugmentPolicy,
    pub shuffle: bool,
    /// Batch size of the per-epoch evaluation passes.
    pub eval_batch_size: usize,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Directory for periodic and best-validation checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
    pub divergence_factor: f64,
    pub divergence_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: DEFAULT_LR,
            seed: 0,
            augment: AugmentPolicy::default(),
            shuffle: true,
            eval_batch_size: 64,
            checkpoint_every: 10,
            checkpoint_dir: None,
            divergence_factor: 10.0,
            divergence_patience: 3,
        }
    }
}

/// Loss and accuracy of a model over a split, plus its predictions in
/// split order.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitEval {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Eval-mode pass over `data` with no augmentation.
pub fn evaluate_split(
    config: &ModelConfig,
    state: &ModelState<f32>,
    data: &SplitData,
    batch_size: usize,
) -> Result<SplitEval> {
    let options = BatchOptions {
        batch_size,
        shuffle: false,
        augment: AugmentPolicy::disabled(),
    };
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(data.len());
    for batch in batch_iter(data, &options, 0, 0)? {
        let batch = batch?;
        let n = batch.indices.len();
        let mut tape = Tape::new();
        let x = tape.constant(batch.images);
        let y = tape.constant(batch.labels);
        let pass = model::forward(config, &mut tape, ParamBinder::new(state), x, Mode::Eval, &mut Rng::new(0))?;
        let loss = model::loss(&mut tape, config.output_activation, pass.probs, y)?;
        loss_sum += f64::from(tape.value(loss).item()?) * n as f64;
        predictions.extend(predict(tape.value(pass.probs))?);
    }
    let correct = predictions.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    Ok(SplitEval {
        loss: loss_sum / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
        predictions,
        labels: data.labels.clone(),
    })
}

/// Adds or removes every backbone parameter from the frozen set.
pub fn freeze_backbone(state: &mut ModelState<f32>, frozen: bool) {
    state.freeze_backbone(frozen);
}

/// Owns the model, optimizer and history of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: ModelConfig,
    pub config: TrainConfig,
    pub seed: u64,
    pub state: ModelState<f32>,
    pub opt: AdamState,
    pub history: TrainHistory,
}

impl Trainer {
    /// Fresh run: parameters initialized from the seed.
    pub fn new(model: ModelConfig, config: TrainConfig) -> Result<Self> {
        if config.batch_size == 0 || config.eval_batch_size == 0 {
            return Err(Error::InvalidArgument("batch sizes must be positive".into()));
        }
        if !(config.lr > 0.0 && config.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", config.lr)));
        }
        config.augment.validate()?;
        let seed = config.seed;
        let built = Model::build(model, &mut Rng::new(derive_seed(seed, "init", 0)))?;
        let opt = AdamState::new(&built.state, config.lr)?;
        Ok(Self {
            model: built.config,
            config,
            seed,
            state: built.state,
            opt,
            history: TrainHistory::default(),
        })
    }

    /// Continues from a checkpoint; its seed overrides `config.seed`.
    pub fn resume(model: ModelConfig, config: TrainConfig, checkpoint: Checkpoint) -> Result<Self> {
        checkpoint.state.check_against(&model)?;
        checkpoint.opt.check_against(&checkpoint.state)?;
        Ok(Self {
            model,
            seed: checkpoint.seed,
            config,
            state: checkpoint.state,
            opt: checkpoint.opt,
            history: checkpoint.history,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            seed: self.seed,
            state: self.state.clone(),
            opt: self.opt.clone(),
            history: self.history.clone(),
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    /// Forward (train mode), loss, backward and one Adam step. Returns the
    /// batch loss.
    pub fn step(&mut self, batch: Batch, rng: &mut Rng) -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.images);
        let y = tape.constant(batch.labels);
        let ForwardPass { probs, params, .. } =
            model::forward(&self.model, &mut tape, ParamBinder::new(&self.state), x, Mode::Train, rng)?;
        let loss = model::loss(&mut tape, self.model.output_activation, probs, y)?;
        tape.backward(loss)?;
        let mut grads = BTreeMap::new();
        for (name, var) in params {
            if let Some(g) = tape.grad(var) {
                grads.insert(name, g.to_vec());
            }
        }
        adam_step(&mut self.state, &grads, &mut self.opt)?;
        Ok(f64::from(tape.value(loss).item()?))
    }

    /// Trains one epoch, evaluates both splits in eval mode and appends
    /// the record. Fails if the divergence guard trips.
    pub fn run_epoch(&mut self, train: &SplitData, val: &SplitData) -> Result<EpochRecord> {
        let start = Instant::now();
        let epoch = self.epochs_done() + 1;
        let options = BatchOptions {
            batch_size: self.config.batch_size,
            shuffle: self.config.shuffle,
            augment: self.config.augment.clone(),
        };
        let mut dropout_rng = Rng::new(derive_seed(self.seed, "dropout", epoch as u64));
        for batch in batch_iter(train, &options, self.seed, epoch as u64)? {
            self.step(batch?, &mut dropout_rng)?;
        }
        let tr = evaluate_split(&self.model, &self.state, train, self.config.eval_batch_size)?;
        let va = evaluate_split(&self.model, &self.state, val, self.config.eval_batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: tr.loss,
            train_acc: tr.accuracy,
            val_loss: va.loss,
            val_acc: va.accuracy,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        self.history.records.push(record.clone());
        self.check_divergence()?;
        Ok(record)
    }

    fn check_divergence(&self) -> Result<()> {
        let records = &self.history.records;
        let last = records.last().expect("called after an epoch");
        if !last.train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch: last.epoch,
                reason: format!("train loss is {}", last.train_loss),
            });
        }
        let limit = records[0].train_loss * self.config.divergence_factor;
        let streak = records.iter().rev().take_while(|r| r.train_loss > limit).count();
        if streak >= self.config.divergence_patience {
            return Err(Error::Diverged {
                epoch: last.epoch,
                reason: format!(
                    "train loss above {}x its initial value ({limit:.4}) for {streak} epochs",
                    self.config.divergence_factor
                ),
            });
        }
        Ok(())
    }

    /// Runs epochs until `config.epochs` are done, writing periodic and
    /// best-validation checkpoints when a directory is configured.
    pub fn run(&mut self, train: &SplitData, val: &SplitData) -> Result<()> {
        self.run_until(train, val, self.config.epochs)
    }

    pub fn run_until(&mut self, train: &SplitData, val: &SplitData, epochs: usize) -> Result<()> {
        while self.epochs_done() < epochs {
            let best_before = self.history.records.iter().map(|r| r.val_acc).fold(f64::NEG_INFINITY, f64::max);
            let record = self.run_epoch(train, val)?;
            if let Some(dir) = self.config.checkpoint_dir.clone() {
                let every = self.config.checkpoint_every;
                if every > 0 && record.epoch % every == 0 {
                    self.checkpoint().save(dir.join(format!("epoch_{:04}.ckpt", record.epoch)))?;
                }
                if record.val_acc > best_before {
                    self.checkpoint().save(dir.join("best.ckpt"))?;
                }
            }
        }
        Ok(())
    }
}

/// Trains a fresh model for `config.epochs` epochs.
pub fn train(
    model: &ModelConfig,
    config: &TrainConfig,
    train: &SplitData,
    val: &SplitData,
) -> Result<(ModelState<f32>, TrainHistory)> {
    let mut trainer = Trainer::new(model.clone(), config.clone())?;
    trainer.run(train, val)?;
    Ok((trainer.state, trainer.history))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub lr_candidates: Vec<f64>,
    pub batch_candidates: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lr_candidates: vec![1e-2, 1e-3, 1e-4],
            batch_candidates: vec![16, 32],
        }
    }
}

#[derive(Clone, Debug)]
pub struct GridCell {
    pub lr: f64,
    pub batch_size: usize,
    pub history: TrainHistory,
    /// Why the cell stopped early, if it did.
    pub error: Option<String>,
}

impl GridCell {
    /// Final-epoch validation accuracy of a cell that finished.
    pub fn score(&self) -> Option<f64> {
        if self.error.is_some() {
            return None;
        }
        self.history.last().map(|r| r.val_acc)
    }
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    pub best: usize,
}

impl GridResult {
    pub fn best_cell(&self) -> &GridCell {
        &self.cells[self.best]
    }
}

/// Trains one model per `(lr, batch)` cell on the same split and seed and
/// picks the highest final validation accuracy; ties go to the lower
/// learning rate, then the smaller batch. A failing cell is recorded and
/// the search continues.
pub fn grid_search(
    grid: &GridSpec,
    model: &ModelConfig,
    base: &TrainConfig,
    train: &SplitData,
    val: &SplitData,
) -> Result<GridResult> {
    if grid.lr_candidates.is_empty() || grid.batch_candidates.is_empty() {
        return Err(Error::InvalidArgument("grid needs at least one lr and one batch size".into()));
    }
    let mut cells = Vec::new();
    for &lr in &grid.lr_candidates {
        for &batch_size in &grid.batch_candidates {
            let config = TrainConfig {
                lr,
                batch_size,
                checkpoint_dir: None,
                ..base.clone()
            };
            let mut trainer = Trainer::new(model.clone(), config)?;
            let error = trainer.run(train, val).err().map(|e| e.to_string());
            cells.push(GridCell {
                lr,
                batch_size,
                history: trainer.history,
                error,
            });
        }
    }
    let best = (0..cells.len())
        .filter(|&i| cells[i].score().is_some())
        .max_by(|&a, &b| {
            let (ca, cb) = (&cells[a], &cells[b]);
            ca.score()
                .partial_cmp(&cb.score())
                .expect("finite accuracies")
                .then(cb.lr.total_cmp(&ca.lr))
                .then(cb.batch_size.cmp(&ca.batch_size))
        })
        .ok_or_else(|| Error::Data("every grid cell failed".into()))?;
    Ok(GridResult { cells, best })
}
