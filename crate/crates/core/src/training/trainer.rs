use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, EpochRecord};
use super::optimizer::{LrSchedule, Optimizer, OptimizerConfig, OptimizerKind};
use crate::data::{normalize_split, Batch, DatasetSplit, Normalizer, SlicedDataset, SlicedSample};
use crate::error::{config_err, contract_err, Result};
use crate::evaluation::{check_geometry, evaluate, EvalOptions, MetricsReport};
use crate::layers::{apply_stat_updates, Ctx, Mode};
use crate::model::{ModelConfig, Umsnet};
use crate::numerics::{DType, Float, ParamStore, RngState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    /// SGD momentum; ignored by AdamW.
    pub momentum: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub precision: DType,
    /// Z-score inputs with statistics of the training side.
    pub normalize: bool,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 0.05,
            optimizer: OptimizerKind::AdamW,
            momentum: 0.9,
            lr_schedule: LrSchedule::Cosine,
            seed: 0,
            precision: DType::F32,
            normalize: true,
            eval_batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(config_err!("batch sizes must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err!(
                "learning rate {} is not a non-negative number",
                self.learning_rate
            ));
        }
        if self.weight_decay < 0.0 {
            return Err(config_err!("weight decay {} is negative", self.weight_decay));
        }
        Ok(())
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        match self.optimizer {
            OptimizerKind::AdamW => OptimizerConfig::adamw(self.weight_decay),
            OptimizerKind::Sgd => OptimizerConfig::sgd(self.momentum, self.weight_decay),
        }
    }
}

/// Stream ids derived from the run seed.
const INIT_STREAM: u64 = 0;
const RUN_STREAM: u64 = 1;

/// Owns a model, its parameters, the optimizer and the run's random stream.
///
/// Every random draw of a run (initialization, shuffling, dropout and
/// stochastic depth) comes from streams derived from `config.seed`, and all
/// kernels reduce in a fixed order, so a run is a pure function of its inputs.
#[derive(Clone, Debug)]
pub struct Trainer<F> {
    pub model: Umsnet,
    pub store: ParamStore<F>,
    pub optimizer: Optimizer<F>,
    pub config: TrainConfig,
    pub rng: RngState,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub best_accuracy: Option<f64>,
    pub normalizer: Option<Normalizer>,
    pub held_out_user: Option<String>,
    pub classes: Vec<String>,
}

impl<F: Float> Trainer<F> {
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.precision != F::DTYPE {
            return Err(config_err!(
                "trainer built for {:?} but the config asks for {:?}",
                F::DTYPE,
                config.precision
            ));
        }
        let root = RngState::new(config.seed);
        let mut init = root.derive(INIT_STREAM);
        let mut store = ParamStore::new();
        let model = Umsnet::new(&mut store, &mut init, model_config)?;
        let optimizer = Optimizer::new(config.optimizer_config(), &store);
        Ok(Trainer {
            model,
            store,
            optimizer,
            rng: root.derive(RUN_STREAM),
            config,
            epoch: 0,
            history: Vec::new(),
            best_accuracy: None,
            normalizer: None,
            held_out_user: None,
            classes: Vec::new(),
        })
    }

    pub fn steps_per_epoch(&self, num_train: usize) -> u64 {
        num_train.div_ceil(self.config.batch_size) as u64
    }

    /// One optimizer step on `batch`; returns the batch loss.
    pub fn train_step(&mut self, batch: &Batch<F>, lr: f64) -> Result<f64> {
        let (loss, grads, updates) = {
            let mut ctx = Ctx::new(&self.store, Mode::Train, &mut self.rng);
            let logits = self.model.forward_tensors(&mut ctx, &batch.sensors)?;
            let loss = ctx.graph.cross_entropy(logits, &batch.labels)?;
            let value = ctx.value(loss).item().as_f64();
            let (graph, updates) = ctx.into_parts();
            (value, graph.backward(loss)?, updates)
        };
        if !loss.is_finite() {
            return Err(crate::Error::NonFinite(format!(
                "training loss at step {}",
                self.optimizer.step + 1
            )));
        }
        grads.write_into(&mut self.store);
        apply_stat_updates(&mut self.store, &updates);
        self.optimizer.step(&mut self.store, lr);
        Ok(loss)
    }

    /// One shuffled pass over `train`; returns the sample-weighted mean loss
    /// and the learning rate of the last step.
    pub fn train_epoch(&mut self, meta: &SlicedDataset, train: &[SlicedSample]) -> Result<(f64, f64)> {
        if train.is_empty() {
            return Err(contract_err!("empty training set"));
        }
        let total = self.steps_per_epoch(train.len()) * self.config.epochs as u64;
        let mut order: Vec<usize> = (0..train.len()).collect();
        self.rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut lr = self.config.learning_rate;
        for chunk in order.chunks(self.config.batch_size) {
            let refs: Vec<&SlicedSample> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = Batch::from_samples(meta, &refs)?;
            lr = self
                .config
                .lr_schedule
                .lr(self.config.learning_rate, self.optimizer.step, total);
            loss_sum += self.train_step(&batch, lr)? * chunk.len() as f64;
        }
        Ok((loss_sum / train.len() as f64, lr))
    }

    pub fn evaluate(&self, meta: &SlicedDataset, samples: &[SlicedSample]) -> Result<MetricsReport> {
        let options = EvalOptions {
            batch_size: self.config.eval_batch_size,
            time_repeats: 0,
        };
        evaluate(&self.model, &self.store, meta, samples, options)
    }

    /// Trains until `config.epochs` epochs are complete, evaluating on the
    /// test side after each. `on_epoch` sees the trainer, the new record and
    /// whether test accuracy improved on every earlier epoch.
    pub fn fit(
        &mut self,
        meta: &SlicedDataset,
        split: &DatasetSplit,
        mut on_epoch: impl FnMut(&Trainer<F>, &EpochRecord, bool) -> Result<()>,
    ) -> Result<()> {
        check_geometry(&self.model.config, meta)?;
        if split.train.is_empty() || split.test.is_empty() {
            return Err(contract_err!("both sides of the split must be non-empty"));
        }
        self.held_out_user = Some(split.held_out_user.clone());
        self.classes = meta.classes.clone();
        while self.epoch < self.config.epochs {
            let (train_loss, lr) = self.train_epoch(meta, &split.train)?;
            let report = self.evaluate(meta, &split.test)?;
            self.epoch += 1;
            let record = EpochRecord {
                epoch: self.epoch,
                train_loss,
                test_accuracy: report.accuracy,
                test_macro_f1: report.macro_f1,
                lr,
            };
            let improved = self.best_accuracy.is_none_or(|b| report.accuracy > b);
            if improved {
                self.best_accuracy = Some(report.accuracy);
            }
            self.history.push(record.clone());
            on_epoch(self, &record, improved)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(self)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(ckpt.model_config.clone(), ckpt.train_config.clone())?;
        ckpt.restore_into(&mut t)?;
        Ok(t)
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// State after the epoch with the highest test accuracy.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Builds a model, optionally normalizes the split, and trains for
/// `config.epochs` epochs.
pub fn train<F: Float>(
    model_config: ModelConfig,
    meta: &SlicedDataset,
    split: &DatasetSplit,
    config: TrainConfig,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::<F>::new(model_config, config)?;
    check_geometry(&trainer.model.config, meta)?;
    let mut split = split.clone();
    if trainer.config.normalize {
        trainer.normalizer = Some(normalize_split(meta, &mut split)?);
    }
    let mut best = None;
    trainer.fit(meta, &split, |t, _, improved| {
        if improved {
            best = Some(t.checkpoint());
        }
        Ok(())
    })?;
    let last = trainer.checkpoint();
    Ok(TrainOutcome {
        best: best.unwrap_or_else(|| last.clone()),
        last,
        history: trainer.history,
    })
}
