//! Epoch loop with step decay, early stopping and best-checkpoint retention.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, Graph, Optimizer, ParamStore, Sgd, Var};
use crate::error::{Error, Result};
use crate::rng::{permutation, Rng};

/// A trainable task: owns its data and builds the loss of one batch.
pub trait Objective {
    fn train_size(&self) -> usize;
    fn val_size(&self) -> usize;

    /// Scalar loss node for the training examples `batch`.
    fn batch_loss(&self, g: &mut Graph, store: &ParamStore, batch: &[usize]) -> Result<Var>;

    /// Validation metric under the current parameters.
    fn validate(&self, store: &ParamStore) -> Result<f64>;

    /// Whether a larger validation metric is better (accuracy) or worse (EER).
    fn higher_is_better(&self) -> bool;

    /// Mini-batches of one epoch. Defaults to a seeded shuffle cut into
    /// consecutive chunks; the last chunk may be short.
    fn epoch_batches(&self, rng: &mut Rng, batch_size: usize) -> Vec<Vec<usize>> {
        permutation(rng, self.train_size()).chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum OptimizerKind {
    Adam,
    Sgd { momentum: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// After this many epochs the learning rate is multiplied by `lr_decay`.
    pub lr_decay_epoch: Option<usize>,
    pub lr_decay: f64,
    /// Stop after this many consecutive epochs without improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            lr_decay_epoch: Some(15),
            lr_decay: 0.1,
            patience: Some(10),
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> Box<dyn Optimizer> {
        match self.optimizer {
            OptimizerKind::Adam => Box::new(Adam::new(self.lr)),
            OptimizerKind::Sgd { momentum } => Box::new(Sgd::new(self.lr, momentum)),
        }
    }

    /// Learning rate used during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay_epoch {
            Some(e) if epoch > e => self.lr * self.lr_decay,
            _ => self.lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were restored at the end.
    pub best_epoch: usize,
    pub best_metric: f64,
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.epochs {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv(r: impl std::io::Read) -> Result<Vec<EpochRecord>> {
        csv::Reader::from_reader(r).deserialize().map(|r| r.map_err(Error::from)).collect()
    }
}

/// Runs mini-batch training of `obj` on `store`.
///
/// Each epoch draws its batch order from `rng`, takes one optimizer step per
/// batch, then evaluates the validation metric. The parameters of the best
/// epoch are restored before returning.
pub fn train_loop<O: Objective + ?Sized>(
    obj: &O,
    store: &mut ParamStore,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainingHistory> {
    if obj.train_size() == 0 {
        return Err(Error::EmptyDataset("training split".to_string()));
    }
    if obj.val_size() == 0 {
        return Err(Error::EmptyDataset("validation split".to_string()));
    }
    let mut opt = cfg.optimizer();
    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, Vec<crate::tensor::Tensor>)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        opt.set_lr(lr);
        let batches = obj.epoch_batches(rng, cfg.batch_size);
        let mut total = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            store.zero_grads();
            let mut g = Graph::new();
            let loss = obj.batch_loss(&mut g, store, batch)?;
            let value = g.value(loss).data().first().copied().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            g.backward(loss, store)?;
            opt.step(store);
            total += value;
        }
        let metric = obj.validate(store)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: total / batches.len().max(1) as f64,
            val_metric: metric,
            lr,
        });

        let improved = match &best {
            None => true,
            Some((b, _)) => {
                if obj.higher_is_better() {
                    metric > *b
                } else {
                    metric < *b
                }
            }
        };
        if improved {
            best = Some((metric, store.values()));
            history.best_epoch = epoch;
            history.best_metric = metric;
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience.is_some_and(|p| stale > p) {
                history.stopped_early = true;
                break;
            }
        }
    }
    if let Some((_, values)) = best {
        store.set_values(&values)?;
    }
    Ok(history)
}
