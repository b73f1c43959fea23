use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::loss;
use super::optim::{AdamW, AdamWConfig};
use super::schedule::{EarlyStopping, PlateauScheduler, StopDecision};
use crate::data::{plan_batches, Dataset};
use crate::error::{Result, VigError};
use crate::model::config::parse_value;
use crate::model::{Task, VigModel};
use crate::nn::Parameterized;
use crate::tensor::{Mode, Real, Tensor};

/// Optimization and stopping hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub es_patience: usize,
    /// Minimum validation-loss decrease that counts as improvement, for
    /// both the scheduler and early stopping.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 100,
            batch_size: 16,
            lr: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            plateau_patience: 5,
            plateau_factor: 10.0,
            es_patience: 10,
            tolerance: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("max_epochs", self.max_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("plateau_patience", self.plateau_patience.to_string()),
            ("plateau_factor", self.plateau_factor.to_string()),
            ("es_patience", self.es_patience.to_string()),
            ("tolerance", self.tolerance.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "max_epochs" => self.max_epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "eps" => self.eps = parse_value(key, value)?,
            "plateau_patience" => self.plateau_patience = parse_value(key, value)?,
            "plateau_factor" => self.plateau_factor = parse_value(key, value)?,
            "es_patience" => self.es_patience = parse_value(key, value)?,
            "tolerance" => self.tolerance = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Err(VigError::Usage(format!("unknown train key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(VigError::Config("max_epochs and batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || self.weight_decay < 0.0 {
            return Err(VigError::Config(format!(
                "lr {} and weight_decay {} must be non-negative",
                self.lr, self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(VigError::Config("betas must lie in [0, 1) and eps must be positive".into()));
        }
        if self.plateau_factor <= 1.0 {
            return Err(VigError::Config(format!("plateau_factor {} must exceed 1", self.plateau_factor)));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl History {
    pub fn render(&self) -> String {
        let mut s = String::from("epoch\ttrain_loss\tval_loss\tlr\n");
        for r in &self.records {
            let _ = writeln!(s, "{}\t{:.6}\t{:.6}\t{:e}", r.epoch, r.train_loss, r.val_loss, r.lr);
        }
        s
    }
}

/// Returned by the per-epoch observer of [`fit_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct FitOutcome<T: Real> {
    /// Weights of the epoch with the lowest validation loss.
    pub best: VigModel<T>,
    /// Weights after the last epoch run.
    pub last: VigModel<T>,
    pub optimizer: AdamW<T>,
    pub history: History,
}

/// Sample-weighted mean loss over a dataset, in eval mode.
pub fn mean_loss<T: Real>(model: &VigModel<T>, ds: &Dataset, batch_size: usize) -> Result<f64> {
    if ds.is_empty() {
        return Err(VigError::Data("cannot evaluate an empty dataset".into()));
    }
    let order: Vec<usize> = (0..ds.len()).collect();
    let mut total = 0.0;
    for idx in order.chunks(batch_size.max(1)) {
        let (x, t) = ds.batch::<T>(idx)?;
        let logits = model.forward(&x, Mode::Eval)?;
        total += loss(ds.task, &logits.detach(), &t)?.item().as_f64() * idx.len() as f64;
    }
    Ok(total / ds.len() as f64)
}

/// Class scores in eval mode: softmax rows for multiclass, per-class
/// sigmoids for multilabel.
pub fn predict_scores<T: Real>(model: &VigModel<T>, ds: &Dataset, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let order: Vec<usize> = (0..ds.len()).collect();
    let mut out = Vec::with_capacity(ds.len());
    for idx in order.chunks(batch_size.max(1)) {
        let (x, _) = ds.batch::<T>(idx)?;
        let logits = model.forward(&x, Mode::Eval)?.detach();
        let probs: Tensor<T> = match ds.task {
            Task::Multiclass => logits.softmax(),
            Task::Multilabel => logits.sigmoid(),
        };
        out.extend(
            probs
                .data()
                .chunks_exact(ds.num_classes)
                .map(|r| r.iter().map(|v| v.as_f64()).collect::<Vec<_>>()),
        );
    }
    Ok(out)
}

/// Epoch order: a permutation drawn from stream `epoch` of the run seed.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

pub fn fit<T: Real>(model: VigModel<T>, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<FitOutcome<T>> {
    fit_with(model, train, val, cfg, |_, _| Control::Continue)
}

/// Trains with AdamW, reducing the learning rate on validation plateaus
/// and stopping early. After each epoch `observe` sees the record and the
/// current weights and may end training.
pub fn fit_with<T: Real, F>(
    mut model: VigModel<T>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<FitOutcome<T>>
where
    F: FnMut(&EpochRecord, &VigModel<T>) -> Control,
{
    cfg.validate()?;
    if train.len() < 2 {
        return Err(VigError::Data(format!(
            "training needs at least 2 samples, got {}",
            train.len()
        )));
    }
    if val.is_empty() {
        return Err(VigError::Data("validation set is empty".into()));
    }
    let mc = &model.config;
    if (mc.in_channels, mc.input_hw, mc.num_classes, mc.task)
        != (train.channels, (train.height, train.width), train.num_classes, train.task)
    {
        return Err(VigError::Data("dataset layout does not match the model configuration".into()));
    }

    let mut opt = AdamW::new(cfg.adamw());
    let mut plateau = PlateauScheduler::new(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.tolerance);
    let mut stopper = EarlyStopping::new(cfg.es_patience, cfg.tolerance);
    let mut history = History {
        best_val_loss: f64::INFINITY,
        ..History::default()
    };
    let mut best = model.clone();

    for epoch in 1..=cfg.max_epochs {
        let lr = plateau.lr;
        opt.config.lr = lr;
        let mut total = 0.0;
        for (bi, idx) in plan_batches(&epoch_order(train.len(), cfg.seed, epoch), cfg.batch_size)
            .iter()
            .enumerate()
        {
            let (x, t) = train.batch::<T>(idx)?;
            model.zero_grad();
            let l = loss(train.task, &model.forward(&x, Mode::Train)?, &t)?;
            let lv = l.item().as_f64();
            if !lv.is_finite() {
                return Err(VigError::NonFiniteLoss {
                    epoch,
                    batch: bi + 1,
                    lr,
                });
            }
            l.backward()?;
            opt.step(&mut model);
            total += lv * idx.len() as f64;
        }
        let val_loss = mean_loss(&model, val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(VigError::NonFiniteLoss { epoch, batch: 0, lr });
        }
        let record = EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss,
            lr,
        };
        history.records.push(record);
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best = model.clone();
        }
        plateau.update(val_loss);
        let stop = stopper.check(val_loss) == StopDecision::Stop;
        if observe(&record, &model) == Control::Stop {
            break;
        }
        if stop {
            history.stopped_early = true;
            break;
        }
    }
    Ok(FitOutcome {
        best,
        last: model,
        optimizer: opt,
        history,
    })
}
