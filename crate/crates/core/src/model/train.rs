//! Mini-batch training with early stopping on validation balanced accuracy.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::linear::LinearInteractionModel;
use super::{loss_and_gradient, Trainable};
use crate::data::EncodedSet;
use crate::error::{Error, Result};
use crate::harness::balanced_accuracy;
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Adaptive moments, β = (0.9, 0.999), ε = 1e-8.
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l1: f64,
    pub l2: f64,
    pub dropout: f64,
    pub embedding_len: usize,
    /// Hidden layer sizes; zeros are skipped.
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            l1: 1e-4,
            l2: 1e-4,
            dropout: 0.1,
            embedding_len: 8,
            hidden: vec![64, 32],
            batch_size: 128,
            max_epochs: 300,
            patience: 10,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        if !(self.l1 >= 0.0 && self.l2 >= 0.0) {
            return bad("regularization weights must be nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {}", self.dropout));
        }
        if self.embedding_len == 0 || self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("embedding_len, batch_size, max_epochs and patience must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_balanced_accuracy\n");
        for r in &self.epochs {
            let _ = writeln!(s, "{},{:?},{:?}", r.epoch, r.train_loss, r.val_balanced_accuracy);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Snapshot with the best validation balanced accuracy.
    pub model: M,
    pub log: TrainLog,
    pub best_epoch: usize,
    pub best_val: f64,
}

pub fn evaluate<M: Trainable>(model: &M, set: &EncodedSet) -> Result<f64> {
    let preds = predict_all(model, set)?;
    balanced_accuracy(&preds, &set.labels, model.n_classes())
}

pub fn predict_all<M: Trainable>(model: &M, set: &EncodedSet) -> Result<Vec<usize>> {
    set.rows.iter().map(|x| model.predict_class(x)).collect()
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Optimizer {
    fn new<M: Trainable>(model: &M, kind: OptimizerKind, lr: f64) -> Self {
        let zeros = || model.groups().iter().map(|g| vec![0.0; g.len]).collect();
        Optimizer {
            kind,
            lr,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    fn apply<M: Trainable>(&mut self, model: &mut M, grads: &M::Grads) {
        self.step += 1;
        let gs: Vec<Vec<f64>> = model.grad_slices(grads).iter().map(|g| g.to_vec()).collect();
        let bc1 = 1.0 - BETA1.powi(self.step);
        let bc2 = 1.0 - BETA2.powi(self.step);
        for (k, params) in model.params_mut().into_iter().enumerate() {
            let g = &gs[k];
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, gv) in params.iter_mut().zip(g) {
                        *p -= self.lr * gv;
                    }
                }
                OptimizerKind::Adam => {
                    let m = &mut self.first[k];
                    let v = &mut self.second[k];
                    for j in 0..params.len() {
                        m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                        v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                        let mh = m[j] / bc1;
                        let vh = v[j] / bc2;
                        params[j] -= self.lr * mh / (vh.sqrt() + EPS);
                    }
                }
            }
        }
    }
}

pub fn train<M: Trainable>(
    mut model: M,
    train_set: &EncodedSet,
    val_set: &EncodedSet,
    config: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation sets must be non-empty".into(),
        ));
    }
    for set in [train_set, val_set] {
        if set.width != model.input_width() {
            return Err(Error::Shape(format!(
                "data width {} but model expects {}",
                set.width,
                model.input_width()
            )));
        }
    }
    let mut shuffle_rng = seeded(derive_seed(config.seed, &[1]));
    let mut dropout_rng = seeded(derive_seed(config.seed, &[2]));
    let mut opt = Optimizer::new(&model, config.optimizer, config.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best = model.clone();
    let mut best_val = evaluate(&model, val_set)?;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut log = TrainLog::default();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (l, g) = loss_and_gradient(
                &model,
                train_set,
                batch,
                config.l1,
                config.l2,
                Some(&mut dropout_rng),
            )?;
            if !l.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("batch loss {l} at learning rate {}", config.learning_rate),
                });
            }
            total += l * batch.len() as f64;
            opt.apply(&mut model, &g);
        }
        let train_loss = total / train_set.len() as f64;
        if let Some((k, _)) = model
            .params()
            .iter()
            .enumerate()
            .find(|(_, p)| p.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Diverged {
                epoch,
                detail: format!("parameter group {} became non-finite", model.groups()[k].name),
            });
        }
        let val = evaluate(&model, val_set)?;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_balanced_accuracy: val,
        });
        if val > best_val {
            best_val = val;
            best = model.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best,
        log,
        best_epoch,
        best_val,
    })
}

/// Multinomial logistic regression on `x` plus all pairwise products.
pub fn fit_linear_interactions(
    train_set: &EncodedSet,
    val_set: &EncodedSet,
    n_classes: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome<LinearInteractionModel>> {
    let model = LinearInteractionModel::zeros(train_set.width, n_classes, true);
    train(model, train_set, val_set, config)
}

/// Multinomial logistic regression on `x` only.
pub fn fit_linear(
    train_set: &EncodedSet,
    val_set: &EncodedSet,
    n_classes: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome<LinearInteractionModel>> {
    let model = LinearInteractionModel::zeros(train_set.width, n_classes, false);
    train(model, train_set, val_set, config)
}
