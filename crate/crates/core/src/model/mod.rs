//! Full models, loss, training and checkpoints.

pub mod checkpoint;
pub mod deepfm;
pub mod linear;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, SavedModel};
pub use deepfm::{DeepFmGrads, DeepFmModel, Variant};
pub use linear::LinearInteractionModel;
pub use train::{
    fit_linear, fit_linear_interactions, train, EpochRecord, OptimizerKind, TrainConfig, TrainLog, TrainOutcome,
};

use crate::data::EncodedSet;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// −ln softmax(scores)[label], via log-sum-exp.
pub fn cross_entropy(scores: &[f64], label: usize) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    lse - scores[label]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamGroup {
    pub name: &'static str,
    pub len: usize,
    /// Whether L1/L2 penalties apply (weights yes, biases no).
    pub regularized: bool,
}

/// A differentiable multiclass scorer the trainer can optimize.
pub trait Trainable: Clone + Send + Sync {
    type Grads: Send;

    fn n_classes(&self) -> usize;

    fn input_width(&self) -> usize;

    /// Deterministic (eval-mode) class scores.
    fn scores(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn groups(&self) -> Vec<ParamGroup>;

    fn params(&self) -> Vec<&[f64]>;

    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn new_grads(&self) -> Self::Grads;

    fn grad_slices<'g>(&self, g: &'g Self::Grads) -> Vec<&'g [f64]>;

    fn grad_slices_mut<'g>(&self, g: &'g mut Self::Grads) -> Vec<&'g mut [f64]>;

    /// Adds `weight · ∂CE/∂θ` for one sample into `g` and returns the sample's
    /// cross-entropy. `rng` enables training-mode stochasticity (dropout).
    fn accumulate(
        &self,
        x: &[f64],
        label: usize,
        weight: f64,
        rng: Option<&mut SeededRng>,
        g: &mut Self::Grads,
    ) -> Result<f64>;

    fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.scores(x)?))
    }

    fn predict_class(&self, x: &[f64]) -> Result<usize> {
        let s = self.scores(x)?;
        Ok(argmax(&s))
    }

    fn regularization(&self, l1: f64, l2: f64) -> f64 {
        self.groups()
            .iter()
            .zip(self.params())
            .filter(|(g, _)| g.regularized)
            .flat_map(|(_, p)| p.iter())
            .map(|t| l1 * t.abs() + l2 * t * t)
            .sum()
    }
}

pub(crate) fn argmax(s: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in s.iter().enumerate() {
        if v > s[best] {
            best = k;
        }
    }
    best
}

fn check_set<M: Trainable>(model: &M, set: &EncodedSet) -> Result<()> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if set.rows.iter().any(|r| r.len() != model.input_width()) {
        return Err(Error::Shape(format!(
            "batch rows must have width {}",
            model.input_width()
        )));
    }
    if set.labels.iter().any(|&l| l >= model.n_classes()) {
        return Err(Error::Shape("label out of range".into()));
    }
    Ok(())
}

/// Mean cross-entropy plus `l1·Σ|θ| + l2·Σθ²` over regularized parameters
/// (eval mode: no dropout).
pub fn loss<M: Trainable>(model: &M, set: &EncodedSet, l1: f64, l2: f64) -> Result<f64> {
    check_set(model, set)?;
    let mut data = 0.0;
    for (x, &y) in set.rows.iter().zip(&set.labels) {
        data += cross_entropy(&model.scores(x)?, y);
    }
    Ok(data / set.len() as f64 + model.regularization(l1, l2))
}

/// Value and gradient of [`loss`] over the given rows. Passing `rng` turns on
/// training-mode dropout.
pub fn loss_and_gradient<M: Trainable>(
    model: &M,
    set: &EncodedSet,
    rows: &[usize],
    l1: f64,
    l2: f64,
    mut rng: Option<&mut SeededRng>,
) -> Result<(f64, M::Grads)> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut g = model.new_grads();
    let weight = 1.0 / rows.len() as f64;
    let mut data = 0.0;
    for &r in rows {
        data += model.accumulate(&set.rows[r], set.labels[r], weight, rng.as_deref_mut(), &mut g)?;
    }
    let groups = model.groups();
    let params = model.params();
    for ((grp, p), gs) in groups.iter().zip(params).zip(model.grad_slices_mut(&mut g)) {
        if !grp.regularized || (l1 == 0.0 && l2 == 0.0) {
            continue;
        }
        for (gv, &t) in gs.iter_mut().zip(p) {
            // subgradient of |t| taken as 0 at t = 0
            let sign = if t > 0.0 {
                1.0
            } else if t < 0.0 {
                -1.0
            } else {
                0.0
            };
            *gv += l1 * sign + 2.0 * l2 * t;
        }
    }
    Ok((data * weight + model.regularization(l1, l2), g))
}
