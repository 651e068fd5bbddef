//! Seeded random search over per-family hyperparameter ranges.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::benchmark::{fit_variant, FoldData, ModelVariant};
use crate::error::{Error, Result};
use crate::model::{SavedModel, TrainConfig};
use crate::rng::{derive_seed, seeded, SeededRng};

/// Inclusive integer range, sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntRange {
    pub low: usize,
    pub high: usize,
}

impl IntRange {
    pub fn sample(&self, rng: &mut SeededRng) -> usize {
        rng.random_range(self.low..=self.high)
    }
}

/// Closed positive interval, sampled log-uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRange {
    pub low: f64,
    pub high: f64,
}

impl LogRange {
    pub fn sample(&self, rng: &mut SeededRng) -> f64 {
        let (a, b) = (self.low.ln(), self.high.ln());
        (a + (b - a) * rng.random::<f64>()).exp().clamp(self.low, self.high)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// One range per hidden layer; a sampled 0 drops the layer.
    pub hidden: Vec<IntRange>,
    pub embedding_len: Option<IntRange>,
    pub learning_rate: LogRange,
    pub l1: LogRange,
    pub l2: LogRange,
    pub dropout: Option<LogRange>,
}

const NEURONS: IntRange = IntRange { low: 1, high: 400 };
const OPTIONAL_NEURONS: IntRange = IntRange { low: 0, high: 400 };
const EMBEDDING: IntRange = IntRange { low: 1, high: 20 };
const RATE: LogRange = LogRange { low: 1e-4, high: 0.9 };
const LINEAR_PENALTY: LogRange = LogRange { low: 1e-4, high: 9.0 };
const DROPOUT: LogRange = LogRange { low: 0.1, high: 0.9 };

impl SearchSpace {
    pub fn for_variant(variant: ModelVariant) -> Self {
        match variant {
            ModelVariant::DeepFm | ModelVariant::DeepFmMeta => SearchSpace {
                hidden: vec![NEURONS, NEURONS],
                embedding_len: Some(EMBEDDING),
                learning_rate: RATE,
                l1: RATE,
                l2: RATE,
                dropout: Some(DROPOUT),
            },
            ModelVariant::FmOnly => SearchSpace {
                hidden: vec![],
                embedding_len: Some(EMBEDDING),
                learning_rate: RATE,
                l1: RATE,
                l2: RATE,
                dropout: None,
            },
            ModelVariant::DnnOnly => SearchSpace {
                hidden: vec![NEURONS, NEURONS, OPTIONAL_NEURONS],
                embedding_len: Some(EMBEDDING),
                learning_rate: RATE,
                l1: RATE,
                l2: RATE,
                dropout: Some(DROPOUT),
            },
            ModelVariant::LinearInteractions | ModelVariant::Linear => SearchSpace {
                hidden: vec![],
                embedding_len: None,
                learning_rate: RATE,
                l1: LINEAR_PENALTY,
                l2: LINEAR_PENALTY,
                dropout: None,
            },
        }
    }

    /// `base` with every searched field replaced by a draw; unsearched
    /// fields (batch size, epochs, patience, optimizer) are kept.
    pub fn sample(&self, base: &TrainConfig, rng: &mut SeededRng) -> TrainConfig {
        let mut c = base.clone();
        if !self.hidden.is_empty() {
            c.hidden = self.hidden.iter().map(|r| r.sample(rng)).collect();
        }
        if let Some(r) = self.embedding_len {
            c.embedding_len = r.sample(rng);
        }
        c.learning_rate = self.learning_rate.sample(rng);
        c.l1 = self.l1.sample(rng);
        c.l2 = self.l2.sample(rng);
        c.dropout = match self.dropout {
            Some(r) => r.sample(rng),
            None => 0.0,
        };
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub variant: ModelVariant,
    pub fold: usize,
    pub trial: usize,
    pub config: TrainConfig,
    pub val_balanced_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    /// Set when the trial diverged.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct FoldSearch {
    pub fold: usize,
    pub best_trial: usize,
    pub config: TrainConfig,
    pub val_balanced_accuracy: f64,
    pub best_epoch: usize,
    pub model: SavedModel,
    pub trials: Vec<TrialRecord>,
}

/// Configs tried for one fold, in trial order. Trial `t` depends only on
/// `(seed, t)`.
pub fn trial_configs(space: &SearchSpace, base: &TrainConfig, budget: usize, seed: u64) -> Vec<TrainConfig> {
    (0..budget)
        .map(|t| {
            let mut rng = seeded(derive_seed(seed, &[t as u64]));
            let mut c = space.sample(base, &mut rng);
            c.seed = derive_seed(seed, &[t as u64, 1]);
            c
        })
        .collect()
}

/// Index of the first maximum among finished trials.
pub fn select_best(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (t, s) in scores.iter().enumerate() {
        if let Some(v) = s {
            if best.is_none_or(|b| *v > scores[b].unwrap()) {
                best = Some(t);
            }
        }
    }
    best
}

/// Train `configs` on one fold and keep the validation-best model.
pub fn run_trials(
    variant: ModelVariant,
    data: &FoldData,
    configs: Vec<TrainConfig>,
) -> Result<FoldSearch> {
    if configs.is_empty() {
        return Err(Error::InvalidArgument("search budget must be at least 1".into()));
    }
    let outcomes: Vec<Result<_>> = configs
        .par_iter()
        .map(|c| fit_variant(variant, data, c))
        .collect();
    let mut trials = Vec::with_capacity(configs.len());
    let mut fits = Vec::with_capacity(configs.len());
    for (t, (config, outcome)) in configs.into_iter().zip(outcomes).enumerate() {
        let mut rec = TrialRecord {
            variant,
            fold: data.fold,
            trial: t,
            config,
            val_balanced_accuracy: None,
            best_epoch: None,
            error: None,
        };
        match outcome {
            Ok(fit) => {
                rec.val_balanced_accuracy = Some(fit.val_balanced_accuracy);
                rec.best_epoch = Some(fit.best_epoch);
                fits.push(Some(fit));
            }
            Err(e @ (Error::Diverged { .. } | Error::NonFinite(_))) => {
                rec.error = Some(e.to_string());
                fits.push(None);
            }
            Err(e) => return Err(e),
        }
        trials.push(rec);
    }
    let scores: Vec<Option<f64>> = trials.iter().map(|t| t.val_balanced_accuracy).collect();
    let best = select_best(&scores).ok_or(Error::AllTrialsDiverged(trials.len()))?;
    let fit = fits[best].take().expect("selected trial finished");
    Ok(FoldSearch {
        fold: data.fold,
        best_trial: best,
        config: trials[best].config.clone(),
        val_balanced_accuracy: fit.val_balanced_accuracy,
        best_epoch: fit.best_epoch,
        model: fit.model,
        trials,
    })
}

/// Independent random search on every fold; fold `f` uses seed
/// `derive_seed(seed, [f])`.
pub fn hyperparameter_search(
    space: &SearchSpace,
    folds: &[FoldData],
    variant: ModelVariant,
    base: &TrainConfig,
    budget: usize,
    seed: u64,
) -> Result<Vec<FoldSearch>> {
    if budget == 0 {
        return Err(Error::InvalidArgument("search budget must be at least 1".into()));
    }
    folds
        .par_iter()
        .map(|d| {
            let configs = trial_configs(space, base, budget, derive_seed(seed, &[d.fold as u64]));
            run_trials(variant, d, configs)
        })
        .collect()
}
