//! Full cross-validated comparison of model variants.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{expand_training, make_folds, FoldPlan};
use super::search::{hyperparameter_search, run_trials, FoldSearch, SearchSpace, TrialRecord};
use crate::data::{
    fit_standardizer, reshape_samples, EncodedSet, FeatureKind, FeatureSchema, Sample, Standardizer,
};
use crate::error::{Error, Result};
use crate::model::{
    fit_linear, fit_linear_interactions, train, Checkpoint, DeepFmModel, SavedModel, TrainConfig,
    TrainLog, Variant,
};
use crate::rng::derive_seed;

/// Tag prefix marking a continuous column as a member of a named region,
/// e.g. `region:temporal_lobe`.
pub const REGION_TAG: &str = "region:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelVariant {
    #[serde(rename = "deepfm")]
    DeepFm,
    #[serde(rename = "deepfm_meta")]
    DeepFmMeta,
    #[serde(rename = "fm_only")]
    FmOnly,
    #[serde(rename = "dnn_only")]
    DnnOnly,
    #[serde(rename = "linear_interactions")]
    LinearInteractions,
    /// Logistic regression without products.
    #[serde(rename = "linear")]
    Linear,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 6] = [
        ModelVariant::DeepFm,
        ModelVariant::DeepFmMeta,
        ModelVariant::FmOnly,
        ModelVariant::DnnOnly,
        ModelVariant::LinearInteractions,
        ModelVariant::Linear,
    ];

    /// The comparison run when no variants are named.
    pub const DEFAULT: [ModelVariant; 5] = [
        ModelVariant::DeepFm,
        ModelVariant::DeepFmMeta,
        ModelVariant::FmOnly,
        ModelVariant::DnnOnly,
        ModelVariant::LinearInteractions,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::DeepFm => "deepfm",
            ModelVariant::DeepFmMeta => "deepfm_meta",
            ModelVariant::FmOnly => "fm_only",
            ModelVariant::DnnOnly => "dnn_only",
            ModelVariant::LinearInteractions => "linear_interactions",
            ModelVariant::Linear => "linear",
        }
    }

    pub fn uses_meta_schema(self) -> bool {
        self == ModelVariant::DeepFmMeta
    }

    fn index(self) -> u64 {
        ModelVariant::ALL.iter().position(|&v| v == self).unwrap() as u64
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = ModelVariant::ALL.iter().map(|v| v.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown variant `{s}` (valid: {})",
                    valid.join(", ")
                ))
            })
    }
}

/// Group every continuous column tagged `region:<name>` into a group `<name>`.
pub fn meta_schema_from_tags(schema: &FeatureSchema) -> Result<FeatureSchema> {
    let mut groups: Vec<(String, Vec<String>)> = Vec::new();
    for f in schema.features() {
        let Some(region) = f.tags.iter().find_map(|t| t.strip_prefix(REGION_TAG)) else {
            continue;
        };
        if !matches!(f.kind, FeatureKind::Continuous) {
            return Err(Error::Schema(format!(
                "`{}` carries a region tag but is not continuous",
                f.name
            )));
        }
        match groups.iter_mut().find(|(g, _)| g == region) {
            Some((_, members)) => members.push(f.name.clone()),
            None => groups.push((region.to_string(), vec![f.name.clone()])),
        }
    }
    if groups.is_empty() {
        return Err(Error::Schema(format!(
            "no feature carries a `{REGION_TAG}<name>` tag; cannot build the grouped schema"
        )));
    }
    schema.regroup(&groups)
}

/// Encoded train/validation/test sets of one fold, standardized with
/// statistics of the training set only.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub fold: usize,
    pub schema: FeatureSchema,
    pub standardizer: Standardizer,
    pub train: EncodedSet,
    pub validation: EncodedSet,
    pub test: EncodedSet,
}

pub fn prepare_fold(plan: &FoldPlan, fold: usize, samples: &[Sample], schema: &FeatureSchema) -> Result<FoldData> {
    let split = expand_training(plan, fold, samples)?;
    assert!(split.is_leak_free(), "patient overlap between splits of fold {fold}");
    let standardizer = fit_standardizer(&split.train, schema)?;
    Ok(FoldData {
        fold,
        schema: schema.clone(),
        train: EncodedSet::encode_all(&split.train, schema, &standardizer)?,
        validation: EncodedSet::encode_all(&split.validation, schema, &standardizer)?,
        test: EncodedSet::encode_all(&split.test, schema, &standardizer)?,
        standardizer,
    })
}

pub fn prepare_folds(plan: &FoldPlan, samples: &[Sample], schema: &FeatureSchema) -> Result<Vec<FoldData>> {
    (0..plan.k)
        .into_par_iter()
        .map(|f| prepare_fold(plan, f, samples, schema))
        .collect()
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: SavedModel,
    pub val_balanced_accuracy: f64,
    pub best_epoch: usize,
    pub log: TrainLog,
}

/// Train one variant with a fixed config on a prepared fold.
pub fn fit_variant(variant: ModelVariant, data: &FoldData, config: &TrainConfig) -> Result<FitResult> {
    let deep = |v: Variant| -> Result<FitResult> {
        let init = DeepFmModel::from_config(&data.schema, v, config)?;
        let out = train(init, &data.train, &data.validation, config)?;
        Ok(FitResult {
            model: SavedModel::DeepFm(out.model),
            val_balanced_accuracy: out.best_val,
            best_epoch: out.best_epoch,
            log: out.log,
        })
    };
    let n_classes = data.schema.n_classes();
    let out = match variant {
        ModelVariant::DeepFm | ModelVariant::DeepFmMeta => return deep(Variant::DeepFm),
        ModelVariant::FmOnly => return deep(Variant::FmOnly),
        ModelVariant::DnnOnly => return deep(Variant::DnnOnly),
        ModelVariant::LinearInteractions => {
            fit_linear_interactions(&data.train, &data.validation, n_classes, config)?
        }
        ModelVariant::Linear => fit_linear(&data.train, &data.validation, n_classes, config)?,
    };
    Ok(FitResult {
        model: SavedModel::Linear(out.model),
        val_balanced_accuracy: out.best_val,
        best_epoch: out.best_epoch,
        log: out.log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Tuning {
    /// Random search with this many trials per fold.
    Search { budget: usize },
    /// Train the base config once per fold.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub variants: Vec<ModelVariant>,
    pub folds: usize,
    pub seed: u64,
    pub tuning: Tuning,
    /// Fixed config, or the defaults for fields the search leaves alone.
    pub base: TrainConfig,
    /// Per-variant replacements for `base`.
    #[serde(default)]
    pub overrides: BTreeMap<ModelVariant, TrainConfig>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            variants: ModelVariant::DEFAULT.to_vec(),
            folds: 5,
            seed: 0,
            tuning: Tuning::Search { budget: 30 },
            base: TrainConfig::default(),
            overrides: BTreeMap::new(),
        }
    }
}

impl BenchmarkConfig {
    pub fn base_for(&self, variant: ModelVariant) -> &TrainConfig {
        self.overrides.get(&variant).unwrap_or(&self.base)
    }

    pub fn fold_plan_seed(&self) -> u64 {
        derive_seed(self.seed, &[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEntry {
    pub variant: ModelVariant,
    pub fold: usize,
    pub config: TrainConfig,
    pub best_trial: usize,
    pub best_epoch: usize,
    pub val_balanced_accuracy: f64,
    pub test_balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: ModelVariant,
    pub folds: usize,
    pub median: f64,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub folds: usize,
    pub schema_hash: String,
    pub meta_schema_hash: Option<String>,
    pub entries: Vec<FoldEntry>,
    pub summary: Vec<VariantSummary>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl EvalReport {
    fn summarize(entries: &[FoldEntry]) -> Vec<VariantSummary> {
        let mut by: BTreeMap<ModelVariant, Vec<f64>> = BTreeMap::new();
        for e in entries {
            by.entry(e.variant).or_default().push(e.test_balanced_accuracy);
        }
        by.into_iter()
            .map(|(variant, v)| {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                VariantSummary {
                    variant,
                    folds: v.len(),
                    median: median(&v),
                    mean,
                    std: var.sqrt(),
                    min: v.iter().copied().fold(f64::INFINITY, f64::min),
                    max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect()
    }

    pub fn median(&self, variant: ModelVariant) -> Option<f64> {
        self.summary.iter().find(|s| s.variant == variant).map(|s| s.median)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "variant,fold,test_balanced_accuracy,val_balanced_accuracy,best_trial,best_epoch,\
             learning_rate,l1,l2,dropout,embedding_len,hidden\n",
        );
        for e in &self.entries {
            let hidden: Vec<String> = e.config.hidden.iter().map(|h| h.to_string()).collect();
            let _ = writeln!(
                out,
                "{},{},{:?},{:?},{},{},{:?},{:?},{:?},{:?},{},{}",
                e.variant,
                e.fold,
                e.test_balanced_accuracy,
                e.val_balanced_accuracy,
                e.best_trial,
                e.best_epoch,
                e.config.learning_rate,
                e.config.l1,
                e.config.l2,
                e.config.dropout,
                e.config.embedding_len,
                hidden.join(" ")
            );
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("variant,folds,median,mean,std,min,max\n");
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                s.variant, s.folds, s.median, s.mean, s.std, s.min, s.max
            );
        }
        out
    }
}

pub fn trials_csv(trials: &[TrialRecord]) -> String {
    let mut out = String::from(
        "variant,fold,trial,val_balanced_accuracy,best_epoch,learning_rate,l1,l2,dropout,\
         embedding_len,hidden,error\n",
    );
    for t in trials {
        let hidden: Vec<String> = t.config.hidden.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:?},{:?},{:?},{:?},{},{},\"{}\"",
            t.variant,
            t.fold,
            t.trial,
            t.val_balanced_accuracy.map(|v| format!("{v:?}")).unwrap_or_default(),
            t.best_epoch.map(|v| v.to_string()).unwrap_or_default(),
            t.config.learning_rate,
            t.config.l1,
            t.config.l2,
            t.config.dropout,
            t.config.embedding_len,
            hidden.join(" "),
            t.error.as_deref().unwrap_or("").replace('"', "'")
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainedFold {
    pub variant: ModelVariant,
    pub fold: usize,
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub plan: FoldPlan,
    pub report: EvalReport,
    pub models: Vec<TrainedFold>,
    pub trials: Vec<TrialRecord>,
}

/// Tune (or fit) each variant on every fold and score it on the fold's test
/// set. `meta_schema` is required when `deepfm_meta` is requested.
pub fn run_benchmark(
    samples: &[Sample],
    schema: &FeatureSchema,
    meta_schema: Option<&FeatureSchema>,
    config: &BenchmarkConfig,
) -> Result<BenchmarkRun> {
    if config.variants.is_empty() {
        return Err(Error::InvalidArgument("no variants requested".into()));
    }
    if let Tuning::Search { budget: 0 } = config.tuning {
        return Err(Error::InvalidArgument("search budget must be at least 1".into()));
    }
    let plan = make_folds(samples, schema, config.folds, config.fold_plan_seed())?;
    let needs_plain = config.variants.iter().any(|v| !v.uses_meta_schema());
    let plain = if needs_plain {
        prepare_folds(&plan, samples, schema)?
    } else {
        Vec::new()
    };
    let meta = if config.variants.iter().any(|v| v.uses_meta_schema()) {
        let ms = meta_schema.ok_or_else(|| {
            Error::InvalidArgument("deepfm_meta needs a grouped schema".into())
        })?;
        let reshaped = reshape_samples(samples, schema, ms)?;
        Some((ms, prepare_folds(&plan, &reshaped, ms)?))
    } else {
        None
    };

    let mut entries = Vec::new();
    let mut models = Vec::new();
    let mut trials = Vec::new();
    for &variant in &config.variants {
        let folds = match (&meta, variant.uses_meta_schema()) {
            (Some((_, f)), true) => f,
            _ => &plain,
        };
        let base = config.base_for(variant);
        let searches: Vec<FoldSearch> = match config.tuning {
            Tuning::Search { budget } => hyperparameter_search(
                &SearchSpace::for_variant(variant),
                folds,
                variant,
                base,
                budget,
                derive_seed(config.seed, &[1, variant.index()]),
            )?,
            Tuning::Fixed => folds
                .par_iter()
                .map(|d| {
                    let mut c = base.clone();
                    c.seed = derive_seed(config.seed, &[2, variant.index(), d.fold as u64]);
                    run_trials(variant, d, vec![c])
                })
                .collect::<Result<_>>()?,
        };
        for (s, d) in searches.into_iter().zip(folds) {
            let test = s.model.evaluate(&d.test)?;
            entries.push(FoldEntry {
                variant,
                fold: s.fold,
                config: s.config.clone(),
                best_trial: s.best_trial,
                best_epoch: s.best_epoch,
                val_balanced_accuracy: s.val_balanced_accuracy,
                test_balanced_accuracy: test,
            });
            let mut checkpoint = Checkpoint::new(
                &d.schema,
                Some(d.standardizer.clone()),
                format!("{variant}/fold{}", s.fold),
                s.model,
            );
            checkpoint.test_patients = d.test.patient_ids.clone();
            models.push(TrainedFold {
                variant,
                fold: s.fold,
                checkpoint,
            });
            trials.extend(s.trials);
        }
    }
    let summary = EvalReport::summarize(&entries);
    Ok(BenchmarkRun {
        plan,
        report: EvalReport {
            seed: config.seed,
            folds: config.folds,
            schema_hash: schema.hash(),
            meta_schema_hash: meta.map(|(ms, _)| ms.hash()),
            entries,
            summary,
        },
        models,
        trials,
    })
}
