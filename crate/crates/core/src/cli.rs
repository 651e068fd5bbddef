//! Command-line front end. Every command writes its outputs plus a
//! `manifest.json` under `--out`; `replay` re-runs a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, load_schema, EncodedSet, FeatureSchema, Sample};
use crate::error::{Error, Result};
use crate::harness::{
    make_folds, meta_schema_from_tags, prepare_fold, run_benchmark, trials_csv, BenchmarkConfig,
    ModelVariant, Tuning,
};
use crate::interpret::{interaction_report, linear_importance, ImportanceReport, InteractionReport, DEFAULT_TOP_K};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, DeepFmModel, SavedModel, TrainConfig};
use crate::synth::{describe, generate, write_cohort, CohortSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const JOBS_ENV: &str = "DEEPFM_JOBS";

fn parse_variant(s: &str) -> std::result::Result<ModelVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "deepfm", version, about = "Factorization-machine models for tabular cohort classification")]
pub struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = JOBS_ENV)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct DataArgs {
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Clone, clap::Args)]
pub struct TuneArgs {
    /// Random-search trials per fold.
    #[arg(long, default_value_t = 30)]
    pub budget: usize,
    /// Skip the search and train the `--config` settings once per fold.
    #[arg(long)]
    pub fixed: bool,
    /// TOML training settings; `[variant.<name>]` tables override per variant.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Grouped schema for `deepfm_meta`; derived from `region:` tags if absent.
    #[arg(long)]
    pub meta_schema: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort from a spec file.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the seed in the cohort file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print per-class counts and per-column statistics.
    Describe {
        #[command(flatten)]
        input: DataArgs,
    },
    /// Build balanced patient-level folds.
    Folds {
        #[command(flatten)]
        input: DataArgs,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one variant on one fold with fixed settings.
    Train {
        #[command(flatten)]
        input: DataArgs,
        #[arg(long, value_parser = parse_variant)]
        variant: ModelVariant,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        meta_schema: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate one variant.
    Cv {
        #[command(flatten)]
        input: DataArgs,
        #[arg(long, value_parser = parse_variant)]
        variant: ModelVariant,
        #[command(flatten)]
        tune: TuneArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate several variants (default: the five-model comparison).
    Benchmark {
        #[command(flatten)]
        input: DataArgs,
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        variant: Vec<ModelVariant>,
        #[command(flatten)]
        tune: TuneArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear and interaction importance reports from fold checkpoints.
    Explain {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Refuse checkpoints not trained on this schema.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top_k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the command recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Write outputs here instead of the recorded directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name; enough to reproduce the run.
    pub argv: Vec<String>,
    pub version: String,
    pub seed: Option<u64>,
    pub schema_hash: Option<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub duration_secs: f64,
}

/// Parse and run; returns the process exit code.
pub fn execute(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(std::iter::once("deepfm".to_string()).chain(argv.iter().cloned())) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command, argv))
}

struct Outcome {
    seed: Option<u64>,
    schema_hash: Option<String>,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

fn dispatch(command: Command, argv: Vec<String>) -> Result<()> {
    let start = Instant::now();
    let (name, out, outcome) = match command {
        Command::Replay { manifest, out } => return replay(&manifest, out),
        Command::Generate { spec, seed, out } => ("generate", out.clone(), cmd_generate(&spec, seed, &out)?),
        Command::Describe { input } => return cmd_describe(&input),
        Command::Folds { input, k, seed, out } => ("folds", out.clone(), cmd_folds(&input, k, seed, &out)?),
        Command::Train { input, variant, config, meta_schema, fold, folds, seed, out } => (
            "train",
            out.clone(),
            cmd_train(&input, variant, config.as_deref(), meta_schema.as_deref(), fold, folds, seed, &out)?,
        ),
        Command::Cv { input, variant, tune, seed, out } => {
            ("cv", out.clone(), cmd_benchmark(&input, vec![variant], &tune, seed, &out)?)
        }
        Command::Benchmark { input, variant, tune, seed, out } => {
            let variants = if variant.is_empty() { ModelVariant::DEFAULT.to_vec() } else { variant };
            ("benchmark", out.clone(), cmd_benchmark(&input, variants, &tune, seed, &out)?)
        }
        Command::Explain { checkpoints, data, schema, top_k, out } => (
            "explain",
            out.clone(),
            cmd_explain(&checkpoints, &data, schema.as_deref(), top_k, &out)?,
        ),
    };
    let manifest = RunManifest {
        command: name.to_string(),
        argv,
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: outcome.seed,
        schema_hash: outcome.schema_hash,
        config: outcome.config,
        inputs: outcome.inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outcome.outputs,
        duration_secs: start.elapsed().as_secs_f64(),
    };
    write_text(&out, MANIFEST_FILE, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn write_text(dir: &Path, name: &str, body: String) -> Result<String> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    std::fs::write(&path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(name.to_string())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn load_inputs(input: &DataArgs) -> Result<(FeatureSchema, Vec<Sample>)> {
    let schema = load_schema(&input.schema)?;
    let samples = load_dataset(&input.data, &schema)?;
    Ok((schema, samples))
}

/// Training settings from TOML: top-level keys form the base config and each
/// `[variant.<name>]` table is layered on top of it for that variant.
pub fn parse_run_config(text: &str, origin: &Path) -> Result<(TrainConfig, BTreeMap<ModelVariant, TrainConfig>)> {
    let parse_err = |message: String| Error::Parse { path: origin.to_path_buf(), line: 0, message };
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
        path: origin.to_path_buf(),
        line: e
            .span()
            .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
            .unwrap_or(0),
        message: e.message().to_string(),
    })?;
    let per_variant = match table.remove("variant") {
        Some(toml::Value::Table(t)) => t,
        Some(_) => return Err(parse_err("`variant` must be a table".into())),
        None => toml::Table::new(),
    };
    let base: TrainConfig = toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e: toml::de::Error| parse_err(e.message().to_string()))?;
    let mut overrides = BTreeMap::new();
    for (name, v) in per_variant {
        let variant: ModelVariant = name.parse()?;
        let toml::Value::Table(extra) = v else {
            return Err(parse_err(format!("`variant.{name}` must be a table")));
        };
        let mut merged = table.clone();
        merged.extend(extra);
        let c: TrainConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| parse_err(format!("variant.{name}: {}", e.message())))?;
        overrides.insert(variant, c);
    }
    Ok((base, overrides))
}

fn load_run_config(path: Option<&Path>) -> Result<(TrainConfig, BTreeMap<ModelVariant, TrainConfig>)> {
    match path {
        None => Ok((TrainConfig::default(), BTreeMap::new())),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
            parse_run_config(&text, p)
        }
    }
}

fn meta_schema(schema: &FeatureSchema, path: Option<&Path>) -> Result<FeatureSchema> {
    match path {
        Some(p) => load_schema(p),
        None => meta_schema_from_tags(schema),
    }
}

fn cmd_generate(spec_path: &Path, seed: Option<u64>, out: &Path) -> Result<Outcome> {
    let mut spec = CohortSpec::load(spec_path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let cohort = generate(&spec)?;
    write_cohort(&cohort, out)?;
    println!(
        "generated {} patients, {} visits into {}",
        cohort.truth.n_patients,
        cohort.truth.n_visits,
        out.display()
    );
    Ok(Outcome {
        seed: Some(spec.seed),
        schema_hash: Some(cohort.schema.hash()),
        config: serde_json::to_value(&spec)?,
        inputs: vec![spec_path.to_path_buf()],
        outputs: vec![
            crate::synth::SCHEMA_FILE.into(),
            crate::synth::DATA_FILE.into(),
            crate::synth::TRUTH_FILE.into(),
        ],
    })
}

fn cmd_describe(input: &DataArgs) -> Result<()> {
    let (schema, samples) = load_inputs(input)?;
    print!("{}", describe(&samples, &schema)?.to_table());
    Ok(())
}

fn cmd_folds(input: &DataArgs, k: usize, seed: u64, out: &Path) -> Result<Outcome> {
    let (schema, samples) = load_inputs(input)?;
    let plan = make_folds(&samples, &schema, k, seed)?;
    create_dir(out)?;
    let file = write_text(out, "folds.json", serde_json::to_string_pretty(&plan)? + "\n")?;
    let (c, s, a) = plan.balance.worst();
    println!(
        "{k} folds of sizes {:?}; worst deviations: class {:.2} pts, sex {:.2} pts, age {a:.2} y",
        plan.folds.iter().map(Vec::len).collect::<Vec<_>>(),
        100.0 * c,
        100.0 * s
    );
    Ok(Outcome {
        seed: Some(seed),
        schema_hash: Some(schema.hash()),
        config: serde_json::json!({ "k": k }),
        inputs: vec![input.schema.clone(), input.data.clone()],
        outputs: vec![file],
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    input: &DataArgs,
    variant: ModelVariant,
    config: Option<&Path>,
    meta_path: Option<&Path>,
    fold: usize,
    folds: usize,
    seed: u64,
    out: &Path,
) -> Result<Outcome> {
    let (schema, samples) = load_inputs(input)?;
    let (base, overrides) = load_run_config(config)?;
    let mut cfg = overrides.get(&variant).cloned().unwrap_or(base);
    cfg.seed = seed;
    let plan = make_folds(&samples, &schema, folds, seed)?;
    let (schema_used, samples_used) = if variant.uses_meta_schema() {
        let ms = meta_schema(&schema, meta_path)?;
        let reshaped = crate::data::reshape_samples(&samples, &schema, &ms)?;
        (ms, reshaped)
    } else {
        (schema.clone(), samples)
    };
    if fold >= folds {
        return Err(Error::InvalidArgument(format!("fold {fold} out of range for {folds} folds")));
    }
    let data = prepare_fold(&plan, fold, &samples_used, &schema_used)?;
    let fit = crate::harness::fit_variant(variant, &data, &cfg)?;
    let test = fit.model.evaluate(&data.test)?;
    let mut ck = Checkpoint::new(
        &schema_used,
        Some(data.standardizer.clone()),
        format!("{variant}/fold{fold}"),
        fit.model,
    );
    ck.test_patients = data.test.patient_ids.clone();
    create_dir(out)?;
    save_checkpoint(&ck, &out.join("model.ckpt"))?;
    let log = write_text(out, "train_log.csv", fit.log.to_csv())?;
    let metrics = serde_json::json!({
        "variant": variant,
        "fold": fold,
        "best_epoch": fit.best_epoch,
        "val_balanced_accuracy": fit.val_balanced_accuracy,
        "test_balanced_accuracy": test,
    });
    let m = write_text(out, "metrics.json", serde_json::to_string_pretty(&metrics)? + "\n")?;
    println!(
        "{variant} fold {fold}: best epoch {}, validation {:.4}, test {:.4}",
        fit.best_epoch, fit.val_balanced_accuracy, test
    );
    Ok(Outcome {
        seed: Some(seed),
        schema_hash: Some(schema_used.hash()),
        config: serde_json::to_value(&cfg)?,
        inputs: [Some(input.schema.clone()), Some(input.data.clone()), config.map(Path::to_path_buf)]
            .into_iter()
            .flatten()
            .collect(),
        outputs: vec!["model.ckpt".into(), log, m],
    })
}

fn cmd_benchmark(
    input: &DataArgs,
    variants: Vec<ModelVariant>,
    tune: &TuneArgs,
    seed: u64,
    out: &Path,
) -> Result<Outcome> {
    let (schema, samples) = load_inputs(input)?;
    let (base, overrides) = load_run_config(tune.config.as_deref())?;
    let meta = if variants.iter().any(|v| v.uses_meta_schema()) {
        Some(meta_schema(&schema, tune.meta_schema.as_deref())?)
    } else {
        None
    };
    let config = BenchmarkConfig {
        variants,
        folds: tune.folds,
        seed,
        tuning: if tune.fixed { Tuning::Fixed } else { Tuning::Search { budget: tune.budget } },
        base,
        overrides,
    };
    let run = run_benchmark(&samples, &schema, meta.as_ref(), &config)?;
    create_dir(out)?;
    let mut outputs = vec![
        write_text(out, "report.json", serde_json::to_string_pretty(&run.report)? + "\n")?,
        write_text(out, "report.csv", run.report.to_csv())?,
        write_text(out, "summary.csv", run.report.summary_csv())?,
        write_text(out, "trials.csv", trials_csv(&run.trials))?,
        write_text(out, "folds.json", serde_json::to_string_pretty(&run.plan)? + "\n")?,
    ];
    for m in &run.models {
        let name = format!("checkpoints/{}-fold{}.ckpt", m.variant, m.fold);
        create_dir(&out.join("checkpoints"))?;
        save_checkpoint(&m.checkpoint, &out.join(&name))?;
        outputs.push(name);
    }
    println!("{:<22} {:>8} {:>8} {:>8} {:>8}", "variant", "median", "mean", "min", "max");
    for s in &run.report.summary {
        println!("{:<22} {:>8.4} {:>8.4} {:>8.4} {:>8.4}", s.variant, s.median, s.mean, s.min, s.max);
    }
    Ok(Outcome {
        seed: Some(seed),
        schema_hash: Some(schema.hash()),
        config: serde_json::to_value(&config)?,
        inputs: [
            Some(input.schema.clone()),
            Some(input.data.clone()),
            tune.config.clone(),
            tune.meta_schema.clone(),
        ]
        .into_iter()
        .flatten()
        .collect(),
        outputs,
    })
}

/// Encoded baseline rows of the checkpoint's test patients (all baselines
/// when the checkpoint does not record them).
fn test_rows(ck: &Checkpoint, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
    let std = ck
        .standardizer
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("checkpoint carries no standardizer".into()))?;
    let keep: std::collections::HashSet<&str> = ck.test_patients.iter().map(String::as_str).collect();
    let chosen: Vec<Sample> = samples
        .iter()
        .filter(|s| s.is_baseline && (keep.is_empty() || keep.contains(s.patient_id.as_str())))
        .cloned()
        .collect();
    if chosen.is_empty() {
        return Err(Error::Dataset(format!(
            "no baseline visits of the test patients of `{}` found in the data",
            ck.label
        )));
    }
    Ok(EncodedSet::encode_all(&chosen, &ck.schema, std)?.rows)
}

#[derive(Debug, Serialize)]
struct ExplainSummary<'a> {
    schema_hash: &'a str,
    checkpoints: Vec<&'a str>,
    top_k: usize,
    linear: Vec<serde_json::Value>,
    interactions: Vec<serde_json::Value>,
}

fn summarize(lin: &ImportanceReport, inter: &InteractionReport, top_k: usize) -> (Vec<serde_json::Value>, Vec<serde_json::Value>) {
    let linear = lin
        .classes
        .iter()
        .map(|c| {
            serde_json::json!({
                "class": c.class,
                "top_k_share": c.top_k_share,
                "top": c.ranked.iter().take(top_k).map(|e| serde_json::json!({
                    "column": e.column, "mean_weight": e.mean_weight, "mean_share": e.mean_share,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    let interactions = inter
        .aggregate
        .iter()
        .map(|c| {
            serde_json::json!({
                "class": c.class,
                "n_samples": c.n_samples,
                "pairs": c.pairs.len(),
                "rest_share": c.rest_share,
                "top": c.pairs.iter().take(top_k).map(|p| serde_json::json!({
                    "pair": p.name, "mean_share": p.mean_share, "signed_mean": p.signed_mean,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    (linear, interactions)
}

fn cmd_explain(
    paths: &[PathBuf],
    data: &Path,
    schema_path: Option<&Path>,
    top_k: usize,
    out: &Path,
) -> Result<Outcome> {
    let cks: Vec<Checkpoint> = paths.iter().map(|p| load_checkpoint(p)).collect::<Result<_>>()?;
    let first = &cks[0];
    if let Some(p) = schema_path {
        let expected = load_schema(p)?;
        let plain_ok = first.ensure_schema(&expected).is_ok();
        let meta_ok = first.schema.has_groups()
            && meta_schema_from_tags(&expected).is_ok_and(|m| first.ensure_schema(&m).is_ok());
        if !plain_ok && !meta_ok {
            first.ensure_schema(&expected)?;
        }
    }
    for ck in &cks[1..] {
        ck.ensure_schema(&first.schema)?;
    }
    let samples = load_dataset(data, &first.schema)?;
    let mut models: Vec<&DeepFmModel> = Vec::new();
    let mut rows = Vec::new();
    for ck in &cks {
        match &ck.model {
            SavedModel::DeepFm(m) if m.fm.is_some() => models.push(m),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "`{}` has no FM head; explain needs deepfm, deepfm_meta or fm_only checkpoints",
                    ck.label
                )))
            }
        }
        rows.push(test_rows(ck, &samples)?);
    }
    let lin = linear_importance(&models, top_k)?;
    let pairs: Vec<(&DeepFmModel, &[Vec<f64>])> =
        models.iter().zip(&rows).map(|(m, r)| (*m, r.as_slice())).collect();
    let inter = interaction_report(&pairs)?;
    create_dir(out)?;
    let (linear, interactions) = summarize(&lin, &inter, top_k);
    let summary = ExplainSummary {
        schema_hash: &lin.schema_hash,
        checkpoints: cks.iter().map(|c| c.label.as_str()).collect(),
        top_k,
        linear,
        interactions,
    };
    let outputs = vec![
        write_text(out, "linear_importance.csv", lin.to_csv())?,
        write_text(out, "interaction_importance.csv", inter.to_csv())?,
        write_text(out, "importance_summary.json", serde_json::to_string_pretty(&summary)? + "\n")?,
    ];
    print!("{}", lin.top_k_table(top_k));
    print!("{}", inter.top_k_table(top_k));
    Ok(Outcome {
        seed: None,
        schema_hash: Some(lin.schema_hash.clone()),
        config: serde_json::json!({ "top_k": top_k }),
        inputs: paths.iter().cloned().chain([data.to_path_buf()]).chain(schema_path.map(Path::to_path_buf)).collect(),
        outputs,
    })
}

/// Recorded argv with `--out` replaced by `out`.
pub fn replay_argv(argv: &[String], out: Option<&Path>) -> Vec<String> {
    let Some(out) = out else {
        return argv.to_vec();
    };
    let out = out.display().to_string();
    let mut result = Vec::with_capacity(argv.len() + 2);
    let mut replaced = false;
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
            result.extend(["--out".to_string(), out.clone()]);
            replaced = true;
        } else if a.starts_with("--out=") {
            result.push(format!("--out={out}"));
            replaced = true;
        } else {
            result.push(a.clone());
        }
    }
    if !replaced {
        result.extend(["--out".to_string(), out]);
    }
    result
}

fn replay(manifest: &Path, out: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(manifest)
        .map_err(|e| Error::io(format!("reading {}", manifest.display()), e))?;
    let m: RunManifest = serde_json::from_str(&text)?;
    if m.command == "replay" {
        return Err(Error::InvalidArgument("manifest records a replay".into()));
    }
    let argv = replay_argv(&m.argv, out.as_deref());
    let cli = Cli::try_parse_from(std::iter::once("deepfm".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| Error::InvalidArgument(format!("manifest arguments: {e}")))?;
    dispatch(cli.command, argv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_rewrites_out() {
        let argv: Vec<String> = ["cv", "--out", "a", "--seed", "3"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            replay_argv(&argv, Some(Path::new("b"))),
            ["cv", "--out", "b", "--seed", "3"]
        );
        let eq: Vec<String> = vec!["folds".into(), "--out=a".into()];
        assert_eq!(replay_argv(&eq, Some(Path::new("b"))), ["folds", "--out=b"]);
        assert_eq!(replay_argv(&argv, None), argv);
    }

    #[test]
    fn run_config_layers_variant_tables() {
        let text = "learning_rate = 0.01\nl1 = 0.001\n[variant.deepfm]\ndropout = 0.5\nhidden = [8, 4]\n";
        let (base, over) = parse_run_config(text, Path::new("c.toml")).unwrap();
        assert_eq!(base.learning_rate, 0.01);
        assert_eq!(base.hidden, TrainConfig::default().hidden);
        let d = &over[&ModelVariant::DeepFm];
        assert_eq!((d.learning_rate, d.l1, d.dropout), (0.01, 0.001, 0.5));
        assert_eq!(d.hidden, [8, 4]);
        assert!(parse_run_config("bogus = 1\n", Path::new("c")).is_err());
        assert!(parse_run_config("[variant.nope]\nl1 = 1\n", Path::new("c")).is_err());
    }

    #[test]
    fn variant_usage_error_lists_choices() {
        let err = Cli::try_parse_from(["deepfm", "cv", "--schema", "s", "--data", "d", "--variant", "xgb", "--out", "o"])
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("linear_interactions"), "{err}");
    }
}
