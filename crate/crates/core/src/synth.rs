//! Synthetic longitudinal cohorts with planted linear and pairwise effects.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{
    save_dataset, FeatureKind, FeatureSchema, FeatureSpec, FeatureValue, MissingPolicy, Sample,
};
use crate::error::{Error, Result};
use crate::harness::REGION_TAG;
use crate::model::softmax;
use crate::rng::{derive_seed, seeded, SeededRng};

pub const AGE_MEAN: f64 = 73.0;
pub const AGE_SD: f64 = 7.0;
/// Years between consecutive visits.
pub const VISIT_INTERVAL: f64 = 0.5;

pub const REGIONS: [&str; 5] = ["frontal", "parietal", "temporal", "occipital", "cingulate"];

/// Counts of each feature family; the default gives 109 model features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Template {
    /// Continuous volumes, spread round-robin over the regions.
    pub volumes: usize,
    pub regions: usize,
    pub thicknesses: usize,
    /// Continuous, zero-imputed, missing together per visit.
    pub csf: usize,
    pub genetic: usize,
    pub genetic_categories: usize,
    /// Continuous covariates besides age and sex.
    pub covariates: usize,
}

impl Default for Template {
    fn default() -> Self {
        Template {
            volumes: 20,
            regions: 5,
            thicknesses: 34,
            csf: 3,
            genetic: 41,
            genetic_categories: 3,
            covariates: 9,
        }
    }
}

impl Template {
    pub fn n_features(&self) -> usize {
        self.volumes + self.thicknesses + self.csf + self.genetic + self.covariates + 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedLinear {
    /// A column name or a region name.
    pub feature: String,
    pub class: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedPair {
    pub a: String,
    pub b: String,
    pub class: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_patients: usize,
    /// Follow-up visits per patient are Poisson with this mean.
    pub mean_followups: f64,
    pub class_labels: Vec<String>,
    pub class_priors: Vec<f64>,
    pub csf_missing_rate: f64,
    /// Standard deviation of the per-class Gaussian score noise.
    pub noise_scale: f64,
    /// Per-visit random-walk step of continuous features.
    pub drift_scale: f64,
    /// Concentration of the symmetric Dirichlet over category frequencies.
    pub dirichlet_alpha: f64,
    pub seed: u64,
    pub template: Template,
    pub planted_linear: Vec<PlantedLinear>,
    pub planted_pairs: Vec<PlantedPair>,
}

impl Default for CohortSpec {
    fn default() -> Self {
        let visits = [1536.0, 3131.0, 2177.0];
        let total: f64 = visits.iter().sum();
        CohortSpec {
            n_patients: 1492,
            mean_followups: total / 1492.0 - 1.0,
            class_labels: vec!["AD".into(), "MCI".into(), "CN".into()],
            class_priors: visits.iter().map(|v| v / total).collect(),
            csf_missing_rate: 1.0 - 1863.0 / total,
            noise_scale: 0.5,
            drift_scale: 0.1,
            dirichlet_alpha: 5.0,
            seed: 0,
            template: Template::default(),
            planted_linear: Vec::new(),
            planted_pairs: Vec::new(),
        }
    }
}

impl CohortSpec {
    pub fn parse_toml(text: &str, origin: &Path) -> Result<Self> {
        let spec: CohortSpec = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e
                .span()
                .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
                .unwrap_or(0),
            message: e.message().to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_patients == 0 {
            return bad("n_patients must be positive".into());
        }
        if self.template.n_features() == 0 || self.template.genetic_categories < 2 && self.template.genetic > 0 {
            return bad("template describes a degenerate feature set".into());
        }
        if self.template.volumes > 0 && self.template.regions == 0 {
            return bad("volumes need at least one region".into());
        }
        if self.template.regions > REGIONS.len() {
            return bad(format!("at most {} regions", REGIONS.len()));
        }
        if self.class_labels.len() < 2 || self.class_labels.len() != self.class_priors.len() {
            return bad("need at least two classes with one prior each".into());
        }
        let sum: f64 = self.class_priors.iter().sum();
        if self.class_priors.iter().any(|p| !(*p > 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return bad(format!("class priors must be positive and sum to 1 (sum {sum})"));
        }
        if !(0.0..=1.0).contains(&self.csf_missing_rate) {
            return bad(format!("csf_missing_rate {} outside [0, 1]", self.csf_missing_rate));
        }
        for (name, v) in [
            ("mean_followups", self.mean_followups),
            ("noise_scale", self.noise_scale),
            ("drift_scale", self.drift_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and nonnegative"));
            }
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return bad("dirichlet_alpha must be positive".into());
        }
        let coefs = self
            .planted_linear
            .iter()
            .map(|p| p.coefficient)
            .chain(self.planted_pairs.iter().map(|p| p.coefficient));
        if coefs.into_iter().any(|c| !c.is_finite()) {
            return bad("planted coefficients must be finite".into());
        }
        Ok(())
    }

    /// Plain (ungrouped) schema of the template; volumes carry region tags.
    pub fn schema(&self) -> Result<FeatureSchema> {
        let t = &self.template;
        let mut f = Vec::with_capacity(t.n_features());
        f.push(FeatureSpec::continuous("age").with_tags(&["age", "demographic"]));
        f.push(FeatureSpec::categorical("sex", &["female", "male"]).with_tags(&["sex", "demographic"]));
        for k in 0..t.covariates {
            f.push(FeatureSpec::continuous(&format!("covariate_{:02}", k + 1)).with_tags(&["covariate"]));
        }
        for k in 0..t.volumes {
            let region = REGIONS[k % t.regions];
            let tag = format!("{REGION_TAG}{region}");
            f.push(
                FeatureSpec::continuous(&format!("vol_{region}_{:02}", k / t.regions + 1))
                    .with_tags(&["volume", &tag]),
            );
        }
        for k in 0..t.thicknesses {
            f.push(FeatureSpec::continuous(&format!("thick_{:02}", k + 1)).with_tags(&["thickness"]));
        }
        for k in 0..t.csf {
            f.push(
                FeatureSpec::continuous(&format!("csf_{:02}", k + 1))
                    .with_policy(MissingPolicy::ZeroImpute)
                    .with_tags(&["csf"]),
            );
        }
        let cats: Vec<String> = (0..t.genetic_categories).map(|c| c.to_string()).collect();
        let cat_refs: Vec<&str> = cats.iter().map(String::as_str).collect();
        for k in 0..t.genetic {
            f.push(FeatureSpec::categorical(&format!("snp_{:02}", k + 1), &cat_refs).with_tags(&["genetic"]));
        }
        FeatureSchema::new(f, self.class_labels.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub schema_hash: String,
    pub n_patients: usize,
    pub n_visits: usize,
    /// Patients per class.
    pub class_counts: BTreeMap<String, usize>,
    pub planted_linear: Vec<PlantedLinear>,
    pub planted_pairs: Vec<PlantedPair>,
    /// Category frequencies drawn for each categorical feature.
    pub category_probs: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub schema: FeatureSchema,
    pub samples: Vec<Sample>,
    pub truth: GroundTruth,
}

/// Where a planted signal is read from: mean of standardized columns,
/// rescaled to unit variance.
#[derive(Debug, Clone)]
struct Signal {
    features: Vec<usize>,
    scale: f64,
}

fn resolve_signal(schema: &FeatureSchema, name: &str) -> Result<Signal> {
    if let Some(i) = schema.feature_index(name) {
        return Ok(Signal { features: vec![i], scale: 1.0 });
    }
    let tag = format!("{REGION_TAG}{name}");
    let members: Vec<usize> = (0..schema.n_features())
        .filter(|&i| schema.features()[i].has_tag(&tag))
        .collect();
    if members.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "planted effect names unknown feature or region `{name}`"
        )));
    }
    let scale = 1.0 / (members.len() as f64).sqrt();
    Ok(Signal { features: members, scale })
}

fn class_of(spec: &CohortSpec, label: &str) -> Result<usize> {
    spec.class_labels
        .iter()
        .position(|c| c == label)
        .ok_or_else(|| Error::InvalidArgument(format!("planted effect names unknown class `{label}`")))
}

/// Latent baseline state of a patient: a standardized value per feature
/// (categoricals store their category index).
fn signal_value(latent: &[f64], s: &Signal) -> f64 {
    s.scale * s.features.iter().map(|&i| latent[i]).sum::<f64>()
}

fn sample_categorical(probs: &[f64], rng: &mut SeededRng) -> usize {
    WeightedIndex::new(probs).expect("valid probabilities").sample(rng)
}

pub fn generate(spec: &CohortSpec) -> Result<Cohort> {
    spec.validate()?;
    let schema = spec.schema()?;
    let linear: Vec<(Signal, usize, f64)> = spec
        .planted_linear
        .iter()
        .map(|p| Ok((resolve_signal(&schema, &p.feature)?, class_of(spec, &p.class)?, p.coefficient)))
        .collect::<Result<_>>()?;
    let pairs: Vec<(Signal, Signal, usize, f64)> = spec
        .planted_pairs
        .iter()
        .map(|p| {
            Ok((
                resolve_signal(&schema, &p.a)?,
                resolve_signal(&schema, &p.b)?,
                class_of(spec, &p.class)?,
                p.coefficient,
            ))
        })
        .collect::<Result<_>>()?;

    let mut cat_rng = seeded(derive_seed(spec.seed, &[0]));
    let gamma = Gamma::new(spec.dirichlet_alpha, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut category_probs = BTreeMap::new();
    let mut probs_by_feature: Vec<Option<Vec<f64>>> = vec![None; schema.n_features()];
    for (i, f) in schema.features().iter().enumerate() {
        if let FeatureKind::Categorical { categories } = &f.kind {
            let mut p: Vec<f64> = (0..categories.len()).map(|_| gamma.sample(&mut cat_rng)).collect();
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= s);
            category_probs.insert(f.name.clone(), p.clone());
            probs_by_feature[i] = Some(p);
        }
    }
    // Standardize categorical signals by their drawn distribution so planted
    // coefficients act on a unit-variance scale for every feature kind.
    let cat_moments: Vec<(f64, f64)> = probs_by_feature
        .iter()
        .map(|p| match p {
            Some(p) => {
                let mean: f64 = p.iter().enumerate().map(|(k, q)| k as f64 * q).sum();
                let var: f64 = p.iter().enumerate().map(|(k, q)| (k as f64 - mean).powi(2) * q).sum();
                (mean, var.sqrt().max(1e-12))
            }
            None => (0.0, 1.0),
        })
        .collect();

    let followups = if spec.mean_followups > 0.0 {
        Some(Poisson::new(spec.mean_followups).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };
    let step = Normal::new(0.0, spec.drift_scale).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let log_prior: Vec<f64> = spec.class_priors.iter().map(|p| p.ln()).collect();
    let csf: Vec<usize> = (0..schema.n_features())
        .filter(|&i| schema.features()[i].has_tag("csf"))
        .collect();
    let age_idx = schema.feature_index("age").expect("template has age");

    let mut rng = seeded(derive_seed(spec.seed, &[1]));
    let mut samples = Vec::new();
    let mut class_counts: BTreeMap<String, usize> =
        spec.class_labels.iter().map(|c| (c.clone(), 0)).collect();
    let width = (spec.n_patients as f64).log10().floor() as usize + 1;
    for p in 0..spec.n_patients {
        let patient_id = format!("P{:0width$}", p + 1);
        let mut latent = vec![0.0; schema.n_features()];
        let mut cats = vec![0usize; schema.n_features()];
        for i in 0..schema.n_features() {
            match &probs_by_feature[i] {
                Some(probs) => {
                    cats[i] = sample_categorical(probs, &mut rng);
                    latent[i] = (cats[i] as f64 - cat_moments[i].0) / cat_moments[i].1;
                }
                None => latent[i] = rng.sample(StandardNormal),
            }
        }
        let mut scores = log_prior.clone();
        for (s, c, w) in &linear {
            scores[*c] += w * signal_value(&latent, s);
        }
        for (a, b, c, w) in &pairs {
            scores[*c] += w * signal_value(&latent, a) * signal_value(&latent, b);
        }
        for s in scores.iter_mut() {
            *s += spec.noise_scale * rng.sample::<f64, _>(StandardNormal);
        }
        let label = sample_categorical(&softmax(&scores), &mut rng);
        *class_counts.get_mut(&spec.class_labels[label]).unwrap() += 1;

        let n_visits = 1 + followups.as_ref().map_or(0, |d| d.sample(&mut rng) as usize);
        let mut state = latent.clone();
        for v in 0..n_visits {
            if v > 0 {
                for (i, x) in state.iter_mut().enumerate() {
                    if probs_by_feature[i].is_none() && i != age_idx {
                        *x += step.sample(&mut rng);
                    }
                }
            }
            let csf_missing = !csf.is_empty() && rng.random::<f64>() < spec.csf_missing_rate;
            let values = schema
                .features()
                .iter()
                .enumerate()
                .map(|(i, f)| match &f.kind {
                    FeatureKind::Categorical { .. } => FeatureValue::Categorical(Some(cats[i])),
                    _ if i == age_idx => FeatureValue::Continuous(Some(
                        AGE_MEAN + AGE_SD * state[i] + VISIT_INTERVAL * v as f64,
                    )),
                    _ if csf_missing && csf.contains(&i) => FeatureValue::Continuous(None),
                    _ => FeatureValue::Continuous(Some(state[i])),
                })
                .collect();
            samples.push(Sample {
                patient_id: patient_id.clone(),
                visit_id: format!("V{v:02}"),
                is_baseline: v == 0,
                values,
                label,
            });
        }
    }
    let truth = GroundTruth {
        seed: spec.seed,
        schema_hash: schema.hash(),
        n_patients: spec.n_patients,
        n_visits: samples.len(),
        class_counts,
        planted_linear: spec.planted_linear.clone(),
        planted_pairs: spec.planted_pairs.clone(),
        category_probs,
    };
    Ok(Cohort { schema, samples, truth })
}

pub const SCHEMA_FILE: &str = "schema.toml";
pub const DATA_FILE: &str = "data.csv";
pub const TRUTH_FILE: &str = "truth.json";

/// Write `schema.toml`, `data.csv` and `truth.json` into `dir`.
pub fn write_cohort(cohort: &Cohort, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(format!("writing {}", p.display()), e))
    };
    write(SCHEMA_FILE, cohort.schema.to_toml())?;
    save_dataset(&dir.join(DATA_FILE), &cohort.schema, &cohort.samples)?;
    write(TRUTH_FILE, serde_json::to_string_pretty(&cohort.truth)? + "\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub column: String,
    pub mean: f64,
    pub std: f64,
    pub missing_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n_samples: usize,
    pub n_patients: usize,
    pub n_baseline: usize,
    pub class_counts: Vec<(String, usize)>,
    /// Continuous columns (group members included); categoricals report the
    /// mean category index.
    pub columns: Vec<ColumnSummary>,
}

impl CohortSummary {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "samples {}  patients {}  baseline visits {}\n",
            self.n_samples, self.n_patients, self.n_baseline
        );
        for (c, n) in &self.class_counts {
            let _ = writeln!(out, "  {c:<12} {n:>7} ({:.1}%)", 100.0 * *n as f64 / self.n_samples as f64);
        }
        let _ = writeln!(out, "{:<24} {:>10} {:>10} {:>8}", "column", "mean", "std", "missing");
        for c in &self.columns {
            let _ = writeln!(
                out,
                "{:<24} {:>10.4} {:>10.4} {:>7.1}%",
                c.column,
                c.mean,
                c.std,
                100.0 * c.missing_rate
            );
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSummary> {
        self.columns.iter().find(|c| c.column == name)
    }
}

/// Per-class counts and per-column mean, population std and missing rate.
pub fn describe(samples: &[Sample], schema: &FeatureSchema) -> Result<CohortSummary> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot describe an empty sample set".into()));
    }
    let mut cols: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    for f in schema.features() {
        match &f.kind {
            FeatureKind::Group { members } => {
                cols.extend(members.iter().map(|m| (m.clone(), Vec::new())))
            }
            _ => cols.push((f.name.clone(), Vec::new())),
        }
    }
    let mut counts = vec![0usize; schema.n_classes()];
    for s in samples {
        s.check(schema)?;
        counts[s.label] += 1;
        let mut k = 0;
        for v in &s.values {
            match v {
                FeatureValue::Continuous(x) => {
                    cols[k].1.push(*x);
                    k += 1;
                }
                FeatureValue::Categorical(c) => {
                    cols[k].1.push(c.map(|c| c as f64));
                    k += 1;
                }
                FeatureValue::Group(xs) => {
                    for x in xs {
                        cols[k].1.push(*x);
                        k += 1;
                    }
                }
            }
        }
    }
    let columns = cols
        .into_iter()
        .map(|(column, vals)| {
            let present: Vec<f64> = vals.iter().flatten().copied().collect();
            let n = present.len() as f64;
            let (mean, std) = if present.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let mean = present.iter().sum::<f64>() / n;
                let var = present.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt())
            };
            ColumnSummary {
                column,
                mean,
                std,
                missing_rate: 1.0 - n / vals.len() as f64,
            }
        })
        .collect();
    let mut patients: Vec<&str> = samples.iter().map(|s| s.patient_id.as_str()).collect();
    patients.sort_unstable();
    patients.dedup();
    Ok(CohortSummary {
        n_samples: samples.len(),
        n_patients: patients.len(),
        n_baseline: samples.iter().filter(|s| s.is_baseline).count(),
        class_counts: schema
            .class_labels()
            .iter()
            .cloned()
            .zip(counts)
            .collect(),
        columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn reference_shape() {
        let spec = CohortSpec::default();
        let schema = spec.schema().unwrap();
        assert_eq!(schema.n_features(), 109);
        assert_eq!(schema.pair_count(), 5886);
        let cohort = generate(&spec).unwrap();
        assert_eq!(cohort.truth.n_patients, 1492);
        let visits = cohort.samples.len() as f64;
        assert!((visits - 6844.0).abs() <= 684.4, "{visits}");
        let target = [1536.0 / 6844.0, 3131.0 / 6844.0, 2177.0 / 6844.0];
        let mut counts = [0.0; 3];
        for s in &cohort.samples {
            counts[s.label] += 1.0;
        }
        for (c, t) in counts.iter().zip(target) {
            assert!((c / visits - t).abs() < 0.02, "{} vs {t}", c / visits);
        }
    }

    #[test]
    fn one_baseline_per_patient_and_determinism() {
        let spec = CohortSpec { n_patients: 200, ..CohortSpec::default() };
        let a = generate(&spec).unwrap();
        let mut baselines: HashMap<&str, usize> = HashMap::new();
        for s in &a.samples {
            *baselines.entry(&s.patient_id).or_default() += s.is_baseline as usize;
        }
        assert_eq!(baselines.len(), 200);
        assert!(baselines.values().all(|&n| n == 1));
        let b = generate(&spec).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.truth, b.truth);
        let c = generate(&CohortSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn labels_fixed_across_visits() {
        let a = generate(&CohortSpec { n_patients: 100, ..CohortSpec::default() }).unwrap();
        let mut label: HashMap<&str, usize> = HashMap::new();
        for s in &a.samples {
            assert_eq!(*label.entry(&s.patient_id).or_insert(s.label), s.label);
        }
    }

    #[test]
    fn csf_missing_rate_matches() {
        let spec = CohortSpec::default();
        let cohort = generate(&spec).unwrap();
        let summary = describe(&cohort.samples, &cohort.schema).unwrap();
        let rate = summary.column("csf_01").unwrap().missing_rate;
        assert!((rate - spec.csf_missing_rate).abs() < 0.02, "{rate}");
        assert_eq!(summary.column("age").unwrap().missing_rate, 0.0);
        let total: usize = summary.class_counts.iter().map(|c| c.1).sum();
        assert_eq!(total, summary.n_samples);
    }

    #[test]
    fn describe_single_sample() {
        let cohort = generate(&CohortSpec { n_patients: 1, mean_followups: 0.0, ..CohortSpec::default() }).unwrap();
        let summary = describe(&cohort.samples, &cohort.schema).unwrap();
        assert_eq!(summary.n_samples, 1);
        for c in &summary.columns {
            if c.missing_rate == 0.0 {
                assert_eq!(c.std, 0.0);
            }
        }
        let cont = cohort.samples[0].continuous_value(&cohort.schema, "thick_01").unwrap();
        assert_eq!(summary.column("thick_01").unwrap().mean, cont);
        assert!(describe(&[], &cohort.schema).is_err());
    }

    #[test]
    fn region_groups_present() {
        let schema = CohortSpec::default().schema().unwrap();
        let meta = crate::harness::meta_schema_from_tags(&schema).unwrap();
        assert_eq!(meta.n_features(), 94);
        assert_eq!(meta.pair_count(), 4371);
    }

    #[test]
    fn spec_validation() {
        let bad_prior = CohortSpec { class_priors: vec![0.5, 0.5, 0.5], ..CohortSpec::default() };
        assert!(generate(&bad_prior).is_err());
        let bad_rate = CohortSpec { csf_missing_rate: 1.5, ..CohortSpec::default() };
        assert!(generate(&bad_rate).is_err());
        let empty = CohortSpec {
            template: Template {
                volumes: 0,
                regions: 0,
                thicknesses: 0,
                csf: 0,
                genetic: 0,
                genetic_categories: 3,
                covariates: 0,
            },
            ..CohortSpec::default()
        };
        // age and sex remain, so the template is still usable
        assert_eq!(empty.schema().unwrap().n_features(), 2);
        let unknown = CohortSpec {
            planted_linear: vec![PlantedLinear { feature: "nope".into(), class: "AD".into(), coefficient: 1.0 }],
            ..CohortSpec::default()
        };
        assert!(generate(&unknown).is_err());
        let err = CohortSpec::parse_toml("n_patients = 10\nbogus = 3\n", Path::new("s.toml")).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = CohortSpec::parse_toml("seed = 1\nn_patients = [\n", Path::new("s.toml")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2.., .. }), "{err:?}");
    }

    #[test]
    fn toml_round_trip() {
        let spec = CohortSpec {
            planted_pairs: vec![PlantedPair {
                a: "thick_03".into(),
                b: "thick_07".into(),
                class: "AD".into(),
                coefficient: 2.0,
            }],
            ..CohortSpec::default()
        };
        let back = CohortSpec::parse_toml(&spec.to_toml(), Path::new("x")).unwrap();
        assert_eq!(back, spec);
    }
}
