//! Patient-level fold construction and longitudinal expansion.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureSchema, Sample};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

pub const CLASS_TOLERANCE: f64 = 0.05;
pub const SEX_TOLERANCE: f64 = 0.05;
pub const AGE_TOLERANCE: f64 = 2.0;
pub const VALIDATION_FRACTION: f64 = 0.2;

/// Which columns drive sex/age balancing. Defaults come from schema tags
/// `sex` (a categorical feature) and `age` (a continuous column).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BalanceKeys {
    pub sex_feature: Option<String>,
    pub age_column: Option<String>,
}

impl BalanceKeys {
    pub fn from_schema(schema: &FeatureSchema) -> Self {
        let find = |tag: &str| {
            schema
                .features()
                .iter()
                .find(|f| f.has_tag(tag))
                .map(|f| f.name.clone())
        };
        BalanceKeys {
            sex_feature: find("sex"),
            age_column: find("age"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldBalance {
    pub size: usize,
    /// max over classes of |fold share − global share|
    pub class_deviation: f64,
    /// max over sex categories of |fold share − global share|
    pub sex_deviation: f64,
    /// |fold mean age − global mean age|
    pub age_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub folds: Vec<FoldBalance>,
}

impl BalanceReport {
    pub fn within_tolerance(&self) -> bool {
        self.folds.iter().all(|f| {
            f.class_deviation <= CLASS_TOLERANCE
                && f.sex_deviation <= SEX_TOLERANCE
                && f.age_deviation <= AGE_TOLERANCE
        })
    }

    pub fn worst(&self) -> (f64, f64, f64) {
        self.folds.iter().fold((0.0, 0.0, 0.0), |acc, f| {
            (
                acc.0.max(f.class_deviation),
                acc.1.max(f.sex_deviation),
                acc.2.max(f.age_deviation),
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Patient ids per fold, sorted.
    pub folds: Vec<Vec<String>>,
    pub balance: BalanceReport,
}

#[derive(Debug, Clone)]
struct PatientKey {
    id: String,
    class: usize,
    sex: Option<usize>,
    age: Option<f64>,
}

fn baseline_patients(samples: &[Sample], schema: &FeatureSchema, keys: &BalanceKeys) -> Result<Vec<PatientKey>> {
    let mut baselines: BTreeMap<&str, &Sample> = BTreeMap::new();
    let mut all: HashSet<&str> = HashSet::new();
    for s in samples {
        all.insert(&s.patient_id);
        if s.is_baseline && baselines.insert(&s.patient_id, s).is_some() {
            return Err(Error::Dataset(format!(
                "patient {} has more than one baseline visit",
                s.patient_id
            )));
        }
    }
    if let Some(p) = all.iter().find(|p| !baselines.contains_key(*p)) {
        return Err(Error::Dataset(format!("patient {p} has no baseline visit")));
    }
    Ok(baselines
        .into_values()
        .map(|s| PatientKey {
            id: s.patient_id.clone(),
            class: s.label,
            sex: keys.sex_feature.as_deref().and_then(|f| s.category(schema, f)),
            age: keys.age_column.as_deref().and_then(|c| s.continuous_value(schema, c)),
        })
        .collect())
}

fn measure(patients: &[PatientKey], folds: &[Vec<usize>], n_classes: usize) -> BalanceReport {
    let shares = |members: &mut dyn Iterator<Item = &PatientKey>| {
        let mut class = vec![0.0f64; n_classes];
        let mut sex: BTreeMap<usize, f64> = BTreeMap::new();
        let mut n_sex = 0.0f64;
        let mut age = 0.0;
        let mut n_age = 0.0;
        let mut n = 0.0f64;
        for p in members {
            n += 1.0;
            class[p.class] += 1.0;
            if let Some(s) = p.sex {
                *sex.entry(s).or_default() += 1.0;
                n_sex += 1.0;
            }
            if let Some(a) = p.age {
                age += a;
                n_age += 1.0;
            }
        }
        class.iter_mut().for_each(|c| *c /= n.max(1.0));
        sex.values_mut().for_each(|c| *c /= f64::max(n_sex, 1.0));
        let mean_age = if n_age > 0.0 { Some(age / n_age) } else { None };
        (class, sex, mean_age)
    };
    let (g_class, g_sex, g_age) = shares(&mut patients.iter());
    let folds = folds
        .iter()
        .map(|members| {
            let (class, sex, age) = shares(&mut members.iter().map(|&i| &patients[i]));
            FoldBalance {
                size: members.len(),
                class_deviation: class
                    .iter()
                    .zip(&g_class)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
                sex_deviation: g_sex
                    .iter()
                    .map(|(k, g)| (sex.get(k).copied().unwrap_or(0.0) - g).abs())
                    .fold(0.0, f64::max),
                age_deviation: match (age, g_age) {
                    (Some(a), Some(g)) => (a - g).abs(),
                    _ => 0.0,
                },
            }
        })
        .collect();
    BalanceReport { folds }
}

/// Greedy balanced assignment without the tolerance check.
pub fn plan_folds(samples: &[Sample], schema: &FeatureSchema, k: usize, seed: u64) -> Result<FoldPlan> {
    plan_folds_with(samples, schema, k, seed, &BalanceKeys::from_schema(schema))
}

pub fn plan_folds_with(
    samples: &[Sample],
    schema: &FeatureSchema,
    k: usize,
    seed: u64,
    keys: &BalanceKeys,
) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    let patients = baseline_patients(samples, schema, keys)?;
    if patients.len() < k {
        return Err(Error::Imbalanced(format!(
            "{} patients cannot fill {k} folds",
            patients.len()
        )));
    }
    let mut rng = seeded(seed);
    // Random key breaks ties among identical (class, sex, age) before sorting.
    let jitter: Vec<u64> = (0..patients.len()).map(|_| rng.random()).collect();
    let mut order: Vec<usize> = (0..patients.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&patients[a], &patients[b]);
        pa.class
            .cmp(&pb.class)
            .then(pa.sex.cmp(&pb.sex))
            .then(
                pa.age
                    .unwrap_or(f64::NEG_INFINITY)
                    .total_cmp(&pb.age.unwrap_or(f64::NEG_INFINITY)),
            )
            .then(jitter[a].cmp(&jitter[b]))
    });

    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut stratum_counts: HashMap<(usize, Option<usize>), Vec<usize>> = HashMap::new();
    for &p in &order {
        let key = (patients[p].class, patients[p].sex);
        let counts = stratum_counts.entry(key).or_insert_with(|| vec![0; k]);
        let tie: Vec<u64> = (0..k).map(|_| rng.random()).collect();
        let best = (0..k)
            .min_by_key(|&f| (counts[f], folds[f].len(), tie[f]))
            .expect("k ≥ 2");
        counts[best] += 1;
        folds[best].push(p);
    }
    let balance = measure(&patients, &folds, schema.n_classes());
    let folds = folds
        .into_iter()
        .map(|members| {
            let mut ids: Vec<String> = members.into_iter().map(|i| patients[i].id.clone()).collect();
            ids.sort();
            ids
        })
        .collect();
    Ok(FoldPlan { k, seed, folds, balance })
}

/// Balanced folds; fails with the achieved deviations when any fold exceeds
/// the class (±5 points), sex (±5 points) or mean-age (±2 years) tolerance.
pub fn make_folds(samples: &[Sample], schema: &FeatureSchema, k: usize, seed: u64) -> Result<FoldPlan> {
    let plan = plan_folds(samples, schema, k, seed)?;
    if !plan.balance.within_tolerance() {
        let (c, s, a) = plan.balance.worst();
        return Err(Error::Imbalanced(format!(
            "worst deviations: class {:.1} points, sex {:.1} points, mean age {a:.2} years",
            100.0 * c,
            100.0 * s
        )));
    }
    Ok(plan)
}

#[derive(Debug, Clone, Default)]
pub struct Split {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Split {
    pub fn patient_sets(&self) -> [HashSet<&str>; 3] {
        fn ids(v: &[Sample]) -> HashSet<&str> {
            v.iter().map(|s| s.patient_id.as_str()).collect()
        }
        [ids(&self.train), ids(&self.validation), ids(&self.test)]
    }

    /// Patient-id sets pairwise disjoint.
    pub fn is_leak_free(&self) -> bool {
        let [a, b, c] = self.patient_sets();
        a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c)
    }
}

/// Test = baseline visits of the fold; remaining patients split 80/20
/// (stratified by class) into train and validation; train also receives every
/// follow-up visit of its patients.
pub fn expand_training(plan: &FoldPlan, fold_index: usize, samples: &[Sample]) -> Result<Split> {
    if fold_index >= plan.k {
        return Err(Error::InvalidArgument(format!(
            "fold {fold_index} out of range for {} folds",
            plan.k
        )));
    }
    let test_ids: HashSet<&str> = plan.folds[fold_index].iter().map(String::as_str).collect();
    let mut by_class: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for s in samples.iter().filter(|s| s.is_baseline) {
        if !test_ids.contains(s.patient_id.as_str()) {
            by_class.entry(s.label).or_default().push(&s.patient_id);
        }
    }
    let mut val_ids: HashSet<&str> = HashSet::new();
    for (class, mut ids) in by_class {
        ids.sort_unstable();
        let mut rng = seeded(derive_seed(plan.seed, &[0xa1, fold_index as u64, class as u64]));
        ids.shuffle(&mut rng);
        let n_val = (ids.len() as f64 * VALIDATION_FRACTION).round() as usize;
        val_ids.extend(ids.into_iter().take(n_val));
    }
    let mut split = Split::default();
    for s in samples {
        let id = s.patient_id.as_str();
        if test_ids.contains(id) {
            if s.is_baseline {
                split.test.push(s.clone());
            }
        } else if val_ids.contains(id) {
            if s.is_baseline {
                split.validation.push(s.clone());
            }
        } else {
            split.train.push(s.clone());
        }
    }
    debug_assert!(split.is_leak_free());
    Ok(split)
}
