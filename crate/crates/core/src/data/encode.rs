use serde::{Deserialize, Serialize};

use super::dataset::{FeatureValue, Sample};
use super::schema::{FeatureKind, FeatureSchema, MissingPolicy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub column: String,
    pub mean: f64,
    /// Always > 0; 1.0 for zero-variance columns.
    pub std: f64,
    pub zero_variance: bool,
}

impl ColumnStats {
    fn transform(&self, v: f64) -> f64 {
        if self.zero_variance {
            v
        } else {
            (v - self.mean) / self.std
        }
    }

    fn inverse(&self, z: f64) -> f64 {
        if self.zero_variance {
            z
        } else {
            z * self.std + self.mean
        }
    }
}

/// Training-fold z-scoring of every continuous input column (standalone
/// continuous features and group members, in encoding order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub columns: Vec<ColumnStats>,
}

fn continuous_cells<'a>(
    schema: &'a FeatureSchema,
    sample: &'a Sample,
) -> impl Iterator<Item = Option<f64>> + 'a {
    schema
        .features()
        .iter()
        .zip(&sample.values)
        .flat_map(|(f, v)| -> Vec<Option<f64>> {
            match (&f.kind, v) {
                (FeatureKind::Continuous, FeatureValue::Continuous(x)) => vec![*x],
                (FeatureKind::Group { .. }, FeatureValue::Group(xs)) => xs.clone(),
                _ => Vec::new(),
            }
        })
}

fn continuous_column_names(schema: &FeatureSchema) -> Vec<String> {
    schema
        .features()
        .iter()
        .flat_map(|f| match &f.kind {
            FeatureKind::Continuous => vec![f.name.clone()],
            FeatureKind::Group { members } => members.clone(),
            FeatureKind::Categorical { .. } => Vec::new(),
        })
        .collect()
}

/// Population (1/N) statistics over non-missing values.
pub fn fit_standardizer(samples: &[Sample], schema: &FeatureSchema) -> Result<Standardizer> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot fit a standardizer on an empty training set".into(),
        ));
    }
    let names = continuous_column_names(schema);
    let k = names.len();
    let mut count = vec![0usize; k];
    let mut sum = vec![0.0; k];
    for s in samples {
        for (j, v) in continuous_cells(schema, s).enumerate() {
            if let Some(v) = v {
                count[j] += 1;
                sum[j] += v;
            }
        }
    }
    let mean: Vec<f64> = (0..k)
        .map(|j| if count[j] > 0 { sum[j] / count[j] as f64 } else { 0.0 })
        .collect();
    let mut ss = vec![0.0; k];
    for s in samples {
        for (j, v) in continuous_cells(schema, s).enumerate() {
            if let Some(v) = v {
                ss[j] += (v - mean[j]) * (v - mean[j]);
            }
        }
    }
    let columns = names
        .into_iter()
        .enumerate()
        .map(|(j, column)| {
            let var = if count[j] > 0 { ss[j] / count[j] as f64 } else { 0.0 };
            let std = var.sqrt();
            // Relative threshold so constant columns with float jitter are caught.
            let zero_variance = !(std > 1e-12 * mean[j].abs().max(1.0));
            ColumnStats {
                column,
                mean: mean[j],
                std: if zero_variance { 1.0 } else { std },
                zero_variance,
            }
        })
        .collect();
    Ok(Standardizer { columns })
}

impl Standardizer {
    /// Apply to every continuous cell of a sample, leaving missing cells missing.
    pub fn transform_sample(&self, sample: &Sample) -> Sample {
        let mut out = sample.clone();
        let mut j = 0;
        for v in out.values.iter_mut() {
            match v {
                FeatureValue::Continuous(x) => {
                    *x = x.map(|x| self.columns[j].transform(x));
                    j += 1;
                }
                FeatureValue::Group(xs) => {
                    for x in xs.iter_mut() {
                        *x = x.map(|x| self.columns[j].transform(x));
                        j += 1;
                    }
                }
                FeatureValue::Categorical(_) => {}
            }
        }
        debug_assert_eq!(j, self.columns.len());
        out
    }

    pub fn inverse_sample(&self, sample: &Sample) -> Sample {
        let mut out = sample.clone();
        let mut j = 0;
        for v in out.values.iter_mut() {
            match v {
                FeatureValue::Continuous(x) => {
                    *x = x.map(|x| self.columns[j].inverse(x));
                    j += 1;
                }
                FeatureValue::Group(xs) => {
                    for x in xs.iter_mut() {
                        *x = x.map(|x| self.columns[j].inverse(x));
                        j += 1;
                    }
                }
                FeatureValue::Categorical(_) => {}
            }
        }
        out
    }
}

/// Encode a sample into the raw model input of width D.
///
/// Continuous cells are standardized, categoricals become one-hot blocks, and
/// missing cells under `zero_impute` are written as literal zeros (no
/// standardization applied).
pub fn encode(sample: &Sample, schema: &FeatureSchema, std: &Standardizer) -> Result<Vec<f64>> {
    sample.check(schema)?;
    let expected = continuous_column_names(schema).len();
    if expected != std.columns.len() {
        return Err(Error::Shape(format!(
            "standardizer has {} columns, schema has {expected} continuous columns",
            std.columns.len()
        )));
    }
    let mut x = vec![0.0; schema.raw_width()];
    let mut j = 0;
    for (i, (f, v)) in schema.features().iter().zip(&sample.values).enumerate() {
        let range = schema.slice(i);
        let reject = || Error::MissingRejected {
            feature: f.name.clone(),
            patient: sample.patient_id.clone(),
            visit: sample.visit_id.clone(),
        };
        let mut put = |pos: usize, cell: &Option<f64>, j: &mut usize| -> Result<()> {
            match cell {
                Some(v) => x[pos] = std.columns[*j].transform(*v),
                None if f.missing_policy == MissingPolicy::ZeroImpute => x[pos] = 0.0,
                None => return Err(reject()),
            }
            *j += 1;
            Ok(())
        };
        match v {
            FeatureValue::Continuous(cell) => put(range.start, cell, &mut j)?,
            FeatureValue::Group(cells) => {
                for (k, cell) in cells.iter().enumerate() {
                    put(range.start + k, cell, &mut j)?;
                }
            }
            FeatureValue::Categorical(Some(c)) => x[range.start + c] = 1.0,
            FeatureValue::Categorical(None) => {
                if f.missing_policy == MissingPolicy::Reject {
                    return Err(reject());
                }
            }
        }
    }
    Ok(x)
}

/// Encoded rows ready for training or evaluation.
#[derive(Debug, Clone, Default)]
pub struct EncodedSet {
    pub width: usize,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub patient_ids: Vec<String>,
}

impl EncodedSet {
    pub fn encode_all(samples: &[Sample], schema: &FeatureSchema, std: &Standardizer) -> Result<Self> {
        let rows = samples
            .iter()
            .map(|s| encode(s, schema, std))
            .collect::<Result<Vec<_>>>()?;
        Ok(EncodedSet {
            width: schema.raw_width(),
            rows,
            labels: samples.iter().map(|s| s.label).collect(),
            patient_ids: samples.iter().map(|s| s.patient_id.clone()).collect(),
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Self {
        let width = rows.first().map_or(0, Vec::len);
        let patient_ids = (0..rows.len()).map(|i| format!("r{i}")).collect();
        EncodedSet {
            width,
            rows,
            labels,
            patient_ids,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}
