use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{FeatureKind, FeatureSchema, MissingPolicy};
use crate::error::{Error, Result};

pub const PATIENT_COL: &str = "patient_id";
pub const VISIT_COL: &str = "visit_id";
pub const BASELINE_COL: &str = "baseline";
pub const LABEL_COL: &str = "label";

/// Raw value of one model feature; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureValue {
    Continuous(Option<f64>),
    Categorical(Option<usize>),
    Group(Vec<Option<f64>>),
}

impl FeatureValue {
    pub fn is_missing(&self) -> bool {
        match self {
            FeatureValue::Continuous(v) => v.is_none(),
            FeatureValue::Categorical(v) => v.is_none(),
            FeatureValue::Group(vs) => vs.iter().any(Option::is_none),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub patient_id: String,
    pub visit_id: String,
    pub is_baseline: bool,
    pub values: Vec<FeatureValue>,
    pub label: usize,
}

impl Sample {
    /// Raw (unstandardized) value of a continuous feature or group member by column name.
    pub fn continuous_value(&self, schema: &FeatureSchema, column: &str) -> Option<f64> {
        for (f, v) in schema.features().iter().zip(&self.values) {
            match (&f.kind, v) {
                (FeatureKind::Continuous, FeatureValue::Continuous(x)) if f.name == column => {
                    return *x
                }
                (FeatureKind::Group { members }, FeatureValue::Group(xs)) => {
                    if let Some(k) = members.iter().position(|m| m == column) {
                        return xs[k];
                    }
                }
                _ => {}
            }
        }
        None
    }

    pub fn category(&self, schema: &FeatureSchema, feature: &str) -> Option<usize> {
        let i = schema.feature_index(feature)?;
        match &self.values[i] {
            FeatureValue::Categorical(c) => *c,
            _ => None,
        }
    }

    pub(crate) fn check(&self, schema: &FeatureSchema) -> Result<()> {
        if self.label >= schema.n_classes() {
            return Err(Error::Dataset(format!(
                "label {} out of range for {} classes",
                self.label,
                schema.n_classes()
            )));
        }
        if self.values.len() != schema.n_features() {
            return Err(Error::Shape(format!(
                "sample has {} values, schema has {} features",
                self.values.len(),
                schema.n_features()
            )));
        }
        for (f, v) in schema.features().iter().zip(&self.values) {
            let ok = match (&f.kind, v) {
                (FeatureKind::Continuous, FeatureValue::Continuous(_)) => true,
                (FeatureKind::Categorical { categories }, FeatureValue::Categorical(c)) => {
                    c.is_none_or(|c| c < categories.len())
                }
                (FeatureKind::Group { members }, FeatureValue::Group(xs)) => {
                    xs.len() == members.len()
                }
                _ => false,
            };
            if !ok {
                return Err(Error::Dataset(format!(
                    "value for `{}` does not conform to its declared kind",
                    f.name
                )));
            }
            if f.missing_policy == MissingPolicy::Reject && v.is_missing() {
                return Err(Error::MissingRejected {
                    feature: f.name.clone(),
                    patient: self.patient_id.clone(),
                    visit: self.visit_id.clone(),
                });
            }
        }
        Ok(())
    }
}

fn parse_bool(cell: &str) -> Option<bool> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Read a delimited dataset. The header must contain `patient_id`, `visit_id`,
/// `baseline`, `label` and every source column of the schema (any order);
/// an empty cell is a missing value.
pub fn load_dataset(path: &Path, schema: &FeatureSchema) -> Result<Vec<Sample>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening dataset {}", path.display()), e))?;
    read_dataset(file, schema, &path.display().to_string())
}

pub fn read_dataset<R: std::io::Read>(
    reader: R,
    schema: &FeatureSchema,
    origin: &str,
) -> Result<Vec<Sample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let index: HashMap<&str, usize> = header
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    let mut expected: Vec<String> = [PATIENT_COL, VISIT_COL, BASELINE_COL, LABEL_COL]
        .iter()
        .map(|s| s.to_string())
        .collect();
    expected.extend(schema.source_columns());
    let missing: Vec<&String> = expected
        .iter()
        .filter(|c| !index.contains_key(c.as_str()))
        .collect();
    let extra: Vec<&String> = header.iter().filter(|h| !expected.contains(h)).collect();
    if !missing.is_empty() || !extra.is_empty() || header.len() != expected.len() {
        return Err(Error::Dataset(format!(
            "{origin}: header mismatch (missing columns {missing:?}, unexpected columns {extra:?})"
        )));
    }

    let col = |name: &str| index[name];
    let mut samples = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let line = row + 2;
        let cell = |name: &str| record.get(col(name)).unwrap_or("");
        let bad = |name: &str, why: &str| {
            Error::Dataset(format!("{origin}: line {line}, column `{name}`: {why}"))
        };
        let label_cell = cell(LABEL_COL);
        let label = schema
            .class_index(label_cell)
            .ok_or_else(|| bad(LABEL_COL, &format!("unknown class `{label_cell}`")))?;
        let is_baseline =
            parse_bool(cell(BASELINE_COL)).ok_or_else(|| bad(BASELINE_COL, "expected 0/1"))?;
        let parse_cont = |name: &str| -> Result<Option<f64>> {
            let c = cell(name);
            if c.is_empty() {
                return Ok(None);
            }
            let v: f64 = c
                .parse()
                .map_err(|_| bad(name, &format!("`{c}` is not a number")))?;
            if !v.is_finite() {
                return Err(bad(name, "non-finite value"));
            }
            Ok(Some(v))
        };
        let mut values = Vec::with_capacity(schema.n_features());
        for f in schema.features() {
            let v = match &f.kind {
                FeatureKind::Continuous => FeatureValue::Continuous(parse_cont(&f.name)?),
                FeatureKind::Categorical { categories } => {
                    let c = cell(&f.name);
                    if c.is_empty() {
                        FeatureValue::Categorical(None)
                    } else {
                        let idx = categories
                            .iter()
                            .position(|k| k == c)
                            .ok_or_else(|| bad(&f.name, &format!("unknown category `{c}`")))?;
                        FeatureValue::Categorical(Some(idx))
                    }
                }
                FeatureKind::Group { members } => FeatureValue::Group(
                    members
                        .iter()
                        .map(|m| parse_cont(m))
                        .collect::<Result<_>>()?,
                ),
            };
            values.push(v);
        }
        let sample = Sample {
            patient_id: cell(PATIENT_COL).to_string(),
            visit_id: cell(VISIT_COL).to_string(),
            is_baseline,
            values,
            label,
        };
        sample.check(schema).map_err(|e| match e {
            Error::MissingRejected { feature, .. } => {
                bad(&feature, "missing value under the reject policy")
            }
            other => other,
        })?;
        samples.push(sample);
    }
    Ok(samples)
}

fn fmt_f64(v: f64) -> String {
    // Shortest representation that parses back to the same bits.
    format!("{v:?}")
}

pub fn write_dataset<W: Write>(
    writer: W,
    schema: &FeatureSchema,
    samples: &[Sample],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = [PATIENT_COL, VISIT_COL, BASELINE_COL, LABEL_COL]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(schema.source_columns());
    w.write_record(&header)?;
    for s in samples {
        let mut rec = vec![
            s.patient_id.clone(),
            s.visit_id.clone(),
            if s.is_baseline { "1" } else { "0" }.to_string(),
            schema.class_labels()[s.label].clone(),
        ];
        for (f, v) in schema.features().iter().zip(&s.values) {
            match (&f.kind, v) {
                (_, FeatureValue::Continuous(x)) => rec.push(x.map(fmt_f64).unwrap_or_default()),
                (FeatureKind::Categorical { categories }, FeatureValue::Categorical(c)) => {
                    rec.push(c.map(|c| categories[c].clone()).unwrap_or_default())
                }
                (_, FeatureValue::Group(xs)) => {
                    rec.extend(xs.iter().map(|x| x.map(fmt_f64).unwrap_or_default()))
                }
                _ => return Err(Error::Dataset(format!("bad value for `{}`", f.name))),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()
        .map_err(|e| Error::io("writing dataset".to_string(), e))?;
    Ok(())
}

pub fn save_dataset(path: &Path, schema: &FeatureSchema, samples: &[Sample]) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_dataset(std::io::BufWriter::new(file), schema, samples)
}

/// Re-express samples read under `from` in the layout of `to`, e.g. a
/// grouped variant of the same columns. Every source column of `to` must be a
/// source column of `from` with the same kind.
pub fn reshape_samples(samples: &[Sample], from: &FeatureSchema, to: &FeatureSchema) -> Result<Vec<Sample>> {
    // (feature index in `from`, member index within a group)
    let mut where_cont: HashMap<&str, (usize, Option<usize>)> = HashMap::new();
    for (i, f) in from.features().iter().enumerate() {
        match &f.kind {
            FeatureKind::Continuous => {
                where_cont.insert(&f.name, (i, None));
            }
            FeatureKind::Group { members } => {
                for (k, m) in members.iter().enumerate() {
                    where_cont.insert(m, (i, Some(k)));
                }
            }
            FeatureKind::Categorical { .. } => {}
        }
    }
    let lookup = |col: &str| {
        where_cont
            .get(col)
            .copied()
            .ok_or_else(|| Error::Schema(format!("column `{col}` is not continuous in the source schema")))
    };
    enum Source {
        Cont((usize, Option<usize>)),
        Cat(usize),
        Group(Vec<(usize, Option<usize>)>),
    }
    let mut plan = Vec::with_capacity(to.n_features());
    for f in to.features() {
        plan.push(match &f.kind {
            FeatureKind::Continuous => Source::Cont(lookup(&f.name)?),
            FeatureKind::Categorical { categories } => {
                let i = from.feature_index(&f.name).ok_or_else(|| {
                    Error::Schema(format!("categorical `{}` missing from source schema", f.name))
                })?;
                match &from.features()[i].kind {
                    FeatureKind::Categorical { categories: c } if c == categories => Source::Cat(i),
                    _ => {
                        return Err(Error::Schema(format!(
                            "categorical `{}` differs between schemas",
                            f.name
                        )))
                    }
                }
            }
            FeatureKind::Group { members } => {
                Source::Group(members.iter().map(|m| lookup(m)).collect::<Result<_>>()?)
            }
        });
    }
    if from.class_labels() != to.class_labels() {
        return Err(Error::Schema("class labels differ between schemas".into()));
    }
    let read = |s: &Sample, (i, k): (usize, Option<usize>)| match (&s.values[i], k) {
        (FeatureValue::Continuous(v), None) => *v,
        (FeatureValue::Group(vs), Some(k)) => vs[k],
        _ => None,
    };
    samples
        .iter()
        .map(|s| {
            s.check(from)?;
            let values = plan
                .iter()
                .map(|src| match src {
                    Source::Cont(at) => FeatureValue::Continuous(read(s, *at)),
                    Source::Cat(i) => s.values[*i].clone(),
                    Source::Group(ats) => FeatureValue::Group(ats.iter().map(|&at| read(s, at)).collect()),
                })
                .collect();
            Ok(Sample {
                values,
                ..s.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::FeatureSpec;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                FeatureSpec::continuous("age"),
                FeatureSpec::categorical("sex", &["f", "m"]),
                FeatureSpec::continuous("abeta").with_policy(MissingPolicy::ZeroImpute),
            ],
            vec!["AD".into(), "MCI".into(), "CN".into()],
        )
        .unwrap()
    }

    #[test]
    fn reads_rows_and_missing_cells() {
        let csv = "patient_id,visit_id,baseline,label,sex,age,abeta\n\
                   p1,v1,1,AD,f,70.5,\n\
                   p1,v2,0,AD,f,71.5,200\n";
        let s = read_dataset(csv.as_bytes(), &schema(), "mem").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].values[2], FeatureValue::Continuous(None));
        assert_eq!(s[1].values[1], FeatureValue::Categorical(Some(0)));
        assert!(s[0].is_baseline && !s[1].is_baseline);
    }

    #[test]
    fn empty_data_section() {
        let csv = "patient_id,visit_id,baseline,label,age,sex,abeta\n";
        assert!(read_dataset(csv.as_bytes(), &schema(), "mem")
            .unwrap()
            .is_empty());
    }

    #[test]
    fn header_and_cell_errors() {
        let csv = "patient_id,visit_id,baseline,label,age,abeta\np,v,1,AD,1,2\n";
        assert!(read_dataset(csv.as_bytes(), &schema(), "mem").is_err());
        let csv = "patient_id,visit_id,baseline,label,age,sex,abeta\np,v,1,AD,abc,f,2\n";
        let e = read_dataset(csv.as_bytes(), &schema(), "mem").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let csv = "patient_id,visit_id,baseline,label,age,sex,abeta\np,v,1,AD,,f,2\n";
        let e = read_dataset(csv.as_bytes(), &schema(), "mem").unwrap_err();
        assert!(e.to_string().contains("reject"), "{e}");
    }

    #[test]
    fn write_then_read_preserves_rows() {
        let csv = "patient_id,visit_id,baseline,label,age,sex,abeta\n\
                   p1,v1,1,AD,70.123456789,f,\n\
                   p2,v1,1,CN,0.1,m,-3.5e-7\n";
        let sc = schema();
        let s = read_dataset(csv.as_bytes(), &sc, "mem").unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &sc, &s).unwrap();
        let again = read_dataset(buf.as_slice(), &sc, "mem").unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn reshape_into_groups_and_back() {
        let plain = FeatureSchema::new(
            vec![
                FeatureSpec::continuous("a"),
                FeatureSpec::categorical("sex", &["f", "m"]),
                FeatureSpec::continuous("b"),
                FeatureSpec::continuous("c"),
            ],
            vec!["x".into(), "y".into()],
        )
        .unwrap();
        let grouped = plain
            .regroup(&[("ab".into(), vec!["a".into(), "b".into()])])
            .unwrap();
        let s = Sample {
            patient_id: "p".into(),
            visit_id: "v".into(),
            is_baseline: true,
            values: vec![
                FeatureValue::Continuous(Some(1.0)),
                FeatureValue::Categorical(Some(1)),
                FeatureValue::Continuous(Some(2.0)),
                FeatureValue::Continuous(Some(3.0)),
            ],
            label: 1,
        };
        let g = reshape_samples(std::slice::from_ref(&s), &plain, &grouped).unwrap();
        assert_eq!(
            g[0].values,
            vec![
                FeatureValue::Group(vec![Some(1.0), Some(2.0)]),
                FeatureValue::Categorical(Some(1)),
                FeatureValue::Continuous(Some(3.0)),
            ]
        );
        let back = reshape_samples(&g, &grouped, &plain).unwrap();
        assert_eq!(back[0], s);
    }
}
