//! Checkpoint file: one header line `deepfm-checkpoint v<N> sha256:<hex>`
//! followed by a JSON payload. The digest covers the payload bytes exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::deepfm::DeepFmModel;
use super::linear::LinearInteractionModel;
use super::train::evaluate;
use super::Trainable;
use crate::data::{EncodedSet, FeatureSchema, Standardizer};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "deepfm-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SavedModel {
    DeepFm(DeepFmModel),
    Linear(LinearInteractionModel),
}

impl SavedModel {
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            SavedModel::DeepFm(m) => m.scores(x),
            SavedModel::Linear(m) => m.scores(x),
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            SavedModel::DeepFm(m) => m.predict_proba(x),
            SavedModel::Linear(m) => Trainable::predict_proba(m, x),
        }
    }

    /// Balanced accuracy of argmax predictions on `set`.
    pub fn evaluate(&self, set: &EncodedSet) -> Result<f64> {
        match self {
            SavedModel::DeepFm(m) => evaluate(m, set),
            SavedModel::Linear(m) => evaluate(m, set),
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            SavedModel::DeepFm(m) => m.input_width(),
            SavedModel::Linear(m) => m.input_width(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shapes {
    pub n_features: usize,
    pub raw_width: usize,
    pub n_classes: usize,
    pub embedding_len: Option<usize>,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub schema_hash: String,
    pub shapes: Shapes,
    pub schema: FeatureSchema,
    pub standardizer: Option<Standardizer>,
    /// Free-form label, e.g. the benchmark variant and fold.
    pub label: String,
    /// Patients held out for testing this model, when known.
    #[serde(default)]
    pub test_patients: Vec<String>,
    pub model: SavedModel,
}

impl Checkpoint {
    pub fn new(
        schema: &FeatureSchema,
        standardizer: Option<Standardizer>,
        label: impl Into<String>,
        model: SavedModel,
    ) -> Self {
        let shapes = match &model {
            SavedModel::DeepFm(m) => Shapes {
                n_features: schema.n_features(),
                raw_width: schema.raw_width(),
                n_classes: schema.n_classes(),
                embedding_len: Some(m.m()),
                hidden: m
                    .mlp
                    .as_ref()
                    .map(|h| h.hidden.iter().map(|l| l.outputs).collect())
                    .unwrap_or_default(),
            },
            SavedModel::Linear(_) => Shapes {
                n_features: schema.n_features(),
                raw_width: schema.raw_width(),
                n_classes: schema.n_classes(),
                embedding_len: None,
                hidden: Vec::new(),
            },
        };
        Checkpoint {
            format_version: FORMAT_VERSION,
            schema_hash: schema.hash(),
            shapes,
            schema: schema.clone(),
            standardizer,
            label: label.into(),
            test_patients: Vec::new(),
            model,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload = serde_json::to_vec(self)?;
        let digest = hex::encode(Sha256::digest(&payload));
        let mut out = format!("{MAGIC} v{FORMAT_VERSION} sha256:{digest}\n").into_bytes();
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(Error::Checkpoint("not a deepfm checkpoint".into()));
        }
        let version = parts
            .next()
            .and_then(|v| v.strip_prefix('v'))
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| Error::Checkpoint("malformed version".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} not supported (expected {FORMAT_VERSION})"
            )));
        }
        let expected = parts
            .next()
            .and_then(|d| d.strip_prefix("sha256:"))
            .ok_or_else(|| Error::Checkpoint("missing checksum".into()))?;
        let payload = &bytes[nl + 1..];
        let actual = hex::encode(Sha256::digest(payload));
        if actual != expected {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch (file corrupt or truncated): expected {expected}, got {actual}"
            )));
        }
        let ck: Checkpoint = serde_json::from_slice(payload)
            .map_err(|e| Error::Checkpoint(format!("payload: {e}")))?;
        ck.validate()?;
        Ok(ck)
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint("payload version mismatch".into()));
        }
        if self.schema.hash() != self.schema_hash {
            return Err(Error::Checkpoint("embedded schema does not match its hash".into()));
        }
        match &self.model {
            SavedModel::DeepFm(m) => {
                if m.schema != self.schema || !m.bank.matches(&self.schema) {
                    return Err(Error::Checkpoint("model shapes disagree with schema".into()));
                }
                if let Some(fm) = &m.fm {
                    if fm.width != self.schema.raw_width() || fm.m != m.m() {
                        return Err(Error::Checkpoint("FM head shapes disagree".into()));
                    }
                }
            }
            SavedModel::Linear(l) => {
                if l.width != self.schema.raw_width() || l.n_classes != self.schema.n_classes() {
                    return Err(Error::Checkpoint("linear model shapes disagree".into()));
                }
            }
        }
        Ok(())
    }

    /// Refuse the checkpoint unless it was trained on `schema`.
    pub fn ensure_schema(&self, schema: &FeatureSchema) -> Result<()> {
        let want = schema.hash();
        if self.schema_hash != want {
            return Err(Error::Checkpoint(format!(
                "schema hash {} does not match expected {want}",
                self.schema_hash
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ck.to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSpec;
    use crate::model::Variant;
    use crate::rng::seeded;
    use rand::Rng;

    fn schema(extra: bool) -> FeatureSchema {
        let mut f = vec![
            FeatureSpec::continuous("a"),
            FeatureSpec::categorical("b", &["x", "y"]),
        ];
        if extra {
            f.push(FeatureSpec::continuous("c"));
        }
        FeatureSchema::new(f, vec!["p".into(), "q".into(), "r".into()]).unwrap()
    }

    #[test]
    fn round_trip_predictions_bitwise() {
        let s = schema(false);
        let model = DeepFmModel::new(&s, Variant::DeepFm, 3, &[7, 5], 0.2, 13).unwrap();
        let ck = Checkpoint::new(&s, None, "test", SavedModel::DeepFm(model.clone()));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        let SavedModel::DeepFm(loaded) = back.model else { panic!() };
        let mut rng = seeded(1);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a = model.predict_proba(&x).unwrap();
            let b = loaded.predict_proba(&x).unwrap();
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn truncated_file_fails_checksum() {
        let s = schema(false);
        let model = DeepFmModel::new(&s, Variant::FmOnly, 2, &[], 0.0, 1).unwrap();
        let bytes = Checkpoint::new(&s, None, "", SavedModel::DeepFm(model))
            .to_bytes()
            .unwrap();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 10]).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn version_mismatch_refused() {
        let s = schema(false);
        let model = DeepFmModel::new(&s, Variant::FmOnly, 2, &[], 0.0, 1).unwrap();
        let bytes = Checkpoint::new(&s, None, "", SavedModel::DeepFm(model))
            .to_bytes()
            .unwrap();
        let text = String::from_utf8(bytes).unwrap().replacen(" v1 ", " v2 ", 1);
        let err = Checkpoint::from_bytes(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn different_schema_refused() {
        let s = schema(false);
        let model = LinearInteractionModel::zeros(s.raw_width(), 3, true);
        let ck = Checkpoint::new(&s, None, "", SavedModel::Linear(model));
        assert!(ck.ensure_schema(&s).is_ok());
        assert!(ck.ensure_schema(&schema(true)).is_err());
    }
}
