//! Feature schema and its on-disk TOML format.
//!
//! ```toml
//! classes = ["AD", "MCI", "CN"]
//!
//! [[feature]]
//! name = "age"
//! kind = "continuous"
//! tags = ["demographic", "age"]
//!
//! [[feature]]
//! name = "sex"
//! kind = "categorical"
//! categories = ["female", "male"]
//! tags = ["sex"]
//!
//! [[feature]]
//! name = "abeta"
//! kind = "continuous"
//! missing = "zero_impute"
//! tags = ["csf"]
//!
//! [[feature]]
//! name = "temporal_lobe"
//! kind = "group"
//! members = ["vol_hippocampus", "vol_amygdala"]
//! ```
//!
//! `missing` defaults to `reject`. Group members must be declared as
//! continuous features somewhere in the same file; they are absorbed into the
//! group (one embedding for the whole group) and do not appear as standalone
//! model features. The group's own `missing` policy governs its members.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    Reject,
    ZeroImpute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Categorical { categories: Vec<String> },
    Group { members: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
    pub missing_policy: MissingPolicy,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl FeatureSpec {
    pub fn continuous(name: &str) -> Self {
        FeatureSpec {
            name: name.to_string(),
            kind: FeatureKind::Continuous,
            missing_policy: MissingPolicy::Reject,
            tags: Vec::new(),
        }
    }

    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        FeatureSpec {
            name: name.to_string(),
            kind: FeatureKind::Categorical {
                categories: categories.iter().map(|s| s.to_string()).collect(),
            },
            missing_policy: MissingPolicy::Reject,
            tags: Vec::new(),
        }
    }

    pub fn group(name: &str, members: &[&str]) -> Self {
        FeatureSpec {
            name: name.to_string(),
            kind: FeatureKind::Group {
                members: members.iter().map(|s| s.to_string()).collect(),
            },
            missing_policy: MissingPolicy::Reject,
            tags: Vec::new(),
        }
    }

    pub fn with_policy(mut self, policy: MissingPolicy) -> Self {
        self.missing_policy = policy;
        self
    }

    pub fn with_tags(mut self, tags: &[&str]) -> Self {
        self.tags = tags.iter().map(|s| s.to_string()).collect();
        self
    }

    /// Raw encoding width d_i.
    pub fn width(&self) -> usize {
        match &self.kind {
            FeatureKind::Continuous => 1,
            FeatureKind::Categorical { categories } => categories.len(),
            FeatureKind::Group { members } => members.len(),
        }
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }

    /// Names of the raw input columns this feature occupies in the encoded vector.
    pub fn column_names(&self) -> Vec<String> {
        match &self.kind {
            FeatureKind::Continuous => vec![self.name.clone()],
            FeatureKind::Categorical { categories } => categories
                .iter()
                .map(|c| format!("{}={}", self.name, c))
                .collect(),
            FeatureKind::Group { members } => members.clone(),
        }
    }

    /// Names of the dataset-file columns this feature is read from.
    pub fn source_columns(&self) -> Vec<String> {
        match &self.kind {
            FeatureKind::Group { members } => members.clone(),
            _ => vec![self.name.clone()],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Schema("feature with empty name".into()));
        }
        match &self.kind {
            FeatureKind::Continuous => Ok(()),
            FeatureKind::Categorical { categories } => {
                if categories.len() < 2 {
                    return Err(Error::Schema(format!(
                        "categorical feature `{}` needs at least 2 categories, got {}",
                        self.name,
                        categories.len()
                    )));
                }
                let mut seen = HashSet::new();
                for c in categories {
                    if !seen.insert(c) {
                        return Err(Error::Schema(format!(
                            "categorical feature `{}` repeats category `{c}`",
                            self.name
                        )));
                    }
                }
                Ok(())
            }
            FeatureKind::Group { members } => {
                if members.is_empty() {
                    return Err(Error::Schema(format!("group `{}` has no members", self.name)));
                }
                let mut seen = HashSet::new();
                for m in members {
                    if !seen.insert(m) {
                        return Err(Error::Schema(format!(
                            "group `{}` lists member `{m}` twice",
                            self.name
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Ordered model features plus class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureSchemaParts", into = "FeatureSchemaParts")]
pub struct FeatureSchema {
    features: Vec<FeatureSpec>,
    class_labels: Vec<String>,
    offsets: Vec<usize>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>, class_labels: Vec<String>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Schema("schema declares no features".into()));
        }
        if class_labels.len() < 2 {
            return Err(Error::Schema(format!(
                "need at least 2 class labels, got {}",
                class_labels.len()
            )));
        }
        let mut labels = HashSet::new();
        for l in &class_labels {
            if !labels.insert(l) {
                return Err(Error::Schema(format!("class label `{l}` repeated")));
            }
        }
        let mut names = HashSet::new();
        for f in &features {
            f.validate()?;
            let mut own = f.source_columns();
            if !own.contains(&f.name) {
                own.push(f.name.clone());
            }
            for col in own {
                if !names.insert(col.clone()) {
                    return Err(Error::DuplicateName(col));
                }
            }
        }
        let mut schema = FeatureSchema {
            features,
            class_labels,
            offsets: Vec::new(),
        };
        schema.rebuild_offsets();
        Ok(schema)
    }

    fn rebuild_offsets(&mut self) {
        let mut offsets = Vec::with_capacity(self.features.len() + 1);
        offsets.push(0);
        for f in &self.features {
            offsets.push(offsets[offsets.len() - 1] + f.width());
        }
        self.offsets = offsets;
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    /// Number of model features n.
    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    /// Total raw width D = Σ d_i.
    pub fn raw_width(&self) -> usize {
        self.offsets[self.features.len()]
    }

    /// Column range of feature `i` inside the encoded vector.
    pub fn slice(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_labels.iter().position(|l| l == label)
    }

    /// Names of all D encoded columns in order.
    pub fn column_names(&self) -> Vec<String> {
        self.features.iter().flat_map(|f| f.column_names()).collect()
    }

    /// Names of all dataset-file columns (excluding the id/label columns) in order.
    pub fn source_columns(&self) -> Vec<String> {
        self.features.iter().flat_map(|f| f.source_columns()).collect()
    }

    /// Number of unordered feature pairs C(n, 2).
    pub fn pair_count(&self) -> usize {
        let n = self.n_features();
        n * n.saturating_sub(1) / 2
    }

    pub fn has_groups(&self) -> bool {
        self.features
            .iter()
            .any(|f| matches!(f.kind, FeatureKind::Group { .. }))
    }

    /// Hex SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("schema serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Merge the listed source columns into a group, placed where the first
    /// member used to be. Members must currently be standalone continuous features.
    pub fn regroup(&self, groups: &[(String, Vec<String>)]) -> Result<FeatureSchema> {
        let mut member_of: HashMap<&str, usize> = HashMap::new();
        for (g, (_, members)) in groups.iter().enumerate() {
            for m in members {
                match self.feature_index(m).map(|i| &self.features[i].kind) {
                    Some(FeatureKind::Continuous) => {}
                    _ => {
                        return Err(Error::Schema(format!(
                            "group member `{m}` is not a declared continuous feature"
                        )))
                    }
                }
                if member_of.insert(m.as_str(), g).is_some() {
                    return Err(Error::Schema(format!("`{m}` assigned to two groups")));
                }
            }
        }
        let mut emitted = vec![false; groups.len()];
        let mut out = Vec::new();
        for f in &self.features {
            match member_of.get(f.name.as_str()) {
                Some(&g) => {
                    if !emitted[g] {
                        emitted[g] = true;
                        let (name, members) = &groups[g];
                        let policy = if members.iter().any(|m| {
                            self.features[self.feature_index(m).unwrap()].missing_policy
                                == MissingPolicy::ZeroImpute
                        }) {
                            MissingPolicy::ZeroImpute
                        } else {
                            MissingPolicy::Reject
                        };
                        out.push(FeatureSpec {
                            name: name.clone(),
                            kind: FeatureKind::Group {
                                members: members.clone(),
                            },
                            missing_policy: policy,
                            tags: vec!["group".into()],
                        });
                    }
                }
                None => out.push(f.clone()),
            }
        }
        FeatureSchema::new(out, self.class_labels.clone())
    }

    pub fn to_toml(&self) -> String {
        let file = SchemaFile {
            classes: self.class_labels.clone(),
            feature: self
                .features
                .iter()
                .flat_map(|f| {
                    let mut entries = Vec::new();
                    if let FeatureKind::Group { members } = &f.kind {
                        for m in members {
                            entries.push(RawFeature {
                                name: m.clone(),
                                kind: "continuous".into(),
                                missing: Some(f.missing_policy),
                                tags: Vec::new(),
                                categories: None,
                                members: None,
                            });
                        }
                    }
                    let (kind, categories, members) = match &f.kind {
                        FeatureKind::Continuous => ("continuous", None, None),
                        FeatureKind::Categorical { categories } => {
                            ("categorical", Some(categories.clone()), None)
                        }
                        FeatureKind::Group { members } => ("group", None, Some(members.clone())),
                    };
                    entries.push(RawFeature {
                        name: f.name.clone(),
                        kind: kind.into(),
                        missing: Some(f.missing_policy),
                        tags: f.tags.clone(),
                        categories,
                        members,
                    });
                    entries
                })
                .collect(),
        };
        toml::to_string(&file).expect("schema file serializes")
    }

    pub fn parse_toml(text: &str, path: &Path) -> Result<FeatureSchema> {
        let file: SchemaFile = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e
                .span()
                .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
                .unwrap_or(0),
            message: e.message().to_string(),
        })?;
        file.into_schema()
    }
}

#[derive(Clone, Serialize, Deserialize)]
struct FeatureSchemaParts {
    features: Vec<FeatureSpec>,
    class_labels: Vec<String>,
}

impl TryFrom<FeatureSchemaParts> for FeatureSchema {
    type Error = Error;

    fn try_from(p: FeatureSchemaParts) -> Result<Self> {
        FeatureSchema::new(p.features, p.class_labels)
    }
}

impl From<FeatureSchema> for FeatureSchemaParts {
    fn from(s: FeatureSchema) -> Self {
        FeatureSchemaParts {
            features: s.features,
            class_labels: s.class_labels,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawFeature {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    missing: Option<MissingPolicy>,
    #[serde(default)]
    tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    categories: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    members: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaFile {
    classes: Vec<String>,
    #[serde(default)]
    feature: Vec<RawFeature>,
}

impl SchemaFile {
    fn into_schema(self) -> Result<FeatureSchema> {
        let mut declared: HashMap<String, usize> = HashMap::new();
        for (i, f) in self.feature.iter().enumerate() {
            if declared.insert(f.name.clone(), i).is_some() {
                return Err(Error::DuplicateName(f.name.clone()));
            }
        }
        let mut absorbed = HashSet::new();
        for f in &self.feature {
            if f.kind == "group" {
                for m in f.members.iter().flatten() {
                    match declared.get(m).map(|&i| self.feature[i].kind.as_str()) {
                        Some("continuous") => {}
                        Some(other) => {
                            return Err(Error::Schema(format!(
                                "group `{}` member `{m}` is {other}, expected continuous",
                                f.name
                            )))
                        }
                        None => {
                            return Err(Error::Schema(format!(
                                "group `{}` references undeclared member `{m}`",
                                f.name
                            )))
                        }
                    }
                    if !absorbed.insert(m.clone()) {
                        return Err(Error::Schema(format!(
                            "member `{m}` belongs to more than one group"
                        )));
                    }
                }
            }
        }
        let mut features = Vec::new();
        for f in self.feature {
            if absorbed.contains(&f.name) {
                continue;
            }
            let kind = match f.kind.as_str() {
                "continuous" => FeatureKind::Continuous,
                "categorical" => FeatureKind::Categorical {
                    categories: f.categories.ok_or_else(|| {
                        Error::Schema(format!("categorical feature `{}` lacks `categories`", f.name))
                    })?,
                },
                "group" => FeatureKind::Group {
                    members: f.members.ok_or_else(|| {
                        Error::Schema(format!("group `{}` lacks `members`", f.name))
                    })?,
                },
                other => {
                    return Err(Error::UnknownKind {
                        name: f.name,
                        kind: other.to_string(),
                    })
                }
            };
            features.push(FeatureSpec {
                name: f.name,
                kind,
                missing_policy: f.missing.unwrap_or(MissingPolicy::Reject),
                tags: f.tags,
            });
        }
        FeatureSchema::new(features, self.classes)
    }
}

pub fn load_schema(path: &Path) -> Result<FeatureSchema> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading schema {}", path.display()), e))?;
    FeatureSchema::parse_toml(&text, path)
}
