//! Linear-weight importances and per-sample pairwise interaction shares.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureSchema;
use crate::error::{Error, Result};
use crate::model::DeepFmModel;

pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEntry {
    pub column: String,
    pub mean_weight: f64,
    /// Share of the mean absolute weight.
    pub mean_share: f64,
    pub fold_weights: Vec<f64>,
    pub fold_shares: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassImportance {
    pub class: String,
    /// Sorted by mean signed weight, largest first.
    pub ranked: Vec<LinearEntry>,
    /// Sum of the shares of the first `top_k` ranked columns.
    pub top_k_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub schema_hash: String,
    pub folds: usize,
    pub top_k: usize,
    pub classes: Vec<ClassImportance>,
}

/// Per-class linear weights over the raw input columns.
fn linear_weights(model: &DeepFmModel) -> Result<Vec<Vec<f64>>> {
    let fm = model
        .fm
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("model has no linear part (deep head only)".into()))?;
    Ok((0..fm.n_classes).map(|c| fm.class_weights(c).to_vec()).collect())
}

fn shares(abs: &[f64]) -> Vec<f64> {
    let total: f64 = abs.iter().sum();
    if total > 0.0 {
        abs.iter().map(|a| a / total).collect()
    } else {
        vec![1.0 / abs.len() as f64; abs.len()]
    }
}

/// Importances from per-fold weight matrices (`folds[f][class][column]`).
pub fn importance_from_weights(
    schema: &FeatureSchema,
    folds: &[Vec<Vec<f64>>],
    top_k: usize,
) -> Result<ImportanceReport> {
    if folds.is_empty() {
        return Err(Error::InvalidArgument("need at least one trained model".into()));
    }
    let columns = schema.column_names();
    let d = columns.len();
    let n_classes = schema.n_classes();
    for w in folds {
        if w.len() != n_classes || w.iter().any(|row| row.len() != d) {
            return Err(Error::Shape("weight matrix shape disagrees with schema".into()));
        }
    }
    let nf = folds.len() as f64;
    let classes = (0..n_classes)
        .map(|c| {
            let mean_w: Vec<f64> = (0..d)
                .map(|j| folds.iter().map(|w| w[c][j]).sum::<f64>() / nf)
                .collect();
            let mean_abs: Vec<f64> = (0..d)
                .map(|j| folds.iter().map(|w| w[c][j].abs()).sum::<f64>() / nf)
                .collect();
            let share = shares(&mean_abs);
            let fold_shares: Vec<Vec<f64>> = folds
                .iter()
                .map(|w| shares(&w[c].iter().map(|x| x.abs()).collect::<Vec<_>>()))
                .collect();
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| mean_w[b].total_cmp(&mean_w[a]).then(a.cmp(&b)));
            let ranked: Vec<LinearEntry> = order
                .into_iter()
                .map(|j| LinearEntry {
                    column: columns[j].clone(),
                    mean_weight: mean_w[j],
                    mean_share: share[j],
                    fold_weights: folds.iter().map(|w| w[c][j]).collect(),
                    fold_shares: fold_shares.iter().map(|s| s[j]).collect(),
                })
                .collect();
            let top_k_share = ranked.iter().take(top_k).map(|e| e.mean_share).sum();
            ClassImportance {
                class: schema.class_labels()[c].clone(),
                ranked,
                top_k_share,
            }
        })
        .collect();
    Ok(ImportanceReport {
        schema_hash: schema.hash(),
        folds: folds.len(),
        top_k,
        classes,
    })
}

/// Rank input columns per class by the mean linear weight over folds.
pub fn linear_importance(models: &[&DeepFmModel], top_k: usize) -> Result<ImportanceReport> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one trained model".into()))?;
    let mut weights = Vec::with_capacity(models.len());
    for m in models {
        if m.schema != first.schema {
            return Err(Error::Checkpoint("fold models were trained on different schemas".into()));
        }
        weights.push(linear_weights(m)?);
    }
    importance_from_weights(&first.schema, &weights, top_k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub name: String,
    pub a: usize,
    pub b: usize,
    pub mean_share: f64,
    pub signed_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassInteractions {
    pub class: String,
    pub n_samples: usize,
    /// Sorted by mean share, largest first.
    pub pairs: Vec<PairEntry>,
    pub rest_share: f64,
    pub rest_signed_mean: f64,
}

impl ClassInteractions {
    pub fn rank_of(&self, a: &str, b: &str) -> Option<usize> {
        let (x, y) = (format!("{a} × {b}"), format!("{b} × {a}"));
        self.pairs.iter().position(|p| p.name == x || p.name == y)
    }
}

/// One sample's split of a class score into pair terms and the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// pᶜ_ij in row-major (i < j) order.
    pub pairs: Vec<f64>,
    /// Bias + linear + deep-head score.
    pub rest: f64,
}

impl Decomposition {
    /// `|p| / (Σ|p| + |rest|)` per pair, then the rest's share. All shares are
    /// zero except the rest's (= 1) when every term vanishes.
    pub fn shares(&self) -> (Vec<f64>, f64) {
        let total: f64 = self.pairs.iter().map(|p| p.abs()).sum::<f64>() + self.rest.abs();
        if total == 0.0 {
            return (vec![0.0; self.pairs.len()], 1.0);
        }
        (
            self.pairs.iter().map(|p| p.abs() / total).collect(),
            self.rest.abs() / total,
        )
    }

    pub fn score(&self) -> f64 {
        self.pairs.iter().sum::<f64>() + self.rest
    }
}

/// Per-class decomposition of the model's score at `x`.
pub fn decompose(model: &DeepFmModel, x: &[f64]) -> Result<Vec<Decomposition>> {
    let fm = model
        .fm
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("interaction importance needs an FM head".into()))?;
    let pass = model.forward(x, None)?;
    let linear = fm.linear(x);
    let deep = pass
        .mlp_trace
        .map(|t| t.output)
        .unwrap_or_else(|| vec![0.0; fm.n_classes]);
    (0..fm.n_classes)
        .map(|c| {
            Ok(Decomposition {
                pairs: fm.pair_contributions(x, &pass.embeddings, c)?,
                rest: linear[c] + deep[c],
            })
        })
        .collect()
}

fn pair_names(schema: &FeatureSchema) -> Vec<(usize, usize, String)> {
    let names: Vec<&str> = schema.features().iter().map(|f| f.name.as_str()).collect();
    let n = names.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push((i, j, format!("{} × {}", names[i], names[j])));
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Sums {
    share: Vec<f64>,
    signed: Vec<f64>,
    rest_share: f64,
    rest_signed: f64,
    n: usize,
}

impl Sums {
    fn zeros(p: usize) -> Self {
        Sums { share: vec![0.0; p], signed: vec![0.0; p], rest_share: 0.0, rest_signed: 0.0, n: 0 }
    }

    fn add(mut self, d: &Decomposition) -> Self {
        let (s, r) = d.shares();
        self.share.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
        self.signed.iter_mut().zip(&d.pairs).for_each(|(a, b)| *a += b);
        self.rest_share += r;
        self.rest_signed += d.rest;
        self.n += 1;
        self
    }

    fn merge(mut self, o: Sums) -> Self {
        self.share.iter_mut().zip(&o.share).for_each(|(a, b)| *a += b);
        self.signed.iter_mut().zip(&o.signed).for_each(|(a, b)| *a += b);
        self.rest_share += o.rest_share;
        self.rest_signed += o.rest_signed;
        self.n += o.n;
        self
    }
}

/// Samples are decomposed in parallel but summed in input order, so the
/// result does not depend on thread scheduling.
fn class_sums(model: &DeepFmModel, rows: &[Vec<f64>]) -> Result<Vec<Sums>> {
    let n_classes = model.schema.n_classes();
    let p = model.schema.pair_count();
    let mut sums = vec![Sums::zeros(p); n_classes];
    for chunk in rows.chunks(64) {
        let decs: Vec<Vec<Decomposition>> = chunk
            .par_iter()
            .map(|x| decompose(model, x))
            .collect::<Result<_>>()?;
        for d in &decs {
            sums = sums.into_iter().zip(d).map(|(s, dc)| s.add(dc)).collect();
        }
    }
    Ok(sums)
}

fn finish(schema: &FeatureSchema, class: usize, s: Sums) -> ClassInteractions {
    let n = s.n as f64;
    let mut pairs: Vec<PairEntry> = pair_names(schema)
        .into_iter()
        .enumerate()
        .map(|(k, (a, b, name))| PairEntry {
            name,
            a,
            b,
            mean_share: s.share[k] / n,
            signed_mean: s.signed[k] / n,
        })
        .collect();
    pairs.sort_by(|x, y| y.mean_share.total_cmp(&x.mean_share));
    ClassInteractions {
        class: schema.class_labels()[class].clone(),
        n_samples: s.n,
        pairs,
        rest_share: s.rest_share / n,
        rest_signed_mean: s.rest_signed / n,
    }
}

/// Mean per-sample interaction shares for every class.
pub fn interaction_importance_all(model: &DeepFmModel, rows: &[Vec<f64>]) -> Result<Vec<ClassInteractions>> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("interaction importance needs test samples".into()));
    }
    Ok(class_sums(model, rows)?
        .into_iter()
        .enumerate()
        .map(|(c, s)| finish(&model.schema, c, s))
        .collect())
}

/// Mean per-sample interaction shares for class `class`.
pub fn interaction_importance(model: &DeepFmModel, rows: &[Vec<f64>], class: usize) -> Result<ClassInteractions> {
    if class >= model.schema.n_classes() {
        return Err(Error::InvalidArgument(format!("class {class} out of range")));
    }
    Ok(interaction_importance_all(model, rows)?.swap_remove(class))
}

/// As [`interaction_importance_all`] for a model trained on a grouped schema.
pub fn meta_interaction_importance(model: &DeepFmModel, rows: &[Vec<f64>]) -> Result<Vec<ClassInteractions>> {
    if !model.schema.has_groups() {
        return Err(Error::InvalidArgument("schema declares no feature groups".into()));
    }
    interaction_importance_all(model, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionReport {
    pub schema_hash: String,
    pub per_fold: Vec<Vec<ClassInteractions>>,
    /// Pooled over the test samples of every fold.
    pub aggregate: Vec<ClassInteractions>,
}

/// Per-fold reports plus a pooled aggregate; `folds` pairs each model with
/// its own (encoded) test rows.
pub fn interaction_report(folds: &[(&DeepFmModel, &[Vec<f64>])]) -> Result<InteractionReport> {
    let (first, _) = folds
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one trained model".into()))?;
    let schema = &first.schema;
    let p = schema.pair_count();
    let mut pooled = vec![Sums::zeros(p); schema.n_classes()];
    let mut per_fold = Vec::with_capacity(folds.len());
    for (model, rows) in folds {
        if model.schema != *schema {
            return Err(Error::Checkpoint("fold models were trained on different schemas".into()));
        }
        if rows.is_empty() {
            return Err(Error::InvalidArgument("interaction importance needs test samples".into()));
        }
        let sums = class_sums(model, rows)?;
        pooled = pooled.into_iter().zip(sums.iter().cloned()).map(|(a, b)| a.merge(b)).collect();
        per_fold.push(
            sums.into_iter()
                .enumerate()
                .map(|(c, s)| finish(schema, c, s))
                .collect(),
        );
    }
    Ok(InteractionReport {
        schema_hash: schema.hash(),
        per_fold,
        aggregate: pooled
            .into_iter()
            .enumerate()
            .map(|(c, s)| finish(schema, c, s))
            .collect(),
    })
}

fn csv_name(name: &str) -> String {
    if name.contains([',', '"']) {
        format!("\"{}\"", name.replace('"', "\"\""))
    } else {
        name.to_string()
    }
}

pub const REPORT_HEADER: &str = "class,name,mean_share,signed_mean,fold\n";

impl ImportanceReport {
    /// Mean-over-folds rows (`fold` = `mean`) followed by each fold's rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        for c in &self.classes {
            for e in &c.ranked {
                let _ = writeln!(out, "{},{},{:?},{:?},mean", c.class, csv_name(&e.column), e.mean_share, e.mean_weight);
            }
        }
        for f in 0..self.folds {
            for c in &self.classes {
                for e in &c.ranked {
                    let _ = writeln!(
                        out,
                        "{},{},{:?},{:?},{f}",
                        c.class,
                        csv_name(&e.column),
                        e.fold_shares[f],
                        e.fold_weights[f]
                    );
                }
            }
        }
        out
    }

    pub fn top_k_table(&self, k: usize) -> String {
        let mut out = String::new();
        for c in &self.classes {
            let shown: f64 = c.ranked.iter().take(k).map(|e| e.mean_share).sum();
            let _ = writeln!(
                out,
                "class {}: top {k} linear features ({:.1}% of total importance)",
                c.class,
                100.0 * shown
            );
            for (r, e) in c.ranked.iter().take(k).enumerate() {
                let _ = writeln!(out, "  {:>2}. {:<32} {:>+10.4} {:>6.2}%", r + 1, e.column, e.mean_weight, 100.0 * e.mean_share);
            }
        }
        out
    }
}

impl InteractionReport {
    /// Aggregate rows (`fold` = `all`) followed by each fold's rows; the
    /// remainder of the score appears under the name `rest`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        let mut emit = |classes: &[ClassInteractions], fold: &str| {
            for c in classes {
                for p in &c.pairs {
                    let _ = writeln!(out, "{},{},{:?},{:?},{fold}", c.class, csv_name(&p.name), p.mean_share, p.signed_mean);
                }
                let _ = writeln!(out, "{},rest,{:?},{:?},{fold}", c.class, c.rest_share, c.rest_signed_mean);
            }
        };
        emit(&self.aggregate, "all");
        for (f, classes) in self.per_fold.iter().enumerate() {
            emit(classes, &f.to_string());
        }
        out
    }

    pub fn top_k_table(&self, k: usize) -> String {
        let mut out = String::new();
        for c in &self.aggregate {
            let _ = writeln!(
                out,
                "class {}: top {k} interactions over {} samples (rest of model {:.1}%)",
                c.class,
                c.n_samples,
                100.0 * c.rest_share
            );
            for (r, p) in c.pairs.iter().take(k).enumerate() {
                let _ = writeln!(out, "  {:>2}. {:<48} {:>7.3}% {:>+10.4}", r + 1, p.name, 100.0 * p.mean_share, p.signed_mean);
            }
        }
        out
    }
}
