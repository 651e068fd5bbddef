use serde::{Deserialize, Serialize};

use super::{cross_entropy, softmax, ParamGroup, Trainable, TrainConfig};
use crate::data::FeatureSchema;
use crate::embedding::{EmbeddingBank, Embeddings};
use crate::error::{Error, Result};
use crate::fm::FmHead;
use crate::mlp::{MlpGrads, MlpHead, MlpTrace, Mode};
use crate::rng::{derive_seed, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    DeepFm,
    FmOnly,
    DnnOnly,
}

impl Variant {
    pub fn has_fm(self) -> bool {
        !matches!(self, Variant::DnnOnly)
    }

    pub fn has_mlp(self) -> bool {
        !matches!(self, Variant::FmOnly)
    }
}

/// Shared embedding bank feeding an FM head and/or an MLP head; class scores
/// are the sum of the present heads' outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepFmModel {
    pub schema: FeatureSchema,
    pub variant: Variant,
    pub bank: EmbeddingBank,
    pub fm: Option<FmHead>,
    pub mlp: Option<MlpHead>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepFmGrads {
    pub bank: Vec<f64>,
    pub fm_w0: Vec<f64>,
    pub fm_w: Vec<f64>,
    pub fm_v: Vec<f64>,
    pub mlp: Option<MlpGrads>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub embeddings: Embeddings,
    pub fm_scores: Option<Vec<f64>>,
    pub mlp_trace: Option<MlpTrace>,
    pub scores: Vec<f64>,
}

impl DeepFmModel {
    pub fn new(
        schema: &FeatureSchema,
        variant: Variant,
        m: usize,
        hidden: &[usize],
        dropout: f64,
        seed: u64,
    ) -> Result<Self> {
        let bank = EmbeddingBank::init(schema, m, derive_seed(seed, &[0]))?;
        let fm = variant.has_fm().then(|| FmHead::new(schema, m));
        let mlp = if variant.has_mlp() {
            let layers = hidden.iter().filter(|&&h| h > 0).count();
            let allowed = match variant {
                Variant::DeepFm => layers == 2,
                _ => (1..=3).contains(&layers),
            };
            if !allowed {
                return Err(Error::InvalidArgument(format!(
                    "{variant:?} cannot use hidden sizes {hidden:?}"
                )));
            }
            Some(MlpHead::init(
                schema.n_features() * m,
                hidden,
                schema.n_classes(),
                dropout,
                derive_seed(seed, &[1]),
            )?)
        } else {
            None
        };
        Ok(DeepFmModel {
            schema: schema.clone(),
            variant,
            bank,
            fm,
            mlp,
        })
    }

    pub fn from_config(schema: &FeatureSchema, variant: Variant, config: &TrainConfig) -> Result<Self> {
        Self::new(
            schema,
            variant,
            config.embedding_len,
            &config.hidden,
            config.dropout,
            derive_seed(config.seed, &[0xde_e9]),
        )
    }

    /// Every parameter zero (the metric v included).
    pub fn zeros(schema: &FeatureSchema, variant: Variant, m: usize, hidden: &[usize]) -> Result<Self> {
        let bank = EmbeddingBank::zeros(schema, m)?;
        let fm = variant.has_fm().then(|| {
            let mut h = FmHead::new(schema, m);
            h.v.iter_mut().for_each(|v| *v = 0.0);
            h
        });
        let mlp = variant
            .has_mlp()
            .then(|| MlpHead::zeros(schema.n_features() * m, hidden, schema.n_classes()));
        Ok(DeepFmModel {
            schema: schema.clone(),
            variant,
            bank,
            fm,
            mlp,
        })
    }

    pub fn m(&self) -> usize {
        self.bank.m()
    }

    pub fn forward(&self, x: &[f64], rng: Option<&mut SeededRng>) -> Result<ForwardPass> {
        let embeddings = self.bank.embed(x)?;
        let c = self.schema.n_classes();
        let mut scores = vec![0.0; c];
        let fm_scores = match &self.fm {
            Some(fm) => {
                let s = fm.forward(x, &embeddings)?;
                scores.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
                Some(s)
            }
            None => None,
        };
        let mlp_trace = match &self.mlp {
            Some(mlp) => {
                let mode = match rng {
                    Some(r) => Mode::Train(r),
                    None => Mode::Eval,
                };
                let t = mlp.forward(&embeddings.data, mode)?;
                scores.iter_mut().zip(&t.output).for_each(|(a, b)| *a += b);
                Some(t)
            }
            None => None,
        };
        Ok(ForwardPass {
            embeddings,
            fm_scores,
            mlp_trace,
            scores,
        })
    }

    /// Deep-head score for each class (zeros when the variant has no MLP).
    pub fn dnn_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .forward(x, None)?
            .mlp_trace
            .map(|t| t.output)
            .unwrap_or_else(|| vec![0.0; self.schema.n_classes()]))
    }

    pub fn check_finite(&self) -> Result<()> {
        self.bank.check_finite()?;
        if let Some(fm) = &self.fm {
            fm.check_finite()?;
        }
        if let Some(mlp) = &self.mlp {
            mlp.check_finite()?;
        }
        Ok(())
    }

    /// Class probabilities softmax(ŷ_FM + ŷ_DNN).
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let s = self.scores(x)?;
        if s.iter().any(|v| !v.is_finite()) {
            let diag = match self.check_finite() {
                Err(e) => e.to_string(),
                Ok(()) => "all parameters finite; input or intermediate overflow".into(),
            };
            return Err(Error::NonFinite(format!("class scores {s:?} ({diag})")));
        }
        Ok(softmax(&s))
    }
}

impl Trainable for DeepFmModel {
    type Grads = DeepFmGrads;

    fn n_classes(&self) -> usize {
        self.schema.n_classes()
    }

    fn input_width(&self) -> usize {
        self.schema.raw_width()
    }

    fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x, None)?.scores)
    }

    fn groups(&self) -> Vec<ParamGroup> {
        let mut g = vec![ParamGroup {
            name: "embeddings",
            len: self.bank.params().len(),
            regularized: true,
        }];
        if let Some(fm) = &self.fm {
            g.push(ParamGroup { name: "fm_bias", len: fm.w0.len(), regularized: false });
            g.push(ParamGroup { name: "fm_linear", len: fm.w.len(), regularized: true });
            g.push(ParamGroup { name: "fm_metric", len: fm.v.len(), regularized: true });
        }
        if let Some(mlp) = &self.mlp {
            for l in mlp.hidden.iter().chain(std::iter::once(&mlp.output)) {
                g.push(ParamGroup { name: "mlp_weight", len: l.w.len(), regularized: true });
                g.push(ParamGroup { name: "mlp_bias", len: l.b.len(), regularized: false });
            }
        }
        g
    }

    fn params(&self) -> Vec<&[f64]> {
        let mut p: Vec<&[f64]> = vec![self.bank.params()];
        if let Some(fm) = &self.fm {
            p.extend([fm.w0.as_slice(), &fm.w, &fm.v]);
        }
        if let Some(mlp) = &self.mlp {
            for l in mlp.hidden.iter().chain(std::iter::once(&mlp.output)) {
                p.extend([l.w.as_slice(), &l.b]);
            }
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p: Vec<&mut [f64]> = vec![self.bank.params_mut()];
        if let Some(fm) = &mut self.fm {
            p.push(&mut fm.w0);
            p.push(&mut fm.w);
            p.push(&mut fm.v);
        }
        if let Some(mlp) = &mut self.mlp {
            for l in mlp.hidden.iter_mut().chain(std::iter::once(&mut mlp.output)) {
                p.push(&mut l.w);
                p.push(&mut l.b);
            }
        }
        p
    }

    fn new_grads(&self) -> DeepFmGrads {
        let (w0, w, v) = match &self.fm {
            Some(fm) => (vec![0.0; fm.w0.len()], vec![0.0; fm.w.len()], vec![0.0; fm.v.len()]),
            None => (Vec::new(), Vec::new(), Vec::new()),
        };
        DeepFmGrads {
            bank: vec![0.0; self.bank.params().len()],
            fm_w0: w0,
            fm_w: w,
            fm_v: v,
            mlp: self.mlp.as_ref().map(MlpGrads::zeros_like),
        }
    }

    fn grad_slices<'g>(&self, g: &'g DeepFmGrads) -> Vec<&'g [f64]> {
        let mut out: Vec<&[f64]> = vec![&g.bank];
        if self.fm.is_some() {
            out.extend([g.fm_w0.as_slice(), &g.fm_w, &g.fm_v]);
        }
        if let Some(mg) = &g.mlp {
            for l in mg.hidden.iter().chain(std::iter::once(&mg.output)) {
                out.extend([l.w.as_slice(), &l.b]);
            }
        }
        out
    }

    fn grad_slices_mut<'g>(&self, g: &'g mut DeepFmGrads) -> Vec<&'g mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut g.bank];
        if self.fm.is_some() {
            out.push(&mut g.fm_w0);
            out.push(&mut g.fm_w);
            out.push(&mut g.fm_v);
        }
        if let Some(mg) = &mut g.mlp {
            for l in mg.hidden.iter_mut().chain(std::iter::once(&mut mg.output)) {
                out.push(&mut l.w);
                out.push(&mut l.b);
            }
        }
        out
    }

    fn accumulate(
        &self,
        x: &[f64],
        label: usize,
        weight: f64,
        rng: Option<&mut SeededRng>,
        g: &mut DeepFmGrads,
    ) -> Result<f64> {
        let pass = self.forward(x, rng)?;
        let ce = cross_entropy(&pass.scores, label);
        let mut upstream = softmax(&pass.scores);
        upstream[label] -= 1.0;
        upstream.iter_mut().for_each(|u| *u *= weight);

        let mut ge = Embeddings::zeros(pass.embeddings.n, pass.embeddings.m);
        if let Some(fm) = &self.fm {
            fm.accumulate_backward(
                x,
                &pass.embeddings,
                &upstream,
                &mut g.fm_w0,
                &mut g.fm_w,
                &mut g.fm_v,
                &mut ge,
            );
        }
        if let (Some(mlp), Some(trace), Some(mg)) = (&self.mlp, &pass.mlp_trace, &mut g.mlp) {
            mlp.accumulate_backward(trace, &upstream, mg);
            ge.data.iter_mut().zip(&mg.input).for_each(|(a, b)| *a += b);
        }
        self.bank.accumulate_grad(x, &ge, &mut g.bank);
        Ok(ce)
    }
}
