use serde::{Deserialize, Serialize};

use super::{cross_entropy, softmax, ParamGroup, Trainable};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Multinomial logistic regression over `[x, x_a·x_b for a < b]`, or over `x`
/// alone when `interactions` is false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearInteractionModel {
    pub width: usize,
    pub n_classes: usize,
    pub interactions: bool,
    pub bias: Vec<f64>,
    /// Row-major C × expanded width.
    pub weights: Vec<f64>,
}

pub fn expanded_width(width: usize, interactions: bool) -> usize {
    if interactions {
        width + width * width.saturating_sub(1) / 2
    } else {
        width
    }
}

impl LinearInteractionModel {
    pub fn zeros(width: usize, n_classes: usize, interactions: bool) -> Self {
        LinearInteractionModel {
            width,
            n_classes,
            interactions,
            bias: vec![0.0; n_classes],
            weights: vec![0.0; n_classes * expanded_width(width, interactions)],
        }
    }

    pub fn expanded_width(&self) -> usize {
        expanded_width(self.width, self.interactions)
    }

    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.expanded_width());
        out.extend_from_slice(x);
        if self.interactions {
            for a in 0..x.len() {
                for b in a + 1..x.len() {
                    out.push(x[a] * x[b]);
                }
            }
        }
        out
    }

    /// Name of each expanded column given the raw column names.
    pub fn expanded_names(&self, columns: &[String]) -> Vec<String> {
        let mut out = columns.to_vec();
        if self.interactions {
            for a in 0..columns.len() {
                for b in a + 1..columns.len() {
                    out.push(format!("{} × {}", columns[a], columns[b]));
                }
            }
        }
        out
    }

    fn scores_expanded(&self, z: &[f64]) -> Vec<f64> {
        let e = self.expanded_width();
        (0..self.n_classes)
            .map(|c| {
                self.bias[c]
                    + self.weights[c * e..(c + 1) * e]
                        .iter()
                        .zip(z)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub bias: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Trainable for LinearInteractionModel {
    type Grads = LinearGrads;

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn input_width(&self) -> usize {
        self.width
    }

    fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.width {
            return Err(Error::Shape(format!(
                "input width {} but model expects {}",
                x.len(),
                self.width
            )));
        }
        Ok(self.scores_expanded(&self.expand(x)))
    }

    fn groups(&self) -> Vec<ParamGroup> {
        vec![
            ParamGroup { name: "bias", len: self.bias.len(), regularized: false },
            ParamGroup { name: "weights", len: self.weights.len(), regularized: true },
        ]
    }

    fn params(&self) -> Vec<&[f64]> {
        vec![&self.bias, &self.weights]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.bias, &mut self.weights]
    }

    fn new_grads(&self) -> LinearGrads {
        LinearGrads {
            bias: vec![0.0; self.bias.len()],
            weights: vec![0.0; self.weights.len()],
        }
    }

    fn grad_slices<'g>(&self, g: &'g LinearGrads) -> Vec<&'g [f64]> {
        vec![&g.bias, &g.weights]
    }

    fn grad_slices_mut<'g>(&self, g: &'g mut LinearGrads) -> Vec<&'g mut [f64]> {
        vec![&mut g.bias, &mut g.weights]
    }

    fn accumulate(
        &self,
        x: &[f64],
        label: usize,
        weight: f64,
        _rng: Option<&mut SeededRng>,
        g: &mut LinearGrads,
    ) -> Result<f64> {
        if x.len() != self.width {
            return Err(Error::Shape("input width mismatch".into()));
        }
        let z = self.expand(x);
        let s = self.scores_expanded(&z);
        let ce = cross_entropy(&s, label);
        let mut p = softmax(&s);
        p[label] -= 1.0;
        let e = z.len();
        for (c, pc) in p.iter().enumerate() {
            let gc = pc * weight;
            if gc == 0.0 {
                continue;
            }
            g.bias[c] += gc;
            for (gw, zv) in g.weights[c * e..(c + 1) * e].iter_mut().zip(&z) {
                *gw += gc * zv;
            }
        }
        Ok(ce)
    }
}
