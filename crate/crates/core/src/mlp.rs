//! Deep head: ReLU hidden layers over the concatenated embeddings, followed by
//! a linear projection to C logits. Dropout (inverted) is applied to hidden
//! activations in training mode only.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major outputs × inputs.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    fn uniform(inputs: usize, outputs: usize, bound: f64, rng: &mut SeededRng) -> Self {
        let mut d = Self::zeros(inputs, outputs);
        for v in d.w.iter_mut() {
            *v = rng.random_range(-bound..=bound);
        }
        d
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.b.iter().enumerate().map(|(r, b)| {
            let row = &self.w[r * self.inputs..(r + 1) * self.inputs];
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }
}

#[derive(Debug)]
pub enum Mode<'a> {
    Eval,
    Train(&'a mut SeededRng),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpHead {
    pub hidden: Vec<Dense>,
    pub output: Dense,
    pub dropout: f64,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpTrace {
    pub input: Vec<f64>,
    /// Pre-activation of each hidden layer.
    pub pre: Vec<Vec<f64>>,
    /// Post-ReLU, post-dropout activation of each hidden layer.
    pub post: Vec<Vec<f64>>,
    /// Dropout multipliers (0 or 1/keep) per hidden layer; empty in eval mode.
    pub masks: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub hidden: Vec<Dense>,
    pub output: Dense,
    pub input: Vec<f64>,
}

impl MlpGrads {
    pub fn zeros_like(head: &MlpHead) -> Self {
        MlpGrads {
            hidden: head
                .hidden
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
            output: Dense::zeros(head.output.inputs, head.output.outputs),
            input: vec![0.0; head.input_width()],
        }
    }
}

impl MlpHead {
    /// He-uniform hidden layers, Glorot-uniform output projection, zero biases.
    /// Hidden sizes of 0 are skipped.
    pub fn init(input: usize, hidden: &[usize], classes: usize, dropout: f64, seed: u64) -> Result<Self> {
        if input == 0 || classes == 0 {
            return Err(Error::InvalidArgument("MLP needs positive input and output widths".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let sizes: Vec<usize> = hidden.iter().copied().filter(|&h| h > 0).collect();
        if sizes.is_empty() {
            return Err(Error::InvalidArgument("MLP needs at least one hidden layer".into()));
        }
        let mut rng = seeded(seed);
        let mut layers = Vec::new();
        let mut fan_in = input;
        for &h in &sizes {
            let bound = (6.0 / fan_in as f64).sqrt();
            layers.push(Dense::uniform(fan_in, h, bound, &mut rng));
            fan_in = h;
        }
        let bound = (6.0 / (fan_in + classes) as f64).sqrt();
        let output = Dense::uniform(fan_in, classes, bound, &mut rng);
        Ok(MlpHead {
            hidden: layers,
            output,
            dropout,
        })
    }

    pub fn zeros(input: usize, hidden: &[usize], classes: usize) -> Self {
        let mut layers = Vec::new();
        let mut fan_in = input;
        for &h in hidden.iter().filter(|&&h| h > 0) {
            layers.push(Dense::zeros(fan_in, h));
            fan_in = h;
        }
        MlpHead {
            hidden: layers,
            output: Dense::zeros(fan_in, classes),
            dropout: 0.0,
        }
    }

    pub fn input_width(&self) -> usize {
        self.hidden.first().map_or(self.output.inputs, |l| l.inputs)
    }

    pub fn forward(&self, input: &[f64], mode: Mode<'_>) -> Result<MlpTrace> {
        if input.len() != self.input_width() {
            return Err(Error::Shape(format!(
                "MLP input width {} but head expects {}",
                input.len(),
                self.input_width()
            )));
        }
        let keep = 1.0 - self.dropout;
        let mut rng = match mode {
            Mode::Train(rng) if self.dropout > 0.0 => Some(rng),
            _ => None,
        };
        let mut trace = MlpTrace {
            input: input.to_vec(),
            pre: Vec::with_capacity(self.hidden.len()),
            post: Vec::with_capacity(self.hidden.len()),
            masks: Vec::new(),
            output: Vec::new(),
        };
        let mut buf = Vec::new();
        for layer in &self.hidden {
            let x = trace.post.last().unwrap_or(&trace.input);
            layer.apply(x, &mut buf);
            let mut act: Vec<f64> = buf.iter().map(|&z| z.max(0.0)).collect();
            if let Some(rng) = rng.as_deref_mut() {
                let mask: Vec<f64> = (0..act.len())
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                act.iter_mut().zip(&mask).for_each(|(a, k)| *a *= k);
                trace.masks.push(mask);
            }
            trace.pre.push(buf.clone());
            trace.post.push(act);
        }
        let last = trace.post.last().unwrap_or(&trace.input);
        self.output.apply(last, &mut buf);
        trace.output = buf;
        Ok(trace)
    }

    pub fn backward(&self, trace: &MlpTrace, upstream: &[f64]) -> Result<MlpGrads> {
        if upstream.len() != self.output.outputs {
            return Err(Error::Shape(format!(
                "upstream has {} entries, expected {}",
                upstream.len(),
                self.output.outputs
            )));
        }
        if trace.pre.len() != self.hidden.len()
            || trace.input.len() != self.input_width()
            || !(trace.masks.is_empty() || trace.masks.len() == self.hidden.len())
            || trace
                .pre
                .iter()
                .zip(&self.hidden)
                .any(|(p, l)| p.len() != l.outputs)
            || trace
                .masks
                .iter()
                .zip(&self.hidden)
                .any(|(k, l)| k.len() != l.outputs)
        {
            return Err(Error::Shape("trace does not match this MLP".into()));
        }
        let mut g = MlpGrads::zeros_like(self);
        self.accumulate_backward(trace, upstream, &mut g);
        Ok(g)
    }

    /// Adds this sample's gradients into `g` (∂L/∂input is overwritten, not added).
    pub(crate) fn accumulate_backward(&self, trace: &MlpTrace, upstream: &[f64], g: &mut MlpGrads) {
        let last = trace.post.last().unwrap_or(&trace.input);
        let mut delta = vec![0.0; last.len()];
        accumulate_dense(&self.output, &mut g.output, last, upstream, &mut delta);
        for k in (0..self.hidden.len()).rev() {
            // through dropout and ReLU (subgradient 0 at 0)
            for (r, d) in delta.iter_mut().enumerate() {
                let mask = trace.masks.get(k).map_or(1.0, |m| m[r]);
                if trace.pre[k][r] <= 0.0 {
                    *d = 0.0;
                } else {
                    *d *= mask;
                }
            }
            let x = if k == 0 { &trace.input } else { &trace.post[k - 1] };
            let mut next = vec![0.0; x.len()];
            accumulate_dense(&self.hidden[k], &mut g.hidden[k], x, &delta, &mut next);
            delta = next;
        }
        g.input = delta;
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        for (k, l) in self.hidden.iter().chain(std::iter::once(&self.output)).enumerate() {
            if l.w.iter().chain(&l.b).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("MLP layer {k}")));
            }
        }
        Ok(())
    }
}

fn accumulate_dense(layer: &Dense, grad: &mut Dense, x: &[f64], delta: &[f64], dx: &mut [f64]) {
    for (r, &d) in delta.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        grad.b[r] += d;
        let row = &layer.w[r * layer.inputs..(r + 1) * layer.inputs];
        let grow = &mut grad.w[r * layer.inputs..(r + 1) * layer.inputs];
        for c in 0..layer.inputs {
            grow[c] += d * x[c];
            dx[c] += d * row[c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MlpHead {
        let mut h = MlpHead::init(4, &[3, 3], 2, 0.0, 42).unwrap();
        // nonzero biases so ReLU gates vary
        for (k, l) in h.hidden.iter_mut().enumerate() {
            for (r, b) in l.b.iter_mut().enumerate() {
                *b = 0.1 * (r as f64 + 1.0) - 0.05 * k as f64;
            }
        }
        h.output.b = vec![0.2, -0.3];
        h
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut h = MlpHead::zeros(4, &[3, 2], 3);
        h.output.b = vec![1.0, -2.0, 0.5];
        let t = h.forward(&[0.3, -1.0, 2.0, 5.0], Mode::Eval).unwrap();
        assert_eq!(t.output, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn negative_preactivations_kill_hidden() {
        let mut h = small();
        for l in &mut h.hidden {
            l.w.iter_mut().for_each(|w| *w = 0.0);
            l.b.iter_mut().for_each(|b| *b = -1.0);
        }
        let t = h.forward(&[1.0, 2.0, 3.0, 4.0], Mode::Eval).unwrap();
        assert!(t.post.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(t.output, h.output.b);
    }

    #[test]
    fn hand_sized_matches_matrix_oracle() {
        // n = 2, m = 2 → input 4; h1 = h2 = 2; C = 2
        let h = MlpHead {
            hidden: vec![
                Dense {
                    inputs: 4,
                    outputs: 2,
                    w: vec![0.5, -0.2, 0.1, 0.3, -0.4, 0.6, 0.2, -0.1],
                    b: vec![0.05, -0.02],
                },
                Dense {
                    inputs: 2,
                    outputs: 2,
                    w: vec![1.0, -0.5, 0.25, 0.75],
                    b: vec![0.0, 0.1],
                },
            ],
            output: Dense {
                inputs: 2,
                outputs: 2,
                w: vec![0.3, -0.6, 0.9, 0.4],
                b: vec![0.01, -0.01],
            },
            dropout: 0.0,
        };
        let e = [1.0, 2.0, -1.0, 0.5];
        // layer 1
        let z1: [f64; 2] = [
            0.5 * 1.0 - 0.2 * 2.0 + 0.1 * -1.0 + 0.3 * 0.5 + 0.05,
            -0.4 * 1.0 + 0.6 * 2.0 + 0.2 * -1.0 - 0.1 * 0.5 - 0.02,
        ];
        let h1 = [z1[0].max(0.0), z1[1].max(0.0)];
        let z2: [f64; 2] = [1.0 * h1[0] - 0.5 * h1[1], 0.25 * h1[0] + 0.75 * h1[1] + 0.1];
        let h2 = [z2[0].max(0.0), z2[1].max(0.0)];
        let y = [
            0.3 * h2[0] - 0.6 * h2[1] + 0.01,
            0.9 * h2[0] + 0.4 * h2[1] - 0.01,
        ];
        let mut rng = seeded(0);
        let t = h.forward(&e, Mode::Train(&mut rng)).unwrap();
        for c in 0..2 {
            assert!((t.output[c] - y[c]).abs() < 1e-12);
        }
        assert!(t.masks.is_empty());
    }

    #[test]
    fn shape_errors() {
        let h = small();
        assert!(h.forward(&[1.0; 3], Mode::Eval).is_err());
        let t = h.forward(&[1.0; 4], Mode::Eval).unwrap();
        assert!(h.backward(&t, &[1.0]).is_err());
        let mut bad = t.clone();
        bad.masks = vec![vec![1.0; 2]];
        assert!(h.backward(&bad, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let h = small();
        let t = h.forward(&[0.5, -0.5, 1.0, 2.0], Mode::Eval).unwrap();
        let g = h.backward(&t, &[0.0, 0.0]).unwrap();
        for l in g.hidden.iter().chain(std::iter::once(&g.output)) {
            assert!(l.w.iter().chain(&l.b).all(|&v| v == 0.0));
        }
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dead_unit_has_zero_incoming_gradient() {
        let mut h = small();
        // unit 1 of the first layer: strongly negative bias
        h.hidden[0].b[1] = -100.0;
        let t = h.forward(&[0.5, -0.5, 1.0, 2.0], Mode::Eval).unwrap();
        let g = h.backward(&t, &[1.0, -1.0]).unwrap();
        assert!(g.hidden[0].w[4..8].iter().all(|&v| v == 0.0));
        assert_eq!(g.hidden[0].b[1], 0.0);
    }

    fn params_mut(h: &mut MlpHead) -> Vec<&mut f64> {
        h.hidden
            .iter_mut()
            .chain(std::iter::once(&mut h.output))
            .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
            .collect()
    }

    fn flat_grads(g: &MlpGrads) -> Vec<f64> {
        g.hidden
            .iter()
            .chain(std::iter::once(&g.output))
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..5 {
            let mut h = MlpHead::init(4, &[5, 3], 3, 0.0, seed).unwrap();
            for l in &mut h.hidden {
                l.b.iter_mut().for_each(|b| *b = 0.1);
            }
            let x = [0.7, -0.3, 1.1, 0.4];
            let up = [0.5, -1.0, 0.25];
            let obj = |h: &MlpHead, x: &[f64]| -> f64 {
                let t = h.forward(x, Mode::Eval).unwrap();
                t.output.iter().zip(&up).map(|(a, b)| a * b).sum()
            };
            let t = h.forward(&x, Mode::Eval).unwrap();
            let g = h.backward(&t, &up).unwrap();
            let an = flat_grads(&g);
            let step = 1e-5;
            let count = an.len();
            for k in 0..count {
                let mut p = h.clone();
                *params_mut(&mut p)[k] += step;
                let mut q = h.clone();
                *params_mut(&mut q)[k] -= step;
                let fd = (obj(&p, &x) - obj(&q, &x)) / (2.0 * step);
                let rel = (fd - an[k]).abs() / fd.abs().max(an[k].abs()).max(1e-7);
                assert!(rel < 1e-5, "param {k}: fd {fd} an {}", an[k]);
            }
            for c in 0..4 {
                let mut xp = x;
                xp[c] += step;
                let mut xm = x;
                xm[c] -= step;
                let fd = (obj(&h, &xp) - obj(&h, &xm)) / (2.0 * step);
                let rel = (fd - g.input[c]).abs() / fd.abs().max(g.input[c].abs()).max(1e-7);
                assert!(rel < 1e-5, "input {c}");
            }
        }
    }

    #[test]
    fn train_mode_is_deterministic() {
        let mut h = small();
        h.dropout = 0.4;
        let x = [0.5, -0.5, 1.0, 2.0];
        let mut r1 = seeded(9);
        let mut r2 = seeded(9);
        let a = h.forward(&x, Mode::Train(&mut r1)).unwrap();
        let b = h.forward(&x, Mode::Train(&mut r2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.masks.len(), 2);
    }

    #[test]
    fn dropout_mean_matches_eval() {
        // Positive weights, biases and inputs keep every ReLU in its linear
        // regime under any mask, so inverted dropout is unbiased exactly.
        let mut h = MlpHead::init(4, &[6, 5], 2, 0.3, 3).unwrap();
        for l in &mut h.hidden {
            l.w.iter_mut().for_each(|w| *w = w.abs());
            l.b.iter_mut().for_each(|b| *b = 0.3);
        }
        let x = [0.5, 0.2, 1.0, 2.0];
        let eval = h.forward(&x, Mode::Eval).unwrap().output;
        let mut rng = seeded(77);
        let trials = 20_000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..trials {
            let o = h.forward(&x, Mode::Train(&mut rng)).unwrap().output;
            for c in 0..2 {
                sum[c] += o[c];
                sq[c] += o[c] * o[c];
            }
        }
        for c in 0..2 {
            let mean = sum[c] / trials as f64;
            let var = sq[c] / trials as f64 - mean * mean;
            let se = (var / trials as f64).sqrt();
            assert!((mean - eval[c]).abs() < 3.0 * se, "class {c}: {mean} vs {eval:?}");
        }
    }
}
