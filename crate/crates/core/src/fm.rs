//! Factorization-machine head.
//!
//! Per class c the score is
//!
//! ```text
//! ŷᶜ = w0ᶜ + Σ_d wᶜ_d x_d + Σ_{i<j} Σ_f vᶜ_f u_{i,f} u_{j,f}
//! ```
//!
//! where `u_i = e_i` by default. The pairwise sum is evaluated in O(m·n) as
//! `Σ_f vᶜ_f · ½[(Σ_i u_{i,f})² − Σ_i u_{i,f}²]`; the bracket is shared by all
//! classes. [`InteractionMode::Literal`] additionally scales each embedding by
//! the feature's scalar value (the sum of its input slice), reproducing the
//! `⟨e_i, e_j⟩ x_i x_j` form literally.

use serde::{Deserialize, Serialize};

use crate::data::FeatureSchema;
use crate::embedding::Embeddings;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    /// Σ_{i<j} ⟨e_i, e_j⟩_v
    #[default]
    Embedding,
    /// Σ_{i<j} ⟨e_i, e_j⟩_v · s_i s_j with s_i the sum of feature i's input slice.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmHead {
    pub n_classes: usize,
    pub width: usize,
    pub m: usize,
    pub mode: InteractionMode,
    /// Per-class bias, length C.
    pub w0: Vec<f64>,
    /// Per-class linear weights, row-major C × D.
    pub w: Vec<f64>,
    /// Per-class diagonal interaction metric, row-major C × m.
    pub v: Vec<f64>,
    col_offsets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmGrads {
    pub w0: Vec<f64>,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub e: Embeddings,
}

impl FmHead {
    /// Zero bias and linear weights, all-ones interaction metric.
    pub fn new(schema: &FeatureSchema, m: usize) -> Self {
        let c = schema.n_classes();
        let d = schema.raw_width();
        let col_offsets = (0..=schema.n_features())
            .map(|i| if i < schema.n_features() { schema.slice(i).start } else { d })
            .collect();
        FmHead {
            n_classes: c,
            width: d,
            m,
            mode: InteractionMode::Embedding,
            w0: vec![0.0; c],
            w: vec![0.0; c * d],
            v: vec![1.0; c * m],
            col_offsets,
        }
    }

    pub fn n_features(&self) -> usize {
        self.col_offsets.len() - 1
    }

    pub fn class_weights(&self, c: usize) -> &[f64] {
        &self.w[c * self.width..(c + 1) * self.width]
    }

    pub fn class_metric(&self, c: usize) -> &[f64] {
        &self.v[c * self.m..(c + 1) * self.m]
    }

    fn check(&self, x: &[f64], e: &Embeddings) -> Result<()> {
        if x.len() != self.width {
            return Err(Error::Shape(format!(
                "FM input width {} but head expects {}",
                x.len(),
                self.width
            )));
        }
        if e.n != self.n_features() || e.m != self.m {
            return Err(Error::Shape(format!(
                "FM got {}×{} embeddings, expected {}×{}",
                e.n,
                e.m,
                self.n_features(),
                self.m
            )));
        }
        Ok(())
    }

    fn feature_scales(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_features())
            .map(|i| x[self.col_offsets[i]..self.col_offsets[i + 1]].iter().sum())
            .collect()
    }

    /// The vectors u_i entering the pairwise term.
    pub fn interaction_vectors(&self, x: &[f64], e: &Embeddings) -> Embeddings {
        match self.mode {
            InteractionMode::Embedding => e.clone(),
            InteractionMode::Literal => {
                let s = self.feature_scales(x);
                let mut u = e.clone();
                for (i, si) in s.iter().enumerate() {
                    u.get_mut(i).iter_mut().for_each(|v| *v *= si);
                }
                u
            }
        }
    }

    /// ½[(Σ_i u_{i,f})² − Σ_i u_{i,f}²] per embedding dimension, plus Σ_i u_{i,f}.
    fn factor_sums(u: &Embeddings) -> (Vec<f64>, Vec<f64>) {
        let mut sum = vec![0.0; u.m];
        let mut sq = vec![0.0; u.m];
        for i in 0..u.n {
            for (f, &v) in u.get(i).iter().enumerate() {
                sum[f] += v;
                sq[f] += v * v;
            }
        }
        let half: Vec<f64> = sum
            .iter()
            .zip(&sq)
            .map(|(s, q)| 0.5 * (s * s - q))
            .collect();
        (half, sum)
    }

    /// Pairwise term per class, computed in O(m·n).
    pub fn interaction(&self, x: &[f64], e: &Embeddings) -> Result<Vec<f64>> {
        self.check(x, e)?;
        let u = self.interaction_vectors(x, e);
        let (half, _) = Self::factor_sums(&u);
        Ok((0..self.n_classes)
            .map(|c| self.class_metric(c).iter().zip(&half).map(|(v, h)| v * h).sum())
            .collect())
    }

    /// Linear part w0ᶜ + wᶜ·x per class.
    pub fn linear(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| {
                self.w0[c]
                    + self
                        .class_weights(c)
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64], e: &Embeddings) -> Result<Vec<f64>> {
        let inter = self.interaction(x, e)?;
        Ok(self
            .linear(x)
            .into_iter()
            .zip(inter)
            .map(|(l, i)| l + i)
            .collect())
    }

    /// pᶜ_ij = Σ_f vᶜ_f u_{i,f} u_{j,f}.
    pub fn pair_contribution(
        &self,
        x: &[f64],
        e: &Embeddings,
        i: usize,
        j: usize,
        c: usize,
    ) -> Result<f64> {
        self.check(x, e)?;
        let n = self.n_features();
        if i >= j || j >= n || c >= self.n_classes {
            return Err(Error::InvalidArgument(format!(
                "pair ({i}, {j}) class {c} invalid for n = {n}, C = {}",
                self.n_classes
            )));
        }
        let u = self.interaction_vectors(x, e);
        Ok(weighted_dot(self.class_metric(c), u.get(i), u.get(j)))
    }

    /// All pᶜ_ij for i < j in row-major (i, j) order.
    pub fn pair_contributions(&self, x: &[f64], e: &Embeddings, c: usize) -> Result<Vec<f64>> {
        self.check(x, e)?;
        if c >= self.n_classes {
            return Err(Error::InvalidArgument(format!("class {c} out of range")));
        }
        let u = self.interaction_vectors(x, e);
        let v = self.class_metric(c);
        // Pre-weight u_i by v so each pair is a plain dot product.
        let weighted: Vec<Vec<f64>> = (0..u.n)
            .map(|i| u.get(i).iter().zip(v).map(|(a, b)| a * b).collect())
            .collect();
        let n = u.n;
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push(weighted[i].iter().zip(u.get(j)).map(|(a, b)| a * b).sum());
            }
        }
        Ok(out)
    }

    pub fn backward(&self, x: &[f64], e: &Embeddings, upstream: &[f64]) -> Result<FmGrads> {
        self.check(x, e)?;
        if upstream.len() != self.n_classes {
            return Err(Error::Shape(format!(
                "upstream has {} entries, expected {}",
                upstream.len(),
                self.n_classes
            )));
        }
        let mut g = FmGrads {
            w0: vec![0.0; self.w0.len()],
            w: vec![0.0; self.w.len()],
            v: vec![0.0; self.v.len()],
            e: Embeddings::zeros(e.n, e.m),
        };
        self.accumulate_backward(x, e, upstream, &mut g.w0, &mut g.w, &mut g.v, &mut g.e);
        Ok(g)
    }

    /// Adds this sample's gradients into the provided buffers; shapes are trusted.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn accumulate_backward(
        &self,
        x: &[f64],
        e: &Embeddings,
        upstream: &[f64],
        g_w0: &mut [f64],
        g_w: &mut [f64],
        g_v: &mut [f64],
        g_e: &mut Embeddings,
    ) {
        let u = self.interaction_vectors(x, e);
        let (half, sum) = Self::factor_sums(&u);
        // Effective metric Σ_c gᶜ vᶜ_f, shared by every embedding gradient.
        let mut metric = vec![0.0; self.m];
        for (c, &gc) in upstream.iter().enumerate() {
            if gc == 0.0 {
                continue;
            }
            g_w0[c] += gc;
            for (gw, &xv) in g_w[c * self.width..(c + 1) * self.width].iter_mut().zip(x) {
                *gw += gc * xv;
            }
            let vc = self.class_metric(c);
            for f in 0..self.m {
                g_v[c * self.m + f] += gc * half[f];
                metric[f] += gc * vc[f];
            }
        }
        let scales = match self.mode {
            InteractionMode::Embedding => None,
            InteractionMode::Literal => Some(self.feature_scales(x)),
        };
        for i in 0..u.n {
            let s = scales.as_ref().map_or(1.0, |s| s[i]);
            let ui = u.get(i);
            let ge = g_e.get_mut(i);
            for f in 0..self.m {
                ge[f] += s * metric[f] * (sum[f] - ui[f]);
            }
        }
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        for (name, vals) in [("w0", &self.w0), ("w", &self.w), ("v", &self.v)] {
            if let Some(k) = vals.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("FM {name}[{k}]")));
            }
        }
        Ok(())
    }
}

fn weighted_dot(v: &[f64], a: &[f64], b: &[f64]) -> f64 {
    v.iter().zip(a).zip(b).map(|((v, a), b)| v * a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSpec;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn scalar_schema(n: usize, classes: usize) -> FeatureSchema {
        FeatureSchema::new(
            (0..n).map(|i| FeatureSpec::continuous(&format!("f{i}"))).collect(),
            (0..classes.max(2)).map(|c| format!("c{c}")).collect(),
        )
        .unwrap()
    }

    fn naive_interaction(v: &[f64], u: &Embeddings) -> f64 {
        let mut acc = 0.0;
        for i in 0..u.n {
            for j in i + 1..u.n {
                for f in 0..u.m {
                    acc += v[f] * u.get(i)[f] * u.get(j)[f];
                }
            }
        }
        acc
    }

    fn random_instance(n: usize, m: usize, c: usize, seed: u64) -> (FmHead, Vec<f64>, Embeddings) {
        let mut rng = seeded(seed);
        let schema = scalar_schema(n, c);
        let mut head = FmHead::new(&schema, m);
        head.n_classes = c;
        head.w0 = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
        head.w = (0..c * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        head.v = (0..c * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let e = Embeddings {
            n,
            m,
            data: (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        (head, x, e)
    }

    #[test]
    fn hand_chosen_matches_double_loop() {
        let schema = scalar_schema(3, 2);
        let head = FmHead::new(&schema, 2);
        let e = Embeddings::from_vectors(&[vec![1.0, 2.0], vec![-0.5, 3.0], vec![4.0, -1.0]]);
        // pairs: (1·-0.5 + 2·3) + (1·4 + 2·-1) + (-0.5·4 + 3·-1) = 5.5 + 2 - 5 = 2.5
        let inter = head.interaction(&[0.0; 3], &e).unwrap();
        assert_eq!(inter, vec![2.5, 2.5]);
        assert!((naive_interaction(&[1.0, 1.0], &e) - 2.5).abs() < 1e-10);
    }

    #[test]
    fn zero_embeddings_is_linear_model() {
        let (mut head, x, _) = random_instance(4, 3, 3, 1);
        head.v = vec![7.0; 9];
        let scores = head.forward(&x, &Embeddings::zeros(4, 3)).unwrap();
        for c in 0..3 {
            let lin: f64 = head.w0[c] + (0..4).map(|d| head.w[c * 4 + d] * x[d]).sum::<f64>();
            assert!((scores[c] - lin).abs() < 1e-14);
        }
    }

    #[test]
    fn single_feature_has_no_interaction() {
        let (head, x, e) = random_instance(1, 5, 2, 4);
        assert_eq!(head.interaction(&x, &e).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn orthogonal_pair_contributes_nothing() {
        let schema = scalar_schema(2, 2);
        let head = FmHead::new(&schema, 2);
        let e = Embeddings::from_vectors(&[vec![1.0, 0.0], vec![0.0, 3.0]]);
        assert_eq!(head.pair_contribution(&[1.0, 1.0], &e, 0, 1, 0).unwrap(), 0.0);
    }

    #[test]
    fn pair_index_errors() {
        let (head, x, e) = random_instance(3, 2, 2, 0);
        assert!(head.pair_contribution(&x, &e, 1, 1, 0).is_err());
        assert!(head.pair_contribution(&x, &e, 0, 3, 0).is_err());
        assert!(head.pair_contribution(&x, &e, 0, 1, 2).is_err());
    }

    #[test]
    fn shape_errors() {
        let (head, x, e) = random_instance(3, 2, 2, 0);
        assert!(head.forward(&x[..2], &e).is_err());
        assert!(head.forward(&x, &Embeddings::zeros(3, 3)).is_err());
        assert!(head.backward(&x, &e, &[1.0]).is_err());
    }

    #[test]
    fn pair_sum_109_features() {
        let (head, x, e) = random_instance(109, 6, 3, 17);
        let inter = head.interaction(&x, &e).unwrap();
        for c in 0..3 {
            let pairs = head.pair_contributions(&x, &e, c).unwrap();
            assert_eq!(pairs.len(), 5886);
            let total: f64 = pairs.iter().sum();
            assert!((total - inter[c]).abs() < 1e-9);
        }
    }

    #[test]
    fn pair_matches_direct_summation() {
        let (head, x, e) = random_instance(5, 4, 2, 8);
        let all = head.pair_contributions(&x, &e, 1).unwrap();
        let mut k = 0;
        for i in 0..5 {
            for j in i + 1..5 {
                let mut direct = 0.0;
                for f in 0..4 {
                    direct += head.v[4 + f] * e.get(i)[f] * e.get(j)[f];
                }
                assert!((all[k] - direct).abs() < 1e-12);
                assert!((head.pair_contribution(&x, &e, i, j, 1).unwrap() - direct).abs() < 1e-12);
                k += 1;
            }
        }
    }

    #[test]
    fn classical_fm_reproduced_for_scalar_features() {
        // e_i = a_i x_i for scalar features; with v = 1 the pairwise sum is Σ⟨a_i,a_j⟩x_i x_j.
        let mut rng = seeded(5);
        let n = 6;
        let m = 3;
        let schema = scalar_schema(n, 1);
        let mut head = FmHead::new(&schema, m);
        head.w0 = vec![0.3; head.n_classes];
        let a: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let e = Embeddings::from_vectors(
            &a.iter()
                .zip(&x)
                .map(|(ai, xi)| ai.iter().map(|v| v * xi).collect())
                .collect::<Vec<_>>(),
        );
        let mut oracle = 0.3;
        for i in 0..n {
            for j in i + 1..n {
                let dot: f64 = a[i].iter().zip(&a[j]).map(|(p, q)| p * q).sum();
                oracle += dot * x[i] * x[j];
            }
        }
        let got = head.forward(&x, &e).unwrap()[0];
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn literal_mode_scales_by_values() {
        let (mut head, x, e) = random_instance(4, 3, 2, 3);
        head.mode = InteractionMode::Literal;
        let got = head.interaction(&x, &e).unwrap();
        let mut oracle = vec![0.0; 2];
        for c in 0..2 {
            for i in 0..4 {
                for j in i + 1..4 {
                    oracle[c] +=
                        weighted_dot(head.class_metric(c), e.get(i), e.get(j)) * x[i] * x[j];
                }
            }
        }
        for c in 0..2 {
            assert!((got[c] - oracle[c]).abs() < 1e-12);
        }
    }

    fn fd_check(head: &FmHead, x: &[f64], e: &Embeddings, up: &[f64]) {
        let g = head.backward(x, e, up).unwrap();
        let h = 1e-5;
        let obj = |hd: &FmHead, ee: &Embeddings| -> f64 {
            hd.forward(x, ee).unwrap().iter().zip(up).map(|(s, u)| s * u).sum()
        };
        let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7);
        for k in 0..head.v.len() {
            let mut p = head.clone();
            p.v[k] += h;
            let mut q = head.clone();
            q.v[k] -= h;
            let fd = (obj(&p, e) - obj(&q, e)) / (2.0 * h);
            assert!(rel(fd, g.v[k]) < 1e-5, "v[{k}]");
        }
        for k in 0..head.w.len() {
            let mut p = head.clone();
            p.w[k] += h;
            let mut q = head.clone();
            q.w[k] -= h;
            let fd = (obj(&p, e) - obj(&q, e)) / (2.0 * h);
            assert!(rel(fd, g.w[k]) < 1e-5, "w[{k}]");
        }
        for k in 0..head.w0.len() {
            let mut p = head.clone();
            p.w0[k] += h;
            let mut q = head.clone();
            q.w0[k] -= h;
            let fd = (obj(&p, e) - obj(&q, e)) / (2.0 * h);
            assert!(rel(fd, g.w0[k]) < 1e-5, "w0[{k}]");
        }
        for k in 0..e.data.len() {
            let mut p = e.clone();
            p.data[k] += h;
            let mut q = e.clone();
            q.data[k] -= h;
            let fd = (obj(head, &p) - obj(head, &q)) / (2.0 * h);
            assert!(rel(fd, g.e.data[k]) < 1e-5, "e[{k}] fd {fd} an {}", g.e.data[k]);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..5 {
            let (head, x, e) = random_instance(3, 2, 2, seed);
            fd_check(&head, &x, &e, &[0.7, -1.3]);
            let mut lit = head.clone();
            lit.mode = InteractionMode::Literal;
            fd_check(&lit, &x, &e, &[0.7, -1.3]);
        }
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let (head, x, e) = random_instance(3, 2, 2, 9);
        let g = head.backward(&x, &e, &[0.0, 0.0]).unwrap();
        assert!(g.w0.iter().chain(&g.w).chain(&g.v).chain(&g.e.data).all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_embeddings_get_equal_gradients() {
        let (head, x, mut e) = random_instance(3, 4, 2, 2);
        let first = e.get(0).to_vec();
        e.get_mut(1).copy_from_slice(&first);
        let g = head.backward(&x, &e, &[0.4, 1.1]).unwrap();
        assert_eq!(g.e.get(0), g.e.get(1));
    }

    proptest! {
        #[test]
        fn linear_time_equals_naive(n in 1usize..=20, m in 1usize..=8, seed in 0u64..10_000) {
            let (head, x, e) = random_instance(n, m, 2, seed);
            let fast = head.interaction(&x, &e).unwrap();
            for c in 0..2 {
                let naive = naive_interaction(head.class_metric(c), &e);
                prop_assert!((fast[c] - naive).abs() < 1e-10);
                let pairs: f64 = head.pair_contributions(&x, &e, c).unwrap().iter().sum();
                prop_assert!((pairs - fast[c]).abs() < 1e-9);
            }
        }
    }
}
