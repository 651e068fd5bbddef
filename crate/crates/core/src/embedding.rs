//! Per-feature embedding matrices.
//!
//! Feature i owns a row-major `m × d_i` matrix `A_i`; its embedding is
//! `e_i = A_i x_i` where `x_i` is the feature's slice of the encoded input.
//! All matrices live in one contiguous buffer so the optimizer can treat the
//! bank as a single parameter group. Meta-embeddings need no special path:
//! a group feature simply has `d_i = |members|`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureSchema;
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBank {
    m: usize,
    widths: Vec<usize>,
    /// Column offset of each feature inside x (length n + 1).
    col_offsets: Vec<usize>,
    data: Vec<f64>,
}

/// The n embedding vectors of one sample, stored feature-major (n × m).
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub n: usize,
    pub m: usize,
    pub data: Vec<f64>,
}

impl Embeddings {
    pub fn zeros(n: usize, m: usize) -> Self {
        Embeddings {
            n,
            m,
            data: vec![0.0; n * m],
        }
    }

    pub fn from_vectors(vectors: &[Vec<f64>]) -> Self {
        let m = vectors.first().map_or(0, Vec::len);
        assert!(vectors.iter().all(|v| v.len() == m), "ragged embeddings");
        Embeddings {
            n: vectors.len(),
            m,
            data: vectors.concat(),
        }
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.m..(i + 1) * self.m]
    }
}

impl EmbeddingBank {
    /// Entries i.i.d. uniform on [-1/√m, 1/√m].
    pub fn init(schema: &FeatureSchema, m: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("embedding length m must be ≥ 1".into()));
        }
        let mut bank = Self::zeros(schema, m)?;
        let bound = 1.0 / (m as f64).sqrt();
        let mut rng = seeded(seed);
        for v in bank.data.iter_mut() {
            *v = rng.random_range(-bound..=bound);
        }
        Ok(bank)
    }

    pub fn zeros(schema: &FeatureSchema, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("embedding length m must be ≥ 1".into()));
        }
        let widths: Vec<usize> = schema.features().iter().map(|f| f.width()).collect();
        let col_offsets = (0..=schema.n_features())
            .map(|i| if i < schema.n_features() { schema.slice(i).start } else { schema.raw_width() })
            .collect();
        Ok(EmbeddingBank {
            m,
            data: vec![0.0; m * schema.raw_width()],
            widths,
            col_offsets,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.widths.len()
    }

    pub fn raw_width(&self) -> usize {
        self.col_offsets[self.n()]
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn params(&self) -> &[f64] {
        &self.data
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row-major `m × d_i` view of A_i.
    pub fn matrix(&self, i: usize) -> &[f64] {
        let start = self.m * self.col_offsets[i];
        &self.data[start..start + self.m * self.widths[i]]
    }

    pub fn matrix_mut(&mut self, i: usize) -> &mut [f64] {
        let start = self.m * self.col_offsets[i];
        let len = self.m * self.widths[i];
        &mut self.data[start..start + len]
    }

    pub fn matches(&self, schema: &FeatureSchema) -> bool {
        self.n() == schema.n_features()
            && self.raw_width() == schema.raw_width()
            && schema
                .features()
                .iter()
                .zip(&self.widths)
                .all(|(f, &w)| f.width() == w)
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if let Some(k) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding entry {k}")));
        }
        Ok(())
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.raw_width() {
            return Err(Error::Shape(format!(
                "input width {} but embeddings expect {}",
                x.len(),
                self.raw_width()
            )));
        }
        Ok(())
    }

    /// e_i = A_i x_i for every feature, in schema order.
    pub fn embed(&self, x: &[f64]) -> Result<Embeddings> {
        self.check_x(x)?;
        let mut out = Embeddings::zeros(self.n(), self.m);
        for i in 0..self.n() {
            let d = self.widths[i];
            let xi = &x[self.col_offsets[i]..self.col_offsets[i] + d];
            let a = self.matrix(i);
            let e = out.get_mut(i);
            for (r, er) in e.iter_mut().enumerate() {
                let row = &a[r * d..(r + 1) * d];
                *er = row.iter().zip(xi).map(|(w, v)| w * v).sum();
            }
        }
        Ok(out)
    }

    /// Gradients of a scalar loss given ∂L/∂e_i: returns (∂L/∂A in the bank's
    /// layout, ∂L/∂x).
    pub fn embed_jacobians(&self, x: &[f64], upstream: &Embeddings) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_x(x)?;
        self.check_upstream(upstream)?;
        let mut grad_a = vec![0.0; self.data.len()];
        self.accumulate_grad(x, upstream, &mut grad_a);
        let mut grad_x = vec![0.0; x.len()];
        for i in 0..self.n() {
            let d = self.widths[i];
            let a = self.matrix(i);
            let g = upstream.get(i);
            let gx = &mut grad_x[self.col_offsets[i]..self.col_offsets[i] + d];
            for (r, gr) in g.iter().enumerate() {
                for (c, gxc) in gx.iter_mut().enumerate() {
                    *gxc += a[r * d + c] * gr;
                }
            }
        }
        Ok((grad_a, grad_x))
    }

    fn check_upstream(&self, upstream: &Embeddings) -> Result<()> {
        if upstream.n != self.n() || upstream.m != self.m {
            return Err(Error::Shape(format!(
                "upstream gradient is {}×{}, expected {}×{}",
                upstream.n,
                upstream.m,
                self.n(),
                self.m
            )));
        }
        Ok(())
    }

    /// grad[A_i] += (∂L/∂e_i) x_iᵀ; shapes are trusted.
    pub(crate) fn accumulate_grad(&self, x: &[f64], upstream: &Embeddings, grad: &mut [f64]) {
        for i in 0..self.n() {
            let d = self.widths[i];
            let xi = &x[self.col_offsets[i]..self.col_offsets[i] + d];
            if xi.iter().all(|&v| v == 0.0) {
                continue;
            }
            let start = self.m * self.col_offsets[i];
            let g = upstream.get(i);
            for (r, &gr) in g.iter().enumerate() {
                if gr == 0.0 {
                    continue;
                }
                let row = &mut grad[start + r * d..start + (r + 1) * d];
                for (w, &v) in row.iter_mut().zip(xi) {
                    *w += gr * v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSpec, MissingPolicy};
    use proptest::prelude::*;

    fn schema(specs: Vec<FeatureSpec>) -> FeatureSchema {
        FeatureSchema::new(specs, vec!["a".into(), "b".into()]).unwrap()
    }

    fn mixed() -> FeatureSchema {
        schema(vec![
            FeatureSpec::continuous("x"),
            FeatureSpec::categorical("c", &["p", "q", "r"]),
            FeatureSpec::group("g", &["g1", "g2"]).with_policy(MissingPolicy::ZeroImpute),
        ])
    }

    #[test]
    fn deterministic_init() {
        let s = mixed();
        let a = EmbeddingBank::init(&s, 4, 11).unwrap();
        let b = EmbeddingBank::init(&s, 4, 11).unwrap();
        assert_eq!(a, b);
        let c = EmbeddingBank::init(&s, 4, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_m_rejected() {
        assert!(EmbeddingBank::init(&mixed(), 0, 1).is_err());
    }

    #[test]
    fn single_scalar_in_range() {
        let s = schema(vec![FeatureSpec::continuous("x")]);
        for seed in 0..50 {
            let b = EmbeddingBank::init(&s, 1, seed).unwrap();
            assert_eq!(b.params().len(), 1);
            assert!(b.params()[0].abs() <= 1.0);
        }
    }

    #[test]
    fn init_mean_near_zero() {
        // 10^6 entries, uniform on [-1/√m, 1/√m]: σ = 1/√(3m).
        let m = 10;
        let feats: Vec<_> = (0..100_000)
            .map(|i| FeatureSpec::continuous(&format!("f{i}")))
            .collect();
        let b = EmbeddingBank::init(&schema(feats), m, 3).unwrap();
        assert_eq!(b.params().len(), 1_000_000);
        let mean = b.params().iter().sum::<f64>() / 1e6;
        let sigma = 1.0 / (3.0 * m as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma / 1e3, "mean {mean}");
        let bound = 1.0 / (m as f64).sqrt();
        assert!(b.params().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn zero_input_gives_zero_embeddings() {
        let b = EmbeddingBank::init(&mixed(), 3, 0).unwrap();
        let e = b.embed(&[0.0; 6]).unwrap();
        assert!(e.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_selects_column() {
        let b = EmbeddingBank::init(&mixed(), 3, 5).unwrap();
        let x = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let e = b.embed(&x).unwrap();
        let a = b.matrix(1);
        for r in 0..3 {
            assert_eq!(e.get(1)[r], a[r * 3 + 1]);
        }
    }

    #[test]
    fn width_mismatch() {
        let b = EmbeddingBank::init(&mixed(), 3, 5).unwrap();
        assert!(matches!(b.embed(&[0.0; 5]), Err(Error::Shape(_))));
    }

    #[test]
    fn matches_independent_matvec() {
        let s = mixed();
        let b = EmbeddingBank::init(&s, 4, 9).unwrap();
        let x = [0.3, 0.0, 1.0, 0.0, -1.2, 2.5];
        let e = b.embed(&x).unwrap();
        // independent oracle: build dense block-diagonal (n·m) × D matrix
        let (n, m, dd) = (3, 4, 6);
        let mut big = vec![vec![0.0; dd]; n * m];
        for i in 0..n {
            let r = s.slice(i);
            let a = b.matrix(i);
            let d = r.len();
            for row in 0..m {
                for c in 0..d {
                    big[i * m + row][r.start + c] = a[row * d + c];
                }
            }
        }
        for (k, row) in big.iter().enumerate() {
            let mut acc = 0.0;
            for c in 0..dd {
                acc += row[c] * x[c];
            }
            assert!((acc - e.data[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let b = EmbeddingBank::init(&mixed(), 2, 1).unwrap();
        let x = [1.0, 0.0, 1.0, 0.0, 0.5, 0.5];
        let (ga, gx) = b.embed_jacobians(&x, &Embeddings::zeros(3, 2)).unwrap();
        assert!(ga.iter().chain(&gx).all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_gradient_is_sparse() {
        let b = EmbeddingBank::init(&mixed(), 2, 1).unwrap();
        let x = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let up = Embeddings::from_vectors(&[vec![1.0, 1.0], vec![0.7, -0.2], vec![1.0, 1.0]]);
        let (ga, _) = b.embed_jacobians(&x, &up).unwrap();
        // A_1 occupies bank entries [2, 8): 2 rows × 3 cols
        let a1 = &ga[2..8];
        assert_eq!(a1, &[0.0, 0.0, 0.7, 0.0, 0.0, -0.2]);
        assert!(ga[..2].iter().all(|&v| v == 0.0));
    }

    /// Probe loss L = Σ_i ⟨u_i, e_i⟩ + ½ Σ e², whose ∂L/∂e_i = u_i + e_i.
    fn probe(b: &EmbeddingBank, x: &[f64], u: &Embeddings) -> f64 {
        let e = b.embed(x).unwrap();
        e.data
            .iter()
            .zip(&u.data)
            .map(|(e, u)| u * e + 0.5 * e * e)
            .sum()
    }

    #[test]
    fn finite_difference_single_feature() {
        let s = schema(vec![FeatureSpec::group("g", &["a", "b", "c"])]);
        let mut b = EmbeddingBank::init(&s, 2, 4).unwrap();
        let x = vec![0.4, -1.1, 0.8];
        let u = Embeddings::from_vectors(&[vec![0.3, -0.9]]);
        let e = b.embed(&x).unwrap();
        let mut up = u.clone();
        for (g, v) in up.data.iter_mut().zip(&e.data) {
            *g += v;
        }
        let (ga, gx) = b.embed_jacobians(&x, &up).unwrap();
        let h = 1e-5;
        for k in 0..b.params().len() {
            let orig = b.params()[k];
            b.params_mut()[k] = orig + h;
            let lp = probe(&b, &x, &u);
            b.params_mut()[k] = orig - h;
            let lm = probe(&b, &x, &u);
            b.params_mut()[k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - ga[k]).abs() / fd.abs().max(ga[k].abs()).max(1e-8);
            assert!(rel < 1e-5, "A[{k}] fd {fd} an {}", ga[k]);
        }
        for c in 0..3 {
            let mut xp = x.clone();
            xp[c] += h;
            let mut xm = x.clone();
            xm[c] -= h;
            let fd = (probe(&b, &xp, &u) - probe(&b, &xm, &u)) / (2.0 * h);
            let rel = (fd - gx[c]).abs() / fd.abs().max(gx[c].abs()).max(1e-8);
            assert!(rel < 1e-5, "x[{c}] fd {fd} an {}", gx[c]);
        }
    }

    #[test]
    fn finite_difference_every_matrix() {
        let s = mixed();
        let mut b = EmbeddingBank::init(&s, 3, 21).unwrap();
        let x = vec![0.9, 0.0, 1.0, 0.0, -0.6, 1.7];
        let u = Embeddings::from_vectors(&[
            vec![0.1, 0.2, -0.3],
            vec![-0.5, 0.4, 0.2],
            vec![0.8, -0.1, 0.6],
        ]);
        let e = b.embed(&x).unwrap();
        let mut up = u.clone();
        for (g, v) in up.data.iter_mut().zip(&e.data) {
            *g += v;
        }
        let (ga, _) = b.embed_jacobians(&x, &up).unwrap();
        let h = 1e-5;
        for k in 0..b.params().len() {
            let orig = b.params()[k];
            b.params_mut()[k] = orig + h;
            let lp = probe(&b, &x, &u);
            b.params_mut()[k] = orig - h;
            let lm = probe(&b, &x, &u);
            b.params_mut()[k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            if fd.abs() < 1e-9 && ga[k].abs() < 1e-9 {
                continue;
            }
            let rel = (fd - ga[k]).abs() / fd.abs().max(ga[k].abs());
            assert!(rel < 1e-4, "A[{k}] fd {fd} an {}", ga[k]);
        }
    }

    proptest! {
        #[test]
        fn embedding_is_linear(
            xs in prop::collection::vec(-3.0f64..3.0, 6),
            ys in prop::collection::vec(-3.0f64..3.0, 6),
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
            seed in 0u64..1000,
        ) {
            let b = EmbeddingBank::init(&mixed(), 3, seed).unwrap();
            let z: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| alpha * x + beta * y).collect();
            let ez = b.embed(&z).unwrap();
            let ex = b.embed(&xs).unwrap();
            let ey = b.embed(&ys).unwrap();
            for k in 0..ez.data.len() {
                let lin = alpha * ex.data[k] + beta * ey.data[k];
                prop_assert!((ez.data[k] - lin).abs() < 1e-12);
            }
        }
    }
}
