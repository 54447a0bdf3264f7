//! Multilinear factorization baselines: Tucker (`ŷ = Σ g_nmk a_sn b_pm c_tk`)
//! and CP (diagonal core). Both are fitted by gradient descent on the same
//! per-entry objective as the network, and predict without an output
//! nonlinearity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dims, Entry};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Per-entry data loss.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossKind {
    /// `½ r²`
    #[default]
    Squared,
    /// `½ log(1 + (r/γ)²)`, bounded influence for large residuals.
    Cauchy { scale: f64 },
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::Cauchy { scale } if !(scale.is_finite() && scale > 0.0) => Err(
                Error::Config(format!("Cauchy scale must be positive, got {scale}")),
            ),
            _ => Ok(()),
        }
    }

    /// Loss at residual `r = y − ŷ`.
    pub fn value(&self, r: f64) -> f64 {
        match *self {
            LossKind::Squared => 0.5 * r * r,
            LossKind::Cauchy { scale } => 0.5 * (r / scale).powi(2).ln_1p(),
        }
    }

    /// Derivative with respect to the prediction ŷ.
    pub fn d_prediction(&self, r: f64) -> f64 {
        match *self {
            LossKind::Squared => -r,
            LossKind::Cauchy { scale } => {
                let g2 = scale * scale;
                -(r / g2) / (1.0 + r * r / g2)
            }
        }
    }
}

/// Settings shared by both baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorConfig {
    /// `(N, M, K)`; CP uses `ranks[0]` for all modes.
    pub ranks: [usize; 3],
    /// Factors (and core) start from U(0, init_bound).
    pub init_bound: f64,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for FactorConfig {
    fn default() -> Self {
        Self {
            ranks: [10; 3],
            init_bound: 0.004,
            loss: LossKind::Squared,
            seed: 0,
        }
    }
}

impl FactorConfig {
    pub fn with_rank(mut self, rank: usize) -> Self {
        self.ranks = [rank; 3];
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.ranks.contains(&0) {
            return Err(Error::Config("factor ranks must be positive".into()));
        }
        if !(self.init_bound.is_finite() && self.init_bound > 0.0) {
            return Err(Error::Config("init bound must be positive".into()));
        }
        self.loss.validate()
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Matrix {
    let values = (0..rows * cols).map(|_| rng.random_range(0.0..bound)).collect();
    Matrix::new(rows, cols, values).expect("sized")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Gradient of one entry's loss; only touched rows (and the core) appear.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGrad {
    pub cell: (usize, usize, usize),
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    /// Core gradient, Tucker only.
    pub core: Option<Vec<f64>>,
    /// Data loss plus `λ‖θ‖²` over the touched rows and core.
    pub loss: f64,
}

/// Tucker model: dense core `G` (`N×M×K`) and factor matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerParams {
    pub config: FactorConfig,
    pub dims: Dims,
    pub core: Vec<f64>,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl TuckerParams {
    pub fn zeros(config: FactorConfig, dims: Dims) -> Result<Self> {
        config.validate()?;
        let [n, m, k] = config.ranks;
        Ok(Self {
            config,
            dims,
            core: vec![0.0; n * m * k],
            a: Matrix::zeros(dims.stations, n),
            b: Matrix::zeros(dims.indicators, m),
            c: Matrix::zeros(dims.times, k),
        })
    }

    pub fn init(config: FactorConfig, dims: Dims) -> Result<Self> {
        config.validate()?;
        let [n, m, k] = config.ranks;
        let bound = config.init_bound;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let a = uniform_matrix(&mut rng, dims.stations, n, bound);
        let b = uniform_matrix(&mut rng, dims.indicators, m, bound);
        let c = uniform_matrix(&mut rng, dims.times, k, bound);
        let core = (0..n * m * k).map(|_| rng.random_range(0.0..bound)).collect();
        Ok(Self {
            config,
            dims,
            core,
            a,
            b,
            c,
        })
    }

    /// Tucker model with a diagonal unit core, equal to `cp`.
    pub fn from_cp(cp: &CpParams) -> Self {
        let r = cp.rank();
        let mut core = vec![0.0; r * r * r];
        for i in 0..r {
            core[(i * r + i) * r + i] = 1.0;
        }
        Self {
            config: FactorConfig {
                ranks: [r; 3],
                ..cp.config
            },
            dims: cp.dims,
            core,
            a: cp.a.clone(),
            b: cp.b.clone(),
            c: cp.c.clone(),
        }
    }

    pub fn ranks(&self) -> [usize; 3] {
        [self.a.cols(), self.b.cols(), self.c.cols()]
    }

    /// `Σ_nmk g_nmk a_sn b_pm c_tk`.
    pub fn predict(&self, s: usize, p: usize, t: usize) -> Result<f64> {
        self.dims.check(s, p, t)?;
        Ok(self.predict_unchecked(s, p, t))
    }

    fn predict_unchecked(&self, s: usize, p: usize, t: usize) -> f64 {
        let [n, m, k] = self.ranks();
        let (a, b, c) = (self.a.row(s), self.b.row(p), self.c.row(t));
        let mut total = 0.0;
        for (i, &ai) in a.iter().enumerate().take(n) {
            let mut inner = 0.0;
            for (j, &bj) in b.iter().enumerate().take(m) {
                inner += bj * dot(&self.core[(i * m + j) * k..][..k], c);
            }
            total += ai * inner;
        }
        total
    }

    pub fn factor_gradients(&self, entry: &Entry, lambda: f64) -> Result<FactorGrad> {
        let Entry { s, p, t, y } = *entry;
        self.dims.check(s, p, t)?;
        let [n, m, k] = self.ranks();
        let (a, b, c) = (self.a.row(s), self.b.row(p), self.c.row(t));
        // gc[i][j] = Σ_k g_ijk c_k
        let gc: Vec<f64> = (0..n * m).map(|ij| dot(&self.core[ij * k..][..k], c)).collect();
        let mut ga = vec![0.0; n];
        let mut gb = vec![0.0; m];
        for i in 0..n {
            ga[i] = dot(&gc[i * m..][..m], b);
            for j in 0..m {
                gb[j] += a[i] * gc[i * m + j];
            }
        }
        let y_hat = dot(&ga, a);
        let r = y - y_hat;
        let d = self.config.loss.d_prediction(r);
        let mut gc_vec = vec![0.0; k];
        let mut core = vec![0.0; n * m * k];
        for i in 0..n {
            for j in 0..m {
                let ab = a[i] * b[j];
                let g = &self.core[(i * m + j) * k..][..k];
                let dst = &mut core[(i * m + j) * k..][..k];
                for l in 0..k {
                    gc_vec[l] += ab * g[l];
                    dst[l] = d * ab * c[l] + 2.0 * lambda * g[l];
                }
            }
        }
        let scale = |v: Vec<f64>, theta: &[f64]| -> Vec<f64> {
            v.into_iter()
                .zip(theta)
                .map(|(g, th)| d * g + 2.0 * lambda * th)
                .collect()
        };
        let reg = lambda * (sq(a) + sq(b) + sq(c) + sq(&self.core));
        Ok(FactorGrad {
            cell: (s, p, t),
            a: scale(ga, a),
            b: scale(gb, b),
            c: scale(gc_vec, c),
            core: Some(core),
            loss: self.config.loss.value(r) + reg,
        })
    }

    /// Adds a sparse entry gradient into `self` viewed as a gradient buffer.
    pub fn accumulate(&mut self, g: &FactorGrad) {
        accumulate_rows(&mut self.a, &mut self.b, &mut self.c, Some(&mut self.core), g);
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("core", &self.core),
            ("a", self.a.values()),
            ("b", self.b.values()),
            ("c", self.c.values()),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("core", &mut self.core),
            ("a", self.a.values_mut()),
            ("b", self.b.values_mut()),
            ("c", self.c.values_mut()),
        ]
    }

    pub fn shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let r = self.ranks();
        vec![
            ("core", r.to_vec()),
            ("a", vec![self.dims.stations, r[0]]),
            ("b", vec![self.dims.indicators, r[1]]),
            ("c", vec![self.dims.times, r[2]]),
        ]
    }
}

/// CP model: shared rank `R`, `ŷ = Σ_r a_sr b_pr c_tr`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpParams {
    pub config: FactorConfig,
    pub dims: Dims,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl CpParams {
    pub fn zeros(config: FactorConfig, dims: Dims) -> Result<Self> {
        config.validate()?;
        let r = config.ranks[0];
        Ok(Self {
            config: FactorConfig {
                ranks: [r; 3],
                ..config
            },
            dims,
            a: Matrix::zeros(dims.stations, r),
            b: Matrix::zeros(dims.indicators, r),
            c: Matrix::zeros(dims.times, r),
        })
    }

    pub fn init(config: FactorConfig, dims: Dims) -> Result<Self> {
        let mut cp = Self::zeros(config, dims)?;
        let r = cp.rank();
        let bound = config.init_bound;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        cp.a = uniform_matrix(&mut rng, dims.stations, r, bound);
        cp.b = uniform_matrix(&mut rng, dims.indicators, r, bound);
        cp.c = uniform_matrix(&mut rng, dims.times, r, bound);
        Ok(cp)
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn predict(&self, s: usize, p: usize, t: usize) -> Result<f64> {
        self.dims.check(s, p, t)?;
        let (a, b, c) = (self.a.row(s), self.b.row(p), self.c.row(t));
        Ok(a.iter().zip(b).zip(c).map(|((x, y), z)| x * y * z).sum())
    }

    pub fn factor_gradients(&self, entry: &Entry, lambda: f64) -> Result<FactorGrad> {
        let Entry { s, p, t, y } = *entry;
        let y_hat = self.predict(s, p, t)?;
        let r = y - y_hat;
        let d = self.config.loss.d_prediction(r);
        let (a, b, c) = (self.a.row(s), self.b.row(p), self.c.row(t));
        let grad = |u: &[f64], v: &[f64], theta: &[f64]| -> Vec<f64> {
            u.iter()
                .zip(v)
                .zip(theta)
                .map(|((x, y), th)| d * x * y + 2.0 * lambda * th)
                .collect()
        };
        Ok(FactorGrad {
            cell: (s, p, t),
            a: grad(b, c, a),
            b: grad(a, c, b),
            c: grad(a, b, c),
            core: None,
            loss: self.config.loss.value(r) + lambda * (sq(a) + sq(b) + sq(c)),
        })
    }

    pub fn accumulate(&mut self, g: &FactorGrad) {
        accumulate_rows(&mut self.a, &mut self.b, &mut self.c, None, g);
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("a", self.a.values()),
            ("b", self.b.values()),
            ("c", self.c.values()),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("a", self.a.values_mut()),
            ("b", self.b.values_mut()),
            ("c", self.c.values_mut()),
        ]
    }

    pub fn shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let r = self.rank();
        vec![
            ("a", vec![self.dims.stations, r]),
            ("b", vec![self.dims.indicators, r]),
            ("c", vec![self.dims.times, r]),
        ]
    }
}

/// Adds a sparse entry gradient into dense factor buffers.
pub(crate) fn accumulate_rows(
    a: &mut Matrix,
    b: &mut Matrix,
    c: &mut Matrix,
    core: Option<&mut [f64]>,
    g: &FactorGrad,
) {
    let (s, p, t) = g.cell;
    for (dst, src) in [(a.row_mut(s), &g.a), (b.row_mut(p), &g.b), (c.row_mut(t), &g.c)] {
        for (d, v) in dst.iter_mut().zip(src) {
            *d += v;
        }
    }
    if let (Some(dst), Some(src)) = (core, &g.core) {
        for (d, v) in dst.iter_mut().zip(src) {
            *d += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tucker(seed: u64, ranks: [usize; 3], loss: LossKind) -> TuckerParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Dims::new(3, 4, 2);
        let mut t = TuckerParams::zeros(
            FactorConfig {
                ranks,
                loss,
                ..FactorConfig::default()
            },
            dims,
        )
        .unwrap();
        for (_, v) in t.tensors_mut() {
            v.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
        t
    }

    fn rand_cp(seed: u64, rank: usize, loss: LossKind) -> CpParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cp = CpParams::zeros(
            FactorConfig {
                loss,
                ..FactorConfig::default().with_rank(rank)
            },
            Dims::new(3, 4, 2),
        )
        .unwrap();
        for (_, v) in cp.tensors_mut() {
            v.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
        cp
    }

    #[test]
    fn tucker_examples() {
        let mut t = rand_tucker(0, [2, 3, 2], LossKind::Squared);
        t.core.iter_mut().for_each(|g| *g = 0.0);
        assert_eq!(t.predict(1, 2, 1).unwrap(), 0.0);

        let mut t = TuckerParams::zeros(FactorConfig::default().with_rank(1), Dims::new(1, 1, 1))
            .unwrap();
        t.core[0] = 2.0;
        t.a.values_mut()[0] = 3.0;
        t.b.values_mut()[0] = 4.0;
        t.c.values_mut()[0] = 5.0;
        assert_eq!(t.predict(0, 0, 0).unwrap(), 120.0);
        assert!(t.predict(1, 0, 0).is_err());
    }

    #[test]
    fn cp_examples() {
        let mut cp = CpParams::zeros(FactorConfig::default().with_rank(1), Dims::new(2, 1, 1))
            .unwrap();
        cp.a.values_mut().copy_from_slice(&[2.0, 0.0]);
        cp.b.values_mut()[0] = 2.0;
        cp.c.values_mut()[0] = 2.0;
        assert_eq!(cp.predict(0, 0, 0).unwrap(), 8.0);
        assert_eq!(cp.predict(1, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn cp_is_diagonal_tucker() {
        for seed in 0..5 {
            let cp = rand_cp(seed, 4, LossKind::Squared);
            let t = TuckerParams::from_cp(&cp);
            for s in 0..3 {
                for p in 0..4 {
                    for q in 0..2 {
                        let (x, y) = (cp.predict(s, p, q).unwrap(), t.predict(s, p, q).unwrap());
                        assert!((x - y).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_residual_zero_gradient() {
        let t = rand_tucker(1, [2, 2, 2], LossKind::Squared);
        let y = t.predict(0, 0, 0).unwrap();
        let g = t.factor_gradients(&Entry::new(0, 0, 0, y), 0.0).unwrap();
        assert!(g.a.iter().chain(&g.b).chain(&g.c).chain(g.core.as_ref().unwrap()).all(|&v| v == 0.0));
        let cp = rand_cp(1, 3, LossKind::Squared);
        let y = cp.predict(2, 3, 1).unwrap();
        let g = cp.factor_gradients(&Entry::new(2, 3, 1, y), 0.0).unwrap();
        assert!(g.a.iter().chain(&g.b).chain(&g.c).all(|&v| v == 0.0));
    }

    #[test]
    fn cauchy_rejects_nonpositive_scale() {
        assert!(LossKind::Cauchy { scale: 0.0 }.validate().is_err());
        let cfg = FactorConfig {
            loss: LossKind::Cauchy { scale: -1.0 },
            ..FactorConfig::default()
        };
        assert!(TuckerParams::init(cfg, Dims::new(1, 1, 1)).is_err());
    }

    #[test]
    fn cauchy_gradient_is_bounded() {
        let cauchy = LossKind::Cauchy { scale: 1.0 };
        // |d/dr ½log(1+r²)| = |r|/(1+r²) ≤ ½
        assert!(cauchy.d_prediction(1e3).abs() < 1e-2);
        assert!((cauchy.d_prediction(1.0).abs() - 0.5).abs() < 1e-15);
        assert_eq!(LossKind::Squared.d_prediction(1e3).abs(), 1e3);
    }

    // loss(θ) evaluated from scratch for finite differences
    fn entry_loss_tucker(t: &TuckerParams, e: &Entry, lambda: f64) -> f64 {
        let y_hat = t.predict(e.s, e.p, e.t).unwrap();
        t.config.loss.value(e.y - y_hat)
            + lambda
                * (sq(t.a.row(e.s)) + sq(t.b.row(e.p)) + sq(t.c.row(e.t)) + sq(&t.core))
    }

    fn fd_check<P: Clone>(
        params: &P,
        tensors_mut: impl Fn(&mut P) -> Vec<&mut [f64]>,
        loss: impl Fn(&P) -> f64,
        analytic: Vec<Vec<f64>>,
    ) -> f64 {
        let h = 1e-5;
        let mut worst = 0.0f64;
        let n_tensors = tensors_mut(&mut params.clone()).len();
        for ti in 0..n_tensors {
            let len = tensors_mut(&mut params.clone())[ti].len();
            let mut numeric = Vec::with_capacity(len);
            for i in 0..len {
                let mut up = params.clone();
                tensors_mut(&mut up)[ti][i] += h;
                let mut down = params.clone();
                tensors_mut(&mut down)[ti][i] -= h;
                numeric.push((loss(&up) - loss(&down)) / (2.0 * h));
            }
            let scale = analytic[ti]
                .iter()
                .chain(&numeric)
                .fold(1e-12f64, |m, v| m.max(v.abs()));
            for (a, n) in analytic[ti].iter().zip(&numeric) {
                worst = worst.max((a - n).abs() / scale);
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for loss in [LossKind::Squared, LossKind::Cauchy { scale: 0.7 }] {
            for seed in 0..3 {
                let t = rand_tucker(seed, [2, 3, 2], loss);
                let e = Entry::new(1, 2, 0, 0.3);
                let lambda = 0.05;
                let g = t.factor_gradients(&e, lambda).unwrap();
                assert!((g.loss - entry_loss_tucker(&t, &e, lambda)).abs() < 1e-12);
                // dense view of the sparse gradient
                let mut dense = TuckerParams::zeros(t.config, t.dims).unwrap();
                let (mut a, mut b, mut c) = (dense.a.clone(), dense.b.clone(), dense.c.clone());
                accumulate_rows(&mut a, &mut b, &mut c, Some(&mut dense.core), &g);
                let analytic = vec![
                    dense.core.clone(),
                    a.values().to_vec(),
                    b.values().to_vec(),
                    c.values().to_vec(),
                ];
                let err = fd_check(
                    &t,
                    |p| p.tensors_mut().into_iter().map(|(_, v)| v).collect(),
                    |p| entry_loss_tucker(p, &e, lambda),
                    analytic,
                );
                assert!(err < 1e-6, "tucker {loss:?} seed {seed}: {err}");

                let cp = rand_cp(seed, 3, loss);
                let g = cp.factor_gradients(&e, lambda).unwrap();
                let mut a = Matrix::zeros(3, 3);
                let mut b = Matrix::zeros(4, 3);
                let mut c = Matrix::zeros(2, 3);
                accumulate_rows(&mut a, &mut b, &mut c, None, &g);
                let cp_loss = |p: &CpParams| {
                    p.config.loss.value(e.y - p.predict(e.s, e.p, e.t).unwrap())
                        + lambda * (sq(p.a.row(e.s)) + sq(p.b.row(e.p)) + sq(p.c.row(e.t)))
                };
                let err = fd_check(
                    &cp,
                    |p| p.tensors_mut().into_iter().map(|(_, v)| v).collect(),
                    cp_loss,
                    vec![a.values().to_vec(), b.values().to_vec(), c.values().to_vec()],
                );
                assert!(err < 1e-6, "cp {loss:?} seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn init_in_range() {
        let t = TuckerParams::init(FactorConfig::default().with_seed(2), Dims::new(4, 4, 4)).unwrap();
        assert!(t.tensors().iter().all(|(_, v)| v.iter().all(|&x| (0.0..0.004).contains(&x))));
        assert_eq!(t, TuckerParams::init(FactorConfig::default().with_seed(2), Dims::new(4, 4, 4)).unwrap());
    }
}
