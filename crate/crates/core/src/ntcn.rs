//! Neural Tucker convolutional network.
//!
//! One prediction runs: embedding lookup for the station, indicator and time
//! slice; their outer product; per-sample standardization; two valid 3D
//! convolutions with ReLU; a two-layer MLP with a sigmoid output. The
//! backward pass is written out by hand for this fixed architecture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dims, Entry};
use crate::error::{Error, Result};
use crate::tensor::{
    affine, affine_backward, conv3d_backward, conv3d_output_shape, conv3d_valid, outer3,
    outer3_backward, relu, relu_backward, sigmoid, sigmoid_backward, standardize,
    standardize_backward, ConvKernel, DenseTensor3, DenseTensor4, Matrix, Moments,
};

/// Architecture and initialization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NtcnConfig {
    /// Embedding widths `(N, M, K)` for stations, indicators, time slices.
    pub ranks: [usize; 3],
    /// Output channels of the two convolutions.
    pub channels: [usize; 2],
    /// Cubic kernel sizes of the two convolutions.
    pub kernels: [usize; 2],
    pub strides: [usize; 2],
    /// Width of the MLP hidden layer.
    pub hidden: usize,
    /// Per-output-channel convolution biases. When off they stay at zero.
    pub conv_bias: bool,
    /// Embeddings start from U(0, init_bound).
    pub init_bound: f64,
    /// Standardization guard added to the standard deviation.
    pub eps: f64,
    pub seed: u64,
}

impl Default for NtcnConfig {
    fn default() -> Self {
        Self {
            ranks: [10; 3],
            channels: [8, 16],
            kernels: [6, 5],
            strides: [1, 1],
            hidden: 32,
            conv_bias: true,
            init_bound: 0.004,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl NtcnConfig {
    /// Rank 10 with 6³ and 5³ kernels, so the feature maps go 10 → 5 → 1.
    pub fn standard() -> Self {
        Self::default()
    }

    /// Smallest meaningful stack: 2³ embeddings, one channel everywhere.
    pub fn tiny() -> Self {
        Self {
            ranks: [2; 3],
            channels: [1, 1],
            kernels: [2, 1],
            hidden: 1,
            ..Self::default()
        }
    }

    pub fn with_rank(mut self, rank: usize) -> Self {
        self.ranks = [rank; 3];
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Spatial shapes of the two convolution outputs.
    pub fn conv_shapes(&self) -> Result<([usize; 3], [usize; 3])> {
        self.validate()?;
        self.conv_shapes_unchecked()
    }

    fn conv_shapes_unchecked(&self) -> Result<([usize; 3], [usize; 3])> {
        let h1 = conv3d_output_shape(self.ranks, self.kernels[0], self.strides[0])?;
        let h2 = conv3d_output_shape(h1, self.kernels[1], self.strides[1])?;
        Ok((h1, h2))
    }

    /// Length of the flattened second feature map (`c_in` of the MLP).
    pub fn flat_len(&self) -> Result<usize> {
        let (_, h2) = self.conv_shapes()?;
        Ok(self.channels[1] * h2.iter().product::<usize>())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.ranks.iter().all(|&r| r > 0)
            && self.channels.iter().all(|&c| c > 0)
            && self.kernels.iter().all(|&k| k > 0)
            && self.strides.iter().all(|&s| s > 0)
            && self.hidden > 0;
        if !positive {
            return Err(Error::Config(
                "ranks, channels, kernels, strides and hidden width must be positive".into(),
            ));
        }
        if !(self.init_bound.is_finite() && self.init_bound > 0.0) {
            return Err(Error::Config("init bound must be positive".into()));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::Config("standardization eps must be nonnegative".into()));
        }
        self.conv_shapes_unchecked()
            .map_err(|e| Error::Config(format!("kernel/rank combination: {e}")))?;
        Ok(())
    }
}

/// Learnable parameters. The same struct doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct NtcnParams {
    pub config: NtcnConfig,
    pub dims: Dims,
    /// Station embeddings, `|S| × N`.
    pub a: Matrix,
    /// Indicator embeddings, `|P| × M`.
    pub b: Matrix,
    /// Time-slice embeddings, `|T| × K`.
    pub c: Matrix,
    pub w1: ConvKernel,
    pub bias1: Vec<f64>,
    pub w2: ConvKernel,
    pub bias2: Vec<f64>,
    pub w3: Matrix,
    pub b3: Vec<f64>,
    pub w4: Vec<f64>,
    pub b_o: f64,
}

/// Names of the parameter tensors, in storage order.
pub const NTCN_TENSORS: [&str; 11] = [
    "a", "b", "c", "w1", "bias1", "w2", "bias2", "w3", "b3", "w4", "b_o",
];

fn glorot(rng: &mut ChaCha8Rng, n: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let u = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-u..u)).collect()
}

impl NtcnParams {
    /// All-zero parameters with the shapes implied by `config` and `dims`.
    pub fn zeros(config: NtcnConfig, dims: Dims) -> Result<Self> {
        let c_in = config.flat_len()?;
        let [n, m, k] = config.ranks;
        let [c1, c2] = config.channels;
        let [k1, k2] = config.kernels;
        Ok(Self {
            config,
            dims,
            a: Matrix::zeros(dims.stations, n),
            b: Matrix::zeros(dims.indicators, m),
            c: Matrix::zeros(dims.times, k),
            w1: ConvKernel::zeros(c1, 1, k1),
            bias1: vec![0.0; c1],
            w2: ConvKernel::zeros(c2, c1, k2),
            bias2: vec![0.0; c2],
            w3: Matrix::zeros(config.hidden, c_in),
            b3: vec![0.0; config.hidden],
            w4: vec![0.0; config.hidden],
            b_o: 0.0,
        })
    }

    /// Embeddings from U(0, init_bound); convolution and MLP weights from the
    /// fan-balanced uniform law U(−u, u), `u = sqrt(6 / (fan_in + fan_out))`;
    /// biases zero.
    pub fn init(config: NtcnConfig, dims: Dims) -> Result<Self> {
        let mut p = Self::zeros(config, dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bound = config.init_bound;
        for table in [&mut p.a, &mut p.b, &mut p.c] {
            table
                .values_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(0.0..bound));
        }
        let [c1, c2] = config.channels;
        let [k1, k2] = config.kernels;
        let (k1c, k2c) = (k1 * k1 * k1, k2 * k2 * k2);
        let w1 = glorot(&mut rng, p.w1.values().len(), k1c, c1 * k1c);
        p.w1.values_mut().copy_from_slice(&w1);
        let w2 = glorot(&mut rng, p.w2.values().len(), c1 * k2c, c2 * k2c);
        p.w2.values_mut().copy_from_slice(&w2);
        let (h, c_in) = (p.w3.rows(), p.w3.cols());
        let w3 = glorot(&mut rng, h * c_in, c_in, h);
        p.w3.values_mut().copy_from_slice(&w3);
        p.w4 = glorot(&mut rng, h, h, 1);
        Ok(p)
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("a", self.a.values()),
            ("b", self.b.values()),
            ("c", self.c.values()),
            ("w1", self.w1.values()),
            ("bias1", &self.bias1),
            ("w2", self.w2.values()),
            ("bias2", &self.bias2),
            ("w3", self.w3.values()),
            ("b3", &self.b3),
            ("w4", &self.w4),
            ("b_o", std::slice::from_ref(&self.b_o)),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("a", self.a.values_mut()),
            ("b", self.b.values_mut()),
            ("c", self.c.values_mut()),
            ("w1", self.w1.values_mut()),
            ("bias1", &mut self.bias1),
            ("w2", self.w2.values_mut()),
            ("bias2", &mut self.bias2),
            ("w3", self.w3.values_mut()),
            ("b3", &mut self.b3),
            ("w4", &mut self.w4),
            ("b_o", std::slice::from_mut(&mut self.b_o)),
        ]
    }

    pub fn shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        vec![
            ("a", vec![self.a.rows(), self.a.cols()]),
            ("b", vec![self.b.rows(), self.b.cols()]),
            ("c", vec![self.c.rows(), self.c.cols()]),
            ("w1", self.w1.shape().to_vec()),
            ("bias1", vec![self.bias1.len()]),
            ("w2", self.w2.shape().to_vec()),
            ("bias2", vec![self.bias2.len()]),
            ("w3", vec![self.w3.rows(), self.w3.cols()]),
            ("b3", vec![self.b3.len()]),
            ("w4", vec![1, self.w4.len()]),
            ("b_o", vec![1]),
        ]
    }

    /// `Σ θ²` over every learnable parameter.
    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|v| v * v)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Runs the forward pass for one cell and keeps every intermediate.
    pub fn forward(&self, s: usize, p: usize, t: usize) -> Result<ForwardTrace> {
        self.dims.check(s, p, t)?;
        let cfg = &self.config;
        let x = outer3(self.a.row(s), self.b.row(p), self.c.row(t));
        let (xs, moments) = standardize(&x, cfg.eps);
        let xs = xs.into_channels();
        let h1_pre = conv3d_valid(&xs, &self.w1, &self.bias1, cfg.strides[0])?;
        let h1 = DenseTensor4::new(h1_pre.shape(), relu(h1_pre.values()))?;
        let h2_pre = conv3d_valid(&h1, &self.w2, &self.bias2, cfg.strides[1])?;
        let h2 = relu(h2_pre.values());
        let h3_pre = affine(&h2, &self.w3, &self.b3)?;
        let h3 = relu(&h3_pre);
        let logit = self.w4.iter().zip(&h3).map(|(w, h)| w * h).sum::<f64>() + self.b_o;
        let y_hat = sigmoid(logit);
        Ok(ForwardTrace {
            cell: (s, p, t),
            x,
            xs,
            moments,
            h1_pre,
            h1,
            h2_pre,
            h2,
            h3_pre,
            h3,
            logit,
            y_hat,
        })
    }

    pub fn predict(&self, s: usize, p: usize, t: usize) -> Result<f64> {
        self.forward(s, p, t).map(|tr| tr.y_hat)
    }

    /// Data-term gradient `∂ ½(y − ŷ)² / ∂θ` for one traced sample. Only the
    /// three embedding rows involved are carried.
    pub fn sample_backward(&self, trace: &ForwardTrace, y: f64) -> Result<SampleGrad> {
        let cfg = &self.config;
        let d_logit = sigmoid_backward(trace.y_hat, trace.y_hat - y);
        let w4: Vec<f64> = trace.h3.iter().map(|h| d_logit * h).collect();
        let d_h3: Vec<f64> = self.w4.iter().map(|w| d_logit * w).collect();
        let d_h3_pre = relu_backward(&trace.h3_pre, &d_h3);
        let mlp = affine_backward(&trace.h2, &self.w3, &d_h3_pre)?;
        let d_h2_pre = DenseTensor4::new(
            trace.h2_pre.shape(),
            relu_backward(trace.h2_pre.values(), &mlp.input),
        )?;
        let conv2 = conv3d_backward(&trace.h1, &self.w2, &d_h2_pre, cfg.strides[1])?;
        let d_h1_pre = DenseTensor4::new(
            trace.h1_pre.shape(),
            relu_backward(trace.h1_pre.values(), conv2.input.values()),
        )?;
        let conv1 = conv3d_backward(&trace.xs, &self.w1, &d_h1_pre, cfg.strides[0])?;
        let d_xs = DenseTensor3::new(trace.x.shape(), conv1.input.into_values())?;
        let d_x = standardize_backward(&trace.x, trace.moments, cfg.eps, &d_xs);
        let (s, p, t) = trace.cell;
        let (ga, gb, gc) = outer3_backward(self.a.row(s), self.b.row(p), self.c.row(t), &d_x);
        let (bias1, bias2) = if cfg.conv_bias {
            (conv1.bias, conv2.bias)
        } else {
            (vec![0.0; self.bias1.len()], vec![0.0; self.bias2.len()])
        };
        Ok(SampleGrad {
            cell: trace.cell,
            a: ga,
            b: gb,
            c: gc,
            w1: conv1.kernel,
            bias1,
            w2: conv2.kernel,
            bias2,
            w3: mlp.weight,
            b3: mlp.bias,
            w4,
            b_o: d_logit,
            loss: 0.5 * (y - trace.y_hat).powi(2),
        })
    }

    /// Adds a sparse per-sample gradient into a dense gradient buffer.
    pub fn accumulate(grad: &mut NtcnParams, g: &SampleGrad) {
        let (s, p, t) = g.cell;
        add(grad.a.row_mut(s), &g.a);
        add(grad.b.row_mut(p), &g.b);
        add(grad.c.row_mut(t), &g.c);
        add(grad.w1.values_mut(), g.w1.values());
        add(&mut grad.bias1, &g.bias1);
        add(grad.w2.values_mut(), g.w2.values());
        add(&mut grad.bias2, &g.bias2);
        add(grad.w3.values_mut(), g.w3.values());
        add(&mut grad.b3, &g.b3);
        add(&mut grad.w4, &g.w4);
        grad.b_o += g.b_o;
    }

    /// Adds `2λθ` for every parameter into `grad`.
    pub fn add_weight_decay(&self, grad: &mut NtcnParams, lambda: f64) {
        if lambda == 0.0 {
            return;
        }
        let conv_bias = self.config.conv_bias;
        for ((name, g), (_, theta)) in grad.tensors_mut().into_iter().zip(self.tensors()) {
            if !conv_bias && (name == "bias1" || name == "bias2") {
                continue;
            }
            for (gv, tv) in g.iter_mut().zip(theta) {
                *gv += 2.0 * lambda * tv;
            }
        }
    }

    /// Full gradient of `½(y − ŷ)² + λ Σθ²` for one sample.
    pub fn backward(&self, trace: &ForwardTrace, y: f64, lambda: f64) -> Result<NtcnParams> {
        let sample = self.sample_backward(trace, y)?;
        let mut grad = NtcnParams::zeros(self.config, self.dims)?;
        NtcnParams::accumulate(&mut grad, &sample);
        self.add_weight_decay(&mut grad, lambda);
        Ok(grad)
    }

    /// Objective for a single sample.
    pub fn sample_loss(&self, entry: &Entry, lambda: f64) -> Result<f64> {
        let y_hat = self.predict(entry.s, entry.p, entry.t)?;
        Ok(loss(y_hat, entry.y, self, lambda))
    }
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `½(y − ŷ)² + λ Σθ²`.
pub fn loss(y_hat: f64, y: f64, params: &NtcnParams, lambda: f64) -> f64 {
    let data = 0.5 * (y - y_hat).powi(2);
    if lambda == 0.0 {
        data
    } else {
        data + lambda * params.squared_norm()
    }
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub cell: (usize, usize, usize),
    /// Outer-product interaction tensor.
    pub x: DenseTensor3,
    /// Standardized interaction tensor as a one-channel volume.
    pub xs: DenseTensor4,
    pub moments: Moments,
    pub h1_pre: DenseTensor4,
    pub h1: DenseTensor4,
    pub h2_pre: DenseTensor4,
    /// Flattened, rectified second feature map.
    pub h2: Vec<f64>,
    pub h3_pre: Vec<f64>,
    pub h3: Vec<f64>,
    pub logit: f64,
    pub y_hat: f64,
}

/// Data-term gradient of one sample; embeddings are row-sparse.
#[derive(Debug, Clone)]
pub struct SampleGrad {
    pub cell: (usize, usize, usize),
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub w1: ConvKernel,
    pub bias1: Vec<f64>,
    pub w2: ConvKernel,
    pub bias2: Vec<f64>,
    pub w3: Matrix,
    pub b3: Vec<f64>,
    pub w4: Vec<f64>,
    pub b_o: f64,
    /// `½(y − ŷ)²` at the traced parameters.
    pub loss: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> NtcnParams {
        NtcnParams::init(NtcnConfig::tiny().with_seed(seed), Dims::new(3, 2, 4)).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(NtcnConfig::standard().validate().is_ok());
        assert!(NtcnConfig::tiny().validate().is_ok());
        let bad = NtcnConfig {
            kernels: [6, 6],
            ..NtcnConfig::standard()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = NtcnConfig {
            hidden: 0,
            ..NtcnConfig::standard()
        };
        assert!(bad.validate().is_err());
        assert!(NtcnParams::init(bad, Dims::new(1, 1, 1)).is_err());
    }

    #[test]
    fn paper_shapes() {
        let cfg = NtcnConfig::standard();
        assert_eq!(cfg.conv_shapes().unwrap(), ([5; 3], [1; 3]));
        assert_eq!(cfg.flat_len().unwrap(), cfg.channels[1]);
        let p = NtcnParams::init(cfg, Dims::new(2, 2, 2)).unwrap();
        let tr = p.forward(1, 0, 1).unwrap();
        assert_eq!(tr.h1.shape(), [8, 5, 5, 5]);
        assert_eq!(tr.h2_pre.shape(), [16, 1, 1, 1]);
    }

    #[test]
    fn embeddings_in_init_range_and_deterministic() {
        let p = NtcnParams::init(NtcnConfig::standard().with_seed(3), Dims::new(5, 4, 6)).unwrap();
        for table in [&p.a, &p.b, &p.c] {
            assert!(table.values().iter().all(|&v| (0.0..0.004).contains(&v)));
        }
        assert!(p.bias1.iter().chain(&p.bias2).chain(&p.b3).all(|&v| v == 0.0));
        assert_eq!(p.b_o, 0.0);
        let q = NtcnParams::init(NtcnConfig::standard().with_seed(3), Dims::new(5, 4, 6)).unwrap();
        assert_eq!(p, q);
        let u1 = (6.0f64 / (216.0 + 8.0 * 216.0)).sqrt();
        assert!(p.w1.values().iter().all(|v| v.abs() < u1));
    }

    #[test]
    fn zero_head_gives_half() {
        let mut p = tiny(1);
        p.w4.iter_mut().for_each(|w| *w = 0.0);
        p.b_o = 0.0;
        for (s, q, t) in [(0, 0, 0), (2, 1, 3)] {
            assert_eq!(p.predict(s, q, t).unwrap(), 0.5);
        }
    }

    #[test]
    fn index_out_of_range() {
        assert!(matches!(
            tiny(0).forward(3, 0, 0),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    // Tiny config with every weight set by hand. The expected value is worked
    // out independently below in closed form.
    #[test]
    fn hand_computed_tiny_forward() {
        let dims = Dims::new(1, 1, 1);
        let mut p = NtcnParams::zeros(NtcnConfig::tiny(), dims).unwrap();
        p.a.row_mut(0).copy_from_slice(&[1.0, 2.0]);
        p.b.row_mut(0).copy_from_slice(&[1.0, 3.0]);
        p.c.row_mut(0).copy_from_slice(&[1.0, 1.0]);
        // outer product: [1,1,3,3,2,2,6,6], mean 3, population variance
        // (4+4+0+0+1+1+9+9)/8 = 3.5
        let w1 = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        p.w1.values_mut().copy_from_slice(&w1);
        p.bias1[0] = 0.5;
        p.w2.values_mut()[0] = 2.0;
        p.bias2[0] = -0.25;
        p.w3.values_mut()[0] = 1.5;
        p.b3[0] = 0.1;
        p.w4[0] = -0.8;
        p.b_o = 0.3;

        let sd = 3.5f64.sqrt() + 1e-8;
        // x'[0] = (1-3)/sd, x'[7] = (6-3)/sd
        let h1 = (-2.0 / sd + 3.0 / sd + 0.5f64).max(0.0);
        let h2 = (2.0 * h1 - 0.25f64).max(0.0);
        let h3 = (1.5 * h2 + 0.1f64).max(0.0);
        let expected = 1.0 / (1.0 + (-(-0.8 * h3 + 0.3f64)).exp());
        let got = p.predict(0, 0, 0).unwrap();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        // 1/sd ≈ 0.534522, h1 ≈ 1.034522, h2 ≈ 1.819045, h3 ≈ 2.828567, ŷ ≈ 0.123159
        assert!((got - 0.123_158_516).abs() < 1e-8, "{got}");
    }

    #[test]
    fn output_monotone_in_bias() {
        let mut p = tiny(4);
        let y0 = p.predict(1, 1, 1).unwrap();
        p.b_o += 0.1;
        let y1 = p.predict(1, 1, 1).unwrap();
        assert!(y1 > y0 && y1 < 1.0 && y0 > 0.0);
    }

    #[test]
    fn loss_examples() {
        let mut p = NtcnParams::zeros(NtcnConfig::tiny(), Dims::new(1, 1, 1)).unwrap();
        assert_eq!(loss(0.3, 0.3, &p, 0.0), 0.0);
        assert_eq!(loss(0.5, 1.0, &p, 0.0), 0.125);
        p.b_o = 2.0;
        assert_eq!(loss(0.5, 0.5, &p, 1.0), 4.0);
    }

    #[test]
    fn zero_residual_has_zero_data_gradient() {
        let p = tiny(2);
        let tr = p.forward(0, 1, 2).unwrap();
        let g = p.backward(&tr, tr.y_hat, 0.0).unwrap();
        assert!(g.tensors().iter().all(|(_, t)| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn weight_decay_component() {
        let mut p = tiny(2);
        p.b_o = 3.0;
        let tr = p.forward(0, 1, 2).unwrap();
        let g = p.backward(&tr, tr.y_hat, 0.5).unwrap();
        assert_eq!(g.b_o, 3.0);
        // untouched embedding rows still decay
        assert_eq!(g.a.row(2)[0], p.a.row(2)[0]);
    }

    #[test]
    fn disabled_conv_bias_stays_put() {
        let cfg = NtcnConfig {
            conv_bias: false,
            ..NtcnConfig::tiny()
        };
        let p = NtcnParams::init(cfg, Dims::new(2, 2, 2)).unwrap();
        let tr = p.forward(0, 0, 0).unwrap();
        let g = p.backward(&tr, 0.9, 0.1).unwrap();
        assert!(g.bias1.iter().chain(&g.bias2).all(|&v| v == 0.0));
    }

    #[test]
    fn relabeling_stations_preserves_predictions() {
        let p = tiny(6);
        let perm = [2usize, 0, 1];
        let mut q = p.clone();
        for (old, &new) in perm.iter().enumerate() {
            q.a.row_mut(new).copy_from_slice(p.a.row(old));
        }
        for (old, &new) in perm.iter().enumerate() {
            for ind in 0..2 {
                for t in 0..4 {
                    assert_eq!(p.predict(old, ind, t).unwrap(), q.predict(new, ind, t).unwrap());
                }
            }
        }
    }

    #[test]
    fn weight_decay_step_shrinks_norm() {
        let p = tiny(8);
        let tr = p.forward(1, 1, 1).unwrap();
        let g = p.backward(&tr, tr.y_hat, 0.1).unwrap();
        let mut q = p.clone();
        for ((_, t), (_, gv)) in q.tensors_mut().into_iter().zip(g.tensors()) {
            for (v, d) in t.iter_mut().zip(gv) {
                *v -= 0.01 * d;
            }
        }
        assert!(q.squared_norm() < p.squared_norm());
    }
}
