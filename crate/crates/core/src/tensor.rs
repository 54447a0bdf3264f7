//! Small dense tensors and the forward/backward rules used by the NTCN
//! forward pass. Everything is `f64`, row-major, and allocation-light.

use crate::error::{Error, Result};

/// Dense 3-way tensor, row-major over `(d1, d2, d3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor3 {
    shape: [usize; 3],
    values: Vec<f64>,
}

impl DenseTensor3 {
    pub fn new(shape: [usize; 3], values: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(Error::shape(
                "values",
                format!("expected {len} values for {shape:?}, found {}", values.len()),
            ));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    /// Views the tensor as a single-channel 4-way tensor.
    pub fn into_channels(self) -> DenseTensor4 {
        let [a, b, c] = self.shape;
        DenseTensor4 {
            shape: [1, a, b, c],
            values: self.values,
        }
    }
}

/// Dense `(channels, d1, d2, d3)` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor4 {
    shape: [usize; 4],
    values: Vec<f64>,
}

impl DenseTensor4 {
    pub fn new(shape: [usize; 4], values: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(Error::shape(
                "values",
                format!("expected {len} values for {shape:?}, found {}", values.len()),
            ));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[1], self.shape[2], self.shape[3]]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Convolution weights `(out, in, k, k, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    shape: [usize; 5],
    values: Vec<f64>,
}

impl ConvKernel {
    pub fn new(out_channels: usize, in_channels: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        let shape = [out_channels, in_channels, k, k, k];
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(Error::shape(
                "kernel",
                format!("expected {len} weights for {shape:?}, found {}", values.len()),
            ));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, k: usize) -> Self {
        Self {
            shape: [out_channels, in_channels, k, k, k],
            values: vec![0.0; out_channels * in_channels * k * k * k],
        }
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn out_channels(&self) -> usize {
        self.shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.shape[1]
    }

    pub fn size(&self) -> usize {
        self.shape[2]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// `a ∘ b ∘ c`, element `(n, m, k) = a[n]·b[m]·c[k]`.
pub fn outer3(a: &[f64], b: &[f64], c: &[f64]) -> DenseTensor3 {
    let mut values = Vec::with_capacity(a.len() * b.len() * c.len());
    for &x in a {
        for &y in b {
            let xy = x * y;
            values.extend(c.iter().map(|&z| xy * z));
        }
    }
    DenseTensor3 {
        shape: [a.len(), b.len(), c.len()],
        values,
    }
}

/// Gradients of a scalar loss w.r.t. the three factors of [`outer3`].
pub fn outer3_backward(
    a: &[f64],
    b: &[f64],
    c: &[f64],
    upstream: &DenseTensor3,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (mut ga, mut gb, mut gc) = (vec![0.0; a.len()], vec![0.0; b.len()], vec![0.0; c.len()]);
    let g = upstream.values();
    let k_len = c.len();
    for (n, &an) in a.iter().enumerate() {
        for (m, &bm) in b.iter().enumerate() {
            let row = &g[(n * b.len() + m) * k_len..][..k_len];
            // Σ_k g[n,m,k] c[k]
            let gc_dot: f64 = row.iter().zip(c).map(|(g, c)| g * c).sum();
            ga[n] += gc_dot * bm;
            gb[m] += gc_dot * an;
            let ab = an * bm;
            for (acc, gv) in gc.iter_mut().zip(row) {
                *acc += gv * ab;
            }
        }
    }
    (ga, gb, gc)
}

/// Per-sample mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

/// `(x − μ) / (σ + eps)` over all elements of `x`.
pub fn standardize(x: &DenseTensor3, eps: f64) -> (DenseTensor3, Moments) {
    let n = x.values.len() as f64;
    let mean = x.values.iter().sum::<f64>() / n;
    let var = x.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let denom = std + eps;
    let values = x.values.iter().map(|v| (v - mean) / denom).collect();
    (
        DenseTensor3 {
            shape: x.shape,
            values,
        },
        Moments { mean, std },
    )
}

/// Backward of [`standardize`], differentiating through both μ and σ.
pub fn standardize_backward(
    x: &DenseTensor3,
    moments: Moments,
    eps: f64,
    upstream: &DenseTensor3,
) -> DenseTensor3 {
    let n = x.values.len() as f64;
    let Moments { mean, std } = moments;
    let denom = std + eps;
    let g = &upstream.values;
    let g_sum: f64 = g.iter().sum();
    let g_dot_c: f64 = g.iter().zip(&x.values).map(|(g, v)| g * (v - mean)).sum();
    // dσ/dx_i = (x_i − μ)/(nσ); zero when the input is constant
    let sigma_coeff = if std > 0.0 {
        g_dot_c / (denom * denom * n * std)
    } else {
        0.0
    };
    let values = g
        .iter()
        .zip(&x.values)
        .map(|(gi, xi)| (gi - g_sum / n) / denom - sigma_coeff * (xi - mean))
        .collect();
    DenseTensor3 {
        shape: x.shape,
        values,
    }
}

fn conv_out_dim(axis: &str, d: usize, k: usize, stride: usize) -> Result<usize> {
    if d < k {
        return Err(Error::shape(
            axis,
            format!("extent {d} is smaller than kernel size {k}"),
        ));
    }
    if !(d - k).is_multiple_of(stride) {
        return Err(Error::shape(
            axis,
            format!("(extent {d} − kernel {k}) is not divisible by stride {stride}"),
        ));
    }
    Ok((d - k) / stride + 1)
}

/// Output spatial shape of a valid convolution, or the axis that fails.
pub fn conv3d_output_shape(spatial: [usize; 3], k: usize, stride: usize) -> Result<[usize; 3]> {
    if stride == 0 {
        return Err(Error::shape("stride", "stride must be positive"));
    }
    Ok([
        conv_out_dim("axis 1", spatial[0], k, stride)?,
        conv_out_dim("axis 2", spatial[1], k, stride)?,
        conv_out_dim("axis 3", spatial[2], k, stride)?,
    ])
}

fn check_conv(input: &DenseTensor4, kernel: &ConvKernel, bias: &[f64]) -> Result<()> {
    if kernel.in_channels() != input.shape[0] {
        return Err(Error::shape(
            "channels",
            format!(
                "kernel expects {} input channels, input has {}",
                kernel.in_channels(),
                input.shape[0]
            ),
        ));
    }
    if bias.len() != kernel.out_channels() {
        return Err(Error::shape(
            "bias",
            format!(
                "{} biases for {} output channels",
                bias.len(),
                kernel.out_channels()
            ),
        ));
    }
    Ok(())
}

/// Valid (unpadded) 3D cross-correlation with per-output-channel bias.
pub fn conv3d_valid(
    input: &DenseTensor4,
    kernel: &ConvKernel,
    bias: &[f64],
    stride: usize,
) -> Result<DenseTensor4> {
    check_conv(input, kernel, bias)?;
    let k = kernel.size();
    let [o1, o2, o3] = conv3d_output_shape(input.spatial(), k, stride)?;
    let [c_in, d1, d2, d3] = input.shape;
    let c_out = kernel.out_channels();
    let mut out = vec![0.0; c_out * o1 * o2 * o3];
    let plane = o1 * o2 * o3;

    for oc in 0..c_out {
        let out_c = &mut out[oc * plane..(oc + 1) * plane];
        out_c.iter_mut().for_each(|v| *v = bias[oc]);
        for ic in 0..c_in {
            let in_c = &input.values[ic * d1 * d2 * d3..(ic + 1) * d1 * d2 * d3];
            let w_base = (oc * c_in + ic) * k * k * k;
            for a in 0..k {
                for b in 0..k {
                    for c in 0..k {
                        let w = kernel.values[w_base + (a * k + b) * k + c];
                        if w == 0.0 {
                            continue;
                        }
                        for i in 0..o1 {
                            for j in 0..o2 {
                                let row_in = ((i * stride + a) * d2 + j * stride + b) * d3 + c;
                                let row_out = (i * o2 + j) * o3;
                                let dst = &mut out_c[row_out..row_out + o3];
                                if stride == 1 {
                                    for (d, s) in dst.iter_mut().zip(&in_c[row_in..row_in + o3]) {
                                        *d += w * s;
                                    }
                                } else {
                                    for (l, d) in dst.iter_mut().enumerate() {
                                        *d += w * in_c[row_in + l * stride];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(DenseTensor4 {
        shape: [c_out, o1, o2, o3],
        values: out,
    })
}

/// Gradients of [`conv3d_valid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: DenseTensor4,
    pub kernel: ConvKernel,
    pub bias: Vec<f64>,
}

/// Exact adjoint of [`conv3d_valid`] for the given upstream gradient.
pub fn conv3d_backward(
    input: &DenseTensor4,
    kernel: &ConvKernel,
    upstream: &DenseTensor4,
    stride: usize,
) -> Result<ConvGrads> {
    let k = kernel.size();
    if kernel.in_channels() != input.shape[0] {
        return Err(Error::shape(
            "channels",
            format!(
                "kernel expects {} input channels, input has {}",
                kernel.in_channels(),
                input.shape[0]
            ),
        ));
    }
    let [o1, o2, o3] = conv3d_output_shape(input.spatial(), k, stride)?;
    let c_out = kernel.out_channels();
    if upstream.shape != [c_out, o1, o2, o3] {
        return Err(Error::shape(
            "upstream",
            format!(
                "expected {:?}, found {:?}",
                [c_out, o1, o2, o3],
                upstream.shape
            ),
        ));
    }
    let [c_in, d1, d2, d3] = input.shape;
    let plane = o1 * o2 * o3;
    let vol = d1 * d2 * d3;
    let mut g_in = vec![0.0; input.values.len()];
    let mut g_w = vec![0.0; kernel.values.len()];
    let mut g_b = vec![0.0; c_out];

    for oc in 0..c_out {
        let up = &upstream.values[oc * plane..(oc + 1) * plane];
        g_b[oc] = up.iter().sum();
        for ic in 0..c_in {
            let in_c = &input.values[ic * vol..(ic + 1) * vol];
            let gin_c = &mut g_in[ic * vol..(ic + 1) * vol];
            let w_base = (oc * c_in + ic) * k * k * k;
            for a in 0..k {
                for b in 0..k {
                    for c in 0..k {
                        let widx = w_base + (a * k + b) * k + c;
                        let w = kernel.values[widx];
                        let mut acc = 0.0;
                        for i in 0..o1 {
                            for j in 0..o2 {
                                let row_in = ((i * stride + a) * d2 + j * stride + b) * d3 + c;
                                let row_up = &up[(i * o2 + j) * o3..(i * o2 + j + 1) * o3];
                                if stride == 1 {
                                    let src = &in_c[row_in..row_in + o3];
                                    acc += row_up.iter().zip(src).map(|(u, x)| u * x).sum::<f64>();
                                    for (gi, u) in gin_c[row_in..row_in + o3].iter_mut().zip(row_up) {
                                        *gi += w * u;
                                    }
                                } else {
                                    for (l, u) in row_up.iter().enumerate() {
                                        acc += u * in_c[row_in + l * stride];
                                        gin_c[row_in + l * stride] += w * u;
                                    }
                                }
                            }
                        }
                        g_w[widx] += acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: DenseTensor4 {
            shape: input.shape,
            values: g_in,
        },
        kernel: ConvKernel {
            shape: kernel.shape,
            values: g_w,
        },
        bias: g_b,
    })
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Passes `upstream` where the pre-activation was positive.
pub fn relu_backward(pre: &[f64], upstream: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(upstream)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect()
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape(
                "matrix",
                format!(
                    "expected {} values for {rows}×{cols}, found {}",
                    rows * cols,
                    values.len()
                ),
            ));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// `W x + b`.
pub fn affine(x: &[f64], w: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if w.cols != x.len() {
        return Err(Error::shape(
            "columns",
            format!("matrix has {} columns, input has length {}", w.cols, x.len()),
        ));
    }
    if b.len() != w.rows {
        return Err(Error::shape(
            "bias",
            format!("matrix has {} rows, bias has length {}", w.rows, b.len()),
        ));
    }
    Ok((0..w.rows)
        .map(|r| w.row(r).iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b[r])
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub input: Vec<f64>,
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// `(Wᵀ g, g xᵀ, g)`.
pub fn affine_backward(x: &[f64], w: &Matrix, upstream: &[f64]) -> Result<AffineGrads> {
    if w.cols != x.len() || w.rows != upstream.len() {
        return Err(Error::shape(
            "affine",
            format!(
                "matrix {}×{} incompatible with input {} and upstream {}",
                w.rows,
                w.cols,
                x.len(),
                upstream.len()
            ),
        ));
    }
    let mut gx = vec![0.0; x.len()];
    let mut gw = Matrix::zeros(w.rows, w.cols);
    for (r, &g) in upstream.iter().enumerate() {
        for ((gxc, wv), (gwv, xv)) in gx
            .iter_mut()
            .zip(w.row(r))
            .zip(gw.row_mut(r).iter_mut().zip(x))
        {
            *gxc += wv * g;
            *gwv = g * xv;
        }
    }
    Ok(AffineGrads {
        input: gx,
        weight: gw,
        bias: upstream.to_vec(),
    })
}

pub fn sigmoid(x: f64) -> f64 {
    crate::data::logistic(x)
}

/// Gradient through the sigmoid given its output `y`.
pub fn sigmoid_backward(y: f64, upstream: f64) -> f64 {
    upstream * y * (1.0 - y)
}

/// Row-major linearization.
pub fn flatten(x: &DenseTensor4) -> Vec<f64> {
    x.values.clone()
}

pub fn unflatten(shape: [usize; 4], values: Vec<f64>) -> Result<DenseTensor4> {
    DenseTensor4::new(shape, values)
}
