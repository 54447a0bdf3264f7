//! Common surface over the three trainable models.

use serde::{Deserialize, Serialize};

use crate::baselines::{CpParams, FactorGrad, TuckerParams};
use crate::data::{Dims, Entry, ObservationSet};
use crate::error::{Error, Result};
use crate::ntcn::{NtcnParams, SampleGrad};
use crate::par::{fold_unordered, map_ordered, Parallelism};
use crate::tensor::DenseTensor3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Ntcn,
    Tucker,
    Cp,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Ntcn => "ntcn",
            ModelKind::Tucker => "tucker",
            ModelKind::Cp => "cp",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ntcn" => Ok(ModelKind::Ntcn),
            "tucker" => Ok(ModelKind::Tucker),
            "cp" => Ok(ModelKind::Cp),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

/// A trainable imputation model. The implementing type doubles as its own
/// dense gradient container.
///
/// The training objective of a set `Γ` is
/// `Σ_{e∈Γ} sample_loss(e) + global_penalty()`.
pub trait Model: Clone + Send + Sync {
    /// Row-sparse gradient of one entry's loss.
    type SampleGrad: Send;

    fn kind(&self) -> ModelKind;

    fn dims(&self) -> Dims;

    fn predict(&self, s: usize, p: usize, t: usize) -> Result<f64>;

    /// Prediction used for scoring and imputation.
    fn predict_scored(&self, s: usize, p: usize, t: usize) -> Result<f64> {
        self.predict(s, p, t)
    }

    fn sample_gradient(&self, entry: &Entry, lambda: f64) -> Result<Self::SampleGrad>;

    /// Loss carried by a sample gradient (at the parameters it was taken at).
    fn sample_grad_loss(g: &Self::SampleGrad) -> f64;

    fn sample_loss(&self, entry: &Entry, lambda: f64) -> Result<f64>;

    fn accumulate(grad: &mut Self, g: &Self::SampleGrad);

    /// Penalty not attributable to single entries.
    fn global_penalty(&self, lambda: f64) -> f64;

    fn add_global_penalty_grad(&self, grad: &mut Self, lambda: f64);

    /// Same shapes, all zeros.
    fn zeros_like(&self) -> Self;

    fn tensors(&self) -> Vec<(&'static str, &[f64])>;

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])>;

    fn shapes(&self) -> Vec<(&'static str, Vec<usize>)>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

impl Model for NtcnParams {
    type SampleGrad = SampleGrad;

    fn kind(&self) -> ModelKind {
        ModelKind::Ntcn
    }

    fn dims(&self) -> Dims {
        self.dims
    }

    fn predict(&self, s: usize, p: usize, t: usize) -> Result<f64> {
        NtcnParams::predict(self, s, p, t)
    }

    fn sample_gradient(&self, entry: &Entry, _lambda: f64) -> Result<SampleGrad> {
        let trace = self.forward(entry.s, entry.p, entry.t)?;
        self.sample_backward(&trace, entry.y)
    }

    fn sample_grad_loss(g: &SampleGrad) -> f64 {
        g.loss
    }

    fn sample_loss(&self, entry: &Entry, _lambda: f64) -> Result<f64> {
        let y_hat = NtcnParams::predict(self, entry.s, entry.p, entry.t)?;
        Ok(0.5 * (entry.y - y_hat).powi(2))
    }

    fn accumulate(grad: &mut Self, g: &SampleGrad) {
        NtcnParams::accumulate(grad, g);
    }

    fn global_penalty(&self, lambda: f64) -> f64 {
        if lambda == 0.0 {
            0.0
        } else {
            lambda * self.squared_norm()
        }
    }

    fn add_global_penalty_grad(&self, grad: &mut Self, lambda: f64) {
        self.add_weight_decay(grad, lambda);
    }

    fn zeros_like(&self) -> Self {
        NtcnParams::zeros(self.config, self.dims).expect("config already validated")
    }

    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        NtcnParams::tensors(self)
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        NtcnParams::tensors_mut(self)
    }

    fn shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        NtcnParams::shapes(self)
    }
}

macro_rules! factor_model {
    ($ty:ty, $kind:expr) => {
        impl Model for $ty {
            type SampleGrad = FactorGrad;

            fn kind(&self) -> ModelKind {
                $kind
            }

            fn dims(&self) -> Dims {
                self.dims
            }

            fn predict(&self, s: usize, p: usize, t: usize) -> Result<f64> {
                <$ty>::predict(self, s, p, t)
            }

            /// Unbounded factor predictions are clamped to the unit interval
            /// that preprocessed targets live in.
            fn predict_scored(&self, s: usize, p: usize, t: usize) -> Result<f64> {
                <$ty>::predict(self, s, p, t).map(|v| v.clamp(0.0, 1.0))
            }

            fn sample_gradient(&self, entry: &Entry, lambda: f64) -> Result<FactorGrad> {
                self.factor_gradients(entry, lambda)
            }

            fn sample_grad_loss(g: &FactorGrad) -> f64 {
                g.loss
            }

            fn sample_loss(&self, entry: &Entry, lambda: f64) -> Result<f64> {
                self.factor_gradients(entry, lambda).map(|g| g.loss)
            }

            fn accumulate(grad: &mut Self, g: &FactorGrad) {
                grad.accumulate(g);
            }

            fn global_penalty(&self, _lambda: f64) -> f64 {
                0.0
            }

            fn add_global_penalty_grad(&self, _grad: &mut Self, _lambda: f64) {}

            fn zeros_like(&self) -> Self {
                let mut z = self.clone();
                for (_, t) in z.tensors_mut() {
                    t.iter_mut().for_each(|v| *v = 0.0);
                }
                z
            }

            fn tensors(&self) -> Vec<(&'static str, &[f64])> {
                <$ty>::tensors(self)
            }

            fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
                <$ty>::tensors_mut(self)
            }

            fn shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
                <$ty>::shapes(self)
            }
        }
    };
}

factor_model!(TuckerParams, ModelKind::Tucker);
factor_model!(CpParams, ModelKind::Cp);

const ORDERED_CHUNK: usize = 256;

/// Gradient of `Σ_{e∈batch} sample_loss(e) + global_penalty()`, plus the
/// summed sample loss.
///
/// With `deterministic` set, per-sample gradients are reduced in entry order,
/// so the result is bit-identical whatever the thread count.
pub fn batch_gradient<M: Model>(
    model: &M,
    batch: &[Entry],
    lambda: f64,
    mode: Parallelism,
    deterministic: bool,
) -> Result<(M, f64)> {
    let (mut grad, loss) = if deterministic || !mode.is_parallel() {
        let mut grad = model.zeros_like();
        let mut loss = 0.0;
        // chunking bounds memory; accumulation stays in entry order
        for chunk in batch.chunks(ORDERED_CHUNK) {
            for g in map_ordered(chunk, mode, |e| model.sample_gradient(e, lambda)) {
                let g = g?;
                loss += M::sample_grad_loss(&g);
                M::accumulate(&mut grad, &g);
            }
        }
        (grad, loss)
    } else {
        let (grad, loss, err) = fold_unordered(
            batch,
            mode,
            || (model.zeros_like(), 0.0, None::<Error>),
            |(mut grad, mut loss, err), e| {
                if err.is_none() {
                    match model.sample_gradient(e, lambda) {
                        Ok(g) => {
                            loss += M::sample_grad_loss(&g);
                            M::accumulate(&mut grad, &g);
                        }
                        Err(e) => return (grad, loss, Some(e)),
                    }
                }
                (grad, loss, err)
            },
            |(mut g1, l1, e1), (g2, l2, e2)| {
                for ((_, a), (_, b)) in g1.tensors_mut().into_iter().zip(g2.tensors()) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
                (g1, l1 + l2, e1.or(e2))
            },
        );
        if let Some(e) = err {
            return Err(e);
        }
        (grad, loss)
    };
    model.add_global_penalty_grad(&mut grad, lambda);
    Ok((grad, loss))
}

/// `Σ_{e∈set} sample_loss(e) + global_penalty()`, summed in entry order.
pub fn objective<M: Model>(model: &M, entries: &[Entry], lambda: f64, mode: Parallelism) -> Result<f64> {
    let losses = map_ordered(entries, mode, |e| model.sample_loss(e, lambda));
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total + model.global_penalty(lambda))
}

/// Predicts every cell. When `observed` is given, its cells keep their
/// observed values.
pub fn impute_full<M: Model>(
    model: &M,
    observed: Option<&ObservationSet>,
    mode: Parallelism,
) -> Result<DenseTensor3> {
    let dims = model.dims();
    if let Some(obs) = observed {
        if obs.dims() != dims {
            return Err(Error::Validation(format!(
                "observation dims {} differ from model dims {}",
                obs.dims(),
                dims
            )));
        }
    }
    let cells: Vec<usize> = (0..dims.cells()).collect();
    let per_row = dims.indicators * dims.times;
    let predictions = map_ordered(&cells, mode, |&i| {
        model.predict_scored(i / per_row, (i / dims.times) % dims.indicators, i % dims.times)
    });
    let mut values = predictions.into_iter().collect::<Result<Vec<f64>>>()?;
    if let Some(obs) = observed {
        for e in obs.entries() {
            values[dims.linear(e.s, e.p, e.t)] = e.y;
        }
    }
    DenseTensor3::new(dims.as_array(), values)
}

/// Any of the three models, for code that picks the kind at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Ntcn(NtcnParams),
    Tucker(TuckerParams),
    Cp(CpParams),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Ntcn(_) => ModelKind::Ntcn,
            AnyModel::Tucker(_) => ModelKind::Tucker,
            AnyModel::Cp(_) => ModelKind::Cp,
        }
    }

    pub fn dims(&self) -> Dims {
        match self {
            AnyModel::Ntcn(m) => m.dims,
            AnyModel::Tucker(m) => m.dims,
            AnyModel::Cp(m) => m.dims,
        }
    }
}

impl From<NtcnParams> for AnyModel {
    fn from(m: NtcnParams) -> Self {
        AnyModel::Ntcn(m)
    }
}

impl From<TuckerParams> for AnyModel {
    fn from(m: TuckerParams) -> Self {
        AnyModel::Tucker(m)
    }
}

impl From<CpParams> for AnyModel {
    fn from(m: CpParams) -> Self {
        AnyModel::Cp(m)
    }
}

/// Runs `$body` with `$m` bound to the concrete model inside an [`AnyModel`].
#[macro_export]
macro_rules! with_model {
    ($any:expr, $m:ident => $body:expr) => {
        match $any {
            $crate::model::AnyModel::Ntcn($m) => $body,
            $crate::model::AnyModel::Tucker($m) => $body,
            $crate::model::AnyModel::Cp($m) => $body,
        }
    };
}
