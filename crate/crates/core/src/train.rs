//! Training loop, early stopping and evaluation metrics.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Entry, ObservationSet, SplitSet};
use crate::error::{Error, Result};
use crate::model::{batch_gradient, objective, Model, ModelKind};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::par::{map_ordered, Parallelism};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    /// Entries per optimizer step; 1 gives per-entry updates.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once consecutive epoch objectives differ by less than this.
    pub early_stop_tol: f64,
    pub lambda: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Reduce per-sample gradients in entry order.
    pub deterministic: bool,
    pub parallelism: Parallelism,
    /// Optional second criterion: stop after this many epochs without a new
    /// best validation RMSE.
    pub patience: Option<usize>,
}

impl TrainConfig {
    /// Defaults per model kind. The factor baselines start near the origin,
    /// where plain gradient descent barely moves a trilinear model and any
    /// weight decay pins it there, so they default to Adam with `λ = 0`.
    pub fn for_model(kind: ModelKind) -> Self {
        let (optimizer, lambda) = match kind {
            ModelKind::Ntcn => (OptimizerConfig::adam(1e-3), 1e-4),
            ModelKind::Tucker | ModelKind::Cp => (OptimizerConfig::adam(1e-2), 0.0),
        };
        Self {
            optimizer,
            batch_size: 32,
            max_epochs: 1000,
            early_stop_tol: 1e-5,
            lambda,
            seed: 0,
            deterministic: false,
            parallelism: Parallelism::default(),
            patience: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max epochs must be at least 1".into()));
        }
        if !(self.early_stop_tol >= 0.0) {
            return Err(Error::Config("early-stop tolerance must be nonnegative".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be positive".into()));
        }
        Ok(())
    }
}

/// Scale the scored values live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// After the preprocessing transform (what models are trained on).
    #[default]
    Transformed,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    pub mae: f64,
    pub count: usize,
    pub scale: Scale,
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<8} {:>14}", "metric", "value")?;
        writeln!(f, "{:<8} {:>14.8}", "RMSE", self.rmse)?;
        writeln!(f, "{:<8} {:>14.8}", "MAE", self.mae)?;
        writeln!(f, "{:<8} {:>14}", "count", self.count)?;
        write!(
            f,
            "{:<8} {:>14}",
            "scale",
            match self.scale {
                Scale::Transformed => "transformed",
                Scale::Raw => "raw",
            }
        )
    }
}

/// RMSE and MAE over `(observed, predicted)` pairs, summed in order.
pub fn metrics(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<EvalReport> {
    let (mut sq, mut abs, mut n) = (0.0, 0.0, 0usize);
    for (y, y_hat) in pairs {
        let r = y - y_hat;
        sq += r * r;
        abs += r.abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptySet);
    }
    Ok(EvalReport {
        rmse: (sq / n as f64).sqrt(),
        mae: abs / n as f64,
        count: n,
        scale: Scale::Transformed,
    })
}

/// Scores `model` on exactly the entries of `set`.
pub fn evaluate<M: Model>(model: &M, set: &ObservationSet, mode: Parallelism) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    if set.dims() != model.dims() {
        return Err(Error::Validation(format!(
            "set dims {} differ from model dims {}",
            set.dims(),
            model.dims()
        )));
    }
    let predictions = map_ordered(set.entries(), mode, |e| model.predict_scored(e.s, e.p, e.t));
    let pairs = set
        .entries()
        .iter()
        .zip(predictions)
        .map(|(e, p)| p.map(|p| (e.y, p)))
        .collect::<Result<Vec<_>>>()?;
    metrics(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    ValidationPatience,
}

/// Halts when two consecutive objectives differ by less than `tol`.
#[derive(Debug, Clone)]
pub struct EarlyStop {
    tol: f64,
    prev: Option<f64>,
}

impl EarlyStop {
    pub fn new(tol: f64) -> Self {
        Self { tol, prev: None }
    }

    /// Records an epoch objective; true means stop now.
    pub fn observe(&mut self, objective: f64) -> bool {
        let stop = self
            .prev
            .is_some_and(|prev| (objective - prev).abs() < self.tol);
        self.prev = Some(objective);
        stop
    }
}

/// Epoch driver shared by [`train`]: calls `epoch` for 1, 2, … until the
/// objective settles or `max_epochs` is reached. Returns the last epoch run.
pub fn run_epochs(
    max_epochs: usize,
    tol: f64,
    mut epoch: impl FnMut(usize) -> Result<EpochOutcome>,
) -> Result<(usize, StopReason)> {
    let mut stopper = EarlyStop::new(tol);
    for t in 1..=max_epochs {
        let outcome = epoch(t)?;
        if !outcome.objective.is_finite() {
            return Err(Error::Divergence {
                epoch: t,
                value: outcome.objective,
            });
        }
        if stopper.observe(outcome.objective) {
            return Ok((t, StopReason::EarlyStop));
        }
        if outcome.halt {
            return Ok((t, StopReason::ValidationPatience));
        }
    }
    Ok((max_epochs, StopReason::MaxEpochs))
}

/// What one epoch reports back to [`run_epochs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochOutcome {
    pub objective: f64,
    /// Request a stop for a reason other than the objective settling.
    pub halt: bool,
}

impl From<f64> for EpochOutcome {
    fn from(objective: f64) -> Self {
        Self {
            objective,
            halt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training objective after the epoch's updates.
    pub objective: f64,
    pub val_rmse: Option<f64>,
    pub val_mae: Option<f64>,
    /// Seconds since training started; left out of deterministic runs so
    /// their logs are bit-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_secs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub model: ModelKind,
    pub config: TrainConfig,
    pub records: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
}

impl TrainLog {
    /// One JSON object per line: a header, one record per epoch, a summary.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = serde_json::json!({
            "record": "config",
            "model": self.model,
            "config": self.config,
        });
        out.push_str(&header.to_string());
        out.push('\n');
        for r in &self.records {
            let mut v = serde_json::to_value(r).expect("plain data");
            v["record"] = "epoch".into();
            out.push_str(&v.to_string());
            out.push('\n');
        }
        let summary = serde_json::json!({
            "record": "summary",
            "epochs": self.records.len(),
            "stop_reason": self.stop_reason,
            "best_epoch": self.best_epoch,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.records.last().map(|r| r.objective)
    }

    pub fn best_val_rmse(&self) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.epoch == self.best_epoch)
            .and_then(|r| r.val_rmse)
    }
}

/// Fits `model` on `split.train`.
///
/// Each epoch shuffles the training entries, takes one optimizer step per
/// batch, then records the training objective and (if present) validation
/// metrics. Returns the parameters with the best validation RMSE, or the
/// final parameters when there is no validation part.
pub fn train<M: Model>(mut model: M, split: &SplitSet, cfg: &TrainConfig) -> Result<(M, TrainLog)> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut optimizer = Optimizer::new(cfg.optimizer, &model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<Entry> = split.train.entries().to_vec();
    let has_val = !split.validation.is_empty();
    let mut records = Vec::new();
    let mut best: Option<(f64, usize, M)> = None;
    let mut since_best = 0usize;
    let started = Instant::now();

    let (last_epoch, stop_reason) = run_epochs(cfg.max_epochs, cfg.early_stop_tol, |epoch| {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (grad, _) =
                batch_gradient(&model, batch, cfg.lambda, cfg.parallelism, cfg.deterministic)?;
            optimizer.step(&mut model, &grad);
        }
        let obj = objective(&model, split.train.entries(), cfg.lambda, cfg.parallelism)?;
        let mut halt = false;
        let (val_rmse, val_mae) = if has_val && obj.is_finite() {
            let rep = evaluate(&model, &split.validation, cfg.parallelism)?;
            if best.as_ref().is_none_or(|(b, _, _)| rep.rmse < *b) {
                best = Some((rep.rmse, epoch, model.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                halt = cfg.patience.is_some_and(|p| since_best >= p);
            }
            (Some(rep.rmse), Some(rep.mae))
        } else {
            (None, None)
        };
        records.push(EpochRecord {
            epoch,
            objective: obj,
            val_rmse,
            val_mae,
            wall_secs: (!cfg.deterministic).then(|| started.elapsed().as_secs_f64()),
        });
        Ok(EpochOutcome {
            objective: obj,
            halt,
        })
    })?;

    let kind = model.kind();
    let (model, best_epoch) = match best {
        Some((_, epoch, m)) => (m, epoch),
        None => (model, last_epoch),
    };
    Ok((
        model,
        TrainLog {
            model: kind,
            config: *cfg,
            records,
            stop_reason,
            best_epoch,
        },
    ))
}

/// Outcome of [`grid_search`].
#[derive(Debug, Clone)]
pub struct GridResult<M> {
    pub model: M,
    pub log: TrainLog,
    pub lr: f64,
    pub lambda: f64,
    /// `(lr, λ, best validation RMSE)` for every grid point that trained.
    pub scores: Vec<(f64, f64, f64)>,
}

/// Trains once per `(lr, λ)` pair and keeps the run with the lowest
/// validation RMSE. Divergent grid points are skipped.
pub fn grid_search<M: Model>(
    init: impl Fn() -> M,
    split: &SplitSet,
    base: &TrainConfig,
    lrs: &[f64],
    lambdas: &[f64],
) -> Result<GridResult<M>> {
    if split.validation.is_empty() {
        return Err(Error::Config("grid search needs a validation part".into()));
    }
    let mut best: Option<GridResult<M>> = None;
    let mut scores = Vec::new();
    for &lr in lrs {
        for &lambda in lambdas {
            let cfg = TrainConfig {
                optimizer: base.optimizer.with_lr(lr),
                lambda,
                ..*base
            };
            let (model, log) = match train(init(), split, &cfg) {
                Ok(out) => out,
                Err(Error::Divergence { .. }) => continue,
                Err(e) => return Err(e),
            };
            let score = log.best_val_rmse().unwrap_or(f64::INFINITY);
            scores.push((lr, lambda, score));
            if best
                .as_ref()
                .is_none_or(|b| score < b.log.best_val_rmse().unwrap_or(f64::INFINITY))
            {
                best = Some(GridResult {
                    model,
                    log,
                    lr,
                    lambda,
                    scores: Vec::new(),
                });
            }
        }
    }
    let mut best = best.ok_or(Error::Divergence {
        epoch: 0,
        value: f64::NAN,
    })?;
    best.scores = scores;
    Ok(best)
}
