//! First-order optimizers over a model's parameter tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig::Sgd { lr }
    }

    /// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn with_lr(self, lr: f64) -> Self {
        match self {
            OptimizerConfig::Sgd { .. } => OptimizerConfig::Sgd { lr },
            OptimizerConfig::Adam {
                beta1, beta2, eps, ..
            } => OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Sgd { .. } => "sgd",
            OptimizerConfig::Adam { .. } => "adam",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if let OptimizerConfig::Adam {
            beta1, beta2, eps, ..
        } = *self
        {
            let ok = (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0;
            if !ok {
                return Err(Error::Config(
                    "Adam needs β₁, β₂ in [0, 1) and ε > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

/// `θ ← θ − η·g`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One bias-corrected Adam update.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) {
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Optimizer bound to one model's tensor layout.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    adam: Vec<AdamState>,
}

impl Optimizer {
    pub fn new<M: Model>(config: OptimizerConfig, model: &M) -> Result<Self> {
        config.validate()?;
        let adam = match config {
            OptimizerConfig::Adam { .. } => model
                .tensors()
                .iter()
                .map(|(_, t)| AdamState::new(t.len()))
                .collect(),
            OptimizerConfig::Sgd { .. } => Vec::new(),
        };
        Ok(Self { config, adam })
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    pub fn step<M: Model>(&mut self, model: &mut M, grad: &M) {
        let grads = grad.tensors();
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                for ((_, p), (_, g)) in model.tensors_mut().into_iter().zip(grads) {
                    sgd_step(p, g, lr);
                }
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                for (((_, p), (_, g)), state) in
                    model.tensors_mut().into_iter().zip(grads).zip(&mut self.adam)
                {
                    state.step(p, g, lr, beta1, beta2, eps);
                }
            }
        }
    }
}
