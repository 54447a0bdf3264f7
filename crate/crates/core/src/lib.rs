//! Imputation of sparse station × indicator × time tensors.
//!
//! The crate provides a neural Tucker convolutional network ([`ntcn`]), two
//! multilinear baselines ([`baselines`]), the tensor kernels they share
//! ([`tensor`]), data handling ([`data`]) and a training loop ([`train`]).
//!
//! Batch gradients, evaluation and full-tensor imputation run on rayon when
//! the `parallel` feature is on (the default). Building with
//! `--no-default-features` gives a purely sequential library.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod ntcn;
pub mod optim;
pub mod par;
pub mod tensor;
pub mod train;

pub use baselines::{CpParams, FactorConfig, LossKind, TuckerParams};
pub use checkpoint::Checkpoint;
pub use data::{Dims, Entry, ObservationSet, SplitRatio, SplitSet};
pub use error::{CheckpointError, Error, Result};
pub use model::{AnyModel, Model, ModelKind};
pub use ntcn::{NtcnConfig, NtcnParams};
pub use optim::OptimizerConfig;
pub use par::Parallelism;
pub use train::{evaluate, train, EvalReport, TrainConfig, TrainLog};
