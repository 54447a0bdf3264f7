//! Run configuration: built-in defaults, overlaid by a JSON config file,
//! overlaid by command-line flags.

use std::path::Path;

use clap::{Args, ValueEnum};
use hds_impute::data::Preprocess;
use hds_impute::{
    FactorConfig, LossKind, ModelKind, NtcnConfig, OptimizerConfig, Parallelism, SplitRatio,
    TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LossName {
    Squared,
    Cauchy,
}

/// Fully resolved settings for one run; this is what the manifest records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub seed: u64,
    pub deterministic: bool,
    pub preprocess: Preprocess,
    #[serde(with = "ratio_text")]
    pub split: SplitRatio,
    pub rank: usize,
    pub channels: [usize; 2],
    pub kernels: [usize; 2],
    pub hidden: usize,
    pub conv_bias: bool,
    pub init_bound: f64,
    pub loss: LossName,
    pub cauchy_scale: f64,
    pub lambda: f64,
    pub optimizer: OptimizerName,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub early_stop_tol: f64,
    pub patience: Option<usize>,
}

/// Same keys as [`RunConfig`], every one optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PartialConfig {
    pub model: Option<ModelKind>,
    pub seed: Option<u64>,
    pub deterministic: Option<bool>,
    pub preprocess: Option<Preprocess>,
    #[serde(default, with = "opt_ratio_text")]
    pub split: Option<SplitRatio>,
    pub rank: Option<usize>,
    pub channels: Option<[usize; 2]>,
    pub kernels: Option<[usize; 2]>,
    pub hidden: Option<usize>,
    pub conv_bias: Option<bool>,
    pub init_bound: Option<f64>,
    pub loss: Option<LossName>,
    pub cauchy_scale: Option<f64>,
    pub lambda: Option<f64>,
    pub optimizer: Option<OptimizerName>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub early_stop_tol: Option<f64>,
    pub patience: Option<usize>,
}

macro_rules! overlay {
    ($base:expr, $top:expr; $($f:ident),* $(,)?) => {
        PartialConfig { $($f: $top.$f.or($base.$f)),* }
    };
}

impl PartialConfig {
    /// Values in `top` win.
    pub fn overlay(self, top: PartialConfig) -> PartialConfig {
        overlay!(self, top; model, seed, deterministic, preprocess, split, rank, channels,
            kernels, hidden, conv_bias, init_bound, loss, cauchy_scale, lambda, optimizer, lr,
            batch_size, epochs, early_stop_tol, patience)
    }

    /// Reads a config file. A run manifest is accepted too; its `config`
    /// section is used.
    pub fn load(path: &Path) -> Result<PartialConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        if value.get("tool").is_some() {
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
        }
        serde_json::from_value(value)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

impl RunConfig {
    pub fn resolve(p: PartialConfig) -> Result<RunConfig, CliError> {
        let model = p.model.unwrap_or(ModelKind::Ntcn);
        let base = TrainConfig::for_model(model);
        let default_opt = match base.optimizer {
            OptimizerConfig::Sgd { .. } => OptimizerName::Sgd,
            OptimizerConfig::Adam { .. } => OptimizerName::Adam,
        };
        let ntcn = NtcnConfig::default();
        let cfg = RunConfig {
            model,
            seed: p.seed.unwrap_or(0),
            deterministic: p.deterministic.unwrap_or(false),
            preprocess: p.preprocess.unwrap_or_default(),
            split: p.split.unwrap_or(SplitRatio::SPARSE_TRAIN),
            rank: p.rank.unwrap_or(10),
            channels: p.channels.unwrap_or(ntcn.channels),
            kernels: p.kernels.unwrap_or(ntcn.kernels),
            hidden: p.hidden.unwrap_or(ntcn.hidden),
            conv_bias: p.conv_bias.unwrap_or(true),
            init_bound: p.init_bound.unwrap_or(ntcn.init_bound),
            loss: p.loss.unwrap_or(LossName::Squared),
            cauchy_scale: p.cauchy_scale.unwrap_or(1.0),
            lambda: p.lambda.unwrap_or(base.lambda),
            optimizer: p.optimizer.unwrap_or(default_opt),
            lr: p.lr.unwrap_or(base.optimizer.lr()),
            batch_size: p.batch_size.unwrap_or(base.batch_size),
            epochs: p.epochs.unwrap_or(base.max_epochs),
            early_stop_tol: p.early_stop_tol.unwrap_or(base.early_stop_tol),
            patience: p.patience,
        };
        cfg.split.validate().map_err(CliError::from_config)?;
        cfg.train_config().validate().map_err(CliError::from_config)?;
        match cfg.model {
            ModelKind::Ntcn => cfg.ntcn_config().validate().map_err(CliError::from_config)?,
            _ => cfg.factor_config().validate().map_err(CliError::from_config)?,
        }
        Ok(cfg)
    }

    pub fn ntcn_config(&self) -> NtcnConfig {
        NtcnConfig {
            ranks: [self.rank; 3],
            channels: self.channels,
            kernels: self.kernels,
            hidden: self.hidden,
            conv_bias: self.conv_bias,
            init_bound: self.init_bound,
            seed: self.seed,
            ..NtcnConfig::default()
        }
    }

    pub fn factor_config(&self) -> FactorConfig {
        FactorConfig {
            ranks: [self.rank; 3],
            init_bound: self.init_bound,
            loss: match self.loss {
                LossName::Squared => LossKind::Squared,
                LossName::Cauchy => LossKind::Cauchy {
                    scale: self.cauchy_scale,
                },
            },
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            optimizer: match self.optimizer {
                OptimizerName::Sgd => OptimizerConfig::sgd(self.lr),
                OptimizerName::Adam => OptimizerConfig::adam(self.lr),
            },
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            early_stop_tol: self.early_stop_tol,
            lambda: self.lambda,
            seed: self.seed,
            deterministic: self.deterministic,
            parallelism: Parallelism::default(),
            patience: self.patience,
        }
    }
}

/// Flags shared by the commands that build or train a model.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// JSON file with any of these settings (keys are the flag names); a run
    /// manifest also works
    #[arg(long, value_name = "PATH")]
    pub config: Option<std::path::PathBuf>,
    /// Seed for initialization, splitting and shuffling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Reduce gradients in a fixed order so reruns are bit-identical
    #[arg(long)]
    pub deterministic: bool,
    /// Value transform applied before training [default: sigmoid]
    #[arg(long, value_parser = parse_preprocess)]
    pub preprocess: Option<Preprocess>,
    /// Train:validation:test ratio [default: 1:2:7]
    #[arg(long, value_parser = parse_ratio, value_name = "R1:R2:R3")]
    pub split: Option<SplitRatio>,
    /// Model to train [default: ntcn]
    #[arg(long, value_parser = parse_model)]
    pub model: Option<ModelKind>,
    /// Embedding width (network) or factor rank (baselines) [default: 10]
    #[arg(long)]
    pub rank: Option<usize>,
    /// Output channels of the two convolutions [default: 8,16]
    #[arg(long, value_parser = parse_pair, value_name = "C1,C2")]
    pub channels: Option<[usize; 2]>,
    /// Kernel sizes of the two convolutions [default: 6,5]
    #[arg(long, value_parser = parse_pair, value_name = "K1,K2")]
    pub kernels: Option<[usize; 2]>,
    /// Hidden width of the dense layer [default: 32]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Keep convolution biases fixed at zero
    #[arg(long)]
    pub no_conv_bias: bool,
    /// Embeddings and factors start from U(0, bound) [default: 0.004]
    #[arg(long)]
    pub init_bound: Option<f64>,
    /// Baseline loss [default: squared]
    #[arg(long, value_enum)]
    pub loss: Option<LossName>,
    /// Scale of the Cauchy loss [default: 1.0]
    #[arg(long)]
    pub cauchy_scale: Option<f64>,
    /// L2 coefficient [default: 1e-4 for ntcn, 0 for baselines]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Optimizer [default: adam]
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerName>,
    /// Learning rate [default: 1e-3 for ntcn, 1e-2 for baselines]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Entries per optimizer step [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Maximum number of epochs [default: 1000]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop when consecutive epoch objectives differ by less than this [default: 1e-5]
    #[arg(long)]
    pub early_stop_tol: Option<f64>,
    /// Also stop after this many epochs without a better validation RMSE
    #[arg(long)]
    pub patience: Option<usize>,
}

impl ConfigFlags {
    fn as_partial(&self) -> PartialConfig {
        PartialConfig {
            model: self.model,
            seed: self.seed,
            deterministic: self.deterministic.then_some(true),
            preprocess: self.preprocess,
            split: self.split,
            rank: self.rank,
            channels: self.channels,
            kernels: self.kernels,
            hidden: self.hidden,
            conv_bias: self.no_conv_bias.then_some(false),
            init_bound: self.init_bound,
            loss: self.loss,
            cauchy_scale: self.cauchy_scale,
            lambda: self.lambda,
            optimizer: self.optimizer,
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            early_stop_tol: self.early_stop_tol,
            patience: self.patience,
        }
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let file = match &self.config {
            Some(path) => PartialConfig::load(path)?,
            None => PartialConfig::default(),
        };
        RunConfig::resolve(file.overlay(self.as_partial()))
    }
}

fn parse_preprocess(s: &str) -> Result<Preprocess, String> {
    s.parse().map_err(|e: hds_impute::Error| e.to_string())
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: hds_impute::Error| e.to_string())
}

fn parse_ratio(s: &str) -> Result<SplitRatio, String> {
    s.parse().map_err(|e: hds_impute::Error| e.to_string())
}

fn parse_pair(s: &str) -> Result<[usize; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [a, b] => Ok([
            a.trim().parse().map_err(|e| format!("`{a}`: {e}"))?,
            b.trim().parse().map_err(|e| format!("`{b}`: {e}"))?,
        ]),
        _ => Err(format!("expected two comma-separated integers, got `{s}`")),
    }
}

mod ratio_text {
    use hds_impute::SplitRatio;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &SplitRatio, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(r)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SplitRatio, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

mod opt_ratio_text {
    use hds_impute::SplitRatio;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Option<SplitRatio>, s: S) -> Result<S::Ok, S::Error> {
        match r {
            Some(r) => s.collect_str(r),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<SplitRatio>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|t| t.parse().map_err(serde::de::Error::custom))
            .transpose()
    }
}
