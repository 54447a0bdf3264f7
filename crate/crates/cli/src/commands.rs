use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use hds_impute::checkpoint::Checkpoint;
use hds_impute::data::{
    format_coo, load_coo, split, synthesize_with_truth, FittedTransform, Nonlinearity,
    ObservationSet, SplitSet, SynthSpec,
};
use hds_impute::gradcheck::{self, Fault, GradcheckReport};
use hds_impute::model::impute_full;
use hds_impute::train::{grid_search, TrainLog};
use hds_impute::{
    evaluate, AnyModel, CpParams, Dims, EvalReport, Model, ModelKind, NtcnConfig, NtcnParams,
    Parallelism, SplitRatio, TuckerParams,
};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigFlags, RunConfig};
use crate::manifest::{self, write_file, RunManifest};
use crate::CliError;

macro_rules! with_model {
    ($any:expr, $m:ident => $body:expr) => {
        match $any {
            AnyModel::Ntcn($m) => $body,
            AnyModel::Tucker($m) => $body,
            AnyModel::Cp($m) => $body,
        }
    };
}

fn parse_dims(s: &str) -> Result<Dims, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected S,P,T, got `{s}`"));
    }
    let mut v = [0usize; 3];
    for (o, p) in v.iter_mut().zip(&parts) {
        *o = p.trim().parse().map_err(|e| format!("`{p}`: {e}"))?;
    }
    Ok(Dims::new(v[0], v[1], v[2]))
}

fn parse_nonlinearity(s: &str) -> Result<Nonlinearity, String> {
    s.parse().map_err(|e: hds_impute::Error| e.to_string())
}

fn load_data(path: &Path) -> Result<ObservationSet, CliError> {
    load_coo(path).map_err(CliError::Data)
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Tensor extent |S|,|P|,|T|
    #[arg(long, value_parser = parse_dims, default_value = "24,24,90", value_name = "S,P,T")]
    pub dims: Dims,
    /// Tucker rank of the generating tensor
    #[arg(long, default_value_t = 3)]
    pub rank: usize,
    /// Fraction of cells observed
    #[arg(long, default_value_t = 0.1)]
    pub density: f64,
    /// Standard deviation of Gaussian noise added to observed cells
    #[arg(long, default_value_t = 0.0)]
    pub noise_std: f64,
    /// `none` or `squash` (tanh of the multilinear signal)
    #[arg(long, value_parser = parse_nonlinearity, default_value = "none")]
    pub nonlinearity: Nonlinearity,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Observed cells, COO text
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Noise-free values of every cell [default: <out>.truth.coo]
    #[arg(long, value_name = "PATH")]
    pub truth: Option<PathBuf>,
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let spec = SynthSpec {
        dims: a.dims,
        rank: a.rank,
        density: a.density,
        noise_std: a.noise_std,
        nonlinearity: a.nonlinearity,
        seed: a.seed,
    };
    let syn = synthesize_with_truth(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    let truth = a.truth.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".truth.coo");
        p.into()
    });
    write_file(&a.out, format_coo(&syn.observed))?;
    write_file(&truth, format_coo(&syn.truth))?;
    println!(
        "wrote {} observed cells to {} and {} truth cells to {}",
        syn.observed.len(),
        a.out.display(),
        syn.truth.len(),
        truth.display()
    );
    Ok(())
}

/// Stored in the checkpoint so `eval` and `impute` can rebuild the run's
/// data view without the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct RunMeta {
    transform: FittedTransform,
    #[serde(with = "ratio_text")]
    split: SplitRatio,
    split_seed: u64,
    data_sha256: String,
    config: RunConfig,
}

mod ratio_text {
    use hds_impute::SplitRatio;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &SplitRatio, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(r)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SplitRatio, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Observed cells, COO text
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Directory for checkpoint.json, train_log.jsonl and manifest.json
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: ConfigFlags,
    /// Learning rates to try; the one with the best validation RMSE is kept
    #[arg(long, value_delimiter = ',', value_name = "LR,...")]
    pub grid_lr: Vec<f64>,
    /// L2 coefficients to try alongside --grid-lr
    #[arg(long, value_delimiter = ',', value_name = "L,...")]
    pub grid_lambda: Vec<f64>,
}

fn fit<M: Model>(
    init: impl Fn() -> hds_impute::Result<M>,
    sp: &SplitSet,
    cfg: &mut RunConfig,
    grid_lr: &[f64],
    grid_lambda: &[f64],
) -> Result<(AnyModel, TrainLog), CliError>
where
    AnyModel: From<M>,
{
    let tc = cfg.train_config();
    if grid_lr.is_empty() && grid_lambda.is_empty() {
        let (m, log) = hds_impute::train(init()?, sp, &tc)?;
        return Ok((m.into(), log));
    }
    // fail on bad hyperparameters before the grid swallows them
    init()?;
    let lrs = if grid_lr.is_empty() { vec![cfg.lr] } else { grid_lr.to_vec() };
    let lambdas = if grid_lambda.is_empty() { vec![cfg.lambda] } else { grid_lambda.to_vec() };
    let g = grid_search(|| init().expect("checked above"), sp, &tc, &lrs, &lambdas)?;
    for (lr, lambda, rmse) in &g.scores {
        eprintln!("grid lr {lr} lambda {lambda}: validation rmse {rmse:.6}");
    }
    cfg.lr = g.lr;
    cfg.lambda = g.lambda;
    Ok((g.model.into(), g.log))
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = a.flags.resolve()?;
    let raw = load_data(&a.data)?;
    let (set, transform) = FittedTransform::fit(cfg.preprocess, &raw)?;
    let sp = split(&set, cfg.split, cfg.seed)?;
    let dims = set.dims();
    let (model, log) = match cfg.model {
        ModelKind::Ntcn => {
            let nc = cfg.ntcn_config();
            fit(|| NtcnParams::init(nc, dims), &sp, &mut cfg, &a.grid_lr, &a.grid_lambda)?
        }
        ModelKind::Tucker => {
            let fc = cfg.factor_config();
            fit(|| TuckerParams::init(fc, dims), &sp, &mut cfg, &a.grid_lr, &a.grid_lambda)?
        }
        ModelKind::Cp => {
            let fc = cfg.factor_config();
            fit(|| CpParams::init(fc, dims), &sp, &mut cfg, &a.grid_lr, &a.grid_lambda)?
        }
    };

    std::fs::create_dir_all(&a.out)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", a.out.display())))?;
    let mut man = RunManifest::new("train", cfg.clone());
    let data_sha256 = man.add_input(&a.data)?;
    let meta = RunMeta {
        transform,
        split: cfg.split,
        split_seed: cfg.seed,
        data_sha256,
        config: cfg.clone(),
    };
    let ck_path = a.out.join("checkpoint.json");
    let meta = serde_json::to_value(&meta).expect("meta is plain data");
    Checkpoint::new(model.clone()).with_meta(meta).save(&ck_path)?;
    let log_path = a.out.join("train_log.jsonl");
    write_file(&log_path, log.to_jsonl())?;
    man.add_artifact("checkpoint", &ck_path)?;
    man.add_artifact("train-log", &log_path)?;
    man.save(&a.out.join("manifest.json"))?;

    println!(
        "trained {} for {} epochs ({:?}), best epoch {}",
        cfg.model,
        log.records.len(),
        log.stop_reason,
        log.best_epoch
    );
    if !sp.test.is_empty() {
        let report = with_model!(&model, m => evaluate(m, &sp.test, Parallelism::default()))?;
        print_report("test", &report);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Part {
    Train,
    Validation,
    Test,
    All,
}

impl Part {
    fn name(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Validation => "validation",
            Part::Test => "test",
            Part::All => "all",
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// The observed-cell file the checkpoint was trained on
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Which part of the seeded split to score
    #[arg(long, value_enum, default_value = "test")]
    pub part: Part,
    /// Score against this ground-truth file (all its cells) instead of a split part
    #[arg(long, value_name = "PATH")]
    pub truth: Option<PathBuf>,
    /// Also write the report as JSON here
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

fn load_checkpoint(path: &Path) -> Result<(AnyModel, RunMeta), CliError> {
    let ck = Checkpoint::load(path)?;
    let meta = ck
        .meta
        .ok_or_else(|| CliError::Usage(format!("{}: checkpoint carries no run metadata", path.display())))
        .and_then(|v| {
            serde_json::from_value::<RunMeta>(v)
                .map_err(|e| CliError::Usage(format!("{}: bad run metadata: {e}", path.display())))
        })?;
    Ok((ck.model, meta))
}

fn check_dims(model: &AnyModel, set: &ObservationSet, what: &Path) -> Result<(), CliError> {
    if model.dims() != set.dims() {
        return Err(CliError::Usage(format!(
            "{} has dims {}, checkpoint expects {}",
            what.display(),
            set.dims(),
            model.dims()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    part: &'a str,
    #[serde(flatten)]
    report: &'a EvalReport,
}

fn report_json(part: &str, report: &EvalReport) -> String {
    serde_json::to_string(&ReportDoc { part, report }).expect("report is plain data")
}

fn print_report(part: &str, report: &EvalReport) {
    println!("{part}");
    println!("{report}");
    println!("{}", report_json(part, report));
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let (model, meta) = load_checkpoint(&a.checkpoint)?;
    let raw = load_data(&a.data)?;
    check_dims(&model, &raw, &a.data)?;
    if manifest::file_digest(&a.data)? != meta.data_sha256 {
        eprintln!("warning: {} differs from the training data", a.data.display());
    }
    let (label, set) = match &a.truth {
        Some(path) => {
            let truth = load_data(path)?;
            check_dims(&model, &truth, path)?;
            ("truth", meta.transform.apply_set(&truth))
        }
        None => {
            let set = meta.transform.apply_set(&raw);
            let sp = split(&set, meta.split, meta.split_seed)?;
            let part = match a.part {
                Part::Train => sp.train,
                Part::Validation => sp.validation,
                Part::Test => sp.test,
                Part::All => set,
            };
            (a.part.name(), part)
        }
    };
    let report = with_model!(&model, m => evaluate(m, &set, Parallelism::default()))?;
    print_report(label, &report);
    if let Some(path) = &a.report {
        write_file(path, report_json(label, &report) + "\n")?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Output COO file
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Observed cells; needed by --missing-only
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Only write cells absent from --data
    #[arg(long, requires = "data")]
    pub missing_only: bool,
    /// Map predictions back through the inverse preprocessing transform
    #[arg(long)]
    pub raw: bool,
}

pub fn impute(a: ImputeArgs) -> Result<(), CliError> {
    let (model, meta) = load_checkpoint(&a.checkpoint)?;
    let dims = model.dims();
    let skip: HashSet<usize> = match &a.data {
        Some(path) if a.missing_only => {
            let set = load_data(path)?;
            check_dims(&model, &set, path)?;
            set.observed_cells()
        }
        _ => HashSet::new(),
    };
    let full = with_model!(&model, m => impute_full(m, None, Parallelism::default()))?;
    let mut out = String::with_capacity(dims.cells() * 24);
    let _ = writeln!(out, "{dims}");
    let mut written = 0usize;
    for s in 0..dims.stations {
        for p in 0..dims.indicators {
            for t in 0..dims.times {
                if skip.contains(&dims.linear(s, p, t)) {
                    continue;
                }
                let v = full.get(s, p, t);
                let v = if a.raw { meta.transform.invert(v) } else { v };
                let _ = writeln!(out, "{s},{p},{t},{v}");
                written += 1;
            }
        }
    }
    write_file(&a.out, out)?;
    println!("wrote {written} cells to {}", a.out.display());
    Ok(())
}

fn parse_fault(s: &str) -> Result<Fault, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown fault `{s}` (scale-w2, drop-decay-w3)"))
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Skip the rank-10 standard network
    #[arg(long)]
    pub tiny_only: bool,
    /// Seeds for the tiny network
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Also write the reports as JSON here
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// Corrupt the backward pass (negative control)
    #[arg(long, hide = true, value_parser = parse_fault)]
    pub inject_fault: Option<Fault>,
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let dims = Dims::new(3, 3, 3);
    let mut reports: Vec<GradcheckReport> = Vec::new();
    for seed in 0..a.seeds {
        let label = format!("tiny seed {seed}");
        reports.push(gradcheck::run(&label, NtcnConfig::tiny(), dims, seed, 3, a.inject_fault)?);
    }
    if !a.tiny_only {
        reports.push(gradcheck::run("standard seed 0", NtcnConfig::standard(), dims, 0, 1, a.inject_fault)?);
    }
    let mut failed = 0;
    for r in &reports {
        println!("{r}");
        failed += usize::from(!r.passed());
    }
    if let Some(path) = &a.report {
        write_file(path, serde_json::to_string_pretty(&reports).expect("plain data") + "\n")?;
    }
    if failed > 0 {
        return Err(CliError::Verify(format!("{failed} of {} gradient checks failed", reports.len())));
    }
    println!("all {} gradient checks passed", reports.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_parsing() {
        assert_eq!(parse_dims("2,3,4").unwrap(), Dims::new(2, 3, 4));
        assert!(parse_dims("2,3").is_err());
    }

    #[test]
    fn fault_names() {
        assert_eq!(parse_fault("scale-w2").unwrap(), Fault::ScaleW2);
        assert!(parse_fault("nope").is_err());
    }
}
