//! Acceptance criteria 1 to 9. Each test prints one PASS/FAIL line and then
//! asserts the same condition. Run with `--nocapture` to see the lines.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use hds_impute::checkpoint::Checkpoint;
use hds_impute::data::{
    split, synthesize, Entry, FittedTransform, Nonlinearity, ObservationSet, Preprocess, SplitSet,
    SynthSpec,
};
use hds_impute::gradcheck;
use hds_impute::tensor::Matrix;
use hds_impute::train::{grid_search, run_epochs, StopReason};
use hds_impute::{
    evaluate, train, AnyModel, CpParams, Dims, FactorConfig, Model, ModelKind, NtcnConfig,
    NtcnParams, OptimizerConfig, Parallelism, SplitRatio, TrainConfig, TuckerParams,
};
use serde::Deserialize;

fn verdict(n: u32, name: &str, ok: bool, detail: &str) {
    println!("{} acceptance {n} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "acceptance {n} {name}: {detail}");
}

fn sci(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", ")
}

fn sigmoid_set(spec: &SynthSpec) -> ObservationSet {
    let raw = synthesize(spec).unwrap();
    FittedTransform::fit(Preprocess::Sigmoid, &raw).unwrap().0
}

#[test]
fn acceptance_1_gradient_exactness() {
    let start = Instant::now();
    let dims = Dims::new(3, 3, 3);
    let mut worst = 0.0f64;
    let mut all_pass = true;
    for seed in 0..5 {
        let r = gradcheck::run("tiny", NtcnConfig::tiny(), dims, seed, 3, None).unwrap();
        worst = worst.max(r.max_rel_error());
        all_pass &= r.passed();
    }
    let r = gradcheck::run("standard", NtcnConfig::standard(), dims, 0, 1, None).unwrap();
    worst = worst.max(r.max_rel_error());
    all_pass &= r.passed();
    let secs = start.elapsed().as_secs_f64();
    let ok = all_pass && worst < 1e-5 && secs < 60.0;
    verdict(1, "gradient exactness", ok, &format!("max rel err {worst:.3e}, {secs:.1}s"));
}

#[test]
fn acceptance_2_shape_fidelity() {
    let cfg = NtcnConfig::standard();
    let (h1, h2) = cfg.conv_shapes().unwrap();
    let model = NtcnParams::init(cfg, Dims::new(2, 2, 2)).unwrap();
    let trace = model.forward(1, 0, 1).unwrap();
    let ok = h1 == [5, 5, 5]
        && h2 == [1, 1, 1]
        && trace.h1.spatial() == [5, 5, 5]
        && trace.h2_pre.spatial() == [1, 1, 1]
        && trace.x.shape() == [10, 10, 10];
    verdict(
        2,
        "shape fidelity",
        ok,
        &format!("conv outputs {h1:?} then {h2:?}, trace {:?} then {:?}", trace.h1.spatial(), trace.h2_pre.spatial()),
    );
}

fn train_only(set: ObservationSet) -> SplitSet {
    let dims = set.dims();
    SplitSet {
        train: set,
        validation: ObservationSet::empty(dims).unwrap(),
        test: ObservationSet::empty(dims).unwrap(),
        seed: 0,
    }
}

#[test]
fn acceptance_3_overfit_oracle() {
    let start = Instant::now();
    let dims = Dims::new(100, 100, 100);
    let mut rmses = Vec::new();
    for seed in 0..5 {
        let spec = SynthSpec {
            dims,
            density: 100.0 / dims.cells() as f64,
            seed,
            ..SynthSpec::default()
        };
        let set = sigmoid_set(&spec);
        assert_eq!(set.len(), 100);
        let model = NtcnParams::init(NtcnConfig::tiny().with_seed(seed), dims).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerConfig::adam(0.01),
            batch_size: 100,
            max_epochs: 2000,
            early_stop_tol: 0.0,
            lambda: 0.0,
            seed,
            ..TrainConfig::for_model(ModelKind::Ntcn)
        };
        let sp = train_only(set);
        let (model, _) = train(model, &sp, &cfg).unwrap();
        rmses.push(evaluate(&model, &sp.train, Parallelism::default()).unwrap().rmse);
    }
    let hits = rmses.iter().filter(|&&r| r < 1e-3).count();
    let secs = start.elapsed().as_secs_f64();
    let ok = hits >= 4 && secs < 120.0;
    verdict(
        3,
        "overfit oracle",
        ok,
        &format!("{hits}/5 seeds below 1e-3, train rmse [{}], {secs:.1}s", sci(&rmses)),
    );
}

#[test]
fn acceptance_4_multilinear_recovery() {
    let start = Instant::now();
    let mut rmses = Vec::new();
    for seed in 0..5 {
        let spec = SynthSpec {
            dims: Dims::new(24, 24, 90),
            rank: 3,
            density: 0.2,
            seed,
            ..SynthSpec::default()
        };
        let set = sigmoid_set(&spec);
        let sp = split(&set, SplitRatio([7.0, 1.0, 2.0]), seed).unwrap();
        // the sigmoid adds a constant offset, which takes one more rank
        let fc = FactorConfig::default().with_rank(4).with_seed(seed);
        let cfg = TrainConfig {
            optimizer: OptimizerConfig::adam(0.01),
            batch_size: 64,
            max_epochs: 500,
            early_stop_tol: 1e-9,
            lambda: 0.0,
            seed,
            ..TrainConfig::for_model(ModelKind::Tucker)
        };
        let (model, _) = train(TuckerParams::init(fc, set.dims()).unwrap(), &sp, &cfg).unwrap();
        rmses.push(evaluate(&model, &sp.test, Parallelism::default()).unwrap().rmse);
    }
    let hits = rmses.iter().filter(|&&r| r < 0.01).count();
    let secs = start.elapsed().as_secs_f64();
    let ok = hits >= 4 && secs < 300.0;
    verdict(
        4,
        "multilinear recovery",
        ok,
        &format!("{hits}/5 seeds below 0.01, test rmse [{}], {secs:.1}s", sci(&rmses)),
    );
}

fn best_baseline<M: Model>(init: impl Fn() -> M, sp: &SplitSet, seed: u64) -> f64 {
    let base = TrainConfig {
        optimizer: OptimizerConfig::adam(0.01),
        batch_size: 32,
        max_epochs: 300,
        seed,
        ..TrainConfig::for_model(ModelKind::Tucker)
    };
    let lrs = [0.003, 0.01, 0.03];
    let lambdas = [0.0, 1e-4, 1e-3, 1e-2, 0.1];
    let g = grid_search(init, sp, &base, &lrs, &lambdas).unwrap();
    evaluate(&g.model, &sp.test, Parallelism::default()).unwrap().rmse
}

#[test]
fn acceptance_5_nonlinear_advantage() {
    let start = Instant::now();
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..5 {
        let spec = SynthSpec {
            density: 0.1,
            noise_std: 0.02,
            nonlinearity: Nonlinearity::Squash,
            seed,
            ..SynthSpec::default()
        };
        let set = sigmoid_set(&spec);
        let dims = set.dims();
        let sp = split(&set, SplitRatio::SPARSE_TRAIN, seed).unwrap();

        let cfg = TrainConfig {
            optimizer: OptimizerConfig::adam(1e-3),
            batch_size: 32,
            max_epochs: 40,
            lambda: 1e-4,
            seed,
            patience: Some(5),
            ..TrainConfig::for_model(ModelKind::Ntcn)
        };
        let model = NtcnParams::init(NtcnConfig::standard().with_seed(seed), dims).unwrap();
        let (model, _) = train(model, &sp, &cfg).unwrap();
        let ntcn = evaluate(&model, &sp.test, Parallelism::default()).unwrap().rmse;

        let fc = FactorConfig::default().with_rank(10).with_seed(seed);
        let tucker = best_baseline(|| TuckerParams::init(fc, dims).unwrap(), &sp, seed);
        let cp = best_baseline(|| CpParams::init(fc, dims).unwrap(), &sp, seed);

        let mean = sp.train.entries().iter().map(|e| e.y).sum::<f64>() / sp.train.len() as f64;
        let flat = hds_impute::train::metrics(sp.test.entries().iter().map(|e| (e.y, mean)))
            .unwrap()
            .rmse;
        if ntcn < tucker && ntcn < cp {
            wins += 1;
        }
        rows.push(format!(
            "seed {seed}: ntcn {ntcn:.4} tucker {tucker:.4} cp {cp:.4} train-mean {flat:.4}"
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    for r in &rows {
        println!("  {r}");
    }
    let ok = wins >= 4 && secs < 900.0;
    verdict(5, "nonlinear advantage", ok, &format!("ntcn best in {wins}/5 seeds, {secs:.0}s"));
}

#[test]
fn acceptance_6_early_stop_semantics() {
    // each trace first settles (|Δ| < 1e-5) at the marked epoch
    let traces: [(&[f64], usize); 4] = [
        (&[1.0, 0.5, 0.3, 0.299_999_5, 0.1, 0.05], 4),
        (&[0.5, 0.499_999_5], 2),
        (&[2.0, 1.0, 0.9, 0.8, 0.7, 0.6, 0.599_98, 0.599_979_5], 8),
        (&[3.0, 2.0, 1.5, 1.4, 1.39, 1.389_995, 1.0], 6),
    ];
    let mut ok = true;
    let mut seen = Vec::new();
    for (trace, k) in traces {
        let mut calls = 0;
        let (epoch, why) = run_epochs(100, 1e-5, |t| {
            calls += 1;
            Ok(trace[t - 1].into())
        })
        .unwrap();
        ok &= epoch == k && calls == k && why == StopReason::EarlyStop;
        seen.push(epoch);
    }
    // a single epoch never stops early
    let (epoch, why) = run_epochs(1, 1e-5, |_| Ok(0.5.into())).unwrap();
    ok &= epoch == 1 && why == StopReason::MaxEpochs;
    verdict(6, "early-stop semantics", ok, &format!("halted at epochs {seen:?}, expected [4, 2, 8, 6]"));
}

fn cli(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_hds-impute")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn acceptance_7_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.coo");
    cli(&["synth", "--dims", "12,12,30", "--density", "0.2", "--seed", "3", "--out", s(&data)]);
    let first = dir.path().join("first");
    cli(&[
        "train", "--data", s(&data), "--out", s(&first), "--deterministic", "--seed", "5",
        "--epochs", "4",
    ]);
    let second = dir.path().join("second");
    cli(&["train", "--data", s(&data), "--out", s(&second), "--config", s(&first.join("manifest.json"))]);

    let read = |p: PathBuf| std::fs::read(p).unwrap();
    let same_ck = read(first.join("checkpoint.json")) == read(second.join("checkpoint.json"));
    let same_log = read(first.join("train_log.jsonl")) == read(second.join("train_log.jsonl"));
    let report = |run: &Path| {
        let path = run.join("report.json");
        cli(&["eval", "--checkpoint", s(&run.join("checkpoint.json")), "--data", s(&data), "--report", s(&path)]);
        read(path)
    };
    let same_report = report(&first) == report(&second);
    let ok = same_ck && same_log && same_report;
    verdict(
        7,
        "determinism",
        ok,
        &format!("checkpoint identical {same_ck}, train log identical {same_log}, report identical {same_report}"),
    );
}

#[derive(Deserialize)]
struct Fixture {
    dims: [usize; 3],
    ranks: [usize; 3],
    core: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    entries: Vec<(usize, usize, usize, f64)>,
    rmse: f64,
    mae: f64,
}

#[test]
fn acceptance_8_metric_correctness() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/metric_fixture.json");
    let fx: Fixture = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let dims = Dims::new(fx.dims[0], fx.dims[1], fx.dims[2]);
    let cfg = FactorConfig {
        ranks: fx.ranks,
        ..FactorConfig::default()
    };
    let mut model = TuckerParams::zeros(cfg, dims).unwrap();
    model.core = fx.core;
    model.a = Matrix::new(dims.stations, fx.ranks[0], fx.a).unwrap();
    model.b = Matrix::new(dims.indicators, fx.ranks[1], fx.b).unwrap();
    model.c = Matrix::new(dims.times, fx.ranks[2], fx.c).unwrap();
    let entries = fx.entries.iter().map(|&(s, p, t, y)| Entry::new(s, p, t, y)).collect();
    let set = ObservationSet::new(dims, entries).unwrap();
    let r = evaluate(&model, &set, Parallelism::default()).unwrap();
    let (dr, dm) = ((r.rmse - fx.rmse).abs(), (r.mae - fx.mae).abs());
    let ok = r.count == 1000 && dr < 1e-12 && dm < 1e-12;
    verdict(
        8,
        "metric correctness",
        ok,
        &format!("{} entries, |Δrmse| {dr:.1e}, |Δmae| {dm:.1e}", r.count),
    );
}

fn roundtrip<M: Model>(model: M, sp: &SplitSet, dir: &Path) -> bool
where
    AnyModel: From<M>,
{
    let cfg = TrainConfig {
        max_epochs: 5,
        ..TrainConfig::for_model(model.kind())
    };
    let (model, _) = train(model, sp, &cfg).unwrap();
    let before = evaluate(&model, &sp.test, Parallelism::default()).unwrap();
    let path = dir.join(format!("{}.json", model.kind()));
    let original = AnyModel::from(model);
    Checkpoint::new(original.clone()).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap().model;
    let after = match &loaded {
        AnyModel::Ntcn(m) => evaluate(m, &sp.test, Parallelism::default()),
        AnyModel::Tucker(m) => evaluate(m, &sp.test, Parallelism::default()),
        AnyModel::Cp(m) => evaluate(m, &sp.test, Parallelism::default()),
    }
    .unwrap();
    loaded == original && before == after
}

#[test]
fn acceptance_9_checkpoint_roundtrip() {
    let spec = SynthSpec {
        dims: Dims::new(8, 6, 20),
        density: 0.3,
        seed: 11,
        ..SynthSpec::default()
    };
    let set = sigmoid_set(&spec);
    let sp = split(&set, SplitRatio([6.0, 2.0, 2.0]), 11).unwrap();
    let dims = set.dims();
    let dir = tempfile::tempdir().unwrap();
    let fc = FactorConfig::default().with_rank(3);
    let results = [
        ("ntcn", roundtrip(NtcnParams::init(NtcnConfig::standard(), dims).unwrap(), &sp, dir.path())),
        ("tucker", roundtrip(TuckerParams::init(fc, dims).unwrap(), &sp, dir.path())),
        ("cp", roundtrip(CpParams::init(fc, dims).unwrap(), &sp, dir.path())),
    ];
    let ok = results.iter().all(|r| r.1);
    verdict(9, "checkpoint roundtrip", ok, &format!("exact reload per kind {results:?}"));
}
