use hds_impute::checkpoint::Checkpoint;
use hds_impute::data::{split, synthesize, Dims, ObservationSet, SplitSet, SynthSpec};
use hds_impute::train::StopReason;
use hds_impute::{
    evaluate, train, AnyModel, FactorConfig, ModelKind, NtcnConfig, NtcnParams, OptimizerConfig,
    Parallelism, SplitRatio, TrainConfig, TuckerParams,
};

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
fn tucker_fits_exact_multilinear_data() {
    let mut hits = 0;
    for seed in 0..5 {
        let spec = SynthSpec {
            dims: Dims::new(10, 8, 20),
            rank: 2,
            density: 0.5,
            seed,
            ..SynthSpec::default()
        };
        let set = synthesize(&spec).unwrap();
        let model = TuckerParams::init(FactorConfig::default().with_rank(2).with_seed(seed), set.dims()).unwrap();
        let cfg = TrainConfig {
            max_epochs: 2000,
            early_stop_tol: 1e-12,
            seed,
            ..TrainConfig::for_model(ModelKind::Tucker)
        };
        let split = train_only(set);
        let (model, _) = train(model, &split, &cfg).unwrap();
        // raw values leave [0, 1], so score without the evaluation clamp
        let sq: f64 = split
            .train
            .entries()
            .iter()
            .map(|e| (e.y - model.predict(e.s, e.p, e.t).unwrap()).powi(2))
            .sum();
        let rmse = (sq / split.train.len() as f64).sqrt();
        if rmse < 1e-3 {
            hits += 1;
        }
    }
    assert!(hits >= 4, "{hits}/5 seeds reached 1e-3");
}

#[test]
fn larger_network_memorizes_hundred_entries() {
    let dims = Dims::new(4, 4, 1000);
    let spec = SynthSpec {
        dims,
        density: 100.0 / dims.cells() as f64,
        seed: 3,
        ..SynthSpec::default()
    };
    let set = hds_impute::data::preprocess_sigmoid(&synthesize(&spec).unwrap());
    assert_eq!(set.len(), 100);
    let cfg = NtcnConfig {
        ranks: [4; 3],
        channels: [4, 8],
        kernels: [3, 2],
        hidden: 16,
        ..NtcnConfig::default()
    };
    let model = NtcnParams::init(cfg, dims).unwrap();
    let tc = TrainConfig {
        optimizer: OptimizerConfig::adam(0.01),
        batch_size: 100,
        max_epochs: 2000,
        early_stop_tol: 0.0,
        lambda: 0.0,
        ..TrainConfig::for_model(ModelKind::Ntcn)
    };
    let split = train_only(set);
    let (model, _) = train(model, &split, &tc).unwrap();
    let r = evaluate(&model, &split.train, Parallelism::default()).unwrap();
    assert!(r.rmse < 1e-3, "{}", r.rmse);
}

fn small_split(seed: u64) -> SplitSet {
    let spec = SynthSpec {
        dims: Dims::new(6, 5, 12),
        density: 0.5,
        seed,
        ..SynthSpec::default()
    };
    let set = hds_impute::data::preprocess_sigmoid(&synthesize(&spec).unwrap());
    split(&set, SplitRatio([6.0, 2.0, 2.0]), seed).unwrap()
}

#[test]
fn deterministic_training_is_reproducible_across_modes() {
    let sp = small_split(1);
    let model = NtcnParams::init(NtcnConfig::tiny().with_seed(2), sp.train.dims()).unwrap();
    let run = |parallelism| {
        let cfg = TrainConfig {
            max_epochs: 15,
            deterministic: true,
            parallelism,
            seed: 9,
            ..TrainConfig::for_model(ModelKind::Ntcn)
        };
        train(model.clone(), &sp, &cfg).unwrap()
    };
    let (a, la) = run(Parallelism::Parallel);
    let (b, lb) = run(Parallelism::Parallel);
    let (c, _) = run(Parallelism::Sequential);
    assert_eq!(a, b);
    assert_eq!(a, c);
    let strip = |l: &hds_impute::TrainLog| {
        l.records
            .iter()
            .map(|r| (r.epoch, r.objective.to_bits(), r.val_rmse.map(f64::to_bits)))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&la), strip(&lb));
    assert_eq!(la.to_jsonl(), lb.to_jsonl());
}

#[test]
fn returns_best_validation_snapshot() {
    let sp = small_split(4);
    let model = TuckerParams::init(FactorConfig::default().with_rank(2), sp.train.dims()).unwrap();
    let cfg = TrainConfig {
        max_epochs: 60,
        early_stop_tol: 0.0,
        ..TrainConfig::for_model(ModelKind::Tucker)
    };
    let (best, log) = train(model, &sp, &cfg).unwrap();
    let min = log
        .records
        .iter()
        .filter_map(|r| r.val_rmse)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(log.best_val_rmse(), Some(min));
    let again = evaluate(&best, &sp.validation, cfg.parallelism).unwrap();
    assert_eq!(again.rmse, min);
    assert_eq!(log.stop_reason, StopReason::MaxEpochs);
    assert!(log.records.len() <= cfg.max_epochs);
}

#[test]
fn early_stop_ends_log() {
    let sp = small_split(5);
    let model = TuckerParams::init(FactorConfig::default().with_rank(2), sp.train.dims()).unwrap();
    let cfg = TrainConfig {
        max_epochs: 5000,
        early_stop_tol: 1e-5,
        ..TrainConfig::for_model(ModelKind::Tucker)
    };
    let (_, log) = train(model, &sp, &cfg).unwrap();
    assert_eq!(log.stop_reason, StopReason::EarlyStop);
    let n = log.records.len();
    assert!(n < 5000);
    let d = (log.records[n - 1].objective - log.records[n - 2].objective).abs();
    assert!(d < 1e-5);
    for w in log.records[..n - 1].windows(2) {
        assert!((w[1].objective - w[0].objective).abs() >= 1e-5);
    }
}

#[test]
fn checkpoint_reload_reproduces_report() {
    let sp = small_split(6);
    let model = NtcnParams::init(NtcnConfig::tiny().with_seed(1), sp.train.dims()).unwrap();
    let cfg = TrainConfig {
        max_epochs: 5,
        ..TrainConfig::for_model(ModelKind::Ntcn)
    };
    let (model, _) = train(model, &sp, &cfg).unwrap();
    let before = evaluate(&model, &sp.test, Parallelism::Sequential).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    Checkpoint::new(model.into()).save(&path).unwrap();
    let AnyModel::Ntcn(back) = Checkpoint::load(&path).unwrap().model else {
        panic!("wrong kind");
    };
    let after = evaluate(&back, &sp.test, Parallelism::Sequential).unwrap();
    assert_eq!(before, after);
}
