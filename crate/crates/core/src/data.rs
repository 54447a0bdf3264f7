//! Sparse 3-mode observation sets: ingestion, preprocessing, splitting and
//! synthetic generation.
//!
//! An [`ObservationSet`] holds the observed cells of a station × indicator ×
//! time tensor in coordinate (COO) form. Everything not listed is unobserved.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mode cardinalities `(|S|, |P|, |T|)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub stations: usize,
    pub indicators: usize,
    pub times: usize,
}

impl Dims {
    pub fn new(stations: usize, indicators: usize, times: usize) -> Self {
        Self {
            stations,
            indicators,
            times,
        }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.stations, self.indicators, self.times]
    }

    pub fn cells(&self) -> usize {
        self.stations * self.indicators * self.times
    }

    pub fn contains(&self, s: usize, p: usize, t: usize) -> bool {
        s < self.stations && p < self.indicators && t < self.times
    }

    pub fn check(&self, s: usize, p: usize, t: usize) -> Result<()> {
        if self.contains(s, p, t) {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                s,
                p,
                t,
                dims: self.as_array(),
            })
        }
    }

    /// Row-major linear index of a cell.
    pub fn linear(&self, s: usize, p: usize, t: usize) -> usize {
        (s * self.indicators + p) * self.times + t
    }

    fn validate(&self) -> Result<()> {
        if self.stations == 0 || self.indicators == 0 || self.times == 0 {
            return Err(Error::Validation(format!(
                "dims must be positive, got {:?}",
                self.as_array()
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{}", self.stations, self.indicators, self.times)
    }
}

/// One observed cell `(s, p, t, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub s: usize,
    pub p: usize,
    pub t: usize,
    pub y: f64,
}

impl Entry {
    pub fn new(s: usize, p: usize, t: usize, y: f64) -> Self {
        Self { s, p, t, y }
    }
}

/// Validated sparse observation set. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    dims: Dims,
    entries: Vec<Entry>,
}

impl ObservationSet {
    /// Validates indices, rejects duplicate cells and non-finite values.
    pub fn new(dims: Dims, entries: Vec<Entry>) -> Result<Self> {
        dims.validate()?;
        let mut seen = HashSet::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if !dims.contains(e.s, e.p, e.t) {
                return Err(Error::Validation(format!(
                    "entry {i}: index ({}, {}, {}) out of range for dims {dims}",
                    e.s, e.p, e.t
                )));
            }
            if !e.y.is_finite() {
                return Err(Error::Validation(format!("entry {i}: non-finite value")));
            }
            if !seen.insert(dims.linear(e.s, e.p, e.t)) {
                return Err(Error::Validation(format!(
                    "entry {i}: duplicate cell ({}, {}, {})",
                    e.s, e.p, e.t
                )));
            }
        }
        Ok(Self { dims, entries })
    }

    pub fn empty(dims: Dims) -> Result<Self> {
        Self::new(dims, Vec::new())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fraction of observed cells, `|Ω| / (|S|·|P|·|T|)`.
    pub fn density(&self) -> f64 {
        self.entries.len() as f64 / self.dims.cells() as f64
    }

    /// Linear indices of observed cells.
    pub fn observed_cells(&self) -> HashSet<usize> {
        self.entries
            .iter()
            .map(|e| self.dims.linear(e.s, e.p, e.t))
            .collect()
    }

    /// Same indices, values replaced through `f`. Indices were already
    /// validated, so only the value check is repeated.
    fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims,
            entries: self
                .entries
                .iter()
                .map(|e| Entry { y: f(e.y), ..*e })
                .collect(),
        }
    }

    // subsets of an already validated set need no revalidation
    fn subset(&self, entries: Vec<Entry>) -> Self {
        Self {
            dims: self.dims,
            entries,
        }
    }
}

/// Parses the COO text format: a `|S|,|P|,|T|` header followed by
/// `s,p,t,y` records. Lines starting with `#` and blank lines are skipped.
pub fn parse_coo(text: &str) -> Result<ObservationSet> {
    let mut dims = None;
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse_index = |f: &str| {
            f.parse::<usize>().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad index `{f}`: {e}"),
            })
        };
        match dims {
            None => {
                if fields.len() != 3 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("header needs 3 fields, found {}", fields.len()),
                    });
                }
                dims = Some(Dims::new(
                    parse_index(fields[0])?,
                    parse_index(fields[1])?,
                    parse_index(fields[2])?,
                ));
            }
            Some(d) => {
                if fields.len() != 4 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("record needs 4 fields, found {}", fields.len()),
                    });
                }
                let y = fields[3].parse::<f64>().map_err(|e| Error::Parse {
                    line: line_no,
                    message: format!("bad value `{}`: {e}", fields[3]),
                })?;
                let (s, p, t) = (
                    parse_index(fields[0])?,
                    parse_index(fields[1])?,
                    parse_index(fields[2])?,
                );
                if !d.contains(s, p, t) {
                    return Err(Error::Validation(format!(
                        "line {line_no}: index ({s}, {p}, {t}) out of range for dims {d}"
                    )));
                }
                entries.push(Entry::new(s, p, t, y));
            }
        }
    }
    let dims = dims.ok_or(Error::Parse {
        line: 0,
        message: "missing header line".into(),
    })?;
    ObservationSet::new(dims, entries)
}

pub fn load_coo(path: impl AsRef<Path>) -> Result<ObservationSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_coo(&text)
}

/// Renders a set in COO text form. `f64`'s `Display` yields the shortest
/// decimal that round-trips, so `parse_coo(format_coo(x)) == x` exactly.
pub fn format_coo(set: &ObservationSet) -> String {
    let mut out = String::with_capacity(16 + set.len() * 24);
    let _ = writeln!(out, "{}", set.dims);
    for e in &set.entries {
        let _ = writeln!(out, "{},{},{},{}", e.s, e.p, e.t, e.y);
    }
    out
}

pub fn save_coo(set: &ObservationSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_coo(set)).map_err(|e| Error::io(path, e))
}

/// Logistic function `1 / (1 + e^-x)`, evaluated without overflow.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn preprocess_sigmoid(set: &ObservationSet) -> ObservationSet {
    set.map_values(logistic)
}

/// Range retained by [`preprocess_minmax`] so predictions can be mapped back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecord {
    pub min: f64,
    pub max: f64,
    /// Set when every observed value was equal and the range collapsed.
    pub degenerate: bool,
}

impl ScaleRecord {
    pub fn apply(&self, y: f64) -> f64 {
        if self.degenerate {
            0.0
        } else {
            (y - self.min) / (self.max - self.min)
        }
    }

    pub fn invert(&self, v: f64) -> f64 {
        if self.degenerate {
            self.min
        } else {
            self.min + v * (self.max - self.min)
        }
    }
}

pub fn preprocess_minmax(set: &ObservationSet) -> Result<(ObservationSet, ScaleRecord)> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let (min, max) = set
        .entries
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e.y), hi.max(e.y))
        });
    let record = ScaleRecord {
        min,
        max,
        degenerate: max <= min,
    };
    Ok((set.map_values(|y| record.apply(y)), record))
}

/// Value transform applied before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preprocess {
    #[default]
    Sigmoid,
    Minmax,
}

impl std::str::FromStr for Preprocess {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Preprocess::Sigmoid),
            "minmax" => Ok(Preprocess::Minmax),
            other => Err(Error::Config(format!("unknown preprocessing `{other}`"))),
        }
    }
}

/// A fitted preprocessing transform, applicable to new sets and invertible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum FittedTransform {
    Sigmoid,
    Minmax(ScaleRecord),
}

impl FittedTransform {
    pub fn fit(mode: Preprocess, set: &ObservationSet) -> Result<(ObservationSet, Self)> {
        match mode {
            Preprocess::Sigmoid => Ok((preprocess_sigmoid(set), FittedTransform::Sigmoid)),
            Preprocess::Minmax => {
                let (out, rec) = preprocess_minmax(set)?;
                Ok((out, FittedTransform::Minmax(rec)))
            }
        }
    }

    pub fn apply(&self, y: f64) -> f64 {
        match self {
            FittedTransform::Sigmoid => logistic(y),
            FittedTransform::Minmax(rec) => rec.apply(y),
        }
    }

    pub fn apply_set(&self, set: &ObservationSet) -> ObservationSet {
        set.map_values(|y| self.apply(y))
    }

    /// Maps a transformed-scale value back to the raw scale. The logit is
    /// clamped away from 0 and 1 so saturated predictions stay finite.
    pub fn invert(&self, v: f64) -> f64 {
        match self {
            FittedTransform::Sigmoid => {
                let v = v.clamp(1e-15, 1.0 - 1e-15);
                (v / (1.0 - v)).ln()
            }
            FittedTransform::Minmax(rec) => rec.invert(v),
        }
    }
}

/// Relative part sizes, e.g. `1:2:7`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatio(pub [f64; 3]);

impl SplitRatio {
    pub const SPARSE_TRAIN: SplitRatio = SplitRatio([1.0, 2.0, 7.0]);

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config(format!(
                "split ratio parts must be positive, got {}",
                self
            )));
        }
        Ok(())
    }

    /// Largest-remainder apportionment of `n` items. Ties in the fractional
    /// remainder go to the earlier part.
    pub fn part_sizes(&self, n: usize) -> [usize; 3] {
        let total: f64 = self.0.iter().sum();
        let quotas: Vec<f64> = self.0.iter().map(|r| n as f64 * r / total).collect();
        let mut sizes = [0usize; 3];
        for (size, q) in sizes.iter_mut().zip(&quotas) {
            *size = q.floor() as usize;
        }
        let assigned: usize = sizes.iter().sum();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            sizes[i] += 1;
        }
        sizes
    }
}

impl std::fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.0[0], self.0[1], self.0[2])
    }
}

impl std::str::FromStr for SplitRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!("split ratio `{s}` must be r1:r2:r3")));
        }
        let mut out = [0.0; 3];
        for (o, p) in out.iter_mut().zip(&parts) {
            *o = p
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad split ratio part `{p}`")))?;
        }
        let ratio = SplitRatio(out);
        ratio.validate()?;
        Ok(ratio)
    }
}

/// Which part of a split to address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

/// Training / validation / test partition of one observation set.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSet {
    pub train: ObservationSet,
    pub validation: ObservationSet,
    pub test: ObservationSet,
    pub seed: u64,
}

impl SplitSet {
    pub fn part(&self, part: SplitPart) -> &ObservationSet {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Validation => &self.validation,
            SplitPart::Test => &self.test,
        }
    }
}

/// Seeded uniform shuffle followed by contiguous assignment of
/// largest-remainder part sizes.
pub fn split(set: &ObservationSet, ratio: SplitRatio, seed: u64) -> Result<SplitSet> {
    ratio.validate()?;
    if set.len() < 3 {
        return Err(Error::Validation(format!(
            "cannot split {} entries into 3 parts",
            set.len()
        )));
    }
    let mut shuffled = set.entries.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [n_train, n_val, _] = ratio.part_sizes(shuffled.len());
    let test = shuffled.split_off(n_train + n_val);
    let validation = shuffled.split_off(n_train);
    Ok(SplitSet {
        train: set.subset(shuffled),
        validation: set.subset(validation),
        test: set.subset(test),
        seed,
    })
}

/// Structure applied on top of the multilinear ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    #[default]
    None,
    /// `tanh` of the Tucker sum.
    Squash,
}

impl std::str::FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Nonlinearity::None),
            "squash" => Ok(Nonlinearity::Squash),
            other => Err(Error::Config(format!("unknown nonlinearity `{other}`"))),
        }
    }
}

/// Recipe for a synthetic observation set with known ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub dims: Dims,
    pub rank: usize,
    pub density: f64,
    pub noise_std: f64,
    pub nonlinearity: Nonlinearity,
    pub seed: u64,
}

/// The dense ground truth is materialized, so synthesis is capped.
pub const MAX_SYNTH_CELLS: usize = 1 << 27;

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dims: Dims::new(24, 24, 90),
            rank: 3,
            density: 0.1,
            noise_std: 0.0,
            nonlinearity: Nonlinearity::None,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.dims.cells() > MAX_SYNTH_CELLS {
            return Err(Error::Config(format!(
                "synthetic tensor {} has more than {MAX_SYNTH_CELLS} cells",
                self.dims
            )));
        }
        if self.rank == 0 {
            return Err(Error::Config("rank must be positive".into()));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Config(format!(
                "density must lie in (0, 1], got {}",
                self.density
            )));
        }
        if self.observed_count() == 0 {
            return Err(Error::Config(
                "density × cell count must retain at least one cell".into(),
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config(format!(
                "noise stddev must be nonnegative, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }

    /// Exact number of retained cells, `round(density · cells)`.
    pub fn observed_count(&self) -> usize {
        ((self.density * self.dims.cells() as f64).round() as usize).min(self.dims.cells())
    }
}

/// Synthetic data: the retained noisy observations plus the noise-free
/// signal over every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub observed: ObservationSet,
    pub truth: ObservationSet,
}

pub fn synthesize(spec: &SynthSpec) -> Result<ObservationSet> {
    synthesize_with_truth(spec).map(|s| s.observed)
}

/// Samples Tucker factors from U(−1, 1) and a core from U(−0.5, 0.5), forms
/// every cell as the triple sum, optionally squashes it through `tanh`, then
/// keeps exactly [`SynthSpec::observed_count`] uniformly chosen cells with
/// additive Gaussian noise.
pub fn synthesize_with_truth(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = spec.rank;
    let d = spec.dims;
    let mut factor = |rows: usize| -> Vec<f64> {
        (0..rows * r).map(|_| rng.random_range(-1.0..1.0)).collect()
    };
    let a = factor(d.stations);
    let b = factor(d.indicators);
    let c = factor(d.times);
    let core: Vec<f64> = (0..r * r * r).map(|_| rng.random_range(-0.5..0.5)).collect();

    let mut truth = Vec::with_capacity(d.cells());
    // contract the core with one station row at a time: gs[m][k] = Σ_n g[n][m][k] a[s][n]
    let mut gs = vec![0.0; r * r];
    for s in 0..d.stations {
        gs.iter_mut().for_each(|v| *v = 0.0);
        for n in 0..r {
            let a_sn = a[s * r + n];
            for (acc, g) in gs.iter_mut().zip(&core[n * r * r..(n + 1) * r * r]) {
                *acc += g * a_sn;
            }
        }
        for p in 0..d.indicators {
            let mut gsp = vec![0.0; r];
            for m in 0..r {
                let b_pm = b[p * r + m];
                for (acc, g) in gsp.iter_mut().zip(&gs[m * r..(m + 1) * r]) {
                    *acc += g * b_pm;
                }
            }
            for t in 0..d.times {
                let sum: f64 = gsp.iter().zip(&c[t * r..(t + 1) * r]).map(|(g, c)| g * c).sum();
                let y = match spec.nonlinearity {
                    Nonlinearity::None => sum,
                    Nonlinearity::Squash => sum.tanh(),
                };
                truth.push(Entry::new(s, p, t, y));
            }
        }
    }

    let mut picked = rand::seq::index::sample(&mut rng, d.cells(), spec.observed_count()).into_vec();
    picked.sort_unstable();
    let noise = Normal::new(0.0, spec.noise_std)
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let observed = picked
        .into_iter()
        .map(|i| {
            let mut e = truth[i];
            if spec.noise_std > 0.0 {
                e.y += noise.sample(&mut rng);
            }
            e
        })
        .collect();

    Ok(Synthetic {
        observed: ObservationSet::new(d, observed)?,
        truth: ObservationSet::new(d, truth)?,
    })
}
