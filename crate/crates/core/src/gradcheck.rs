//! Central-difference check of the hand-written network backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dims, Entry};
use crate::error::Result;
use crate::ntcn::{loss, NtcnConfig, NtcnParams};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// Deliberate corruption of the analytic gradient, to prove the check bites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Scales the second convolution's kernel gradient by 1.01.
    ScaleW2,
    /// Leaves the weight-decay term out of the dense-layer gradient.
    DropDecayW3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub name: String,
    pub len: usize,
    /// `max|analytic − numeric| / max(max|analytic|, max|numeric|)`.
    pub rel_error: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub label: String,
    pub tolerance: f64,
    pub groups: Vec<GroupError>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.rel_error <= self.tolerance)
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{}", self.label)?;
        writeln!(f, "  {:<6} {:>7} {:>12} {:>12}", "tensor", "size", "rel err", "abs err")?;
        for g in &self.groups {
            writeln!(
                f,
                "  {:<6} {:>7} {:>12.3e} {:>12.3e}",
                g.name, g.len, g.rel_error, g.abs_error
            )?;
        }
        write!(
            f,
            "  max {:.3e} (tol {:.0e}) {}",
            self.max_rel_error(),
            self.tolerance,
            if self.passed() { "ok" } else { "FAILED" }
        )
    }
}

/// Parameters for a check: the usual initialization, then embeddings and
/// biases redrawn from wider ranges. Tiny embeddings would make the
/// standardization divide by something close to its guard, which tests the
/// guard rather than the chain rule.
pub fn check_params(config: NtcnConfig, dims: Dims, seed: u64) -> Result<NtcnParams> {
    let mut p = NtcnParams::init(config.with_seed(seed), dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for v in p
        .a
        .values_mut()
        .iter_mut()
        .chain(p.b.values_mut())
        .chain(p.c.values_mut())
    {
        *v = rng.random_range(-1.0..1.0);
    }
    let biases = p
        .bias1
        .iter_mut()
        .chain(p.bias2.iter_mut())
        .filter(|_| config.conv_bias)
        .chain(p.b3.iter_mut());
    for v in biases {
        *v = rng.random_range(-0.1..0.1);
    }
    p.b_o = rng.random_range(-0.5..0.5);
    Ok(p)
}

/// Compares the full analytic gradient of the regularized loss at `entry`
/// with central differences of step `h`.
pub fn gradcheck(
    params: &NtcnParams,
    entry: &Entry,
    lambda: f64,
    h: f64,
    fault: Option<Fault>,
) -> Result<Vec<GroupError>> {
    let trace = params.forward(entry.s, entry.p, entry.t)?;
    let mut analytic = params.backward(&trace, entry.y, lambda)?;
    match fault {
        Some(Fault::ScaleW2) => analytic.w2.values_mut().iter_mut().for_each(|g| *g *= 1.01),
        Some(Fault::DropDecayW3) => {
            for (g, w) in analytic.w3.values_mut().iter_mut().zip(params.w3.values()) {
                *g -= 2.0 * lambda * w;
            }
        }
        None => {}
    }

    let mut probe = params.clone();
    let f = |p: &NtcnParams| -> Result<f64> {
        let y_hat = p.predict(entry.s, entry.p, entry.t)?;
        Ok(loss(y_hat, entry.y, p, lambda))
    };
    let names: Vec<&'static str> = params.tensors().iter().map(|(n, _)| *n).collect();
    let mut groups = Vec::with_capacity(names.len());
    for (gi, name) in names.into_iter().enumerate() {
        let len = params.tensors()[gi].1.len();
        let mut numeric = vec![0.0; len];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.tensors()[gi].1[i];
            probe.tensors_mut()[gi].1[i] = orig + h;
            let up = f(&probe)?;
            probe.tensors_mut()[gi].1[i] = orig - h;
            let down = f(&probe)?;
            probe.tensors_mut()[gi].1[i] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let an = analytic.tensors()[gi].1;
        let (mut diff, mut scale) = (0.0f64, 1e-12f64);
        for (a, n) in an.iter().zip(&numeric) {
            diff = diff.max((a - n).abs());
            scale = scale.max(a.abs()).max(n.abs());
        }
        groups.push(GroupError {
            name: name.to_string(),
            len,
            rel_error: diff / scale,
            abs_error: diff,
        });
    }
    Ok(groups)
}

/// Runs [`gradcheck`] on a handful of random entries and reports the worst
/// error per tensor.
pub fn run(
    label: &str,
    config: NtcnConfig,
    dims: Dims,
    seed: u64,
    entries: usize,
    fault: Option<Fault>,
) -> Result<GradcheckReport> {
    let params = check_params(config, dims, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut worst: Vec<GroupError> = Vec::new();
    for _ in 0..entries.max(1) {
        let e = Entry::new(
            rng.random_range(0..dims.stations),
            rng.random_range(0..dims.indicators),
            rng.random_range(0..dims.times),
            rng.random_range(0.05..0.95),
        );
        let groups = gradcheck(&params, &e, 0.01, DEFAULT_STEP, fault)?;
        if worst.is_empty() {
            worst = groups;
        } else {
            for (w, g) in worst.iter_mut().zip(groups) {
                if g.rel_error > w.rel_error {
                    *w = g;
                }
            }
        }
    }
    Ok(GradcheckReport {
        label: label.to_string(),
        tolerance: DEFAULT_TOLERANCE,
        groups: worst,
    })
}
