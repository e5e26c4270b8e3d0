//! Marginal and conditional CDF estimators, their inverses, and the
//! thresholded normal quantile map.
//!
//! Two marginal estimators are provided:
//!
//! * empirical: `F̂(y) = #{Y_t ≤ y} / (n + 1)`, which never reaches 0 or 1 on
//!   observed data;
//! * kernel: `F̂(y) = (1/n) Σ Φ((y − Y_t)/b)`, the integrated Gaussian kernel
//!   smoother.
//!
//! Kernel inversion is a bracketed solve: a Newton step is taken only when it
//! lands strictly inside the current bracket, otherwise the bracket is
//! bisected, so convergence is guaranteed by monotonicity alone.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MfbError, Result};
use crate::normal;
use crate::series::MultiSeries;

/// Kernel terms farther than this many bandwidths are exactly 0 or 1 in `f64`.
const KERNEL_CUTOFF: f64 = 9.0;
/// Inversion bracket half-width beyond the data support, in bandwidths.
const BRACKET_BANDWIDTHS: f64 = 8.0;
const INVERT_TOL: f64 = 1e-10;
const MAX_SOLVER_ITERS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CdfKind {
    Empirical,
    Kernel,
}

impl std::str::FromStr for CdfKind {
    type Err = MfbError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empirical" => Ok(CdfKind::Empirical),
            "kernel" => Ok(CdfKind::Kernel),
            other => Err(MfbError::Config(format!("unknown cdf kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for CdfKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CdfKind::Empirical => "empirical",
            CdfKind::Kernel => "kernel",
        })
    }
}

/// Plug-in bandwidth `1.06 σ̂ n^{-1/5}`.
pub fn plugin_bandwidth(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    (sd > 0.0 && sd.is_finite()).then(|| 1.06 * sd * (n as f64).powf(-0.2))
}

/// An estimated, invertible marginal CDF of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalCdf {
    kind: CdfKind,
    sorted: Vec<f64>,
    bandwidth: Option<f64>,
}

/// Serializable description of a fitted marginal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfSummary {
    pub kind: CdfKind,
    pub bandwidth: Option<f64>,
    pub n: usize,
    pub support: (f64, f64),
    pub data_digest: String,
}

/// Fits a marginal CDF. `bandwidth` is only used by the kernel kind; when
/// absent the plug-in rule is applied.
pub fn fit_marginal(values: &[f64], kind: CdfKind, bandwidth: Option<f64>) -> Result<MarginalCdf> {
    if values.is_empty() {
        return Err(MfbError::EmptySeries("no values to fit".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MfbError::InvalidSeries(
            "non-finite value in CDF sample".into(),
        ));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let bandwidth = match kind {
        CdfKind::Empirical => None,
        CdfKind::Kernel => {
            if sorted[0] == sorted[sorted.len() - 1] {
                return Err(MfbError::DegenerateSample(
                    "kernel CDF needs at least two distinct values".into(),
                ));
            }
            match bandwidth {
                Some(b) if b > 0.0 && b.is_finite() => Some(b),
                Some(b) => return Err(MfbError::Config(format!("invalid bandwidth {b}"))),
                None => plugin_bandwidth(&sorted),
            }
        }
    };
    Ok(MarginalCdf {
        kind,
        sorted,
        bandwidth,
    })
}

impl MarginalCdf {
    pub fn kind(&self) -> CdfKind {
        self.kind
    }

    pub fn bandwidth(&self) -> Option<f64> {
        self.bandwidth
    }

    pub fn support(&self) -> (f64, f64) {
        (self.sorted[0], self.sorted[self.sorted.len() - 1])
    }

    pub fn sample_len(&self) -> usize {
        self.sorted.len()
    }

    pub fn evaluate(&self, y: f64) -> f64 {
        let n = self.sorted.len();
        match self.bandwidth {
            None => {
                let count = self.sorted.partition_point(|&v| v <= y);
                count as f64 / (n + 1) as f64
            }
            Some(b) => {
                let lo = self.sorted.partition_point(|&v| v < y - KERNEL_CUTOFF * b);
                let hi = self.sorted.partition_point(|&v| v <= y + KERNEL_CUTOFF * b);
                let window: f64 = self.sorted[lo..hi]
                    .iter()
                    .map(|&v| normal::cdf((y - v) / b))
                    .sum();
                (lo as f64 + window) / n as f64
            }
        }
    }

    /// Derivative of the kernel CDF; zero for the empirical kind.
    pub fn density(&self, y: f64) -> f64 {
        match self.bandwidth {
            None => 0.0,
            Some(b) => {
                let lo = self.sorted.partition_point(|&v| v < y - KERNEL_CUTOFF * b);
                let hi = self.sorted.partition_point(|&v| v <= y + KERNEL_CUTOFF * b);
                let s: f64 = self.sorted[lo..hi]
                    .iter()
                    .map(|&v| normal::pdf((y - v) / b))
                    .sum();
                s / (self.sorted.len() as f64 * b)
            }
        }
    }

    /// `inf{y : F̂(y) ≥ u}` for `u ∈ (0, 1)`.
    ///
    /// For the empirical kind, levels above `n/(n+1)` return the sample maximum.
    /// For the kernel kind, levels outside the bracket `support ± 8b` return
    /// the bracket end.
    pub fn invert(&self, u: f64) -> Result<f64> {
        check_unit(u)?;
        match self.bandwidth {
            None => Ok(self.sorted[self.order_index(u) - 1]),
            Some(b) => {
                let (min, max) = self.support();
                let guess = self.sorted
                    [((u * self.sorted.len() as f64) as usize).min(self.sorted.len() - 1)];
                Ok(solve_monotone(
                    |y| self.evaluate(y),
                    |y| self.density(y),
                    u,
                    min - BRACKET_BANDWIDTHS * b,
                    max + BRACKET_BANDWIDTHS * b,
                    guess,
                ))
            }
        }
    }

    /// Smallest 1-based rank `k` with `k/(n+1) ≥ u`, capped at `n`.
    fn order_index(&self, u: f64) -> usize {
        let n = self.sorted.len();
        let denom = (n + 1) as f64;
        let mut k = ((u * denom).ceil() as usize).clamp(1, n + 1);
        while k > 1 && (k - 1) as f64 / denom >= u {
            k -= 1;
        }
        while k <= n && (k as f64 / denom) < u {
            k += 1;
        }
        k.min(n)
    }

    /// Maps a normal score back to the data scale: `F̂⁻¹(Φ(z))`.
    ///
    /// `Φ(z)` is clamped into the open unit interval. For the empirical kind,
    /// levels within 1e-9 of a rank grid point `k/(n+1)` are snapped to it,
    /// which absorbs the rounding of `Φ(Φ⁻¹(u))`.
    pub fn invert_normal_score(&self, z: f64) -> Result<f64> {
        if !z.is_finite() {
            return Err(MfbError::Domain {
                value: z,
                domain: "finite normal score",
            });
        }
        let mut u = open_unit(normal::cdf(z));
        if self.bandwidth.is_none() {
            let denom = (self.sorted.len() + 1) as f64;
            let x = u * denom;
            let r = x.round();
            if r >= 1.0 && (x - r).abs() < 1e-9 {
                u = r / denom;
            }
        }
        self.invert(u)
    }

    pub fn summary(&self) -> CdfSummary {
        let mut hasher = Sha256::new();
        for v in &self.sorted {
            hasher.update(v.to_le_bytes());
        }
        CdfSummary {
            kind: self.kind,
            bandwidth: self.bandwidth,
            n: self.sorted.len(),
            support: self.support(),
            data_digest: hex::encode(hasher.finalize()),
        }
    }
}

/// Standalone inverse: `inf{y : F̂(y) ≥ u}`.
pub fn cdf_invert(model: &MarginalCdf, u: f64) -> Result<f64> {
    model.invert(u)
}

fn check_unit(u: f64) -> Result<()> {
    if u > 0.0 && u < 1.0 {
        Ok(())
    } else {
        Err(MfbError::Domain {
            value: u,
            domain: "open interval (0, 1)",
        })
    }
}

pub(crate) fn open_unit(u: f64) -> f64 {
    u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Solves `F(y) = u` for a continuous nondecreasing `F` on `[lo, hi]`.
fn solve_monotone<F, D>(f: F, density: D, u: f64, lo: f64, hi: f64, guess: f64) -> f64
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    if f(lo) >= u {
        return lo;
    }
    if f(hi) < u {
        return hi;
    }
    // invariant: F(a) < u ≤ F(b)
    let (mut a, mut b) = (lo, hi);
    let mut x = if guess > a && guess < b {
        guess
    } else {
        0.5 * (a + b)
    };
    for _ in 0..MAX_SOLVER_ITERS {
        let fx = f(x) - u;
        if fx >= 0.0 {
            b = x;
        } else {
            a = x;
        }
        let tol = INVERT_TOL.max(4.0 * f64::EPSILON * x.abs());
        if b - a <= tol {
            return b;
        }
        let dens = density(x);
        let newton = if dens > 0.0 { x - fx / dens } else { f64::NAN };
        if newton > a && newton < b {
            if (newton - x).abs() <= 0.1 * tol {
                return newton;
            }
            x = newton;
        } else {
            x = 0.5 * (a + b);
        }
    }
    0.5 * (a + b)
}

/// Quantile map of a normal distribution thresholded at `±c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdedNormalQuantile {
    c: f64,
}

impl ThresholdedNormalQuantile {
    pub fn new(c: f64) -> Result<Self> {
        if c > 0.0 && !c.is_nan() {
            Ok(Self { c })
        } else {
            Err(MfbError::Config(format!(
                "threshold must be positive, got {c}"
            )))
        }
    }

    /// Default threshold `√(2 ln n)`. It grows with `n` and stays above
    /// `Φ⁻¹(n/(n+1))`, so rank-based scores are never clamped.
    pub fn default_for(n: usize) -> Self {
        Self {
            c: (2.0 * (n.max(3) as f64).ln()).sqrt(),
        }
    }

    pub fn threshold(&self) -> f64 {
        self.c
    }

    /// `clamp(Φ⁻¹(u), −c, c)`.
    pub fn map(&self, u: f64) -> Result<f64> {
        check_unit(u)?;
        Ok(normal::quantile(u).clamp(-self.c, self.c))
    }
}

pub fn thresholded_quantile(q: &ThresholdedNormalQuantile, u: f64) -> Result<f64> {
    q.map(u)
}

/// Nadaraya–Watson smoothed CDF of one dimension given the preceding ones.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalCdf {
    target: usize,
    /// Row-major `n × k` conditioning sample.
    conditioning: Vec<f64>,
    targets: Vec<f64>,
    cond_bandwidths: Vec<f64>,
    bandwidth: f64,
    target_range: (f64, f64),
}

impl ConditionalCdf {
    /// Builds the estimator from raw `(conditioning vector, target)` pairs.
    pub fn from_samples(
        target: usize,
        conditioning: &[Vec<f64>],
        targets: &[f64],
        cond_bandwidths: Vec<f64>,
        bandwidth: f64,
    ) -> Result<Self> {
        if targets.is_empty() || conditioning.len() != targets.len() {
            return Err(MfbError::DimensionMismatch {
                expected: targets.len(),
                actual: conditioning.len(),
            });
        }
        let k = cond_bandwidths.len();
        if conditioning.iter().any(|x| x.len() != k) {
            return Err(MfbError::DimensionMismatch {
                expected: k,
                actual: conditioning
                    .iter()
                    .map(Vec::len)
                    .find(|&l| l != k)
                    .unwrap_or(0),
            });
        }
        if !(bandwidth > 0.0) || cond_bandwidths.iter().any(|h| !(*h > 0.0)) {
            return Err(MfbError::Config(
                "conditional bandwidths must be positive".into(),
            ));
        }
        let min = targets.iter().copied().fold(f64::INFINITY, f64::min);
        let max = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            target,
            conditioning: conditioning.iter().flatten().copied().collect(),
            targets: targets.to_vec(),
            cond_bandwidths,
            bandwidth,
            target_range: (min, max),
        })
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn conditioning_dims(&self) -> usize {
        self.cond_bandwidths.len()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn cond_bandwidths(&self) -> &[f64] {
        &self.cond_bandwidths
    }

    /// Normalized kernel weights at conditioning point `x`.
    pub fn weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        let k = self.conditioning_dims();
        if x.len() != k {
            return Err(MfbError::DimensionMismatch {
                expected: k,
                actual: x.len(),
            });
        }
        let logw: Vec<f64> = self
            .conditioning
            .chunks_exact(k.max(1))
            .take(self.targets.len())
            .map(|row| {
                -0.5 * row
                    .iter()
                    .zip(x)
                    .zip(&self.cond_bandwidths)
                    .map(|((xt, xq), h)| ((xq - xt) / h).powi(2))
                    .sum::<f64>()
            })
            .collect();
        let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // every raw weight exp(logw) would underflow
        if !top.is_finite() || top < f64::MIN_POSITIVE.ln() {
            return Err(MfbError::Extrapolation);
        }
        let mut w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        Ok(w)
    }

    /// Fixes the conditioning point, returning a univariate CDF.
    pub fn at(&self, x: &[f64]) -> Result<ConditionedCdf<'_>> {
        Ok(ConditionedCdf {
            model: self,
            weights: self.weights(x)?,
        })
    }

    pub fn evaluate(&self, y: f64, x: &[f64]) -> Result<f64> {
        Ok(self.at(x)?.evaluate(y))
    }

    pub fn invert(&self, u: f64, x: &[f64]) -> Result<f64> {
        self.at(x)?.invert(u)
    }
}

/// A conditional CDF with its conditioning point fixed.
#[derive(Debug, Clone)]
pub struct ConditionedCdf<'a> {
    model: &'a ConditionalCdf,
    weights: Vec<f64>,
}

impl ConditionedCdf<'_> {
    pub fn evaluate(&self, y: f64) -> f64 {
        let b = self.model.bandwidth;
        self.weights
            .iter()
            .zip(&self.model.targets)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, t)| w * normal::cdf((y - t) / b))
            .sum::<f64>()
            .min(1.0)
    }

    pub fn density(&self, y: f64) -> f64 {
        let b = self.model.bandwidth;
        self.weights
            .iter()
            .zip(&self.model.targets)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, t)| w * normal::pdf((y - t) / b))
            .sum::<f64>()
            / b
    }

    pub fn invert(&self, u: f64) -> Result<f64> {
        check_unit(u)?;
        let b = self.model.bandwidth;
        let (min, max) = self.model.target_range;
        Ok(solve_monotone(
            |y| self.evaluate(y),
            |y| self.density(y),
            u,
            min - BRACKET_BANDWIDTHS * b,
            max + BRACKET_BANDWIDTHS * b,
            f64::NAN,
        ))
    }

    pub fn invert_normal_score(&self, z: f64) -> Result<f64> {
        if !z.is_finite() {
            return Err(MfbError::Domain {
                value: z,
                domain: "finite normal score",
            });
        }
        self.invert(open_unit(normal::cdf(z)))
    }
}

/// Fits the conditional CDF of dimension `target` (0-based, `≥ 1`) given
/// dimensions `0..target`. Bandwidths default to the per-dimension plug-in rule.
pub fn fit_conditional(
    series: &MultiSeries,
    target: usize,
    bandwidths: Option<(Vec<f64>, f64)>,
) -> Result<ConditionalCdf> {
    if target == 0 || target >= series.dims() {
        return Err(MfbError::Config(format!(
            "conditional target {target} must lie in 1..{}",
            series.dims()
        )));
    }
    if series.len() < 10 {
        return Err(MfbError::InsufficientData(
            "conditional CDF needs at least 10 observations".into(),
        ));
    }
    let targets = series.row(target);
    let (cond_bw, bw) = match bandwidths {
        Some((c, b)) => {
            if c.len() != target {
                return Err(MfbError::DimensionMismatch {
                    expected: target,
                    actual: c.len(),
                });
            }
            (c, b)
        }
        None => {
            let cond: Result<Vec<f64>> = (0..target)
                .map(|j| {
                    plugin_bandwidth(&series.row(j)).ok_or_else(|| {
                        MfbError::DegenerateSample(format!("dimension {j} is constant"))
                    })
                })
                .collect();
            let b = plugin_bandwidth(&targets).ok_or_else(|| {
                MfbError::DegenerateSample(format!("dimension {target} is constant"))
            })?;
            (cond?, b)
        }
    };
    let conditioning: Vec<Vec<f64>> = (0..series.len())
        .map(|t| series.column(t)[..target].to_vec())
        .collect();
    ConditionalCdf::from_samples(target, &conditioning, &targets, cond_bw, bw)
}
