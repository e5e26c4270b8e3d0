//! Flat-top tapered block-Toeplitz covariance of the Gaussianized series.
//!
//! The estimate keeps lag blocks `κ_l(h) Γ̂_h` for `h ≤ ⌈2l⌉` only, so the
//! assembled `dn × dn` matrix is banded with lower bandwidth `d(⌈2l⌉ + 1)`.
//! A flat-top taper can produce an indefinite estimate in finite samples; the
//! repair adds the smallest ridge `εI` (found by doubling) that lets the banded
//! Cholesky succeed, which keeps the band intact.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::banded::BandedLower;
use crate::error::{MfbError, Result};
use crate::series::{lag_cov_matrix, MultiSeries};
use crate::transform::GaussianizedSeries;

/// Trapezoid flat-top taper `κ_l(x) = κ(x / l)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatTopKernel {
    l: f64,
}

impl FlatTopKernel {
    pub fn new(l: f64) -> Result<Self> {
        if l > 0.0 && l.is_finite() {
            Ok(Self { l })
        } else {
            Err(MfbError::Config(format!(
                "banding parameter must be positive, got {l}"
            )))
        }
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn weight(&self, x: f64) -> f64 {
        let r = (x / self.l).abs();
        if r <= 1.0 {
            1.0
        } else if r <= 2.0 {
            2.0 - r
        } else {
            0.0
        }
    }

    /// Largest lag with a possibly nonzero weight, `⌈2l⌉`.
    pub fn max_lag(&self) -> usize {
        (2.0 * self.l).ceil() as usize
    }
}

/// Symmetric linear operator, used by the spectral diagnostics.
pub trait SymOperator {
    fn order(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl SymOperator for DMatrix<f64> {
    fn order(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = (0..self.ncols()).map(|j| self[(i, j)] * x[j]).sum();
        }
    }
}

/// Symmetric block-Toeplitz matrix: block `(s, t)` is `Γ_{t−s}` for `t ≥ s`
/// and `Γ_{s−t}ᵀ` otherwise, with `Γ_h = 0` beyond the stored lags.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockToeplitz {
    dim: usize,
    steps: usize,
    blocks: Vec<DMatrix<f64>>,
}

impl BlockToeplitz {
    pub fn new(dim: usize, steps: usize, blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        if dim == 0 || steps == 0 || blocks.is_empty() {
            return Err(MfbError::EmptySeries(
                "block-Toeplitz matrix is empty".into(),
            ));
        }
        if let Some(b) = blocks.iter().find(|b| b.shape() != (dim, dim)) {
            return Err(MfbError::DimensionMismatch {
                expected: dim,
                actual: b.nrows(),
            });
        }
        Ok(Self { dim, steps, blocks })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    /// Largest lag with a stored block that fits in the matrix.
    pub fn max_lag(&self) -> usize {
        (self.blocks.len() - 1).min(self.steps - 1)
    }

    /// Lower bandwidth in scalar entries, `d (K + 1)`.
    pub fn band_width(&self) -> usize {
        self.dim * (self.max_lag() + 1)
    }

    pub fn entry(&self, a: usize, b: usize) -> f64 {
        let (a, b) = if a >= b { (a, b) } else { (b, a) };
        let d = self.dim;
        let lag = a / d - b / d;
        match self.blocks.get(lag) {
            Some(g) => g[(b % d, a % d)],
            None => 0.0,
        }
    }

    /// Same blocks over a different number of time steps.
    pub fn with_steps(&self, steps: usize) -> Self {
        Self {
            dim: self.dim,
            steps: steps.max(1),
            blocks: self.blocks.clone(),
        }
    }

    /// Adds `εI` to the lag-0 block.
    pub fn with_ridge(&self, eps: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.dim {
            out.blocks[0][(i, i)] += eps;
        }
        out
    }

    /// `tr(Γ_0) / d`, the mean diagonal entry.
    pub fn mean_diagonal(&self) -> f64 {
        self.blocks[0].trace() / self.dim as f64
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.order();
        DMatrix::from_fn(n, n, |i, j| self.entry(i, j))
    }
}

impl SymOperator for BlockToeplitz {
    fn order(&self) -> usize {
        self.dim * self.steps
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let d = self.dim;
        y.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..self.steps {
            let yt = t * d;
            for (h, g) in self.blocks.iter().enumerate().take(self.max_lag() + 1) {
                // y_t += Γ_h x_{t+h}
                if t + h < self.steps {
                    let xs = (t + h) * d;
                    for j in 0..d {
                        let xj = x[xs + j];
                        for i in 0..d {
                            y[yt + i] += g[(i, j)] * xj;
                        }
                    }
                }
                // y_t += Γ_hᵀ x_{t−h}
                if h > 0 && t >= h {
                    let xs = (t - h) * d;
                    for i in 0..d {
                        let mut acc = 0.0;
                        for j in 0..d {
                            acc += g[(j, i)] * x[xs + j];
                        }
                        y[yt + i] += acc;
                    }
                }
            }
        }
    }
}

/// Banded Cholesky of a block-Toeplitz matrix.
pub fn factor_banded(matrix: &BlockToeplitz) -> Result<BandedLower> {
    BandedLower::cholesky(matrix.order(), matrix.band_width(), |i, j| {
        matrix.entry(i, j)
    })
}

/// Outcome of the positive-definiteness repair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairRecord {
    pub applied: bool,
    /// Ridge `ε` added to the diagonal; 0 when the raw estimate factorized.
    pub ridge: f64,
    /// Factorization attempts, including the unrepaired one.
    pub attempts: usize,
    /// Upper bound on `λ_min` of the unrepaired estimate implied by the
    /// last failed ridge (`−ε`), when a repair was needed.
    pub min_eig_bound: Option<f64>,
}

const RIDGE_START: f64 = 1e-12;
const RIDGE_LIMIT: f64 = 0.1;

/// Finds the smallest ridge on the doubling ladder `ε₀·2^k` (with
/// `ε₀ = 1e-12 · tr/(dn)`) for which the banded Cholesky succeeds.
pub fn psd_repair(matrix: &BlockToeplitz) -> Result<(BlockToeplitz, BandedLower, RepairRecord)> {
    if let Ok(f) = factor_banded(matrix) {
        let rec = RepairRecord {
            applied: false,
            ridge: 0.0,
            attempts: 1,
            min_eig_bound: None,
        };
        return Ok((matrix.clone(), f, rec));
    }
    let scale = matrix.mean_diagonal().abs().max(f64::MIN_POSITIVE);
    let limit = RIDGE_LIMIT * scale;
    let mut eps = RIDGE_START * scale;
    let mut attempts = 1;
    let mut failed_at = 0.0;
    loop {
        attempts += 1;
        let repaired = matrix.with_ridge(eps);
        if let Ok(f) = factor_banded(&repaired) {
            let rec = RepairRecord {
                applied: true,
                ridge: eps,
                attempts,
                min_eig_bound: Some(-failed_at),
            };
            return Ok((repaired, f, rec));
        }
        failed_at = eps;
        if eps >= limit {
            break;
        }
        // the last trial sits exactly on the limit
        eps = (2.0 * eps).min(limit);
    }
    Err(MfbError::RepairFailed {
        limit,
        min_eig_bound: -limit,
    })
}

/// Tapered, repaired and factored block-Toeplitz covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct TaperedBlockCov {
    kernel: FlatTopKernel,
    matrix: BlockToeplitz,
    factor: BandedLower,
    repair: RepairRecord,
}

/// Diagnostic dump of a fitted covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovDiagnostics {
    pub l: f64,
    pub ridge: f64,
    pub repair_applied: bool,
    pub min_eig: f64,
    pub max_eig: f64,
    pub bandwidth: usize,
    pub order: usize,
}

impl TaperedBlockCov {
    /// Tapers the given raw lag blocks, repairs and factors at `steps` time steps.
    pub fn from_raw_blocks(
        dim: usize,
        steps: usize,
        raw: &[DMatrix<f64>],
        kernel: FlatTopKernel,
    ) -> Result<Self> {
        let blocks: Vec<DMatrix<f64>> = raw
            .iter()
            .enumerate()
            .map(|(h, g)| g * kernel.weight(h as f64))
            .collect();
        let tapered = BlockToeplitz::new(dim, steps, blocks)?;
        let (matrix, factor, repair) = psd_repair(&tapered)?;
        Ok(Self {
            kernel,
            matrix,
            factor,
            repair,
        })
    }

    pub fn kernel(&self) -> FlatTopKernel {
        self.kernel
    }

    /// The repaired matrix (ridge included).
    pub fn matrix(&self) -> &BlockToeplitz {
        &self.matrix
    }

    pub fn factor(&self) -> &BandedLower {
        &self.factor
    }

    pub fn repair(&self) -> &RepairRecord {
        &self.repair
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim
    }

    pub fn steps(&self) -> usize {
        self.matrix.steps
    }

    pub fn order(&self) -> usize {
        self.factor.order()
    }

    /// Lower bandwidth of the factor.
    pub fn bandwidth(&self) -> usize {
        self.factor.width()
    }

    /// Restriction to the leading `steps` time steps.
    pub fn leading(&self, steps: usize) -> Self {
        let steps = steps.min(self.steps());
        Self {
            kernel: self.kernel,
            matrix: self.matrix.with_steps(steps),
            factor: self.factor.leading(steps * self.dim()),
            repair: self.repair.clone(),
        }
    }

    /// Appends `extra` time steps with the same blocks and ridge, continuing
    /// the factorization so the leading factor is reproduced exactly.
    pub fn extend(&self, extra: usize) -> Result<Self> {
        let steps = self.steps() + extra;
        let matrix = self.matrix.with_steps(steps);
        if matrix.band_width() != self.factor.width() {
            return Err(MfbError::Internal(
                "extension changes the band of the factor".into(),
            ));
        }
        let factor = self
            .factor
            .extend_cholesky(matrix.order(), |i, j| matrix.entry(i, j))?;
        Ok(Self {
            kernel: self.kernel,
            matrix,
            factor,
            repair: self.repair.clone(),
        })
    }

    /// Spectral diagnostics of the repaired matrix, by power and inverse iteration.
    pub fn diagnostics(&self) -> CovDiagnostics {
        let n = self.order();
        let cap = (10 * n).min(5000);
        let max_eig = power_iteration(n, cap, 1e-6, |x, y| self.matrix.apply(x, y)).value;
        let inv = power_iteration(n, cap, 1e-6, |x, y| {
            let z = self.factor.solve_lower(x).expect("factor order");
            let w = self.factor.solve_upper(&z).expect("factor order");
            y.copy_from_slice(&w);
        });
        let min_eig = if inv.value > 0.0 {
            1.0 / inv.value
        } else {
            f64::INFINITY
        };
        CovDiagnostics {
            l: self.kernel.l,
            ridge: self.repair.ridge,
            repair_applied: self.repair.applied,
            min_eig: min_eig - self.repair.ridge,
            max_eig: max_eig - self.repair.ridge,
            bandwidth: self.bandwidth(),
            order: n,
        }
    }
}

/// Default banding parameter `max(1, round(n^{1/3}))`.
pub fn default_banding(n: usize) -> f64 {
    (n as f64).cbrt().round().max(1.0)
}

/// Raw lag blocks `Γ̂_0..=Γ̂_K` of a series, `K = min(max_lag, n − 1)`.
pub fn raw_lag_blocks(series: &MultiSeries, max_lag: usize) -> Result<Vec<DMatrix<f64>>> {
    let k = max_lag.min(series.len() - 1);
    (0..=k)
        .map(|h| lag_cov_matrix(series.values(), h))
        .collect()
}

/// Tapered covariance of `z` at order `dn`.
pub fn build_tapered(z: &GaussianizedSeries, l: f64) -> Result<TaperedBlockCov> {
    build_tapered_with_horizon(z, l, 0)
}

/// Tapered covariance of `z` factored at order `d(n + horizon)`.
///
/// The ridge is chosen on the extended matrix, so the leading `dn` factor is
/// the factor of the same repaired matrix and whitening and future draws share it.
pub fn build_tapered_with_horizon(
    z: &GaussianizedSeries,
    l: f64,
    horizon: usize,
) -> Result<TaperedBlockCov> {
    build_tapered_from_series(z.values(), l, horizon)
}

pub fn build_tapered_from_series(
    z: &MultiSeries,
    l: f64,
    horizon: usize,
) -> Result<TaperedBlockCov> {
    if z.len() < 4 {
        return Err(MfbError::InsufficientData(
            "tapered covariance needs at least 4 time points".into(),
        ));
    }
    if !(l >= 1.0) {
        return Err(MfbError::Config(format!(
            "banding parameter must be ≥ 1, got {l}"
        )));
    }
    let kernel = FlatTopKernel::new(l)?;
    let raw = raw_lag_blocks(z, kernel.max_lag())?;
    TaperedBlockCov::from_raw_blocks(z.dims(), z.len() + horizon, &raw, kernel)
}

/// Estimate of a dominant eigenvalue magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpNormEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn power_iteration<F>(n: usize, cap: usize, tol: f64, apply: F) -> OpNormEstimate
where
    F: Fn(&[f64], &mut [f64]),
{
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_0b);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.iter_mut().for_each(|v| *v /= norm);
    let mut y = vec![0.0; n];
    let mut theta = 0.0;
    for it in 1..=cap.max(1) {
        apply(&x, &mut y);
        let next = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if next == 0.0 {
            return OpNormEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / next;
        }
        if (next - theta).abs() <= tol * next {
            return OpNormEstimate {
                value: next,
                iterations: it,
                converged: true,
            };
        }
        theta = next;
    }
    OpNormEstimate {
        value: theta,
        iterations: cap,
        converged: false,
    }
}

/// `‖A − B‖_op` by power iteration on the symmetric difference
/// (relative tolerance 1e-6, at most `10 · order` iterations).
pub fn op_norm_diff<A: SymOperator, B: SymOperator>(a: &A, b: &B) -> Result<OpNormEstimate> {
    let n = a.order();
    if b.order() != n {
        return Err(MfbError::DimensionMismatch {
            expected: n,
            actual: b.order(),
        });
    }
    let est = power_iteration(n, 10 * n, 1e-6, |x, y| {
        a.apply(x, y);
        let mut t = vec![0.0; n];
        b.apply(x, &mut t);
        for (yi, ti) in y.iter_mut().zip(&t) {
            *yi -= ti;
        }
    });
    Ok(est)
}
