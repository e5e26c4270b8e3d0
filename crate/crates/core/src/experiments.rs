//! Synthetic coverage experiments and rolling backtests.
//!
//! Synthetic data are `Y_{i,t} = f_i(W_{i,t})` with `W` a Gaussian VAR(1).
//! Because the hidden `W` is kept, futures can be drawn exactly from the
//! conditional law of `Y_{n+1}` given the past, and the coverage of a region
//! against those draws estimates its conditional coverage.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_roots, MfbConfig};
use crate::error::{MfbError, Result};
use crate::region::{jpb_stack, region_from_roots};
use crate::rng::{derive_seed, substream, tag};
use crate::series::{format_float, MultiSeries};

/// Strictly increasing map applied to one latent coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonotoneTransform {
    /// `sgn(x) √|x|`.
    SignedSqrt,
    Identity,
    /// Piecewise-linear interpolation through `(x, y)` knots with linear
    /// extrapolation from the end segments.
    Tabulated {
        x: Vec<f64>,
        y: Vec<f64>,
    },
}

impl MonotoneTransform {
    pub fn tabulated(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() < 2 || x.len() != y.len() {
            return Err(MfbError::Config(
                "tabulated map needs at least 2 matching knots".into(),
            ));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&x) || !increasing(&y) {
            return Err(MfbError::Config(
                "tabulated map must be strictly increasing".into(),
            ));
        }
        Ok(Self::Tabulated { x, y })
    }

    pub fn apply(&self, v: f64) -> f64 {
        match self {
            Self::SignedSqrt => v.signum() * v.abs().sqrt(),
            Self::Identity => v,
            Self::Tabulated { x, y } => interpolate(x, y, v),
        }
    }

    pub fn inverse(&self, v: f64) -> f64 {
        match self {
            Self::SignedSqrt => v.signum() * v * v,
            Self::Identity => v,
            Self::Tabulated { x, y } => interpolate(y, x, v),
        }
    }
}

fn interpolate(xs: &[f64], ys: &[f64], v: f64) -> f64 {
    let k = xs.partition_point(|&x| x <= v).clamp(1, xs.len() - 1);
    let (x0, x1, y0, y1) = (xs[k - 1], xs[k], ys[k - 1], ys[k]);
    y0 + (v - x0) * (y1 - y0) / (x1 - x0)
}

/// Latent VAR(1) `W_t = A W_{t−1} + ε_t`, `ε_t ~ N(0, B)`, observed through
/// per-coordinate monotone maps.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub transforms: Vec<MonotoneTransform>,
    pub n: usize,
    pub burn_in: usize,
    pub seed: u64,
}

pub const DEFAULT_BURN_IN: usize = 500;

impl SyntheticSpec {
    /// Bivariate reference design: `A = [[0.5, 0.2], [0.2, 0.6]]`,
    /// `B = [[2, 0.5], [0.5, 2]]`, signed square root on both coordinates.
    pub fn reference(n: usize, seed: u64) -> Self {
        Self {
            a: DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.6]),
            b: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 2.0]),
            transforms: vec![MonotoneTransform::SignedSqrt; 2],
            n,
            burn_in: DEFAULT_BURN_IN,
            seed,
        }
    }

    /// `d` independent standard normal coordinates.
    pub fn white_noise(d: usize, n: usize, seed: u64) -> Self {
        Self {
            a: DMatrix::zeros(d, d),
            b: DMatrix::identity(d, d),
            transforms: vec![MonotoneTransform::Identity; d],
            n,
            burn_in: DEFAULT_BURN_IN,
            seed,
        }
    }

    pub fn dims(&self) -> usize {
        self.a.nrows()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.a.nrows();
        if d == 0 || self.a.ncols() != d || self.b.shape() != (d, d) || self.transforms.len() != d {
            return Err(MfbError::Config(
                "VAR matrices and transforms must share one dimension".into(),
            ));
        }
        if self.n < 2 {
            return Err(MfbError::Config("series length must be at least 2".into()));
        }
        if self.burn_in < 200 {
            return Err(MfbError::Config(format!(
                "burn-in must be at least 200, got {}",
                self.burn_in
            )));
        }
        let rho = spectral_radius(&self.a);
        if !(rho < 1.0) {
            return Err(MfbError::UnstableVar(rho));
        }
        if (&self.b - self.b.transpose()).amax() > 1e-12 {
            return Err(MfbError::Config(
                "innovation covariance must be symmetric".into(),
            ));
        }
        let min_eig = self.b.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-12 * self.b.amax().max(1.0) {
            return Err(MfbError::Config(
                "innovation covariance must be positive semidefinite".into(),
            ));
        }
        Ok(())
    }

    /// Square root `R` with `R Rᵀ = B`: Cholesky when it exists, otherwise
    /// from the eigendecomposition.
    fn innovation_factor(&self) -> DMatrix<f64> {
        if let Some(c) = self.b.clone().cholesky() {
            return c.l();
        }
        let eig = self.b.clone().symmetric_eigen();
        let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
    }

    fn observe(&self, w: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(&self.transforms)
            .map(|(v, f)| f.apply(*v))
            .collect()
    }
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Observed series and the latent path behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub y: MultiSeries,
    pub w: MultiSeries,
}

impl Simulation {
    /// Latent state at the last time point.
    pub fn last_state(&self) -> &[f64] {
        self.w.column(self.w.len() - 1)
    }
}

fn normal_vec<R: Rng>(rng: &mut R, d: usize) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

/// Runs the VAR from `W_0 = 0`, discards the burn-in and maps through the transforms.
pub fn simulate(spec: &SyntheticSpec) -> Result<Simulation> {
    spec.validate()?;
    let d = spec.dims();
    let r = spec.innovation_factor();
    let mut rng = substream(spec.seed, &[tag::SIMULATION]);
    let mut w = nalgebra::DVector::zeros(d);
    let mut latent = DMatrix::zeros(d, spec.n);
    for t in 0..spec.burn_in + spec.n {
        w = &spec.a * &w + &r * normal_vec(&mut rng, d);
        if t >= spec.burn_in {
            latent.set_column(t - spec.burn_in, &w);
        }
    }
    let observed = DMatrix::from_fn(d, spec.n, |i, t| spec.transforms[i].apply(latent[(i, t)]));
    Ok(Simulation {
        y: MultiSeries::new(observed)?,
        w: MultiSeries::new(latent)?,
    })
}

/// `m` exact draws of `Y_{n+1}` given the latent state `W_n`.
pub fn oracle_futures<R: Rng>(
    spec: &SyntheticSpec,
    w_last: &[f64],
    m: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let d = spec.dims();
    if w_last.len() != d {
        return Err(MfbError::DimensionMismatch {
            expected: d,
            actual: w_last.len(),
        });
    }
    let r = spec.innovation_factor();
    let mean = &spec.a * nalgebra::DVector::from_column_slice(w_last);
    Ok((0..m)
        .map(|_| {
            let w = &mean + &r * normal_vec(rng, d);
            spec.observe(w.as_slice())
        })
        .collect())
}

/// Coverage of one simulated path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathCoverage {
    pub path: usize,
    pub simulation_seed: u64,
    pub bootstrap_seed: u64,
    pub cvr: Option<f64>,
    pub radius: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n: usize,
    pub alpha: f64,
    pub nominal: f64,
    pub oracle_draws: usize,
    pub paths: Vec<PathCoverage>,
    pub mean_cvr: f64,
    pub failed: usize,
    pub config: MfbConfig,
    /// Wall-clock seconds; not serialized so reports stay reproducible.
    #[serde(skip)]
    pub runtime_secs: f64,
}

/// Fits, builds a region and measures its coverage on `paths` simulated series.
pub fn cvr_experiment(
    spec: &SyntheticSpec,
    config: &MfbConfig,
    alpha: f64,
    paths: usize,
    oracle_draws: usize,
) -> Result<CoverageReport> {
    if paths < 10 {
        return Err(MfbError::Config(format!(
            "at least 10 paths required, got {paths}"
        )));
    }
    if oracle_draws < 1000 {
        return Err(MfbError::Config(format!(
            "at least 1000 oracle draws required, got {oracle_draws}"
        )));
    }
    spec.validate()?;
    config.validate()?;
    let start = Instant::now();
    let results: Vec<PathCoverage> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let simulation_seed = derive_seed(spec.seed, &[tag::SIMULATION, p as u64]);
            let bootstrap_seed = derive_seed(config.seed, &[tag::BOOTSTRAP, p as u64]);
            let outcome = (|| -> Result<(f64, f64)> {
                let sim = simulate(&spec.with_seed(simulation_seed))?;
                let cfg = MfbConfig {
                    seed: bootstrap_seed,
                    horizon: 1,
                    ..config.clone()
                };
                let roots = bootstrap_roots(&sim.y, &cfg)?;
                let region = region_from_roots(&roots, alpha, cfg.norm)?;
                let mut rng = substream(spec.seed, &[tag::ORACLE, p as u64]);
                let draws = oracle_futures(spec, sim.last_state(), oracle_draws, &mut rng)?;
                let mut covered = 0usize;
                for y in &draws {
                    covered += region.contains(y)? as usize;
                }
                Ok((
                    covered as f64 / oracle_draws as f64,
                    region.radius.unwrap_or(f64::NAN),
                ))
            })();
            match outcome {
                Ok((cvr, radius)) => PathCoverage {
                    path: p,
                    simulation_seed,
                    bootstrap_seed,
                    cvr: Some(cvr),
                    radius: Some(radius),
                    error: None,
                },
                Err(e) => PathCoverage {
                    path: p,
                    simulation_seed,
                    bootstrap_seed,
                    cvr: None,
                    radius: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let failed = results.iter().filter(|r| r.cvr.is_none()).count();
    if failed as f64 > 0.1 * paths as f64 {
        return Err(MfbError::TooManyFailedPaths {
            failed,
            total: paths,
        });
    }
    let ok: Vec<f64> = results.iter().filter_map(|r| r.cvr).collect();
    Ok(CoverageReport {
        n: spec.n,
        alpha,
        nominal: 1.0 - alpha,
        oracle_draws,
        mean_cvr: ok.iter().sum::<f64>() / ok.len() as f64,
        paths: results,
        failed,
        config: config.clone(),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

impl CoverageReport {
    /// One row per path.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "n",
            "path",
            "simulation_seed",
            "bootstrap_seed",
            "cvr",
            "radius",
            "error",
        ])?;
        for p in &self.paths {
            w.write_record([
                self.n.to_string(),
                p.path.to_string(),
                p.simulation_seed.to_string(),
                p.bootstrap_seed.to_string(),
                p.cvr.map(format_float).unwrap_or_default(),
                p.radius.map(format_float).unwrap_or_default(),
                p.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcome of one backtest window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowVerdict {
    pub k: usize,
    /// 1-based index of the last past observation, `t = n₀ + kh`.
    pub end: usize,
    pub covered: bool,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcvrReport {
    pub n: usize,
    pub n0: usize,
    pub h: usize,
    pub alpha: f64,
    /// `⌊(n − n₀)/h⌋ + 1`, the number of window indices.
    pub index_count: usize,
    /// Windows whose future fits inside the series.
    pub windows: Vec<WindowVerdict>,
    /// Covered fraction of the evaluated windows.
    pub ecvr: f64,
}

impl EcvrReport {
    pub fn dropped(&self) -> usize {
        self.index_count - self.windows.len()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n0", "h", "k", "end", "covered", "radius"])?;
        for v in &self.windows {
            w.write_record([
                self.n0.to_string(),
                self.h.to_string(),
                v.k.to_string(),
                v.end.to_string(),
                (v.covered as u8).to_string(),
                format_float(v.radius),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Window ends `t = n₀ + kh` (1-based) for `k = 0..=⌊(n−n₀)/h⌋`, and how many
/// of them leave a full future block inside the series.
pub fn backtest_windows(n: usize, n0: usize, h: usize) -> Result<(usize, Vec<usize>)> {
    if h == 0 || n0 == 0 || n < n0 + h {
        return Err(MfbError::InsufficientData(format!(
            "backtest needs n ≥ n₀ + h (n = {n}, n₀ = {n0}, h = {h})"
        )));
    }
    let count = (n - n0) / h + 1;
    let ends = (0..count)
        .map(|k| n0 + k * h)
        .filter(|t| t + h <= n)
        .collect();
    Ok((count, ends))
}

/// Rolling backtest: a joint band from the `n₀` values ending at each
/// window start, checked against the next `h` realized values.
pub fn ecvr_backtest(
    series: &MultiSeries,
    n0: usize,
    h: usize,
    config: &MfbConfig,
    alpha: f64,
) -> Result<EcvrReport> {
    if series.dims() != 1 {
        return Err(MfbError::DimensionMismatch {
            expected: 1,
            actual: series.dims(),
        });
    }
    let n = series.len();
    let (index_count, ends) = backtest_windows(n, n0, h)?;
    let y = series.as_stacked();
    let windows: Vec<Result<WindowVerdict>> = ends
        .par_iter()
        .enumerate()
        .map(|(k, &end)| {
            let past = MultiSeries::univariate(&y[end - n0..end])?;
            let cfg = MfbConfig {
                seed: derive_seed(config.seed, &[tag::WINDOW, k as u64]),
                ..config.clone()
            };
            let band = jpb_stack(&past, h, &cfg, alpha)?;
            let future = &y[end..end + h];
            Ok(WindowVerdict {
                k,
                end,
                covered: band.region.contains(future)?,
                radius: band.region.radius.unwrap_or(f64::NAN),
            })
        })
        .collect();
    let windows = windows.into_iter().collect::<Result<Vec<_>>>()?;
    let covered = windows.iter().filter(|w| w.covered).count();
    Ok(EcvrReport {
        n,
        n0,
        h,
        alpha,
        index_count,
        ecvr: covered as f64 / windows.len() as f64,
        windows,
    })
}

/// Long-format rows for coverage-versus-n plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub n: usize,
    pub variant: String,
    pub p: String,
    pub loss: String,
    pub alpha: f64,
    pub mean_cvr: f64,
    pub failed: usize,
}

pub fn write_coverage_rows<W: Write>(rows: &[CoverageRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["n", "variant", "p", "loss", "alpha", "mean_cvr", "failed"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.variant.clone(),
            r.p.clone(),
            r.loss.clone(),
            format_float(r.alpha),
            format_float(r.mean_cvr),
            r.failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Gnuplot script plotting mean CVR against `n` from a long-format CSV,
/// one line per (variant, p, loss) series.
pub fn coverage_gnuplot(csv_name: &str, nominal: f64) -> String {
    format!(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set xlabel 'n'\n\
         set ylabel 'mean CVR'\n\
         set yrange [0:1]\n\
         set terminal pngcairo size 900,600\n\
         set output 'coverage.png'\n\
         nominal = {nominal}\n\
         plot nominal with lines dashtype 2 title 'nominal', \\\n\
         \x20    for [v in 'resampled fixed'] for [p in '1 2 inf'] for [l in 'l1 l2'] \\\n\
         \x20    '{csv_name}' using 1:(strcol(2) eq v && strcol(3) eq p && strcol(4) eq l ? $6 : 1/0) \\\n\
         \x20    with linespoints title sprintf('%s p=%s %s', v, p, l)\n"
    )
}

/// Gnuplot script plotting ECVR against `n₀` from a CSV with columns `n0,h,ecvr`.
pub fn ecvr_gnuplot(csv_name: &str, nominal: f64) -> String {
    format!(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set xlabel 'n0'\n\
         set ylabel 'ECVR'\n\
         set yrange [0:1]\n\
         set terminal pngcairo size 900,600\n\
         set output 'ecvr.png'\n\
         nominal = {nominal}\n\
         plot nominal with lines dashtype 2 title 'nominal', \\\n\
         \x20    '{csv_name}' using 1:3 with linespoints title 'ECVR'\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bootstrap::Variant;
    use crate::series::lag_cov;

    #[test]
    fn signed_sqrt_inverse() {
        let f = MonotoneTransform::SignedSqrt;
        for y in [-2.0, 0.0, 3.0] {
            assert_eq!(f.apply(f.inverse(y)), y);
        }
        assert_eq!(f.apply(-4.0), -2.0);
        let t = MonotoneTransform::tabulated(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.apply(0.5), 1.0);
        assert_eq!(t.apply(2.0), 2.5);
        assert_eq!(t.apply(-1.0), -2.0);
        assert_eq!(t.inverse(2.5), 2.0);
        assert!(MonotoneTransform::tabulated(vec![0.0, 0.0], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn white_noise_simulation() {
        let sim = simulate(&SyntheticSpec::white_noise(2, 10_000, 1)).unwrap();
        assert_eq!((sim.y.dims(), sim.y.len()), (2, 10_000));
        assert_eq!(sim.y, sim.w);
        assert!(lag_cov(&sim.y, 1).unwrap().matrix.amax() < 0.05);
    }

    #[test]
    fn reference_stationary_covariance() {
        let spec = SyntheticSpec::reference(20_000, 2);
        let sim = simulate(&spec).unwrap();
        // Γ₀ = A Γ₀ Aᵀ + B by fixed-point iteration
        let mut g = DMatrix::zeros(2, 2);
        for _ in 0..500 {
            g = &spec.a * &g * spec.a.transpose() + &spec.b;
        }
        let sample = lag_cov(&sim.w, 0).unwrap().matrix;
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (sample[(i, j)] - g[(i, j)]).abs() < 0.1 * g[(i, j)].abs(),
                    "{sample} vs {g}"
                );
            }
        }
        assert_eq!(
            sim.y.get(0, 5),
            MonotoneTransform::SignedSqrt.apply(sim.w.get(0, 5))
        );
    }

    #[test]
    fn unstable_and_invalid_designs() {
        let mut spec = SyntheticSpec::reference(100, 0);
        spec.a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 0.5]);
        assert!(matches!(simulate(&spec), Err(MfbError::UnstableVar(_))));
        let mut spec = SyntheticSpec::reference(100, 0);
        spec.burn_in = 100;
        assert!(simulate(&spec).is_err());
        // eigenvalues of [[0.5, 0.2], [0.2, 0.6]] are 0.55 ± √0.0425
        let rho = 0.55 + 0.0425f64.sqrt();
        assert!((spectral_radius(&SyntheticSpec::reference(10, 0).a) - rho).abs() < 1e-12);
    }

    #[test]
    fn oracle_futures_properties() {
        let mut spec = SyntheticSpec::reference(100, 3);
        let w = [1.5, -0.7];
        let mut rng = substream(3, &[tag::ORACLE]);
        let m = 20_000;
        let draws = oracle_futures(&spec, &w, m, &mut rng).unwrap();
        let mean_w: Vec<f64> = (0..2)
            .map(|i| {
                draws
                    .iter()
                    .map(|y| MonotoneTransform::SignedSqrt.inverse(y[i]))
                    .sum::<f64>()
                    / m as f64
            })
            .collect();
        let target = [0.5 * 1.5 + 0.2 * -0.7, 0.2 * 1.5 + 0.6 * -0.7];
        for i in 0..2 {
            assert!((mean_w[i] - target[i]).abs() < 3.0 * (2.0f64 / m as f64).sqrt());
        }
        spec.b = DMatrix::zeros(2, 2);
        let det = oracle_futures(&spec, &w, 5, &mut rng).unwrap();
        let expect: Vec<f64> = target
            .iter()
            .map(|v| MonotoneTransform::SignedSqrt.apply(*v))
            .collect();
        assert!(det.iter().all(|y| y == &expect));
    }

    #[test]
    fn oracle_preserves_rank_order() {
        let spec = SyntheticSpec::reference(100, 4);
        let mut a = substream(4, &[tag::ORACLE]);
        let mut b = substream(4, &[tag::ORACLE]);
        let ys = oracle_futures(&spec, &[0.2, 0.1], 200, &mut a).unwrap();
        let r = spec.innovation_factor();
        let mean = &spec.a * nalgebra::DVector::from_vec(vec![0.2, 0.1]);
        let ws: Vec<Vec<f64>> = (0..200)
            .map(|_| (&mean + &r * normal_vec(&mut b, 2)).as_slice().to_vec())
            .collect();
        for i in 0..2 {
            for (p, q) in (0..200).zip(1..200) {
                assert_eq!(ws[p][i] < ws[q][i], ys[p][i] < ys[q][i]);
            }
        }
    }

    #[test]
    fn window_bookkeeping() {
        let (count, ends) = backtest_windows(10, 6, 2).unwrap();
        assert_eq!(count, 3);
        assert_eq!(ends, vec![6, 8]);
        let (count, ends) = backtest_windows(11, 6, 2).unwrap();
        assert_eq!(count, 3);
        assert_eq!(ends, vec![6, 8]);
        let (count, ends) = backtest_windows(12, 6, 2).unwrap();
        assert_eq!((count, ends.len()), (4, 3));
        assert!(backtest_windows(7, 6, 2).is_err());
    }

    #[test]
    fn wide_regions_cover_every_window() {
        let sim = simulate(&SyntheticSpec::white_noise(1, 200, 5)).unwrap();
        let config = MfbConfig {
            replicates: 100,
            predictor_draws: 200,
            variant: Variant::Fixed,
            ..MfbConfig::default()
        };
        let report = ecvr_backtest(&sim.y, 150, 2, &config, 0.01).unwrap();
        assert_eq!(report.index_count, 26);
        assert_eq!(report.windows.len(), 25);
        assert_eq!(report.dropped(), 1);
        assert!(report.ecvr > 0.9);
        assert!((0.0..=1.0).contains(&report.ecvr));
    }

    #[test]
    fn coverage_tracks_coarse_level() {
        let spec = SyntheticSpec::white_noise(1, 400, 6);
        let config = MfbConfig {
            replicates: 200,
            predictor_draws: 500,
            variant: Variant::Fixed,
            seed: 6,
            ..MfbConfig::default()
        };
        let report = cvr_experiment(&spec, &config, 0.5, 10, 1000).unwrap();
        assert_eq!(report.paths.len(), 10);
        assert!(report
            .paths
            .iter()
            .all(|p| (0.0..=1.0).contains(&p.cvr.unwrap())));
        assert!(
            (0.40..=0.60).contains(&report.mean_cvr),
            "{}",
            report.mean_cvr
        );
        let again = cvr_experiment(&spec, &config, 0.5, 10, 1000).unwrap();
        assert_eq!(report.paths, again.paths);
        let json = serde_json::to_value(&report).unwrap();
        assert!(json.get("runtime_secs").is_none());
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 11);
    }

    #[test]
    fn experiment_preconditions() {
        let spec = SyntheticSpec::white_noise(1, 100, 0);
        let config = MfbConfig::default();
        assert!(cvr_experiment(&spec, &config, 0.05, 5, 1000).is_err());
        assert!(cvr_experiment(&spec, &config, 0.05, 10, 500).is_err());
    }

    #[test]
    fn gnuplot_scripts_reference_csv() {
        assert!(coverage_gnuplot("cov.csv", 0.95).contains("'cov.csv'"));
        assert!(ecvr_gnuplot("e.csv", 0.95).contains("'e.csv'"));
    }
}
