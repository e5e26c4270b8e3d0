//! Bootstrap replication of the predictive root.
//!
//! A fitted world holds the CDF models, the Gaussianized series, the
//! covariance factored through `n + h` time steps and the whitened
//! innovations. Future draws reuse the observed innovations and append new
//! ones, so every draw is conditional on the observed path.

use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::banded::dense_cholesky;
use crate::cdf::{CdfKind, ThresholdedNormalQuantile};
use crate::covariance::{
    build_tapered_with_horizon, default_banding, RepairRecord, TaperedBlockCov,
};
use crate::error::{MfbError, Result};
use crate::rng::{substream, tag};
use crate::series::{format_float, MultiSeries};
use crate::transform::{
    degaussianize, degaussianize_block, gaussianize, recolor, whiten, CdfModels, FutureSampler,
    GaussianizedSeries, ModelKind, WhitenedVector,
};

/// Loss whose conditional risk the point predictor minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// Componentwise conditional median.
    L1,
    /// Componentwise conditional mean.
    #[default]
    L2,
}

/// Norm applied to roots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum NormOrder {
    #[serde(rename = "1")]
    One,
    #[default]
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "inf")]
    Inf,
}

impl NormOrder {
    pub fn norm(&self, v: &[f64]) -> f64 {
        match self {
            Self::One => v.iter().map(|x| x.abs()).sum(),
            Self::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Self::Inf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

/// Whether bootstrap replicates re-estimate the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Refit transforms and covariance on each bootstrap series and predict
    /// from the observed history with them.
    #[default]
    Resampled,
    /// Keep the original predictor in every replicate.
    Fixed,
}

/// Distribution of bootstrap innovations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InnovationSource {
    /// Entries of `ξ̂` drawn uniformly with replacement.
    #[default]
    Resample,
    /// i.i.d. standard normal.
    Normal,
}

/// Banding parameter of the covariance taper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Banding {
    /// `max(1, round(n^{1/3}))`.
    #[default]
    Auto,
    /// Absolute number of lags.
    Lags(f64),
    /// Fraction of the series length, `l = x · n`.
    Fraction(f64),
}

impl Banding {
    /// The banding parameter for a series of length `n`; never below 1.
    pub fn resolve(&self, n: usize) -> f64 {
        match *self {
            Self::Auto => default_banding(n),
            Self::Lags(l) => l.max(1.0),
            Self::Fraction(f) => (f * n as f64).max(1.0),
        }
    }
}

macro_rules! parse_enum {
    ($t:ty, $what:literal, { $($s:literal => $v:expr),+ $(,)? }) => {
        impl FromStr for $t {
            type Err = MfbError;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($s => Ok($v),)+
                    _ => Err(MfbError::Config(format!(concat!("unknown ", $what, " '{}'"), s))),
                }
            }
        }
    };
}

parse_enum!(Loss, "loss", { "l1" => Loss::L1, "l2" => Loss::L2 });
parse_enum!(NormOrder, "norm", { "1" => NormOrder::One, "2" => NormOrder::Two, "inf" => NormOrder::Inf });
parse_enum!(Variant, "variant", { "resampled" => Variant::Resampled, "fixed" => Variant::Fixed });
parse_enum!(InnovationSource, "innovation source", {
    "resample" => InnovationSource::Resample,
    "normal" => InnovationSource::Normal,
});

impl FromStr for Banding {
    type Err = MfbError;

    /// `auto`, an absolute lag count such as `4`, or a fraction of the
    /// series length such as `0.4%n`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || MfbError::Config(format!("invalid banding parameter '{s}'"));
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::Auto);
        }
        let (num, frac) = match s.strip_suffix("%n") {
            Some(head) => (head, true),
            None => (s, false),
        };
        let v: f64 = num.trim().parse().map_err(|_| bad())?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(bad());
        }
        Ok(if frac {
            Self::Fraction(v)
        } else {
            Self::Lags(v)
        })
    }
}

impl std::fmt::Display for Banding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Auto => f.write_str("auto"),
            Self::Lags(l) => write!(f, "{}", format_float(*l)),
            Self::Fraction(x) => write!(f, "{}%n", format_float(*x)),
        }
    }
}

/// Every knob of one bootstrap run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfbConfig {
    /// Bootstrap replicates `B`.
    pub replicates: usize,
    /// Monte Carlo draws `M` for the top-level predictor.
    pub predictor_draws: usize,
    /// Monte Carlo draws for predictors re-estimated inside replicates.
    pub inner_predictor_draws: usize,
    pub loss: Loss,
    pub norm: NormOrder,
    pub variant: Variant,
    pub innovations: InnovationSource,
    pub studentize: bool,
    pub horizon: usize,
    pub seed: u64,
    pub cdf: CdfKind,
    pub model: ModelKind,
    /// One kernel bandwidth per dimension; plug-in rule when absent.
    pub bandwidths: Option<Vec<f64>>,
    pub banding: Banding,
    /// Threshold `c`; `√(0.5 ln n)` when absent.
    pub threshold: Option<f64>,
}

impl Default for MfbConfig {
    fn default() -> Self {
        Self {
            replicates: 1000,
            predictor_draws: 2000,
            inner_predictor_draws: 500,
            loss: Loss::L2,
            norm: NormOrder::Two,
            variant: Variant::Resampled,
            innovations: InnovationSource::Resample,
            studentize: false,
            horizon: 1,
            seed: 0,
            cdf: CdfKind::Kernel,
            model: ModelKind::Marginal,
            bandwidths: None,
            banding: Banding::Auto,
            threshold: None,
        }
    }
}

impl MfbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 100 {
            return Err(MfbError::Config(format!(
                "at least 100 replicates required, got {}",
                self.replicates
            )));
        }
        if self.predictor_draws < 100 || self.inner_predictor_draws < 100 {
            return Err(MfbError::Config(
                "predictor draws must be at least 100".into(),
            ));
        }
        if self.horizon == 0 {
            return Err(MfbError::Config("horizon must be at least 1".into()));
        }
        if let Some(c) = self.threshold {
            ThresholdedNormalQuantile::new(c)?;
        }
        match self.banding {
            Banding::Lags(v) | Banding::Fraction(v) if !(v > 0.0 && v.is_finite()) => {
                return Err(MfbError::Config(format!("invalid banding parameter {v}")))
            }
            _ => {}
        }
        if let Some(b) = &self.bandwidths {
            if b.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(MfbError::Config("bandwidths must be positive".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn threshold_for(&self, n: usize) -> Result<ThresholdedNormalQuantile> {
        match self.threshold {
            Some(c) => ThresholdedNormalQuantile::new(c),
            None => Ok(ThresholdedNormalQuantile::default_for(n)),
        }
    }
}

/// Everything estimated from one series.
#[derive(Debug, Clone)]
pub struct FittedWorld {
    series: MultiSeries,
    z: GaussianizedSeries,
    cov: TaperedBlockCov,
    xi: WhitenedVector,
    sampler: FutureSampler,
}

impl FittedWorld {
    /// Assembles a world from given models and a covariance of order `d(n + h)`.
    pub fn from_parts(
        series: MultiSeries,
        models: Arc<CdfModels>,
        threshold: &ThresholdedNormalQuantile,
        cov: TaperedBlockCov,
    ) -> Result<Self> {
        if cov.dim() != series.dims() || cov.steps() <= series.len() {
            return Err(MfbError::DimensionMismatch {
                expected: series.dims() * (series.len() + 1),
                actual: cov.order(),
            });
        }
        let z = gaussianize(&series, models, threshold)?;
        let xi = whiten(&z, &cov)?;
        let sampler = FutureSampler::new(&xi, &cov)?;
        Ok(Self {
            series,
            z,
            cov,
            xi,
            sampler,
        })
    }

    pub fn series(&self) -> &MultiSeries {
        &self.series
    }

    pub fn gaussianized(&self) -> &GaussianizedSeries {
        &self.z
    }

    pub fn models(&self) -> &CdfModels {
        self.z.models()
    }

    pub fn covariance(&self) -> &TaperedBlockCov {
        &self.cov
    }

    pub fn whitened(&self) -> &WhitenedVector {
        &self.xi
    }

    pub fn sampler(&self) -> &FutureSampler {
        &self.sampler
    }

    pub fn dims(&self) -> usize {
        self.series.dims()
    }

    pub fn horizon(&self) -> usize {
        self.sampler.horizon()
    }

    /// Future observations for innovations `xi_new`, stacked time-major.
    pub fn draw_future(&self, xi_new: &[f64]) -> Result<Vec<f64>> {
        let z = self.sampler.draw(xi_new)?;
        Ok(degaussianize_block(self.z.models(), &z)?
            .as_slice()
            .to_vec())
    }

    /// A series of the original length generated from innovations `xi`.
    pub fn generate(&self, xi: &WhitenedVector) -> Result<MultiSeries> {
        let z = recolor(xi, &self.cov)?;
        degaussianize(self.z.models(), &z)
    }
}

/// Fits models, Gaussianizes, builds the tapered covariance through `n + h`
/// steps and whitens.
pub fn fit_world(series: &MultiSeries, config: &MfbConfig) -> Result<FittedWorld> {
    let n = series.len();
    let models = CdfModels::fit(
        series,
        config.model,
        config.cdf,
        config.bandwidths.as_deref(),
    )?;
    let threshold = config.threshold_for(n)?;
    let z = gaussianize(series, Arc::new(models), &threshold)?;
    let cov = build_tapered_with_horizon(&z, config.banding.resolve(n), config.horizon)?;
    let xi = whiten(&z, &cov)?;
    let sampler = FutureSampler::new(&xi, &cov)?;
    Ok(FittedWorld {
        series: series.clone(),
        z,
        cov,
        xi,
        sampler,
    })
}

/// The fitting pipeline applied to a bootstrap series.
pub fn refit_world(bootstrap: &MultiSeries, config: &MfbConfig) -> Result<FittedWorld> {
    fit_world(bootstrap, config)
}

/// `k` innovations from the configured source.
pub fn draw_innovations<R: Rng>(
    rng: &mut R,
    source: InnovationSource,
    pool: &[f64],
    k: usize,
) -> Vec<f64> {
    match source {
        InnovationSource::Resample => (0..k)
            .map(|_| pool[rng.random_range(0..pool.len())])
            .collect(),
        InnovationSource::Normal => (0..k).map(|_| rng.sample(StandardNormal)).collect(),
    }
}

/// Componentwise mean (L2) or median (L1) of `draws` conditional futures.
pub fn point_predict<R: Rng>(
    world: &FittedWorld,
    draws: usize,
    loss: Loss,
    source: InnovationSource,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if draws < 100 {
        return Err(MfbError::Config(format!(
            "predictor needs at least 100 draws, got {draws}"
        )));
    }
    let k = world.dims() * world.horizon();
    let mut samples = vec![Vec::with_capacity(draws); k];
    for _ in 0..draws {
        let xi = draw_innovations(rng, source, &world.xi.xi, k);
        for (col, v) in samples.iter_mut().zip(world.draw_future(&xi)?) {
            col.push(v);
        }
    }
    Ok(samples
        .into_iter()
        .map(|mut col| match loss {
            Loss::L2 => col.iter().sum::<f64>() / col.len() as f64,
            Loss::L1 => median(&mut col),
        })
        .collect())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Provenance of a root sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootMetadata {
    pub config: MfbConfig,
    pub config_digest: String,
    pub seed: u64,
    pub dims: usize,
    pub horizon: usize,
    pub n: usize,
    pub banding: f64,
    pub threshold: f64,
    pub repair: RepairRecord,
    pub skipped: usize,
    pub retries: usize,
    /// How the studentizing covariance was formed.
    pub studentization: Option<String>,
}

/// Bootstrap replicates of the predictive root.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveRootSample {
    /// One stacked `d·h` root per retained replicate.
    pub roots: Vec<Vec<f64>>,
    /// The predictor `Ŷ` computed on the observed series.
    pub predictor: Vec<f64>,
    /// Predictor used inside each replicate.
    pub replicate_predictors: Vec<Vec<f64>>,
    /// Lower Cholesky factor `S` of the pooled root covariance.
    pub studentizer: Option<DMatrix<f64>>,
    pub metadata: RootMetadata,
}

const MAX_ATTEMPTS: u64 = 3;
const MAX_SKIP_FRACTION: f64 = 0.05;

struct Replicate {
    root: Vec<f64>,
    predictor: Vec<f64>,
    retries: usize,
}

fn one_replicate(
    world: &FittedWorld,
    predictor: &[f64],
    config: &MfbConfig,
    b: u64,
    attempt: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let base = [tag::REPLICATE, b, attempt];
    let path = |t: u64| [base[0], base[1], base[2], t];
    let pool = &world.xi.xi;
    let k = world.dims() * world.horizon();
    let mut future_rng = substream(config.seed, &path(tag::BOOTSTRAP));
    let xi_future = draw_innovations(&mut future_rng, config.innovations, pool, k);
    let future = world.draw_future(&xi_future)?;
    let replicate_predictor = match config.variant {
        Variant::Fixed => predictor.to_vec(),
        Variant::Resampled => {
            let mut path_rng = substream(config.seed, &path(tag::PATH));
            let xi = WhitenedVector {
                xi: draw_innovations(&mut path_rng, config.innovations, pool, pool.len()),
            };
            let star = world.generate(&xi)?;
            let star_world = refit_world(&star, config)?;
            // transforms re-estimated on Y*, conditioned on the observed history
            let conditioned = FittedWorld::from_parts(
                world.series.clone(),
                star_world.z.models().clone(),
                &config.threshold_for(world.series.len())?,
                star_world.cov,
            )?;
            let mut pred_rng = substream(config.seed, &path(tag::PREDICTOR));
            point_predict(
                &conditioned,
                config.inner_predictor_draws,
                config.loss,
                config.innovations,
                &mut pred_rng,
            )?
        }
    };
    let root = future
        .iter()
        .zip(&replicate_predictor)
        .map(|(y, p)| y - p)
        .collect();
    Ok((root, replicate_predictor))
}

/// Bootstrap roots from an already fitted world.
pub fn bootstrap_from_world(
    world: &FittedWorld,
    config: &MfbConfig,
) -> Result<PredictiveRootSample> {
    config.validate()?;
    if world.horizon() != config.horizon {
        return Err(MfbError::Config(format!(
            "world fitted for horizon {}, config asks for {}",
            world.horizon(),
            config.horizon
        )));
    }
    let mut pred_rng = substream(config.seed, &[tag::PREDICTOR]);
    let predictor = point_predict(
        world,
        config.predictor_draws,
        config.loss,
        config.innovations,
        &mut pred_rng,
    )?;
    let outcomes: Vec<Result<Option<Replicate>>> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|b| {
            for attempt in 0..MAX_ATTEMPTS {
                match one_replicate(world, &predictor, config, b, attempt) {
                    Ok((root, p)) => {
                        return Ok(Some(Replicate {
                            root,
                            predictor: p,
                            retries: attempt as usize,
                        }))
                    }
                    Err(e @ (MfbError::Internal(_) | MfbError::Config(_))) => return Err(e),
                    Err(_) => {}
                }
            }
            Ok(None)
        })
        .collect();
    let mut roots = Vec::with_capacity(config.replicates);
    let mut replicate_predictors = Vec::with_capacity(config.replicates);
    let (mut skipped, mut retries) = (0, 0);
    for outcome in outcomes {
        match outcome? {
            Some(r) => {
                retries += r.retries;
                roots.push(r.root);
                replicate_predictors.push(r.predictor);
            }
            None => {
                skipped += 1;
                retries += MAX_ATTEMPTS as usize;
            }
        }
    }
    if skipped as f64 > MAX_SKIP_FRACTION * config.replicates as f64 {
        return Err(MfbError::TooManySkips {
            skipped,
            total: config.replicates,
        });
    }
    let studentizer = if config.studentize {
        Some(pooled_factor(&roots)?)
    } else {
        None
    };
    let n = world.series.len();
    Ok(PredictiveRootSample {
        roots,
        predictor,
        replicate_predictors,
        studentizer,
        metadata: RootMetadata {
            config: config.clone(),
            config_digest: config.digest(),
            seed: config.seed,
            dims: world.dims(),
            horizon: world.horizon(),
            n,
            banding: world.cov.kernel().l(),
            threshold: world.z.threshold(),
            repair: world.cov.repair().clone(),
            skipped,
            retries,
            studentization: config
                .studentize
                .then(|| "pooled covariance of all roots".to_string()),
        },
    })
}

/// Fits the series and replicates the predictive root.
pub fn bootstrap_roots(series: &MultiSeries, config: &MfbConfig) -> Result<PredictiveRootSample> {
    config.validate()?;
    let world = fit_world(series, config)?;
    bootstrap_from_world(&world, config)
}

/// Lower Cholesky factor of the sample covariance of `roots`.
pub fn pooled_factor(roots: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let b = roots.len();
    if b < 2 {
        return Err(MfbError::InsufficientData(
            "studentization needs at least 2 roots".into(),
        ));
    }
    let k = roots[0].len();
    let mean: Vec<f64> = (0..k)
        .map(|j| roots.iter().map(|r| r[j]).sum::<f64>() / b as f64)
        .collect();
    let mut cov = DMatrix::zeros(k, k);
    for r in roots {
        for i in 0..k {
            for j in 0..=i {
                cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..k {
        for j in 0..=i {
            cov[(i, j)] /= (b - 1) as f64;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    dense_cholesky(&cov).map_err(|_| {
        MfbError::DegenerateSample("root covariance is singular; cannot studentize".into())
    })
}

/// Solves `S x = v` for lower-triangular `S`.
pub fn lower_solve(s: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let k = v.len();
    let mut x = vec![0.0; k];
    for i in 0..k {
        let dot: f64 = (0..i).map(|j| s[(i, j)] * x[j]).sum();
        x[i] = (v[i] - dot) / s[(i, i)];
    }
    x
}

impl PredictiveRootSample {
    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// Width `d·h` of one root.
    pub fn width(&self) -> usize {
        self.predictor.len()
    }

    /// Roots after applying `S⁻¹` when a studentizer is present.
    pub fn scaled_roots(&self) -> Vec<Vec<f64>> {
        match &self.studentizer {
            Some(s) => self.roots.iter().map(|r| lower_solve(s, r)).collect(),
            None => self.roots.clone(),
        }
    }

    /// Restriction to the last time step of the horizon (`d` coordinates).
    /// A studentizer is recomputed on the restricted roots.
    pub fn last_step(&self) -> Result<Self> {
        let d = self.metadata.dims;
        let w = self.width();
        let tail = |v: &Vec<f64>| v[w - d..].to_vec();
        let roots: Vec<Vec<f64>> = self.roots.iter().map(tail).collect();
        let studentizer = match self.studentizer {
            Some(_) => Some(pooled_factor(&roots)?),
            None => None,
        };
        let mut metadata = self.metadata.clone();
        metadata.horizon = 1;
        Ok(Self {
            roots,
            predictor: tail(&self.predictor),
            replicate_predictors: self.replicate_predictors.iter().map(tail).collect(),
            studentizer,
            metadata,
        })
    }

    /// CSV with one row per replicate and columns `t{step}_d{dim}`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let d = self.metadata.dims;
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (0..self.width())
            .map(|k| format!("t{}_d{}", k / d + 1, k % d + 1))
            .collect();
        w.write_record(&header)?;
        for r in &self.roots {
            w.write_record(r.iter().map(|v| format_float(*v)))?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON sidecar describing how the roots were produced.
    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::json!({
            "replicates": self.roots.len(),
            "predictor": self.predictor,
            "metadata": self.metadata,
            "studentizer": self.studentizer.as_ref().map(matrix_rows),
        })
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}
