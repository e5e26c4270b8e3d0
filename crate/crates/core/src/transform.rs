//! The invertible map between the observed series and a Gaussian process,
//! whitening of the Gaussianized series, and conditional future draws.
//!
//! Stacking is time-major: `vec(Z)` lists `Z_1` first with its `d`
//! coordinates contiguous, which is the column-major layout of a `d × n`
//! matrix. The covariance square root is the lower Cholesky factor `L`, so
//! appending future time steps appends trailing rows of `L` and the observed
//! block of `L (ξ_obs, ξ_new)` reproduces `vec(Ẑ)`.

use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cdf::{
    fit_conditional, fit_marginal, open_unit, CdfKind, ConditionalCdf, MarginalCdf,
    ThresholdedNormalQuantile,
};
use crate::covariance::TaperedBlockCov;
use crate::error::{MfbError, Result};
use crate::normal;
use crate::series::MultiSeries;

/// How the dimensions of one observation are mapped to uniforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum ModelKind {
    /// Each dimension through its own marginal CDF.
    #[default]
    #[serde(rename = "1")]
    Marginal,
    /// Dimension `i` through its CDF conditional on dimensions `0..i`.
    #[serde(rename = "2")]
    Sequential,
}

impl FromStr for ModelKind {
    type Err = MfbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "model-1" | "marginal" => Ok(Self::Marginal),
            "2" | "model-2" | "sequential" => Ok(Self::Sequential),
            _ => Err(MfbError::Config(format!("unknown model kind '{s}'"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Marginal => "1",
            Self::Sequential => "2",
        })
    }
}

/// Per-dimension CDF models of one observation vector.
#[derive(Debug, Clone, PartialEq)]
pub enum CdfModels {
    Marginal(Vec<MarginalCdf>),
    Sequential {
        first: MarginalCdf,
        conditionals: Vec<ConditionalCdf>,
    },
    /// Known normal marginals `N(mean_i, sd_i²)`.
    Normal {
        means: Vec<f64>,
        sds: Vec<f64>,
    },
}

impl CdfModels {
    /// Fits the models on `series`. `bandwidths` gives one kernel bandwidth
    /// per dimension; `None` applies the plug-in rule.
    pub fn fit(
        series: &MultiSeries,
        model: ModelKind,
        kind: CdfKind,
        bandwidths: Option<&[f64]>,
    ) -> Result<Self> {
        let d = series.dims();
        if let Some(b) = bandwidths {
            if b.len() != d {
                return Err(MfbError::DimensionMismatch {
                    expected: d,
                    actual: b.len(),
                });
            }
        }
        let bw = |i: usize| bandwidths.map(|b| b[i]);
        match model {
            ModelKind::Marginal => (0..d)
                .map(|i| fit_marginal(&series.row(i), kind, bw(i)))
                .collect::<Result<Vec<_>>>()
                .map(Self::Marginal),
            ModelKind::Sequential => {
                let first = fit_marginal(&series.row(0), kind, bw(0))?;
                let conditionals = (1..d)
                    .map(|i| {
                        let explicit = bandwidths.map(|b| (b[..i].to_vec(), b[i]));
                        fit_conditional(series, i, explicit)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Self::Sequential {
                    first,
                    conditionals,
                })
            }
        }
    }

    /// Known normal marginals, used where the true transform is available.
    pub fn normal(means: Vec<f64>, sds: Vec<f64>) -> Result<Self> {
        if means.is_empty() || means.len() != sds.len() {
            return Err(MfbError::DimensionMismatch {
                expected: means.len(),
                actual: sds.len(),
            });
        }
        if sds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(MfbError::Config("normal scales must be positive".into()));
        }
        Ok(Self::Normal { means, sds })
    }

    pub fn dims(&self) -> usize {
        match self {
            Self::Marginal(m) => m.len(),
            Self::Sequential { conditionals, .. } => conditionals.len() + 1,
            Self::Normal { means, .. } => means.len(),
        }
    }

    /// `Û_t` for one observation vector.
    pub fn to_uniform(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y.len())?;
        match self {
            Self::Marginal(m) => Ok(m.iter().zip(y).map(|(f, v)| f.evaluate(*v)).collect()),
            Self::Sequential {
                first,
                conditionals,
            } => {
                let mut u = Vec::with_capacity(y.len());
                u.push(first.evaluate(y[0]));
                for (i, c) in conditionals.iter().enumerate() {
                    u.push(c.evaluate(y[i + 1], &y[..=i])?);
                }
                Ok(u)
            }
            Self::Normal { means, sds } => Ok(y
                .iter()
                .zip(means.iter().zip(sds))
                .map(|(v, (m, s))| normal::cdf((v - m) / s))
                .collect()),
        }
    }

    /// Inverse map of one Gaussian vector: `Y_i = F_i⁻¹(Φ(z_i))`, in
    /// dimension order for the sequential model.
    pub fn from_normal_scores(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(z.len())?;
        match self {
            Self::Marginal(m) => m
                .iter()
                .zip(z)
                .map(|(f, v)| f.invert_normal_score(*v))
                .collect(),
            Self::Sequential {
                first,
                conditionals,
            } => {
                let mut y = Vec::with_capacity(z.len());
                y.push(first.invert_normal_score(z[0])?);
                for (i, c) in conditionals.iter().enumerate() {
                    let next = c.at(&y[..=i])?.invert_normal_score(z[i + 1])?;
                    y.push(next);
                }
                Ok(y)
            }
            Self::Normal { means, sds } => z
                .iter()
                .zip(means.iter().zip(sds))
                .map(|(v, (m, s))| {
                    if v.is_finite() {
                        Ok(m + s * v)
                    } else {
                        Err(MfbError::Domain {
                            value: *v,
                            domain: "finite normal score",
                        })
                    }
                })
                .collect(),
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == self.dims() {
            Ok(())
        } else {
            Err(MfbError::DimensionMismatch {
                expected: self.dims(),
                actual: len,
            })
        }
    }
}

/// The Gaussianized series `Ẑ` with the models that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianizedSeries {
    z: MultiSeries,
    models: Arc<CdfModels>,
    threshold: f64,
}

impl GaussianizedSeries {
    pub fn values(&self) -> &MultiSeries {
        &self.z
    }

    pub fn models(&self) -> &Arc<CdfModels> {
        &self.models
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn dims(&self) -> usize {
        self.z.dims()
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// `vec(Ẑ)` in time-major order.
    pub fn stacked(&self) -> &[f64] {
        self.z.as_stacked()
    }

    /// Maps `Ẑ` back through the models.
    pub fn degaussianize(&self) -> Result<MultiSeries> {
        degaussianize(&self.models, self.z.values())
    }
}

/// `Ẑ_{i,t} = clamp(Φ⁻¹(Û_{i,t}), −c, c)`.
pub fn gaussianize(
    series: &MultiSeries,
    models: Arc<CdfModels>,
    threshold: &ThresholdedNormalQuantile,
) -> Result<GaussianizedSeries> {
    let (d, n) = (series.dims(), series.len());
    if models.dims() != d {
        return Err(MfbError::DimensionMismatch {
            expected: d,
            actual: models.dims(),
        });
    }
    let mut z = DMatrix::zeros(d, n);
    for t in 0..n {
        let u = models.to_uniform(series.column(t))?;
        for (i, ui) in u.into_iter().enumerate() {
            if ui.is_nan() {
                return Err(MfbError::Internal(format!(
                    "uniform score is NaN at dimension {i}, time {t}"
                )));
            }
            z[(i, t)] = threshold.map(open_unit(ui))?;
        }
    }
    Ok(GaussianizedSeries {
        z: MultiSeries::new(z)?,
        models,
        threshold: threshold.threshold(),
    })
}

/// Maps a `d × m` matrix of Gaussian values back to the data scale.
pub fn degaussianize(models: &CdfModels, z: &DMatrix<f64>) -> Result<MultiSeries> {
    MultiSeries::new(degaussianize_block(models, z)?)
}

/// [`degaussianize`] for blocks of any length, such as a single future step.
pub fn degaussianize_block(models: &CdfModels, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (d, m) = z.shape();
    let mut y = DMatrix::zeros(d, m);
    for t in 0..m {
        let col = models.from_normal_scores(z.column(t).as_slice())?;
        y.column_mut(t).copy_from_slice(&col);
    }
    Ok(y)
}

/// Whitened innovations `ξ̂` with `L ξ̂ = vec(Ẑ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitenedVector {
    pub xi: Vec<f64>,
}

impl WhitenedVector {
    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }
}

/// Forward substitution against the leading `dn` rows of the factor.
pub fn whiten(z: &GaussianizedSeries, cov: &TaperedBlockCov) -> Result<WhitenedVector> {
    whiten_stacked(z.stacked(), z.dims(), cov)
}

/// [`whiten`] on a raw stacked vector.
pub fn whiten_stacked(
    stacked: &[f64],
    dim: usize,
    cov: &TaperedBlockCov,
) -> Result<WhitenedVector> {
    if dim != cov.dim() {
        return Err(MfbError::DimensionMismatch {
            expected: cov.dim(),
            actual: dim,
        });
    }
    let xi = cov.factor().solve_lower(stacked)?;
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(MfbError::Internal("whitened vector is not finite".into()));
    }
    Ok(WhitenedVector { xi })
}

/// `L ξ` reshaped to `d × (len/d)`.
///
/// The result is not clamped, so it is returned as a plain matrix rather
/// than a [`GaussianizedSeries`].
pub fn recolor(xi: &WhitenedVector, cov: &TaperedBlockCov) -> Result<DMatrix<f64>> {
    let d = cov.dim();
    if xi.len() % d != 0 || xi.len() > cov.order() {
        return Err(MfbError::DimensionMismatch {
            expected: cov.order(),
            actual: xi.len(),
        });
    }
    let v = cov.factor().mul_vec(&xi.xi)?;
    Ok(DMatrix::from_vec(d, xi.len() / d, v))
}

/// Draws of the future Gaussian block given the observed innovations.
///
/// Row `r ≥ dn` of `L (ξ_obs, ξ_new)` splits into a part fixed by `ξ_obs`
/// (the conditional mean) and a lower-triangular part acting on `ξ_new`;
/// both are computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct FutureSampler {
    dim: usize,
    horizon: usize,
    mean: Vec<f64>,
    /// Row-major `dh × dh` lower-triangular tail of the factor.
    tail: Vec<f64>,
}

impl FutureSampler {
    pub fn new(xi_obs: &WhitenedVector, cov_ext: &TaperedBlockCov) -> Result<Self> {
        let d = cov_ext.dim();
        let obs = xi_obs.len();
        let order = cov_ext.order();
        if obs % d != 0 || obs >= order {
            return Err(MfbError::DimensionMismatch {
                expected: order.saturating_sub(d),
                actual: obs,
            });
        }
        let k = order - obs;
        let factor = cov_ext.factor();
        let mut padded = xi_obs.xi.clone();
        padded.resize(order, 0.0);
        let mean = (obs..order).map(|r| factor.row_dot(r, &padded)).collect();
        let mut tail = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..=a {
                tail[a * k + b] = factor.get(obs + a, obs + b);
            }
        }
        Ok(Self {
            dim: d,
            horizon: k / d,
            mean,
            tail,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Stacked conditional mean of the future block, `L₂₁ ξ_obs`.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Stacked future block for innovations `xi_new` (length `dh`).
    pub fn draw_stacked(&self, xi_new: &[f64]) -> Result<Vec<f64>> {
        let k = self.mean.len();
        if xi_new.len() != k {
            return Err(MfbError::DimensionMismatch {
                expected: k,
                actual: xi_new.len(),
            });
        }
        Ok((0..k)
            .map(|a| {
                let row = &self.tail[a * k..a * k + a + 1];
                self.mean[a] + row.iter().zip(xi_new).map(|(l, x)| l * x).sum::<f64>()
            })
            .collect())
    }

    /// Future block `Z*_{n+1..n+h}` as a `d × h` matrix.
    pub fn draw(&self, xi_new: &[f64]) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_vec(
            self.dim,
            self.horizon,
            self.draw_stacked(xi_new)?,
        ))
    }
}

/// Trailing `dh` entries of `L_ext (ξ_obs, ξ_new)` as a `d × h` matrix.
pub fn extend_and_draw(
    xi_obs: &WhitenedVector,
    cov_ext: &TaperedBlockCov,
    xi_new: &[f64],
) -> Result<DMatrix<f64>> {
    if xi_obs.len() + xi_new.len() != cov_ext.order() {
        return Err(MfbError::DimensionMismatch {
            expected: cov_ext.order(),
            actual: xi_obs.len() + xi_new.len(),
        });
    }
    FutureSampler::new(xi_obs, cov_ext)?.draw(xi_new)
}
