//! Prediction regions built from bootstrap roots.
//!
//! A region is the closed `L^p` ball `{y : ‖y − Ŷ‖_p ≤ q}` where `q` is an
//! order statistic of the root norms, optionally after premultiplying by the
//! inverse studentizing factor. Joint bands for the next `h` values of a
//! univariate series come from stacking `h` consecutive values into one
//! vector; the Bonferroni box is the product of per-step intervals.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{
    bootstrap_roots, lower_solve, matrix_rows, MfbConfig, NormOrder, PredictiveRootSample,
};
use crate::error::{MfbError, Result};
use crate::series::MultiSeries;

pub const REGION_SCHEMA_VERSION: u32 = 1;

/// Upper-`α` quantile rule: the `⌈(1−α)B⌉`-th smallest value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSpec {
    alpha: f64,
}

impl QuantileSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self { alpha })
        } else {
            Err(MfbError::Domain {
                value: alpha,
                domain: "alpha in (0, 1)",
            })
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// 1-based order statistic index for `b` values. The product is nudged
    /// down by 1e-9 so that `(1 − 0.05)·100` yields 95 and not 96.
    pub fn index(&self, b: usize) -> Result<usize> {
        if b == 0 {
            return Err(MfbError::InsufficientData(
                "no values for a quantile".into(),
            ));
        }
        let raw = ((1.0 - self.alpha) * b as f64 - 1e-9).ceil();
        let k = raw.max(1.0) as usize;
        if k > b {
            return Err(MfbError::InsufficientData(format!(
                "{b} values cannot resolve alpha = {}",
                self.alpha
            )));
        }
        Ok(k)
    }

    /// The order statistic of `values` selected by [`QuantileSpec::index`].
    pub fn select(&self, values: &[f64]) -> Result<f64> {
        let k = self.index(values.len())?;
        let mut v = values.to_vec();
        let (_, kth, _) = v.select_nth_unstable_by(k - 1, f64::total_cmp);
        Ok(*kth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionKind {
    Plain,
    Studentized,
    BonferroniBox,
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo <= hi {
            Ok(Self { lo, hi })
        } else {
            Err(MfbError::Domain {
                value: lo,
                domain: "interval with lo <= hi",
            })
        }
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRegion {
    pub kind: RegionKind,
    pub alpha: f64,
    pub p: NormOrder,
    pub center: Vec<f64>,
    /// Radius for ball regions.
    pub radius: Option<f64>,
    /// Coordinate intervals for the Bonferroni box.
    pub bounds: Option<Vec<Interval>>,
    /// Lower factor `S` for studentized regions.
    pub studentizer: Option<DMatrix<f64>>,
    pub seed: u64,
    pub config_digest: String,
}

impl PredictionRegion {
    /// Distance of `y` from the center in the region's norm.
    pub fn distance(&self, y: &[f64]) -> f64 {
        let diff: Vec<f64> = y.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        match &self.studentizer {
            Some(s) => self.p.norm(&lower_solve(s, &diff)),
            None => self.p.norm(&diff),
        }
    }

    /// Closed-set membership.
    pub fn contains(&self, y: &[f64]) -> Result<bool> {
        if y.len() != self.center.len() {
            return Err(MfbError::DimensionMismatch {
                expected: self.center.len(),
                actual: y.len(),
            });
        }
        Ok(match (&self.bounds, self.radius) {
            (Some(b), _) => b.iter().zip(y).all(|(iv, v)| iv.contains(*v)),
            (None, Some(r)) => self.distance(y) <= r,
            (None, None) => false,
        })
    }

    /// Serializable view with a versioned schema.
    pub fn to_json(&self) -> serde_json::Value {
        let p = match self.p {
            NormOrder::One => "1",
            NormOrder::Two => "2",
            NormOrder::Inf => "inf",
        };
        let mut v = serde_json::json!({
            "schema_version": REGION_SCHEMA_VERSION,
            "kind": self.kind,
            "alpha": self.alpha,
            "p": p,
            "center": self.center,
            "seed": self.seed,
            "config_digest": self.config_digest,
        });
        let obj = v.as_object_mut().expect("object");
        if let Some(r) = self.radius {
            obj.insert("radius".into(), r.into());
        }
        if let Some(b) = &self.bounds {
            let rows: Vec<[f64; 2]> = b.iter().map(|iv| [iv.lo, iv.hi]).collect();
            obj.insert("box".into(), serde_json::json!(rows));
        }
        if let Some(s) = &self.studentizer {
            obj.insert("studentizer".into(), serde_json::json!(matrix_rows(s)));
        }
        v
    }
}

/// `L^p` region from a root sample; studentized when the sample carries a factor.
pub fn region_from_roots(
    roots: &PredictiveRootSample,
    alpha: f64,
    p: NormOrder,
) -> Result<PredictionRegion> {
    let q = QuantileSpec::new(alpha)?;
    let b = roots.len();
    let needed = (1.0 / alpha).ceil() as usize;
    if b < needed {
        return Err(MfbError::InsufficientData(format!(
            "{b} replicates are fewer than ⌈1/α⌉ = {needed}"
        )));
    }
    let norms: Vec<f64> = roots.scaled_roots().iter().map(|r| p.norm(r)).collect();
    let radius = q.select(&norms)?;
    Ok(PredictionRegion {
        kind: if roots.studentizer.is_some() {
            RegionKind::Studentized
        } else {
            RegionKind::Plain
        },
        alpha,
        p,
        center: roots.predictor.clone(),
        radius: Some(radius),
        bounds: None,
        studentizer: roots.studentizer.clone(),
        seed: roots.metadata.seed,
        config_digest: roots.metadata.config_digest.clone(),
    })
}

/// Panel of `h` consecutive values: column `t` is `(Y_t, …, Y_{t+h−1})`,
/// so entry `(i, t)` of the 0-based result is `Y_{t+i}` and there are
/// `n − h + 1` columns.
pub fn stack_series(series: &MultiSeries, h: usize) -> Result<MultiSeries> {
    if series.dims() != 1 {
        return Err(MfbError::DimensionMismatch {
            expected: 1,
            actual: series.dims(),
        });
    }
    let n = series.len();
    if h == 0 || n < h + 1 {
        return Err(MfbError::InsufficientData(format!(
            "cannot stack {n} values into vectors of length {h}"
        )));
    }
    let y = series.as_stacked();
    MultiSeries::new(DMatrix::from_fn(h, n - h + 1, |i, t| y[t + i]))
}

/// Joint band and the roots it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct JointBand {
    pub region: PredictionRegion,
    pub roots: PredictiveRootSample,
}

/// Joint prediction band for `(Y_{n+1}, …, Y_{n+h})` of a univariate series.
///
/// The stacked panel is run with horizon `h`; its last future column is
/// exactly the target vector.
pub fn jpb_stack(
    series: &MultiSeries,
    h: usize,
    config: &MfbConfig,
    alpha: f64,
) -> Result<JointBand> {
    if series.dims() != 1 {
        return Err(MfbError::DimensionMismatch {
            expected: 1,
            actual: series.dims(),
        });
    }
    if h == 0 || series.len() < 3 * h {
        return Err(MfbError::InsufficientData(format!(
            "joint band of length {h} needs at least {} observations, got {}",
            3 * h,
            series.len()
        )));
    }
    let stacked = stack_series(series, h)?;
    // each stacked coordinate shares the univariate marginal
    let bandwidths = match config.bandwidths.as_deref() {
        Some([b]) => Some(vec![*b; h]),
        Some(other) if other.len() != h => {
            return Err(MfbError::DimensionMismatch {
                expected: 1,
                actual: other.len(),
            })
        }
        other => other.map(<[f64]>::to_vec),
    };
    let cfg = MfbConfig {
        horizon: h,
        bandwidths,
        ..config.clone()
    };
    let roots = bootstrap_roots(&stacked, &cfg)?.last_step()?;
    let region = region_from_roots(&roots, alpha, config.norm)?;
    Ok(JointBand { region, roots })
}

/// Product of `h` intervals.
pub fn bonferroni_band(
    intervals: &[Interval],
    h: usize,
    alpha: f64,
    seed: u64,
    config_digest: &str,
) -> Result<PredictionRegion> {
    if intervals.len() != h {
        return Err(MfbError::DimensionMismatch {
            expected: h,
            actual: intervals.len(),
        });
    }
    QuantileSpec::new(alpha)?;
    Ok(PredictionRegion {
        kind: RegionKind::BonferroniBox,
        alpha,
        p: NormOrder::Inf,
        center: intervals.iter().map(|iv| 0.5 * (iv.lo + iv.hi)).collect(),
        radius: None,
        bounds: Some(intervals.to_vec()),
        studentizer: None,
        seed,
        config_digest: config_digest.to_string(),
    })
}

/// Per-coordinate intervals `Ŷ_j ± q_j` at level `1 − α/h`, with `q_j` the
/// quantile of `|r_j|` over replicates, i.e. the one-dimensional bootstrap
/// region of each step.
pub fn per_step_intervals(roots: &PredictiveRootSample, alpha: f64) -> Result<Vec<Interval>> {
    let h = roots.width();
    let q = QuantileSpec::new(alpha / h as f64)?;
    (0..h)
        .map(|j| {
            let abs: Vec<f64> = roots.roots.iter().map(|r| r[j].abs()).collect();
            let radius = q.select(&abs)?;
            Interval::new(roots.predictor[j] - radius, roots.predictor[j] + radius)
        })
        .collect()
}

/// Bonferroni box for the next `h` values of a univariate series.
pub fn bonferroni_from_series(
    series: &MultiSeries,
    h: usize,
    config: &MfbConfig,
    alpha: f64,
) -> Result<PredictionRegion> {
    if series.dims() != 1 {
        return Err(MfbError::DimensionMismatch {
            expected: 1,
            actual: series.dims(),
        });
    }
    let cfg = MfbConfig {
        horizon: h,
        ..config.clone()
    };
    let roots = bootstrap_roots(series, &cfg)?;
    let intervals = per_step_intervals(&roots, alpha)?;
    bonferroni_band(
        &intervals,
        h,
        alpha,
        cfg.seed,
        &roots.metadata.config_digest,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bootstrap::RootMetadata;
    use crate::covariance::RepairRecord;
    use proptest::prelude::*;

    fn sample_from(roots: Vec<Vec<f64>>, predictor: Vec<f64>) -> PredictiveRootSample {
        let k = predictor.len();
        PredictiveRootSample {
            replicate_predictors: vec![predictor.clone(); roots.len()],
            roots,
            predictor,
            studentizer: None,
            metadata: RootMetadata {
                config: MfbConfig::default(),
                config_digest: "d".into(),
                seed: 0,
                dims: k,
                horizon: 1,
                n: 10,
                banding: 1.0,
                threshold: 1.0,
                repair: RepairRecord {
                    applied: false,
                    ridge: 0.0,
                    attempts: 1,
                    min_eig_bound: None,
                },
                skipped: 0,
                retries: 0,
                studentization: None,
            },
        }
    }

    #[test]
    fn order_statistic_example() {
        let roots: Vec<Vec<f64>> = (1..=100).rev().map(|k| vec![k as f64]).collect();
        let r = region_from_roots(&sample_from(roots, vec![0.0]), 0.05, NormOrder::Two).unwrap();
        assert_eq!(r.radius, Some(95.0));
    }

    #[test]
    fn zero_roots_give_point_region() {
        let s = sample_from(vec![vec![0.0, 0.0]; 100], vec![1.0, 2.0]);
        let r = region_from_roots(&s, 0.1, NormOrder::Two).unwrap();
        assert_eq!(r.radius, Some(0.0));
        assert!(r.contains(&[1.0, 2.0]).unwrap());
        assert!(!r.contains(&[1.0, 2.0 + 1e-12]).unwrap());
    }

    #[test]
    fn alpha_domain_and_replicate_count() {
        let s = sample_from(vec![vec![1.0]; 100], vec![0.0]);
        assert!(region_from_roots(&s, 0.0, NormOrder::Two).is_err());
        assert!(region_from_roots(&s, 1.0, NormOrder::Two).is_err());
        assert!(region_from_roots(&s, 0.005, NormOrder::Two).is_err());
    }

    #[test]
    fn norm_equivalence_of_radii() {
        let roots: Vec<Vec<f64>> = (0..300)
            .map(|b| {
                vec![
                    (b as f64 * 0.37).sin() * 2.0,
                    (b as f64 * 1.3).cos(),
                    (b as f64).sqrt() * 0.1,
                ]
            })
            .collect();
        let s = sample_from(roots, vec![0.0; 3]);
        for alpha in [0.01, 0.05, 0.2] {
            let inf = region_from_roots(&s, alpha, NormOrder::Inf)
                .unwrap()
                .radius
                .unwrap();
            let two = region_from_roots(&s, alpha, NormOrder::Two)
                .unwrap()
                .radius
                .unwrap();
            assert!(inf <= two && two <= 3f64.sqrt() * inf);
        }
    }

    #[test]
    fn closed_boundary_and_shapes() {
        let base = PredictionRegion {
            kind: RegionKind::Plain,
            alpha: 0.05,
            p: NormOrder::Two,
            center: vec![1.0, 1.0],
            radius: Some(2.0),
            bounds: None,
            studentizer: None,
            seed: 0,
            config_digest: String::new(),
        };
        assert!(base.contains(&[1.0, 1.0]).unwrap());
        assert!(base.contains(&[3.0, 1.0]).unwrap());
        // the corner of the enclosing square is outside the ball but inside the box
        assert!(!base.contains(&[2.5, 2.5]).unwrap());
        let boxed = PredictionRegion {
            p: NormOrder::Inf,
            ..base.clone()
        };
        assert!(boxed.contains(&[3.0, -1.0]).unwrap());
        let diamond = PredictionRegion {
            p: NormOrder::One,
            ..base
        };
        assert!(diamond.contains(&[2.0, 2.0]).unwrap());
        assert!(!diamond.contains(&[2.1, 2.0]).unwrap());
    }

    #[test]
    fn studentized_membership_uses_factor() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]);
        let r = PredictionRegion {
            kind: RegionKind::Studentized,
            alpha: 0.05,
            p: NormOrder::Two,
            center: vec![0.0, 0.0],
            radius: Some(1.0),
            bounds: None,
            studentizer: Some(s),
            seed: 0,
            config_digest: String::new(),
        };
        // S⁻¹ (2, 1) = (1, 0)
        assert!(r.contains(&[2.0, 1.0]).unwrap());
        assert!(!r.contains(&[2.0, 1.5]).unwrap());
    }

    #[test]
    fn stacking_example() {
        let s = MultiSeries::univariate(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let st = stack_series(&s, 2).unwrap();
        assert_eq!((st.dims(), st.len()), (2, 4));
        assert_eq!(st.column(0), &[1.0, 2.0]);
        assert_eq!(st.column(1), &[2.0, 3.0]);
        assert_eq!(st.column(3), &[4.0, 5.0]);
        assert_eq!(stack_series(&s, 1).unwrap(), s);
    }

    #[test]
    fn joint_band_broadcasts_one_bandwidth() {
        let spec = crate::experiments::SyntheticSpec::white_noise(1, 300, 2);
        let y = crate::experiments::simulate(&spec).unwrap().y;
        let config = |b: Vec<f64>| MfbConfig {
            replicates: 100,
            predictor_draws: 100,
            variant: crate::bootstrap::Variant::Fixed,
            bandwidths: Some(b),
            ..MfbConfig::default()
        };
        let one = jpb_stack(&y, 2, &config(vec![0.3]), 0.1).unwrap();
        let both = jpb_stack(&y, 2, &config(vec![0.3, 0.3]), 0.1).unwrap();
        assert_eq!(one.region, both.region);
        assert!(jpb_stack(&y, 2, &config(vec![0.3, 0.3, 0.3]), 0.1).is_err());
    }

    #[test]
    fn bonferroni_box() {
        let iv = [
            Interval::new(-1.0, 1.0).unwrap(),
            Interval::new(0.0, 2.0).unwrap(),
        ];
        let r = bonferroni_band(&iv, 2, 0.05, 0, "").unwrap();
        assert!(r.contains(&[0.0, 1.0]).unwrap());
        assert!(r.contains(&[1.0, 2.0]).unwrap());
        assert!(!r.contains(&[0.0, 2.5]).unwrap());
        assert!(!r.contains(&[-1.5, 1.0]).unwrap());
        assert!(bonferroni_band(&iv, 3, 0.05, 0, "").is_err());
        let one = bonferroni_band(&iv[..1], 1, 0.05, 0, "").unwrap();
        assert_eq!(one.bounds.unwrap(), vec![iv[0]]);
        let json = r.to_json();
        assert_eq!(json["kind"], "bonferroni-box");
        assert_eq!(json["box"][1][1], 2.0);
        assert!(json.get("radius").is_none());
    }

    #[test]
    fn region_json_fields() {
        let s = sample_from(vec![vec![1.0, 1.0]; 100], vec![0.5, 0.5]);
        let j = region_from_roots(&s, 0.1, NormOrder::Inf)
            .unwrap()
            .to_json();
        assert_eq!(j["kind"], "plain");
        assert_eq!(j["p"], "inf");
        assert_eq!(j["radius"], 1.0);
        assert_eq!(j["center"].as_array().unwrap().len(), 2);
        assert_eq!(j["schema_version"], 1);
    }

    proptest! {
        #[test]
        fn radius_is_monotone_in_alpha(vals in proptest::collection::vec(0.0f64..10.0, 100..300),
                                       a1 in 0.01f64..0.5, a2 in 0.01f64..0.5) {
            let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
            let s = sample_from(vals.iter().map(|v| vec![*v]).collect(), vec![0.0]);
            let r_lo = region_from_roots(&s, lo, NormOrder::Two).unwrap().radius.unwrap();
            let r_hi = region_from_roots(&s, hi, NormOrder::Two).unwrap().radius.unwrap();
            prop_assert!(r_lo >= r_hi);
        }

        #[test]
        fn translation_equivariance(shift in proptest::collection::vec(-5.0f64..5.0, 2),
                                    y in proptest::collection::vec(-3.0f64..3.0, 2)) {
            let roots: Vec<Vec<f64>> = (0..150).map(|b| vec![(b as f64).sin(), (b as f64 * 0.7).cos()]).collect();
            let a = region_from_roots(&sample_from(roots.clone(), vec![0.0, 0.0]), 0.1, NormOrder::Two).unwrap();
            let b = region_from_roots(&sample_from(roots, shift.clone()), 0.1, NormOrder::Two).unwrap();
            let ys: Vec<f64> = y.iter().zip(&shift).map(|(v, s)| v + s).collect();
            prop_assert_eq!(a.contains(&y).unwrap(), b.contains(&ys).unwrap());
        }

        #[test]
        fn membership_matches_brute_force(y in proptest::collection::vec(-3.0f64..3.0, 3), p in 0usize..3) {
            let norm = [NormOrder::One, NormOrder::Two, NormOrder::Inf][p];
            let r = PredictionRegion {
                kind: RegionKind::Plain, alpha: 0.1, p: norm, center: vec![0.5, -0.5, 0.0],
                radius: Some(1.7), bounds: None, studentizer: None, seed: 0, config_digest: String::new(),
            };
            let d: Vec<f64> = y.iter().zip(&r.center).map(|(a, c)| a - c).collect();
            let brute = match p {
                0 => d.iter().map(|v| v.abs()).sum::<f64>(),
                1 => d.iter().map(|v| v * v).sum::<f64>().sqrt(),
                _ => d.iter().map(|v| v.abs()).fold(0.0, f64::max),
            };
            prop_assert_eq!(r.contains(&y).unwrap(), brute <= 1.7);
        }
    }
}
