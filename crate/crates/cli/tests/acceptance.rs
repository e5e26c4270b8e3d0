//! Acceptance checks, one line per criterion. Run with
//! `cargo test -p mfb-cli --test acceptance`.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use mfb_core::bootstrap::{
    bootstrap_roots, InnovationSource, Loss, MfbConfig, NormOrder, PredictiveRootSample,
    RootMetadata, Variant,
};
use mfb_core::cdf::{CdfKind, ThresholdedNormalQuantile};
use mfb_core::covariance::{
    build_tapered_from_series, default_banding, factor_banded, op_norm_diff, BlockToeplitz,
    FlatTopKernel, RepairRecord, TaperedBlockCov,
};
use mfb_core::experiments::{cvr_experiment, simulate, SyntheticSpec};
use mfb_core::region::{bonferroni_from_series, jpb_stack, region_from_roots, PredictionRegion};
use mfb_core::rng::{substream, tag};
use mfb_core::transform::{degaussianize, gaussianize, whiten_stacked, CdfModels, ModelKind};
use mfb_core::MultiSeries;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

type Check = Result<String, String>;

fn timed(limit: Duration, start: Instant, detail: String) -> Check {
    let spent = start.elapsed();
    if spent < limit {
        Ok(format!("{detail}, {:.1}s", spent.as_secs_f64()))
    } else {
        Err(format!(
            "{detail}, took {:.1}s (limit {}s)",
            spent.as_secs_f64(),
            limit.as_secs()
        ))
    }
}

fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, &[tag::SIMULATION]);
    let mut x: f64 = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
    (0..n)
        .map(|_| {
            let out = x;
            x = phi * x + rng.sample::<f64, _>(StandardNormal);
            out
        })
        .collect()
}

fn ar1_blocks(phi: f64, lags: usize) -> Vec<DMatrix<f64>> {
    (0..=lags)
        .map(|h| DMatrix::from_element(1, 1, phi.powi(h as i32) / (1.0 - phi * phi)))
        .collect()
}

/// Autocovariance blocks of `X_t = Σ_k Θ_k ε_{t−k}` with `Θ_0 = I`, which
/// is positive definite at every order.
fn ma_blocks(d: usize, q: usize, rng: &mut impl Rng) -> Vec<DMatrix<f64>> {
    let mut theta = vec![DMatrix::identity(d, d)];
    for _ in 0..q {
        theta.push(DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.6..0.6)));
    }
    (0..=q)
        .map(|h| {
            (0..=q - h).fold(DMatrix::zeros(d, d), |acc, k| {
                acc + &theta[k + h] * theta[k].transpose()
            })
        })
        .collect()
}

fn lag1_autocorr(x: &[f64]) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let c0: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let c1: f64 = x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    c1 / c0
}

fn sample_variance(x: &[f64]) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

fn round_trip() -> Check {
    let start = Instant::now();
    let mut rng = substream(1, &[]);
    let threshold = ThresholdedNormalQuantile::new(10.0).map_err(|e| e.to_string())?;
    for case in 0..50 {
        let d = 1 + case % 3;
        let n = if case % 2 == 0 { 50 } else { 200 };
        let data = DMatrix::from_fn(d, n, |_, _| rng.random_range(-5.0..5.0));
        let y = MultiSeries::new(data).map_err(|e| e.to_string())?;
        let models = CdfModels::fit(&y, ModelKind::Marginal, CdfKind::Empirical, None)
            .map_err(|e| e.to_string())?;
        let z = gaussianize(&y, Arc::new(models), &threshold).map_err(|e| e.to_string())?;
        let back = degaussianize(z.models(), z.values().values()).map_err(|e| e.to_string())?;
        if back.values() != y.values() {
            return Err(format!("case {case} (d={d}, n={n}) does not reproduce Y"));
        }
    }
    timed(Duration::from_secs(5), start, "50 fixtures exact".into())
}

fn whitening() -> Check {
    let start = Instant::now();
    let (phi, n) = (0.6, 2000);
    let y = MultiSeries::univariate(&ar1(phi, n, 2)).map_err(|e| e.to_string())?;
    let kernel = FlatTopKernel::new(60.0).map_err(|e| e.to_string())?;
    let oracle = TaperedBlockCov::from_raw_blocks(1, n, &ar1_blocks(phi, 60), kernel)
        .map_err(|e| e.to_string())?;
    let l = (n as f64).cbrt();
    let estimated = build_tapered_from_series(&y, l, 0).map_err(|e| e.to_string())?;
    let mut detail = Vec::new();
    for (name, cov, var_tol, rho_tol) in [
        ("oracle", &oracle, 0.1, 0.05),
        ("estimated", &estimated, 0.15, 0.08),
    ] {
        let xi = whiten_stacked(y.as_stacked(), 1, cov)
            .map_err(|e| e.to_string())?
            .xi;
        let (var, rho) = (sample_variance(&xi), lag1_autocorr(&xi));
        let line = format!("{name} var {var:.3} rho1 {rho:.3}");
        if (var - 1.0).abs() > var_tol || rho.abs() >= rho_tol {
            return Err(line);
        }
        detail.push(line);
    }
    timed(Duration::from_secs(30), start, detail.join(", "))
}

fn random_toeplitz(rng: &mut impl Rng) -> BlockToeplitz {
    let d = rng.random_range(1..=3);
    let q = rng.random_range(0..=4);
    let steps = rng.random_range(2..=200 / d);
    BlockToeplitz::new(d, steps, ma_blocks(d, q, rng)).expect("valid blocks")
}

fn banded_vs_dense() -> Check {
    let mut rng = substream(3, &[]);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let m = random_toeplitz(&mut rng);
        let banded = factor_banded(&m)
            .map_err(|e| format!("case {case}: {e}"))?
            .to_dense();
        let dense = nalgebra::Cholesky::new(m.to_dense())
            .ok_or_else(|| format!("case {case}: dense Cholesky failed"))?
            .l();
        worst = worst.max((banded - dense).amax());
    }
    if worst <= 1e-10 {
        Ok(format!("max entry difference {worst:.1e}"))
    } else {
        Err(format!("max entry difference {worst:.1e}"))
    }
}

fn nesting() -> Check {
    let mut rng = substream(4, &[]);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let m = random_toeplitz(&mut rng);
        let dn = m.dim() * m.steps();
        let short = factor_banded(&m)
            .map_err(|e| format!("case {case}: {e}"))?
            .to_dense();
        let long = factor_banded(&m.with_steps(m.steps() + 1))
            .map_err(|e| format!("case {case}: {e}"))?
            .to_dense();
        worst = worst.max((long.view((0, 0), (dn, dn)) - &short).amax());
        let blocks = m.blocks().to_vec();
        let lags = blocks.len() as f64;
        let cov = TaperedBlockCov::from_raw_blocks(
            m.dim(),
            m.steps(),
            &blocks,
            FlatTopKernel::new(lags).unwrap(),
        )
        .map_err(|e| format!("case {case}: {e}"))?;
        let extended = cov.extend(1).map_err(|e| format!("case {case}: {e}"))?;
        let lead = extended.factor().to_dense();
        worst = worst.max((lead.view((0, 0), (dn, dn)) - cov.factor().to_dense()).amax());
        if extended.factor().order() != dn + m.dim() {
            return Err(format!(
                "case {case}: extended order {}",
                extended.factor().order()
            ));
        }
    }
    if worst <= 1e-10 {
        Ok(format!("max leading-block difference {worst:.1e}"))
    } else {
        Err(format!("max leading-block difference {worst:.1e}"))
    }
}

fn root_sample(roots: Vec<Vec<f64>>) -> PredictiveRootSample {
    let d = roots[0].len();
    let config = MfbConfig::default();
    PredictiveRootSample {
        predictor: vec![0.0; d],
        replicate_predictors: vec![vec![0.0; d]; roots.len()],
        roots,
        studentizer: None,
        metadata: RootMetadata {
            config_digest: config.digest(),
            config,
            seed: 0,
            dims: d,
            horizon: 1,
            n: 0,
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

fn quantile_rule() -> Check {
    let mut rng = substream(5, &[]);
    for case in 0..100 {
        let b = rng.random_range(100..=2000usize);
        let percent = [1usize, 5, 10][case % 3];
        let alpha = percent as f64 / 100.0;
        let d = rng.random_range(1..=3usize);
        let roots: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let mut norms: Vec<f64> = roots
            .iter()
            .map(|r| r.iter().fold(0.0, |m: f64, v| m.max(v.abs())))
            .collect();
        norms.sort_by(f64::total_cmp);
        let k = ((100 - percent) * b).div_ceil(100);
        let region = region_from_roots(&root_sample(roots), alpha, NormOrder::Inf)
            .map_err(|e| e.to_string())?;
        if region.radius != Some(norms[k - 1]) {
            return Err(format!(
                "case {case}: B={b}, alpha={alpha}, k={k}, radius {:?} vs {}",
                region.radius,
                norms[k - 1]
            ));
        }
    }
    Ok("100 cases exact".into())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

fn op_norm_trend() -> Check {
    let start = Instant::now();
    let phi = 0.5;
    let mut medians = Vec::new();
    for n in [200usize, 1600] {
        let truth = BlockToeplitz::new(1, n, ar1_blocks(phi, 60)).map_err(|e| e.to_string())?;
        let errors = (0..20u64)
            .map(|seed| {
                let y = MultiSeries::univariate(&ar1(phi, n, 100 + seed))?;
                let est = build_tapered_from_series(&y, default_banding(n), 0)?;
                Ok(op_norm_diff(est.matrix(), &truth)?.value)
            })
            .collect::<mfb_core::Result<Vec<f64>>>()
            .map_err(|e| e.to_string())?;
        medians.push(median(errors));
    }
    let detail = format!(
        "median error n=200 {:.3}, n=1600 {:.3}",
        medians[0], medians[1]
    );
    if medians[1] < medians[0] {
        timed(Duration::from_secs(120), start, detail)
    } else {
        Err(detail)
    }
}

fn cvr_reproduction() -> Check {
    let start = Instant::now();
    let config = MfbConfig {
        replicates: 500,
        variant: Variant::Fixed,
        loss: Loss::L2,
        norm: NormOrder::Two,
        ..MfbConfig::default()
    };
    let mut cvr = Vec::new();
    for n in [100, 500] {
        let report = cvr_experiment(&SyntheticSpec::reference(n, 0), &config, 0.05, 30, 2000)
            .map_err(|e| e.to_string())?;
        cvr.push(report.mean_cvr);
    }
    let (small, large) = (cvr[0], cvr[1]);
    let detail = format!("CVR n=100 {small:.4}, n=500 {large:.4}");
    let in_band = (0.91..=0.98).contains(&large);
    let closer = (large - 0.95).abs() <= (small - 0.95).abs() + 0.01;
    if in_band && closer {
        timed(Duration::from_secs(20 * 60), start, detail)
    } else {
        Err(detail)
    }
}

struct BandFixture {
    jpb: PredictionRegion,
    bonferroni: PredictionRegion,
    futures: Vec<Vec<f64>>,
}

fn coverage(region: &PredictionRegion, futures: &[Vec<f64>]) -> Result<f64, String> {
    let mut hits = 0usize;
    for y in futures {
        if region.contains(y).map_err(|e| e.to_string())? {
            hits += 1;
        }
    }
    Ok(hits as f64 / futures.len() as f64)
}

fn band_fixture() -> Result<BandFixture, String> {
    let sim = simulate(&SyntheticSpec::white_noise(1, 1500, 0)).map_err(|e| e.to_string())?;
    let config = MfbConfig {
        variant: Variant::Fixed,
        innovations: InnovationSource::Normal,
        seed: 0,
        ..MfbConfig::default()
    };
    let jpb = jpb_stack(&sim.y, 3, &config, 0.05)
        .map_err(|e| e.to_string())?
        .region;
    let bonferroni = bonferroni_from_series(&sim.y, 3, &config, 0.05).map_err(|e| e.to_string())?;
    let mut rng = substream(0, &[tag::ORACLE]);
    let futures = (0..5000)
        .map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    Ok(BandFixture {
        jpb,
        bonferroni,
        futures,
    })
}

fn jpb_sanity(fixture: &BandFixture) -> Check {
    let y = simulate(&SyntheticSpec::white_noise(1, 300, 1))
        .map_err(|e| e.to_string())?
        .y;
    let config = MfbConfig {
        replicates: 200,
        predictor_draws: 500,
        seed: 9,
        ..MfbConfig::default()
    };
    let stacked = jpb_stack(&y, 1, &config, 0.05)
        .map_err(|e| e.to_string())?
        .region;
    let direct = region_from_roots(
        &bootstrap_roots(&y, &config).map_err(|e| e.to_string())?,
        0.05,
        config.norm,
    )
    .map_err(|e| e.to_string())?;
    if stacked != direct {
        return Err(format!(
            "h=1 band {:?} differs from region {:?}",
            stacked.radius, direct.radius
        ));
    }
    let cov = coverage(&fixture.jpb, &fixture.futures)?;
    let detail = format!("h=1 identical, h=3 coverage {cov:.4}");
    if (0.91..=0.985).contains(&cov) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bonferroni(fixture: &BandFixture) -> Check {
    let box_cov = coverage(&fixture.bonferroni, &fixture.futures)?;
    let jpb_cov = coverage(&fixture.jpb, &fixture.futures)?;
    let detail = format!("box {box_cov:.4}, joint band {jpb_cov:.4}");
    if box_cov >= 0.94 && box_cov >= jpb_cov - 0.02 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mfb(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mfb"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "mfb {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn same_bytes(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = std::fs::read_dir(a)
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.file_name()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    names.sort();
    let mut compared = 0;
    for name in names {
        if name == "manifest.json" {
            continue;
        }
        let left = std::fs::read(a.join(&name)).map_err(|e| e.to_string())?;
        let right = std::fs::read(b.join(&name)).map_err(|e| format!("{name:?}: {e}"))?;
        if left != right {
            return Err(format!("{} differs after replay", name.to_string_lossy()));
        }
        compared += 1;
    }
    Ok(compared)
}

fn cli_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = |name: &str| tmp.path().join(name).display().to_string();
    let panel = format!("{}/series.csv", dir("panel"));
    let single = format!("{}/series.csv", dir("single"));
    let small = ["--B", "100", "--M", "200", "--variant", "fixed"];
    let runs: Vec<(&str, Vec<String>)> = vec![
        (
            "panel",
            vec![
                "simulate".into(),
                "--n".into(),
                "150".into(),
                "--seed".into(),
                "3".into(),
            ],
        ),
        (
            "single",
            vec![
                "simulate".into(),
                "--design".into(),
                "iid".into(),
                "--dims".into(),
                "1".into(),
                "--n".into(),
                "300".into(),
            ],
        ),
        (
            "region",
            vec![
                "region".into(),
                "--input".into(),
                panel.clone(),
                "--B".into(),
                "200".into(),
                "--M".into(),
                "300".into(),
            ],
        ),
        (
            "coverage",
            [
                vec![
                    "coverage".into(),
                    "--n".into(),
                    "100".into(),
                    "--paths".into(),
                    "10".into(),
                ],
                small.iter().map(|s| s.to_string()).collect(),
            ]
            .concat(),
        ),
        (
            "jpb",
            [
                vec!["jpb".into(), "--input".into(), single.clone()],
                small.iter().map(|s| s.to_string()).collect(),
            ]
            .concat(),
        ),
        (
            "ecvr",
            [
                vec![
                    "ecvr".into(),
                    "--input".into(),
                    single.clone(),
                    "--n0".into(),
                    "280".into(),
                ],
                small.iter().map(|s| s.to_string()).collect(),
            ]
            .concat(),
        ),
    ];
    let mut files = 0;
    for (name, args) in &runs {
        let mut args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = dir(name);
        args.extend(["--output-dir", &out]);
        mfb(&args)?;
        let replayed = dir(&format!("{name}-replay"));
        let manifest = format!("{out}/manifest.json");
        mfb(&["replay", "--manifest", &manifest, "--output-dir", &replayed])?;
        files += same_bytes(Path::new(&out), Path::new(&replayed))?;
    }
    Ok(format!(
        "{} commands replayed, {files} files identical",
        runs.len()
    ))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, result: Check| match result {
        Ok(detail) => println!("PASS {id:>2} {name}: {detail}"),
        Err(detail) => {
            failed += 1;
            println!("FAIL {id:>2} {name}: {detail}");
        }
    };
    report(1, "round trip", round_trip());
    report(2, "whitening", whitening());
    report(3, "banded vs dense Cholesky", banded_vs_dense());
    report(4, "factor nesting", nesting());
    report(5, "quantile rule", quantile_rule());
    report(6, "operator-norm trend", op_norm_trend());
    report(7, "synthetic coverage", cvr_reproduction());
    match band_fixture() {
        Ok(fixture) => {
            report(8, "joint band", jpb_sanity(&fixture));
            report(9, "bonferroni box", bonferroni(&fixture));
        }
        Err(e) => {
            report(8, "joint band", Err(e.clone()));
            report(9, "bonferroni box", Err(e));
        }
    }
    report(10, "cli determinism", cli_determinism());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
