use std::path::Path;

use mfb_core::bootstrap::{bootstrap_roots, Loss, NormOrder, Variant};
use mfb_core::experiments::{
    coverage_gnuplot, cvr_experiment, ecvr_backtest, ecvr_gnuplot, simulate, write_coverage_rows,
    CoverageRow, SyntheticSpec,
};
use mfb_core::region::{bonferroni_from_series, jpb_stack, region_from_roots};
use mfb_core::series::format_float;
use mfb_core::{MfbError, MultiSeries};

use crate::error::CliError;
use crate::settings::Settings;

/// One artifact, written by the caller in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Output {
    fn json(name: &str, value: &serde_json::Value) -> Self {
        let mut bytes = serde_json::to_vec_pretty(value).expect("JSON value serializes");
        bytes.push(b'\n');
        Self {
            name: name.into(),
            bytes,
        }
    }

    fn text(name: &str, text: String) -> Self {
        Self {
            name: name.into(),
            bytes: text.into_bytes(),
        }
    }

    fn csv(
        name: &str,
        write: impl FnOnce(&mut Vec<u8>) -> mfb_core::Result<()>,
    ) -> Result<Self, CliError> {
        let mut bytes = Vec::new();
        write(&mut bytes)?;
        Ok(Self {
            name: name.into(),
            bytes,
        })
    }
}

pub fn run(
    command: &str,
    settings: &Settings,
    input: Option<&Path>,
) -> Result<Vec<Output>, CliError> {
    match command {
        "region" => region(settings, &read_input(input)?),
        "simulate" => simulate_cmd(settings),
        "coverage" => coverage(settings),
        "jpb" => jpb(settings, &univariate(read_input(input)?)?),
        "ecvr" => ecvr(settings, &univariate(read_input(input)?)?),
        other => Err(CliError::input(
            "usage",
            format!("unknown command '{other}'"),
        )),
    }
}

fn read_input(input: Option<&Path>) -> Result<MultiSeries, CliError> {
    let path = input.ok_or_else(|| CliError::input("missing-input", "--input is required"))?;
    if !path.exists() {
        return Err(CliError::input(
            "input-not-found",
            format!("{}: no such file", path.display()),
        ));
    }
    Ok(MultiSeries::read_csv_path(path)?)
}

fn univariate(series: MultiSeries) -> Result<MultiSeries, CliError> {
    if series.dims() != 1 {
        return Err(CliError::input(
            "input-dimension",
            format!("expected one column, found {}", series.dims()),
        ));
    }
    Ok(series)
}

fn region(settings: &Settings, series: &MultiSeries) -> Result<Vec<Output>, CliError> {
    let config = settings.mfb_config(series.dims())?;
    let alpha = settings.alpha()?;
    let roots = bootstrap_roots(series, &config)?;
    let target = if config.horizon > 1 {
        roots.last_step()?
    } else {
        roots.clone()
    };
    let region = region_from_roots(&target, alpha, config.norm)?;
    Ok(vec![
        Output::json("region.json", &region.to_json()),
        Output::csv("roots.csv", |w| roots.write_csv(w))?,
        Output::json("roots.json", &roots.metadata_json()),
    ])
}

fn design(settings: &Settings, n: usize) -> Result<SyntheticSpec, CliError> {
    let seed = settings.get("seed")?;
    let mut spec = match settings.get::<String>("design")?.as_str() {
        "reference" => SyntheticSpec::reference(n, seed),
        "iid" => SyntheticSpec::white_noise(settings.get("dims")?, n, seed),
        other => {
            return Err(CliError::input(
                "config",
                format!("unknown design '{other}' (expected reference or iid)"),
            ))
        }
    };
    spec.burn_in = settings.get("burn-in")?;
    Ok(spec)
}

fn simulate_cmd(settings: &Settings) -> Result<Vec<Output>, CliError> {
    let spec = design(settings, settings.get("n")?)?;
    let sim = simulate(&spec)?;
    Ok(vec![
        Output::csv("series.csv", |w| sim.y.write_csv(w))?,
        Output::csv("latent.csv", |w| sim.w.write_csv(w))?,
    ])
}

fn coverage(settings: &Settings) -> Result<Vec<Output>, CliError> {
    let alpha = settings.alpha()?;
    let paths: usize = settings.get("paths")?;
    let oracle_draws: usize = settings.get("oracle-draws")?;
    let variants: Vec<Variant> = settings.list("variant")?;
    let norms: Vec<NormOrder> = settings.list("p")?;
    let losses: Vec<Loss> = settings.list("loss")?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for n in settings.lengths()? {
        let spec = design(settings, n)?;
        for &variant in &variants {
            for &norm in &norms {
                for &loss in &losses {
                    let config = settings.mfb_config_with(spec.dims(), variant, norm, loss)?;
                    let report = cvr_experiment(&spec, &config, alpha, paths, oracle_draws)?;
                    rows.push(CoverageRow {
                        n,
                        variant: label(&variant),
                        p: label(&norm),
                        loss: label(&loss),
                        alpha,
                        mean_cvr: report.mean_cvr,
                        failed: report.failed,
                    });
                    reports.push(report);
                }
            }
        }
    }
    let json = serde_json::to_value(&reports).map_err(|e| MfbError::Internal(e.to_string()))?;
    Ok(vec![
        Output::csv("coverage.csv", |w| write_coverage_rows(&rows, w))?,
        Output::json("coverage.json", &json),
        Output::text("coverage.gp", coverage_gnuplot("coverage.csv", 1.0 - alpha)),
    ])
}

/// Lowercase serde name, matching the flag spelling.
fn label<T: serde::Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s.to_ascii_lowercase(),
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

fn jpb(settings: &Settings, series: &MultiSeries) -> Result<Vec<Output>, CliError> {
    let config = settings.mfb_config(1)?;
    let alpha = settings.alpha()?;
    let h = config.horizon;
    let band = jpb_stack(series, h, &config, alpha)?;
    let bonferroni = bonferroni_from_series(series, h, &config, alpha)?;
    Ok(vec![
        Output::json("jpb.json", &band.region.to_json()),
        Output::json("bonferroni.json", &bonferroni.to_json()),
    ])
}

fn ecvr(settings: &Settings, series: &MultiSeries) -> Result<Vec<Output>, CliError> {
    let config = settings.mfb_config(1)?;
    let alpha = settings.alpha()?;
    let n0: usize = settings.get("n0")?;
    let report = ecvr_backtest(series, n0, config.horizon, &config, alpha)?;
    let summary = format!(
        "n0,h,ecvr\n{},{},{}\n",
        report.n0,
        report.h,
        format_float(report.ecvr)
    );
    let json = serde_json::to_value(&report).map_err(|e| MfbError::Internal(e.to_string()))?;
    Ok(vec![
        Output::csv("ecvr_windows.csv", |w| report.write_csv(w))?,
        Output::text("ecvr.csv", summary),
        Output::json("ecvr.json", &json),
        Output::text("ecvr.gp", ecvr_gnuplot("ecvr.csv", 1.0 - alpha)),
    ])
}
