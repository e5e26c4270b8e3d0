use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "mfb",
    version,
    about = "Model-free bootstrap prediction regions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Prediction region for the next value of a CSV series.
    Region(Flags),
    /// Simulate a synthetic series.
    Simulate(Flags),
    /// Coverage experiment over sample sizes and method variants.
    Coverage(Flags),
    /// Joint prediction band for the next h values of a univariate series.
    Jpb(Flags),
    /// Rolling backtest of joint prediction bands.
    Ecvr(Flags),
    /// Re-run a command from its manifest and verify its outputs.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Region(_) => "region",
            Command::Simulate(_) => "simulate",
            Command::Coverage(_) => "coverage",
            Command::Jpb(_) => "jpb",
            Command::Ecvr(_) => "ecvr",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long = "output-dir")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct Flags {
    /// Input CSV, one column per dimension.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long = "output-dir", default_value = ".")]
    pub output_dir: PathBuf,
    /// File of `key = value` settings.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub alpha: Option<String>,
    /// Norm order: 1, 2 or inf (comma list for coverage).
    #[arg(long)]
    pub p: Option<String>,
    /// l1 or l2 (comma list for coverage).
    #[arg(long)]
    pub loss: Option<String>,
    /// resampled or fixed (comma list for coverage).
    #[arg(long)]
    pub variant: Option<String>,
    /// resample or normal.
    #[arg(long)]
    pub innovations: Option<String>,
    #[arg(long)]
    pub studentize: bool,
    /// Bootstrap replicates.
    #[arg(long = "B")]
    pub b: Option<String>,
    /// Monte Carlo draws for the point predictor.
    #[arg(long = "M")]
    pub m: Option<String>,
    /// Horizon.
    #[arg(long)]
    pub h: Option<String>,
    /// Banding: auto, a lag count, or a fraction of n such as `0.4%n`.
    #[arg(long)]
    pub l: Option<String>,
    /// Kernel bandwidth, one value or a comma list per dimension.
    #[arg(long)]
    pub bandwidth: Option<String>,
    /// Normal-score threshold, or auto.
    #[arg(long)]
    pub c: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// 1: marginal CDFs, 2: sequential conditional CDFs.
    #[arg(long)]
    pub model: Option<String>,
    /// empirical or kernel.
    #[arg(long)]
    pub cdf: Option<String>,

    /// Series length; for coverage a comma list or `a..b[:step]` range.
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long = "burn-in")]
    pub burn_in: Option<String>,
    /// reference (bivariate VAR) or iid.
    #[arg(long)]
    pub design: Option<String>,
    /// Dimension of the iid design.
    #[arg(long)]
    pub dims: Option<String>,
    /// Simulated paths per coverage cell.
    #[arg(long)]
    pub paths: Option<String>,
    #[arg(long = "oracle-draws")]
    pub oracle_draws: Option<String>,
    /// Backtest window length.
    #[arg(long)]
    pub n0: Option<String>,
}

impl Flags {
    /// Explicitly given settings keyed as in config files.
    pub fn explicit(&self) -> BTreeMap<String, String> {
        let pairs = [
            ("alpha", &self.alpha),
            ("p", &self.p),
            ("loss", &self.loss),
            ("variant", &self.variant),
            ("innovations", &self.innovations),
            ("B", &self.b),
            ("M", &self.m),
            ("h", &self.h),
            ("l", &self.l),
            ("bandwidth", &self.bandwidth),
            ("c", &self.c),
            ("seed", &self.seed),
            ("model", &self.model),
            ("cdf", &self.cdf),
            ("n", &self.n),
            ("burn-in", &self.burn_in),
            ("design", &self.design),
            ("dims", &self.dims),
            ("paths", &self.paths),
            ("oracle-draws", &self.oracle_draws),
            ("n0", &self.n0),
        ];
        let mut out: BTreeMap<String, String> = pairs
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v)))
            .collect();
        if self.studentize {
            out.insert("studentize".into(), "true".into());
        }
        out
    }
}
