//! Layered settings: command defaults, then a config file, then flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use mfb_core::bootstrap::{Banding, InnovationSource, Loss, MfbConfig, NormOrder, Variant};
use mfb_core::cdf::CdfKind;
use mfb_core::transform::ModelKind;
use mfb_core::MfbError;
use sha2::{Digest, Sha256};

use crate::error::CliError;

const PIPELINE: &[(&str, &str)] = &[
    ("alpha", "0.05"),
    ("p", "2"),
    ("loss", "l2"),
    ("variant", "resampled"),
    ("innovations", "resample"),
    ("studentize", "false"),
    ("B", "1000"),
    ("M", "2000"),
    ("h", "1"),
    ("l", "auto"),
    ("bandwidth", "auto"),
    ("c", "auto"),
    ("seed", "0"),
    ("model", "1"),
    ("cdf", "kernel"),
];

const DESIGN: &[(&str, &str)] = &[("design", "reference"), ("dims", "2"), ("burn-in", "500")];

/// Every key a command accepts, with its default.
pub fn defaults(command: &str) -> BTreeMap<String, String> {
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    let mut put = |pairs: &[(&str, &str)]| {
        for (k, v) in pairs {
            map.insert(k.to_string(), v.to_string());
        }
    };
    match command {
        "region" => put(PIPELINE),
        "simulate" => {
            put(DESIGN);
            put(&[("n", "500"), ("seed", "0")]);
        }
        "coverage" => {
            put(PIPELINE);
            put(DESIGN);
            put(&[("n", "100..500"), ("paths", "50"), ("oracle-draws", "1000")]);
            map.remove("h");
        }
        "jpb" => {
            put(PIPELINE);
            put(&[("h", "2"), ("innovations", "normal")]);
        }
        "ecvr" => {
            put(PIPELINE);
            put(&[
                ("h", "2"),
                ("innovations", "normal"),
                ("n0", "500"),
                ("p", "1"),
                ("bandwidth", "0.01"),
            ]);
        }
        _ => {}
    }
    map
}

/// Parses a `key = value` file. Values are TOML scalars; strings such as
/// `"0.4%n"` need quotes, bare numbers and booleans do not.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::missing_or_io(path, e))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::input("config-parse", e.to_string()))?;
    table
        .into_iter()
        .map(|(k, v)| {
            let s = match v {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                other => {
                    return Err(CliError::input(
                        "config-parse",
                        format!("key '{k}' must be a scalar, got {other}"),
                    ))
                }
            };
            Ok((k, s))
        })
        .collect()
}

/// Fully resolved settings of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn resolve(
        command: &str,
        file: &BTreeMap<String, String>,
        flags: &BTreeMap<String, String>,
    ) -> Result<Self, CliError> {
        let mut values = defaults(command);
        for (source, layer) in [("config file", file), ("flag", flags)] {
            for (k, v) in layer {
                match values.get_mut(k) {
                    Some(slot) => *slot = v.trim().to_string(),
                    None => {
                        return Err(CliError::input(
                            "unknown-key",
                            format!("{source} key '{k}' is not accepted by '{command}'"),
                        ))
                    }
                }
            }
        }
        Ok(Self { values })
    }

    pub fn map(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(&self.values).expect("string map serializes");
        hex::encode(Sha256::digest(json))
    }

    fn raw(&self, key: &str) -> Result<&str, CliError> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CliError::input("unknown-key", format!("missing setting '{key}'")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let raw = self.raw(key)?;
        raw.parse().map_err(|e| {
            CliError::input("config", format!("invalid value '{raw}' for '{key}': {e}"))
        })
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: Display,
    {
        let raw = self.raw(key)?;
        raw.split(',')
            .map(|part| {
                part.trim().parse().map_err(|e| {
                    CliError::input("config", format!("invalid value '{part}' for '{key}': {e}"))
                })
            })
            .collect()
    }

    /// A single value where the command does not take lists.
    pub fn single<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let mut items = self.list(key)?;
        if items.len() != 1 {
            return Err(CliError::input(
                "config",
                format!("'{key}' takes one value here"),
            ));
        }
        Ok(items.remove(0))
    }

    /// Series lengths: a comma list, or `a..b` with step 100, or `a..b:step`.
    pub fn lengths(&self) -> Result<Vec<usize>, CliError> {
        let raw = self.raw("n")?;
        let bad = || CliError::input("config", format!("invalid length list '{raw}'"));
        if let Some((lo, rest)) = raw.split_once("..") {
            let (hi, step) = match rest.split_once(':') {
                Some((hi, step)) => (hi, step.trim().parse::<usize>().map_err(|_| bad())?),
                None => (rest, 100),
            };
            let lo: usize = lo.trim().parse().map_err(|_| bad())?;
            let hi: usize = hi.trim().parse().map_err(|_| bad())?;
            if step == 0 || lo > hi {
                return Err(bad());
            }
            return Ok((lo..=hi).step_by(step).collect());
        }
        self.list("n")
    }

    fn optional_f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.raw(key)? {
            "auto" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    /// Pipeline configuration for a `dims`-dimensional input.
    pub fn mfb_config(&self, dims: usize) -> Result<MfbConfig, CliError> {
        self.mfb_config_with(
            dims,
            self.single("variant")?,
            self.single("p")?,
            self.single("loss")?,
        )
    }

    pub fn mfb_config_with(
        &self,
        dims: usize,
        variant: Variant,
        norm: NormOrder,
        loss: Loss,
    ) -> Result<MfbConfig, CliError> {
        let bandwidths = match self.raw("bandwidth")? {
            "auto" => None,
            _ => {
                let list: Vec<f64> = self.list("bandwidth")?;
                match list.len() {
                    1 => Some(vec![list[0]; dims]),
                    k if k == dims => Some(list),
                    k => {
                        return Err(CliError::input(
                            "config",
                            format!("{k} bandwidths given for {dims} dimensions"),
                        ))
                    }
                }
            }
        };
        let horizon = if self.values.contains_key("h") {
            self.get("h")?
        } else {
            1
        };
        let config = MfbConfig {
            replicates: self.get("B")?,
            predictor_draws: self.get("M")?,
            loss,
            norm,
            variant,
            innovations: self.get::<InnovationSource>("innovations")?,
            studentize: self.get("studentize")?,
            horizon,
            seed: self.get("seed")?,
            cdf: self.get::<CdfKind>("cdf")?,
            model: self.get::<ModelKind>("model")?,
            bandwidths,
            banding: self.get::<Banding>("l")?,
            threshold: self.optional_f64("c")?,
            ..MfbConfig::default()
        };
        config.validate().map_err(CliError::from)?;
        Ok(config)
    }

    pub fn alpha(&self) -> Result<f64, CliError> {
        let alpha: f64 = self.get("alpha")?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(MfbError::Domain {
                value: alpha,
                domain: "(0, 1)",
            }
            .into());
        }
        Ok(alpha)
    }
}
