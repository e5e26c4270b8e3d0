mod args;
mod commands;
mod error;
mod manifest;
mod settings;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use args::{Cli, Command, Flags, ReplayArgs};
use commands::Output;
use error::CliError;
use manifest::{digest_file, sha256_hex, FileDigest, RunManifest, MANIFEST_FILE};
use settings::{read_config_file, Settings};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return fail(&CliError::input("usage", e.to_string()));
        }
    };
    match dispatch(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code as u8)
}

fn dispatch(command: Command) -> Result<serde_json::Value, CliError> {
    let name = command.name();
    match command {
        Command::Replay(args) => replay(&args),
        Command::Region(flags)
        | Command::Simulate(flags)
        | Command::Coverage(flags)
        | Command::Jpb(flags)
        | Command::Ecvr(flags) => {
            let file = match &flags.config {
                Some(path) => read_config_file(path)?,
                None => BTreeMap::new(),
            };
            let settings = Settings::resolve(name, &file, &flags.explicit())?;
            let manifest = execute(name, &settings, &flags)?;
            Ok(serde_json::json!({
                "command": name,
                "manifest": flags.output_dir.join(MANIFEST_FILE).display().to_string(),
                "outputs": manifest.outputs.iter().map(|o| &o.path).collect::<Vec<_>>(),
            }))
        }
    }
}

fn absolute(path: &Path) -> PathBuf {
    std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

fn execute(name: &str, settings: &Settings, flags: &Flags) -> Result<RunManifest, CliError> {
    let start = Instant::now();
    let input = flags.input.as_deref().map(absolute);
    let outputs = commands::run(name, settings, input.as_deref())?;
    let inputs = match &input {
        Some(path) => vec![digest_file(path)?],
        None => Vec::new(),
    };
    let written = write_outputs(&flags.output_dir, &outputs)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: name.to_string(),
        settings: settings.map().clone(),
        config_digest: settings.digest(),
        seed: settings.get("seed")?,
        inputs,
        outputs: written,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    let path = flags.output_dir.join(MANIFEST_FILE);
    std::fs::write(&path, bytes).map_err(|e| CliError::missing_or_io(&path, e))?;
    Ok(manifest)
}

fn write_outputs(dir: &Path, outputs: &[Output]) -> Result<Vec<FileDigest>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::missing_or_io(dir, e))?;
    outputs
        .iter()
        .map(|o| {
            let path = dir.join(&o.name);
            std::fs::write(&path, &o.bytes).map_err(|e| CliError::missing_or_io(&path, e))?;
            Ok(FileDigest {
                path: o.name.clone(),
                sha256: sha256_hex(&o.bytes),
            })
        })
        .collect()
}

fn replay(args: &ReplayArgs) -> Result<serde_json::Value, CliError> {
    let recorded = RunManifest::read(&args.manifest)?;
    let settings = Settings::resolve(&recorded.command, &BTreeMap::new(), &recorded.settings)?;
    if settings.map() != &recorded.settings {
        return Err(CliError::input(
            "manifest-settings",
            "manifest does not list every setting of its command",
        ));
    }
    let input = match recorded.inputs.as_slice() {
        [] => None,
        [one] => {
            let path = PathBuf::from(&one.path);
            if digest_file(&path)?.sha256 != one.sha256 {
                return Err(CliError::input(
                    "input-changed",
                    format!("{} no longer matches its recorded digest", one.path),
                ));
            }
            Some(path)
        }
        _ => {
            return Err(CliError::input(
                "manifest-parse",
                "more than one input recorded",
            ))
        }
    };
    let flags = Flags {
        input,
        output_dir: args.output_dir.clone(),
        ..Flags::default()
    };
    let rerun = execute(&recorded.command, &settings, &flags)?;
    let mismatched: Vec<&str> = recorded
        .outputs
        .iter()
        .filter(|o| !rerun.outputs.contains(o))
        .map(|o| o.path.as_str())
        .collect();
    if !mismatched.is_empty() || rerun.outputs.len() != recorded.outputs.len() {
        return Err(CliError::pipeline(
            "replay-mismatch",
            format!(
                "outputs differ from the manifest: {}",
                mismatched.join(", ")
            ),
        ));
    }
    Ok(serde_json::json!({
        "command": "replay",
        "replayed": recorded.command,
        "reproduced": true,
        "outputs": rerun.outputs.iter().map(|o| &o.path).collect::<Vec<_>>(),
    }))
}
