use std::path::PathBuf;
use std::process::ExitCode;

use becimp::config::RunConfig;
use becimp::scenario;
use becimp::Error;
use clap::Parser;

/// Excited impurity in a one-dimensional Bose-Einstein condensate.
///
/// Any configuration key can be overridden with `--section.key value`.
#[derive(Parser, Debug)]
#[command(name = "becimp", version)]
struct Cli {
    /// relax, tof, quench, mass_scan, coupling_scan, zeno_decay or analyze
    scenario: String,
    /// Configuration file (`section.key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

/// Splits `--a.b value` and `--a.b=value` pairs off the argument list.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        match arg.strip_prefix("--") {
            Some(name) if name.split('=').next().is_some_and(|k| k.contains('.')) => {
                if let Some((k, v)) = name.split_once('=') {
                    overrides.push((k.to_string(), v.to_string()));
                } else {
                    let v = it.next().ok_or_else(|| format!("--{name} needs a value"))?;
                    overrides.push((name.to_string(), v));
                }
            }
            _ => rest.push(arg),
        }
    }
    Ok((rest, overrides))
}

fn main() -> ExitCode {
    let (args, mut overrides) = match split_overrides(std::env::args().collect()) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    overrides.push(("scenario".into(), cli.scenario.clone()));

    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path, &overrides),
        None => RunConfig::from_pairs(&overrides),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };

    match scenario::run(&cfg, &cli.out) {
        Ok(outcome) => {
            println!(
                "{} -> {} ({})",
                cfg.scenario,
                cli.out.display(),
                outcome.status.as_str()
            );
            ExitCode::from(outcome.status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) | Error::InvalidParameter(_) | Error::InvalidGrid(_) => 2,
                Error::NonFinite { .. } => 3,
                Error::NotConverged(_) => 4,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
