//! `suspensia` command-line driver.
//!
//! Every run writes `config.toml` (the fully resolved configuration),
//! `manifest.toml` (config hash, versions, wall time, artifact list, status)
//! and `summary.txt` next to the experiment's own outputs.

mod config;
mod experiments;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{ConfigError, ExperimentConfig, Kind};
use experiments::{Failure, Outputs};

#[derive(Parser)]
#[command(name = "suspensia", version, about = "Stokes flow with rigid inclusions: cell problems, homogenization and statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and rasterize a periodic inclusion set.
    GenGeometry(Common),
    /// Solve the cell problems and store correctors and effective tensors.
    SolveCell(Common),
    /// Compute only the effective tensors of a cell.
    Effective(Common),
    /// Heterogeneous versus homogenized solve at one scale.
    Homogenize(Common),
    /// Two-scale error across a sequence of scales.
    RateStudy(Common),
    /// Excess decay, Lipschitz ratios and minimal radius on one cell.
    Regularity(Common),
    /// Ensemble statistics over seeded hardcore geometries.
    Stats(Common),
}

impl Command {
    fn split(&self) -> (Kind, &Common) {
        match self {
            Command::GenGeometry(c) => (Kind::GenGeometry, c),
            Command::SolveCell(c) => (Kind::SolveCell, c),
            Command::Effective(c) => (Kind::Effective, c),
            Command::Homogenize(c) => (Kind::Homogenize, c),
            Command::RateStudy(c) => (Kind::RateStudy, c),
            Command::Regularity(c) => (Kind::Regularity, c),
            Command::Stats(c) => (Kind::Stats, c),
        }
    }
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; falls back to the config's `out`, then to $SUSPENSIA_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all available cores by default.
    #[arg(long)]
    threads: Option<usize>,
    /// Cells per side of the periodic cell grid.
    #[arg(long)]
    resolution: Option<usize>,
    /// `key.path=value` overrides applied after the config file.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Serialize)]
struct Manifest {
    experiment: &'static str,
    status: &'static str,
    exit_code: i32,
    incomplete: bool,
    error: Option<String>,
    config_hash: String,
    core_version: &'static str,
    cli_version: &'static str,
    threads: usize,
    wall_time_seconds: f64,
    artifacts: Vec<String>,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn resolve(kind: Kind, common: &Common) -> Result<ExperimentConfig, ConfigError> {
    let text = match &common.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let mut overrides = common.overrides.iter().map(|s| config::parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    if let Some(s) = common.seed {
        overrides.push((vec!["seed".into()], toml::Value::Integer(s as i64)));
    }
    if let Some(n) = common.resolution {
        overrides.push((vec!["resolution".into()], toml::Value::Integer(n as i64)));
    }
    let mut cfg = config::resolve(text.as_deref(), &overrides)?;
    match cfg.experiment {
        Some(k) if k != kind => {
            return Err(ConfigError(format!("config is for `{}`, not `{}`", k.name(), kind.name())));
        }
        _ => cfg.experiment = Some(kind),
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = cli.command.split();
    let start = Instant::now();
    let mut config = match resolve(kind, common) {
        Ok(c) => c,
        Err(e) => return fail(2, e),
    };
    let out_dir = common.out.clone().or(config.out.clone()).or_else(|| std::env::var_os("SUSPENSIA_OUT").map(PathBuf::from));
    let Some(out_dir) = out_dir else {
        return fail(2, "no output directory: pass --out, set `out` in the config or SUSPENSIA_OUT");
    };
    config.out = Some(out_dir.clone());
    if let Some(t) = common.threads {
        if t == 0 {
            return fail(2, "--threads must be positive");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            return fail(2, e);
        }
    }
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        return fail(2, format!("{}: {e}", out_dir.display()));
    }
    // The output location is not part of the experiment's identity.
    let hashed = ExperimentConfig { out: None, ..config.clone() };
    let config_text = match toml::to_string(&hashed) {
        Ok(s) => s,
        Err(e) => return fail(2, e),
    };
    let config_hash = suspensia::io::hex_digest(config_text.as_bytes());
    let mut out = Outputs::new(&out_dir);
    let result = match out.write("config.toml", &config_text) {
        Ok(()) => experiments::validate(kind, &config).and_then(|()| experiments::run(kind, &config, &mut out)),
        Err(e) => Err(e),
    };
    let (status, code, error, mut lines) = match result {
        Ok(lines) => ("ok", 0, None, lines),
        Err(f) => {
            let status = match f {
                Failure::Validation(_) => "validation-failure",
                Failure::Solver(_) => "solver-failure",
            };
            (status, f.exit_code(), Some(f.message().to_owned()), vec![format!("error: {}", f.message())])
        }
    };
    lines.insert(0, format!("{} ({status})", kind.name()));
    let _ = out.write("summary.txt", lines.join("\n") + "\n");
    let manifest = Manifest {
        experiment: kind.name(),
        status,
        exit_code: code,
        incomplete: code != 0,
        error: error.clone(),
        config_hash,
        core_version: suspensia::VERSION,
        cli_version: env!("CARGO_PKG_VERSION"),
        threads: rayon::current_num_threads(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        artifacts: out.artifacts.clone(),
    };
    match toml::to_string(&manifest) {
        Ok(s) => {
            if let Err(e) = std::fs::write(out_dir.join("manifest.toml"), s) {
                return fail(3, format!("writing manifest: {e}"));
            }
        }
        Err(e) => return fail(3, e),
    }
    if let Some(e) = error {
        return fail(code as u8, e);
    }
    for l in &lines {
        println!("{l}");
    }
    ExitCode::SUCCESS
}
