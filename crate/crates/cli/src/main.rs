use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use upar_cli::api::{compute, InstanceInput};
use upar_cli::config::ExperimentConfig;
use upar_cli::error::{AppError, Result};
use upar_cli::service::{self, DEFAULT_PORT, PORT_ENV};
use upar_cli::setup::{read_text, Loaded};
use upar_cli::{experiment, render};
use upar_core::preferences::{default_profile, PreferenceProfile};
use upar_core::{Error, Method};

#[derive(Parser)]
#[command(name = "upar", version, about = "Preference-aware actionable recourse")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch experiment over the configured sweep grid.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the configured seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate recourse for a single instance.
    Recourse {
        #[arg(long)]
        config: PathBuf,
        /// JSON file with feature values, as an array or keyed by name.
        #[arg(long, conflicts_with = "row", required_unless_present = "row")]
        instance: Option<PathBuf>,
        /// Row of the configured dataset.
        #[arg(long)]
        row: Option<usize>,
        /// JSON preference profile; the default profile when absent.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value = "upar")]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print one line per step.
        #[arg(long)]
        trace: bool,
        /// Also write the full JSON response to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the JSON API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = PORT_ENV, default_value_t = DEFAULT_PORT)]
        port: u16,
    },
}

fn load(config: &Path) -> Result<(ExperimentConfig, PathBuf, Loaded)> {
    let (cfg, base) = ExperimentConfig::load(config)?;
    let loaded = cfg.setup().load(&base)?;
    Ok((cfg, base, loaded))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| {
        AppError::Config(vec![format!(
            "{}:{}:{}: {e}",
            path.display(),
            e.line(),
            e.column()
        )])
    })
}

fn run(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let (mut cfg, base) = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let out = out.unwrap_or_else(|| upar_cli::setup::resolve(&base, &cfg.out));
    let summary = experiment::run(&cfg, &base, &out)?;
    std::fs::copy(config, out.join("config.json")).map_err(|e| AppError::io(config, e))?;
    println!(
        "{} individuals, {} sweep points -> {}",
        summary.individuals,
        summary.points.len(),
        summary.out.display()
    );
    for p in &summary.points {
        for (method, r) in &p.reports {
            println!(
                "{:<28} {:<16} success {:.3}  cost {:.4}  prmse {}",
                p.point.label(),
                method.to_string(),
                r.success_rate,
                r.mean_cost,
                r.prmse.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
            );
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn recourse(
    config: &Path,
    instance: Option<PathBuf>,
    row: Option<usize>,
    profile: Option<PathBuf>,
    method: Method,
    seed: u64,
    trace: bool,
    out: Option<PathBuf>,
) -> Result<()> {
    let (_, _, loaded) = load(config)?;
    let x = match (instance, row) {
        (Some(path), _) => read_json::<InstanceInput>(&path)?.to_vector(&loaded.schema)?,
        (None, Some(k)) => loaded.data.rows.get(k).cloned().ok_or_else(|| {
            Error::InvalidInput(format!("row {k} out of range ({} rows)", loaded.data.len()))
        })?,
        (None, None) => unreachable!("clap requires one of --instance and --row"),
    };
    let profile: PreferenceProfile = match profile {
        Some(p) => read_json(&p)?,
        None => default_profile(&loaded.schema)?,
    };
    let resp = compute(&loaded, &x, &profile, method, seed)?;
    if trace {
        print!("{}", render::trace(&loaded.schema, &resp.trace));
    }
    print!("{}", render::table(&loaded.schema, &resp));
    if let Some(path) = out {
        let text = serde_json::to_string_pretty(&resp)?;
        std::fs::write(&path, text).map_err(|e| AppError::io(&path, e))?;
    }
    Ok(())
}

fn serve(config: &Path, port: u16) -> Result<()> {
    let (_, _, loaded) = load(config)?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| AppError::io(config, e))?;
    eprintln!("listening on 0.0.0.0:{port}");
    rt.block_on(service::serve(loaded, port))
        .map_err(|e| AppError::io(Path::new(&format!("0.0.0.0:{port}")), e))
}

fn report(e: &AppError) -> ExitCode {
    match e {
        AppError::Core(Error::AlreadyPositive(p)) => {
            eprintln!(
                "this instance is already classified favorably (P = {p:.4}); no recourse is needed"
            );
            ExitCode::from(3)
        }
        AppError::Core(Error::InvalidProfile(violations)) => {
            eprintln!("invalid preference profile:");
            for v in violations {
                eprintln!("  {v}");
            }
            ExitCode::from(2)
        }
        AppError::Config(_) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        _ => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, seed, out } => run(&config, seed, out),
        Command::Recourse {
            config,
            instance,
            row,
            profile,
            method,
            seed,
            trace,
            out,
        } => recourse(&config, instance, row, profile, method, seed, trace, out),
        Command::Serve { config, port } => serve(&config, port),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
