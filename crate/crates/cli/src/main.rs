use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use myeloma_core::io::{
    read_regimen, run_scenario, write_trajectory_csv, ResultsTable, ScenarioConfig,
};
use myeloma_core::{Method, Regimen};

#[derive(Parser)]
#[command(
    name = "myeloma",
    version,
    about = "Simulate and optimize myeloma combination-therapy regimens"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one regimen and write its trajectory CSV.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Regimen file (per-period CSV table, node CSV, or JSON). Omit for no treatment.
        #[arg(long)]
        regimen: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Exposure multipliers for the running objective, as `g1,g2,g3`. Defaults to the
        /// first vector of the config.
        #[arg(long, value_parser = parse_g)]
        g: Option<[f64; 3]>,
    },
    /// Run one method for every exposure vector of the config.
    Optimize {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every method listed in the config for every exposure vector.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild the results table from a runs directory.
    Table {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Parse and validate a config file.
    ValidateConfig { file: PathBuf },
    /// Print the default config with every parameter spelled out.
    Defaults,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Constant,
    Piecewise,
    Optimal,
    Approx,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Constant => Method::Constant,
            MethodArg::Piecewise => Method::Piecewise,
            MethodArg::Optimal => Method::Optimal,
            MethodArg::Approx => Method::Approximation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

fn load_config(path: Option<&Path>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => Ok(ScenarioConfig::load(p)?),
        None => Ok(ScenarioConfig::default()),
    }
}

fn output_dir(flag: Option<PathBuf>, config: &ScenarioConfig) -> Result<PathBuf> {
    flag.or_else(|| config.output_dir.clone())
        .context("no output directory: pass --out or set output_dir in the config")
}

fn parse_g(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into()
        .map_err(|v: Vec<f64>| format!("expected three comma-separated values, got {}", v.len()))
}

fn simulate(
    config: Option<PathBuf>,
    regimen: Option<PathBuf>,
    out: PathBuf,
    g: Option<[f64; 3]>,
) -> Result<()> {
    let config = load_config(config.as_deref())?;
    let g = g.unwrap_or_else(|| config.g_vectors.first().copied().unwrap_or([1.0; 3]));
    let regimen = match &regimen {
        Some(p) => read_regimen(p).with_context(|| format!("reading {}", p.display()))?,
        None => Regimen::zero(),
    };
    let scenario = config.scenario(g)?;
    let (traj, value) = scenario.evaluate(&regimen)?;
    std::fs::create_dir_all(&out)?;
    let path = out.join("trajectory.csv");
    write_trajectory_csv(&path, &traj, &scenario.weights)?;
    let x = traj.final_state();
    println!("wrote {} ({} points)", path.display(), traj.times.len());
    println!(
        "J = {:.6}  M(T) = {:.6}  T_C(T) = {:.4}  N(T) = {:.4}  T_R(T) = {:.6}",
        value.total, x.m, x.t_c, x.n, x.t_r
    );
    Ok(())
}

fn run(config: ScenarioConfig, out: PathBuf) -> Result<ExitCode> {
    let table = run_scenario(&config, &out)?;
    print!("{}", table.to_text());
    let failed = table.failures();
    if failed > 0 {
        eprintln!("{failed} of {} runs failed", table.rows.len());
        return Ok(ExitCode::FAILURE);
    }
    println!("results in {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate {
            config,
            regimen,
            out,
            g,
        } => {
            simulate(config, regimen, out, g)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Optimize {
            config,
            method,
            out,
        } => {
            let mut config = load_config(config.as_deref())?;
            config.methods = vec![method.into()];
            let out = output_dir(out, &config)?;
            run(config, out)
        }
        Command::Run { config, out } => {
            let config = load_config(config.as_deref())?;
            let out = output_dir(out, &config)?;
            run(config, out)
        }
        Command::Table { runs, format } => {
            let table = ResultsTable::from_runs_dir(&runs)?;
            if table.rows.is_empty() && !runs.join("table.csv").exists() {
                bail!("no run records under {}", runs.display());
            }
            match format {
                Format::Text => print!("{}", table.to_text()),
                Format::Csv => print!("{}", table.to_csv()?),
            }
            Ok(if table.failures() > 0 {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::ValidateConfig { file } => {
            let config = ScenarioConfig::load(&file)?;
            println!(
                "{}: ok ({} exposure vectors, methods: {})",
                file.display(),
                config.g_vectors.len(),
                config
                    .methods
                    .iter()
                    .map(|m| m.slug())
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Defaults => {
            print!("{}", ScenarioConfig::default().to_toml_string()?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
