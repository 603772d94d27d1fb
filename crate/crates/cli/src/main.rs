//! `pacemaker`: simulations, sweeps, continuation and bifurcation maps of a
//! smooth-muscle pacemaker model.

mod commands;
mod config;
mod error;
mod output;
mod reproduce;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use pacemaker_core::model::{DIMENSIONAL_NAMES, DIMLESS_NAMES};
use pacemaker_core::par;

use commands::{BlockArgs, ContinueArgs, MapArgs, SimulateArgs, SweepArgs};
use config::{parse_assignment, parse_positive, ModelKind, RunConfig};
use error::{CliError, CliResult};
use output::OutDir;

#[derive(Debug, Parser)]
#[command(name = "pacemaker", version, about = "Simulation and bifurcation analysis of a smooth-muscle pacemaker model")]
struct Cli {
    /// Model variant.
    #[arg(long, value_enum, default_value_t = ModelKind::Dimless, global = true)]
    model: ModelKind,
    /// Parameter override `name=value`; repeatable.
    #[arg(long = "set", value_parser = parse_assignment, global = true, allow_hyphen_values = true)]
    set: Vec<(String, f64)>,
    /// Output directory.
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,
    /// Worker threads (0: all cores).
    #[arg(long, default_value_t = 0, global = true)]
    jobs: usize,
    /// Integration step in the model's own time unit.
    #[arg(long, value_parser = parse_positive, global = true)]
    step: Option<f64>,
    /// Corrector tolerance.
    #[arg(long, value_parser = parse_positive, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate one trajectory and classify its long-time behaviour.
    Simulate(SimulateArgs),
    /// Block each conductance of the full model in turn (ignores --model).
    Block(BlockArgs),
    /// Classify the behaviour over a grid of one parameter.
    Sweep(SweepArgs),
    /// One-parameter bifurcation diagram.
    Continue(ContinueArgs),
    /// Two-parameter bifurcation map of the dimensionless model.
    Map(MapArgs),
    /// Write the data bundle of one figure (fig1 to fig12).
    Reproduce { figure: String },
}

fn effective_params(cfg: &RunConfig) -> CliResult<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    match cfg.model {
        ModelKind::Dimless => {
            let p = cfg.dimless_params()?;
            for n in DIMLESS_NAMES {
                out.insert(n.to_string(), p.get(n)?);
            }
        }
        ModelKind::Full | ModelKind::Reduced => {
            let p = cfg.dimensional()?;
            for n in DIMENSIONAL_NAMES {
                out.insert(n.to_string(), p.get(n)?);
            }
        }
    }
    Ok(out)
}

fn run(cli: Cli, args: &[String]) -> CliResult<()> {
    // channel block is defined on the three-variable model only
    let model = if matches!(cli.command, Command::Block(_)) { ModelKind::Full } else { cli.model };
    let cfg = RunConfig { model, overrides: cli.set, out: cli.out, jobs: cli.jobs, step: cli.step, tol: cli.tol };
    // reject bad overrides before touching the filesystem
    let params = effective_params(&cfg)?;
    let root = match &cli.command {
        Command::Reproduce { figure } => {
            if !reproduce::FIGURES.contains(&figure.as_str()) {
                return Err(CliError::config(format!("unknown figure `{figure}`")));
            }
            cfg.out.join(figure)
        }
        _ => cfg.out.clone(),
    };
    let mut out = OutDir::create(&root)?;
    let result = par::with_jobs(cfg.jobs, || match &cli.command {
        Command::Simulate(a) => commands::simulate(&cfg, a, &mut out),
        Command::Block(a) => commands::block(&cfg, a, &mut out),
        Command::Sweep(a) => commands::sweep_cmd(&cfg, a, &mut out),
        Command::Continue(a) => commands::continue_cmd(&cfg, a, &mut out),
        Command::Map(a) => commands::map(&cfg, a, &mut out),
        Command::Reproduce { figure } => reproduce::reproduce(&cfg, figure, &mut out),
    });
    // partial outputs stay described even when the run fails
    out.finish(args, cfg.model.as_str(), params)?;
    result
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                _ => {
                    let text = e.to_string();
                    let line = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
                    eprintln!("{}", CliError::config(line));
                    ExitCode::from(error::CONFIG)
                }
            };
        }
    };
    match run(cli, &argv[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code)
        }
    }
}
