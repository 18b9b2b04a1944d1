//! `foodsec`: generate data, train, evaluate, allocate and serve.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 infeasible
//! allocation, 1 internal error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use foodsec_core::allocator::Solver;
use foodsec_core::model::Arch;
use foodsec_core::Error;

use config::{parse_floors, RunConfig};

#[derive(Parser)]
#[command(
    name = "foodsec",
    version,
    about = "Food-insecurity scoring and intervention allocation"
)]
struct Cli {
    /// Run configuration (strict JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Inputs {
    /// Dataset CSV (sidecar JSON next to it).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model artifact JSON.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Generate {
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        bias_strength: Option<f64>,
    },
    /// Train on the training split; writes the model and history.csv.
    Train {
        #[command(flatten)]
        inputs: Inputs,
        /// logistic, svm, mlp or mlp:<hidden>
        #[arg(long)]
        arch: Option<Arch>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate on the held-out split; writes report.json, roc.csv, pr.csv.
    Evaluate {
        #[command(flatten)]
        inputs: Inputs,
        /// Comma-separated architectures to train and compare instead of
        /// evaluating the saved model.
        #[arg(long, value_delimiter = ',')]
        arch: Vec<Arch>,
        /// Where report.json goes; curves are written next to it.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Choose interventions under a budget; writes allocation.json.
    Allocate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        budget: Option<f64>,
        /// e.g. rural=3,urban=2
        #[arg(long)]
        floors: Option<String>,
        #[arg(long)]
        solver: Option<Solver>,
        #[arg(long)]
        cost_resolution: Option<f64>,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
}

fn apply_inputs(cfg: &mut RunConfig, inputs: Inputs) {
    if inputs.data.is_some() {
        cfg.paths.data = inputs.data;
    }
    if inputs.model.is_some() {
        cfg.paths.model = inputs.model;
    }
}

fn run(cli: Cli) -> foodsec_core::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    match cli.command {
        Command::Generate {
            n_samples,
            bias_strength,
        } => {
            if let Some(n) = n_samples {
                cfg.synth.n_samples = n;
            }
            if let Some(b) = bias_strength {
                cfg.synth.bias_strength = b;
            }
            commands::generate_cmd(&cfg.finish()?)
        }
        Command::Train {
            inputs,
            arch,
            lambda,
            epochs,
        } => {
            apply_inputs(&mut cfg, inputs);
            if let Some(a) = arch {
                cfg.train.arch = a;
            }
            if let Some(l) = lambda {
                cfg.train.lambda = l;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            commands::train_cmd(&cfg.finish()?)
        }
        Command::Evaluate { inputs, arch, report } => {
            apply_inputs(&mut cfg, inputs);
            if report.is_some() {
                cfg.paths.report = report;
            }
            commands::evaluate_cmd(&cfg.finish()?, &arch)
        }
        Command::Allocate {
            inputs,
            budget,
            floors,
            solver,
            cost_resolution,
        } => {
            apply_inputs(&mut cfg, inputs);
            if let Some(b) = budget {
                cfg.allocation.budget = b;
            }
            if let Some(f) = floors {
                cfg.allocation.floors = parse_floors(&f)?;
            }
            if let Some(s) = solver {
                cfg.allocation.solver = s;
            }
            if cost_resolution.is_some() {
                cfg.allocation.cost_resolution = cost_resolution;
            }
            commands::allocate_cmd(&cfg.finish()?).map(|_| ())
        }
        Command::Serve {
            inputs,
            report,
            bind,
            port,
        } => {
            apply_inputs(&mut cfg, inputs);
            if report.is_some() {
                cfg.paths.report = report;
            }
            if let Some(b) = bind {
                cfg.service.bind = b;
            }
            if let Some(p) = port {
                cfg.service.port = p;
            }
            commands::serve_cmd(&cfg.finish()?)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InfeasibleFloors { .. } => 3,
        Error::NonFinite(_) | Error::Diverged { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
