// SPDX-License-Identifier: Apache-2.0
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sparsedag::simulate::SimConfig;
use sparsedag::{io, Result};
use sparsedag_cli::{
    cmd_bench, cmd_eval, cmd_exact, cmd_fit, cmd_simulate, exit_code, load_config, ExactArgs,
    ExperimentSpec, FitConfig,
};

#[derive(Parser)]
#[command(
    name = "sparsedag",
    version,
    about = "Sparse DAG learning for linear SEMs"
)]
struct Cli {
    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for `bench` (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a random SEM and a dataset from it.
    Simulate,
    /// Learn a DAG from a dataset.
    Fit { data: PathBuf },
    /// Enumerate the equivalence class of a covariance or dataset.
    Exact {
        input: PathBuf,
        /// Treat the input as a covariance matrix.
        #[arg(long)]
        covariance: bool,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Score an estimate against the true adjacency.
    Eval {
        b_est: PathBuf,
        b_true: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        threshold: f64,
    },
    /// Run an experiment spec.
    Bench,
}

fn run(cli: Cli) -> Result<()> {
    let cfg_path = cli.config.as_deref();
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    match cli.command {
        Command::Simulate => {
            let path = cfg_path
                .ok_or_else(|| sparsedag::Error::Config("simulate needs --config".into()))?;
            let mut cfg: SimConfig = io::read_json(path)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let sim = cmd_simulate(&cfg, &out)?;
            println!(
                "wrote {} samples of {} variables ({} edges) to {}",
                sim.data.n(),
                sim.data.p(),
                sim.graph.edge_count(),
                out.display()
            );
        }
        Command::Fit { data } => {
            let mut cfg: FitConfig = load_config(cfg_path)?;
            if let Some(s) = cli.seed {
                cfg.solver.seed = s;
            }
            let r = cmd_fit(&data, &cfg, &out)?;
            println!(
                "{}",
                serde_json::json!({
                    "valid": r.valid, "edges": r.edges.len(), "score": r.score, "converged": r.converged, "seconds": r.seconds
                })
            );
        }
        Command::Exact {
            input,
            covariance,
            eps,
            lambda,
            delta,
        } => {
            let mut args: ExactArgs = load_config(cfg_path)?;
            args.covariance |= covariance;
            args.eps = eps.or(args.eps);
            args.lambda = lambda.unwrap_or(args.lambda);
            args.delta = delta.or(args.delta);
            let dump = cmd_exact(&input, &args, &out)?;
            println!(
                "{} members, {} minimal with {} edges, {} optimal",
                dump.members.len(),
                dump.minimal.len(),
                dump.min_edges,
                dump.optimum.as_ref().map_or(0, Vec::len)
            );
        }
        Command::Eval {
            b_est,
            b_true,
            threshold,
        } => {
            let m = cmd_eval(&b_est, &b_true, threshold, cli.out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Bench => {
            let path =
                cfg_path.ok_or_else(|| sparsedag::Error::Config("bench needs --config".into()))?;
            let mut spec: ExperimentSpec = io::read_json(path)?;
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let dir = cli
                .out
                .clone()
                .or_else(|| spec.output_dir.clone())
                .unwrap_or_else(|| Path::new(".").to_path_buf());
            let r = cmd_bench(&spec, &dir, cli.threads)?;
            print!("{}", r.summary_csv);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
