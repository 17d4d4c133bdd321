use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sinkflow_cli::{acceptance, experiments, output_root, ExperimentConfig, OUTPUT_ROOT_VAR};

/// Sinkhorn flow experiments.
#[derive(Parser)]
#[command(version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Override `numerics.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print `t,value` for a closed-form flow.
    Tabulate {
        /// One of: sinkhorn_location, sinkhorn_scale, fokker_planck_location,
        /// fokker_planck_scale, mirror_entropy, mirror_potential_energy,
        /// euclid_quadratic, euclid_quartic, euclid_inverse.
        kind: String,
        /// theta for location flows, eta for scale flows.
        #[arg(long)]
        param: Option<f64>,
        #[arg(long, default_value_t = 2.0)]
        t_end: f64,
        #[arg(long, default_value_t = 21)]
        points: usize,
    },
    /// Run the acceptance suite twice and compare the outputs.
    Verify,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> sinkflow_cli::Result<bool> {
    match cli.command {
        Command::Run { config, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.numerics.seed = s;
            }
            let name = cfg.output.directory.clone().unwrap_or_else(|| cfg.experiment.name().to_string());
            let dir = output_root().join(name);
            let (report, _) = experiments::run(&cfg, &dir)?;
            for v in &report.verdicts {
                println!("{v}");
            }
            for n in &report.notes {
                println!("note: {n}");
            }
            println!("wrote {}", dir.display());
            Ok(report.passed())
        }
        Command::Tabulate { kind, param, t_end, points } => {
            let flow = experiments::flow_by_name(&kind, param)?;
            print!("{}", experiments::tabulate(&flow, t_end, points)?);
            Ok(true)
        }
        Command::Verify => {
            let dir = output_root().join("verify");
            eprintln!("writing to {} (set {OUTPUT_ROOT_VAR} to change)", dir.display());
            let results = acceptance::verify(&dir)?;
            for r in &results {
                println!("{r}");
            }
            Ok(results.iter().all(|r| r.passed))
        }
    }
}
