use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use xpinn::check::self_test;
use xpinn::experiment::config::{preset, PRESETS};
use xpinn::experiment::report::report;
use xpinn::experiment::{
    load_config, run_with, write_run, Experiment, ExperimentError, RunOptions,
};
use xpinn::reference::{oracle, ORACLE_NODES};

#[derive(Parser)]
#[command(
    name = "xpinn",
    version,
    about = "Physics-informed neural network experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file (or a shipped preset name) and write a run directory.
    Run {
        config: String,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train for `training.full_epochs` instead of `training.max_epochs`.
        #[arg(long)]
        full: bool,
        /// Print the loss every this many epochs (0 = never).
        #[arg(long, default_value_t = 500)]
        every: usize,
    },
    /// Compare finished runs of one problem.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Loss threshold for the epochs-to-tolerance column.
        #[arg(long)]
        tol: Option<f64>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Dump the finite-difference reference solution as CSV.
    Oracle {
        problem: String,
        mu: Vec<f64>,
        #[arg(long, default_value_t = ORACLE_NODES)]
        nodes: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant self-test.
    Check,
    /// List the shipped presets.
    Presets,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

fn resolve_config(arg: &str) -> Result<Experiment, ExperimentError> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(exp) = preset(arg) {
            return Ok(exp);
        }
    }
    load_config(path)
}

fn cmd_run(config: &str, out: Option<PathBuf>, full: bool, every: usize) -> ExitCode {
    let exp = match resolve_config(config) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID_CONFIG);
        }
    };
    let dir = out.unwrap_or_else(|| exp.output_dir.clone());
    eprintln!("training {} -> {}", exp.problem, dir.display());
    let opts = RunOptions {
        full,
        ..RunOptions::default()
    };
    let outcome = run_with(&exp, opts, |r| {
        if every > 0 && r.epoch % every == 0 {
            eprintln!(
                "epoch {:>7}  loss {:.6e}  (b {:.3e}, p {:.3e})",
                r.epoch, r.total, r.mse_b, r.mse_p
            );
        }
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(e @ ExperimentError::NoFullRun) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID_CONFIG);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    if let Err(e) = write_run(&dir, &outcome) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_FAILURE);
    }
    let f = outcome.run.final_loss;
    println!(
        "{}: {:?} after {} epochs, final loss {:.6e}",
        dir.display(),
        outcome.run.termination,
        outcome.run.epochs(),
        f.total
    );
    if let Some(e) = outcome.evaluation.max_error() {
        println!("max pointwise error {e:.3e}");
    }
    if outcome.diverged() {
        eprintln!("error: training diverged; partial artifacts written");
        return ExitCode::from(EXIT_DIVERGED);
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            full,
            every,
        } => cmd_run(&config, out, full, every),
        Command::Report { dirs, tol, csv } => {
            let r = match report(&dirs, tol) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_FAILURE);
                }
            };
            print!("{}", r.to_text());
            if let Some(path) = csv {
                if let Err(e) = r.write_csv(&path) {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_FAILURE);
                }
            }
            ExitCode::SUCCESS
        }
        Command::Oracle {
            problem,
            mu,
            nodes,
            out,
        } => {
            let sol = match oracle(&problem, &mu, nodes) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_FAILURE);
                }
            };
            let written = match out {
                Some(p) => std::fs::File::create(&p)
                    .map_err(csv::Error::from)
                    .and_then(|f| sol.write_csv(std::io::BufWriter::new(f))),
                None => sol.write_csv(std::io::stdout().lock()),
            };
            match written {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_FAILURE)
                }
            }
        }
        Command::Check => {
            let results = self_test();
            let failed = results.iter().filter(|c| !c.passed).count();
            for c in &results {
                println!(
                    "{} {}: {}",
                    if c.passed { "ok  " } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            println!("{} checks, {failed} failed", results.len());
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILURE)
            }
        }
        Command::Presets => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
    }
}
