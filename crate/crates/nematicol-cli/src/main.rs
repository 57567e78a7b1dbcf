//! nematicol: numerical laboratory for far-field director expansions.
//!
//! Exit codes: 0 success, 1 configuration or i/o error, 2 non-convergence
//! under --strict, 3 verification failure under --strict. Non-convergence
//! takes precedence over verification failure because an unconverged state
//! makes any downstream check unreliable.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use commands::{Emitter, Outcome, RunError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nematicol", version, about = "Nematic director far-field laboratory")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, default_value = "nematicol.toml")]
    config: PathBuf,
    /// Directory for output artifacts (created if missing).
    #[arg(long, global = true, default_value = "out")]
    output: PathBuf,
    /// Escalate non-convergence (exit 2) and verification failures (exit 3).
    #[arg(long, global = true)]
    strict: bool,
    /// Rayon worker threads (default: all cores). Results are identical
    /// for any worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize the director energy; write field.csv and solve_report.json.
    Solve,
    /// Solve, then extract far-field coefficients into expansion.json.
    Extract,
    /// Evaluate a stored expansion.json at eval.points; write eval.csv.
    EvalExpansion,
    /// Sweep far anchors, fit the energy landscape; write landscape.csv
    /// and corollary.json.
    Sweep,
    /// Compare the energy gradient against the extracted monopole; write
    /// torque.json.
    TorqueCheck,
    /// Manufactured single-mode exterior Poisson check; write poisson.json.
    PoissonCheck,
    /// Bundle existing artifacts into report.json with checksums.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::Extract => "extract",
            Self::EvalExpansion => "eval-expansion",
            Self::Sweep => "sweep",
            Self::TorqueCheck => "torque-check",
            Self::PoissonCheck => "poisson-check",
            Self::Report => "report",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("--workers: must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let workers = rayon::current_num_threads();

    let config_text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", cli.config.display());
            return ExitCode::from(1);
        }
    };
    let config_sha256 = commands::sha256_hex(config_text.as_bytes());
    let cfg = match config::parse_config(&config_text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}: {e}", cli.config.display());
            return ExitCode::from(1);
        }
    };

    let mut em = match Emitter::new(&cli.output, config_sha256, cli.command.name()) {
        Ok(em) => em,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };

    let result: Result<Outcome, RunError> = match cli.command {
        Command::Solve => commands::cmd_solve(&cfg, &mut em),
        Command::Extract => commands::cmd_extract(&cfg, &mut em),
        Command::EvalExpansion => commands::cmd_eval_expansion(&cfg, &mut em),
        Command::Sweep => commands::cmd_sweep(&cfg, &mut em),
        Command::TorqueCheck => commands::cmd_torque_check(&cfg, &mut em),
        Command::PoissonCheck => commands::cmd_poisson_check(&cfg, &mut em),
        Command::Report => commands::cmd_report(&cfg, &mut em),
    };

    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = em.finish(workers) {
        eprintln!("{e}");
        return ExitCode::from(1);
    }

    if cli.strict && outcome.non_converged {
        eprintln!("strict: run did not converge");
        return ExitCode::from(2);
    }
    if cli.strict && outcome.verification_failed {
        eprintln!("strict: verification threshold exceeded");
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}
