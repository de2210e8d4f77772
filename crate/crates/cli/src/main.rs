use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use topopt_cli::driver::{self, CliError, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_SOLVER};

#[derive(Parser)]
#[command(name = "topopt", version, about = "Level-set topology optimisation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimiser.
    Run {
        config: PathBuf,
        /// Output directory; overrides TOPOPT_OUT_DIR and the config file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (defaults to 1 when `deterministic = true`).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Compare shape derivatives with central finite differences.
    CheckGradients { config: PathBuf },
    /// Reinitialise the initial level set and report |∇φ| statistics.
    ReinitDemo {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads(requested: Option<usize>, deterministic: bool) -> Result<(), String> {
    let n = match requested {
        Some(n) => n,
        None if deterministic => 1,
        None => return Ok(()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Run { config, out: dir, threads } => {
            let cfg = driver::load_config(&config)?;
            if let Err(e) = configure_threads(threads, cfg.deterministic) {
                eprintln!("warning: cannot configure thread pool: {e}");
            }
            let dir = driver::resolve_out_dir(&cfg, dir.as_deref());
            let summary = driver::run_optimisation(&cfg, &dir, &mut out)?;
            let _ = writeln!(out, "history written to {}", summary.history_path.display());
            Ok(driver::termination_exit_code(summary.termination))
        }
        Command::CheckGradients { config } => {
            let cfg = driver::load_config(&config)?;
            let _ = configure_threads(None, cfg.deterministic);
            let checks = driver::check_gradients(&cfg, &mut out)?;
            Ok(if checks.iter().all(|c| c.passed) { 0 } else { EXIT_CHECK_FAILED })
        }
        Command::ReinitDemo { config, out: dir } => {
            let cfg = driver::load_config(&config)?;
            let _ = configure_threads(None, cfg.deterministic);
            let dir = driver::resolve_out_dir(&cfg, dir.as_deref());
            let rep = driver::reinit_demo(&cfg, &dir, &mut out)?;
            let _ = writeln!(out, "wrote {}", rep.vtk.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            debug_assert!(code == EXIT_CONFIG || code == EXIT_SOLVER);
            ExitCode::from(code as u8)
        }
    }
}
