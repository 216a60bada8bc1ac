use std::fs;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aoi_sim::harness::{
    run_experiment, run_experiment_with_threads, run_verification_suite, trace_cell, write_results, ExperimentSpec,
    HarnessError, SuiteScale,
};
use aoi_sim::metrics::age_trajectory;

#[derive(Parser)]
#[command(
    name = "aoi-sim",
    version,
    about = "Age-of-information simulator and verification harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of an experiment spec and print a CSV table.
    Run {
        /// Spec file, or the name of a bundled preset.
        spec: String,
        /// Write `<name>.csv` into this directory instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run a named claim set and print one line per claim.
    Verify {
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Small run counts and horizons.
        #[arg(long)]
        quick: bool,
    },
    /// Simulate one cell (first replication) and print its trace.
    Trace {
        spec: String,
        #[arg(long)]
        cell: usize,
        /// Print the age trajectory breakpoints as `t,age` instead of JSON.
        #[arg(long)]
        emit_age_csv: bool,
    },
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Run { spec, out, threads } => {
            let spec = ExperimentSpec::load(&spec)?;
            let rows = match threads {
                Some(0) => return Err(HarnessError::Parse("--threads must be at least 1".into())),
                Some(n) => run_experiment_with_threads(&spec, n)?,
                None => run_experiment(&spec)?,
            };
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir)?;
                    let path = dir.join(format!("{}.csv", spec.name));
                    write_results(&rows, fs::File::create(&path)?)?;
                    eprintln!("wrote {}", path.display());
                }
                None => write_results(&rows, io::stdout().lock())?,
            }
            Ok(true)
        }
        Command::Verify { suite, seed, quick } => {
            let scale = if quick {
                SuiteScale::quick()
            } else {
                SuiteScale::default()
            };
            let report = run_verification_suite(&suite, seed, scale)?;
            println!("{report}");
            Ok(report.passed())
        }
        Command::Trace {
            spec,
            cell,
            emit_age_csv,
        } => {
            let spec = ExperimentSpec::load(&spec)?;
            let trace = trace_cell(&spec, cell, 0)?;
            if emit_age_csv {
                age_trajectory(&trace).write_csv(io::stdout().lock())?;
            } else {
                println!("{}", trace.to_json());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
