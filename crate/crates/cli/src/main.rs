use clap::{Parser, Subcommand};
use heisenberg::config::ExperimentConfig;
use heisenberg::experiment::{emit_report, run_experiment, RunContext, Status};
use heisenberg::rng::Seed;
use heisenberg::validate::{validate_suite, Level, Report};
use heisenberg::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const NUMERICAL_FAILURE: u8 = 1;
const CONFIG_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "heis", version, about = "Experiments with Brownian motion on the Heisenberg group")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config file.
    Run { config: PathBuf },
    /// Run the self-check suite and print a pass/fail matrix.
    Validate {
        /// Include the statistical oracles (takes tens of minutes).
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Verify a finished run's files against its manifest and summarize it.
    Report { manifest: PathBuf },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config } => run(&config),
        Command::Validate { full, seed } => {
            let level = if full { Level::Full } else { Level::Fast };
            let report = validate_suite(level, Seed::new(seed, 0), 1.0);
            print!("{}", matrix(&report));
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(NUMERICAL_FAILURE)
            }
        }
        Command::Report { manifest } => match emit_report(&manifest) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(CONFIG_ERROR)
            }
        },
    }
}

fn run(path: &Path) -> ExitCode {
    let cfg = match ExperimentConfig::load(path).and_then(|c| c.check().map(|_| c)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    match run_experiment(&cfg, &RunContext::from_env(dir)) {
        Ok(out) => {
            for f in &out.manifest.failures {
                eprintln!("numerical failure: {f}");
            }
            println!("{}", out.manifest_path.display());
            match out.manifest.status {
                Status::Success => ExitCode::SUCCESS,
                Status::NumericalFailure => ExitCode::from(NUMERICAL_FAILURE),
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) | Error::Csv(_) => ExitCode::from(CONFIG_ERROR),
                _ => ExitCode::from(NUMERICAL_FAILURE),
            }
        }
    }
}

fn matrix(report: &Report) -> String {
    let mut s = format!("{:<32} {:<6} {:>14} {:>14}  seed\n", "check", "result", "observed", "tolerance");
    for c in &report.checks {
        let seed = c.seed.map_or("-".to_string(), |s| format!("{}/{}", s.root, s.stream));
        s += &format!(
            "{:<32} {:<6} {:>14.6e} {:>14.3e}  {seed}\n",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.observed,
            c.tolerance
        );
        if !c.passed && !c.detail.is_empty() {
            s += &format!("    {}\n", c.detail);
        }
    }
    s += &format!("{} of {} checks passed\n", report.checks.iter().filter(|c| c.passed).count(), report.checks.len());
    s
}
