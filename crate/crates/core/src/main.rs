use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use rbsde::config::{ExperimentConfig, ModeSpec};
use rbsde::runner;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Tree,
    Mc,
}

/// Solve a reflected BSDE with jumps in a moving convex domain and check the
/// structural properties of the computed solutions.
#[derive(Parser, Debug)]
#[command(name = "rbsde", version)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Monte Carlo seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Penalization levels, comma separated (overrides the config).
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
    /// Scenario mode (overrides the config).
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Print nothing on success.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let text = match fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", cli.config.display());
            return ExitCode::from(1);
        }
    };
    let mut cfg = match ExperimentConfig::parse(&text).and_then(|c| c.resolve()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(levels) = cli.levels {
        cfg.run.levels = levels;
    }
    if let Some(mode) = cli.mode {
        cfg.run.mode = match mode {
            Mode::Tree => ModeSpec::Tree,
            Mode::Mc => ModeSpec::Mc,
        };
    }
    match runner::run(&cfg, &cli.out) {
        Ok(outcome) => {
            if !cli.quiet {
                for c in &outcome.checks {
                    println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.tag, c.description);
                }
                println!("wrote {} files to {}", outcome.files.len(), cli.out.display());
            }
            if !outcome.passed() {
                eprintln!("error: some checks failed (see report.txt)");
            }
            ExitCode::from(outcome.exit_code())
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
