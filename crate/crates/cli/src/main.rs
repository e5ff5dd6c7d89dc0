use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use noisylmi_cli::commands::{self, EXIT_ERROR};
use noisylmi_cli::config::{Overrides, RunConfig, SweepSpec};
use noisylmi_cli::CliResult;

#[derive(Parser)]
#[command(name = "noisylmi", version, about = "Data-driven state-feedback synthesis from noisy trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file (for `verify`: the run record).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Relative strictness margin of the LMIs.
    #[arg(long, value_name = "X")]
    margin: Option<f64>,
    /// Members drawn by the sampling verifier.
    #[arg(long, value_name = "N")]
    samples: Option<usize>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the data-collection experiment and write the measured trajectory.
    Simulate(Common),
    /// Solve the selected programs, verify the certificates, write a run record.
    Synth(Common),
    /// Re-run both verifiers on the certificates of a run record.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Run record to check (alternative to --config).
        record: Option<PathBuf>,
    },
    /// Feasibility ratios over a grid of experiment lengths and noise levels.
    Sweep(Common),
}

fn load(c: &Common) -> CliResult<RunConfig> {
    let path = c
        .config
        .as_ref()
        .ok_or_else(|| noisylmi_cli::CliError::Config("--config PATH is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    cfg.apply(&Overrides {
        seed: c.seed,
        margin: c.margin,
        samples: c.samples,
        out: c.out.clone(),
    });
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Simulate(c) => {
            let path = commands::simulate(&load(&c)?)?;
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::Synth(c) => {
            let (rec, written) = commands::synth(&load(&c)?)?;
            for r in &rec.results {
                println!("{}: {} {}", r.mode, r.status, r.message);
                if let Some(v) = &r.verification {
                    println!("  verification {}", if v.passed { "passed" } else { "FAILED" });
                }
            }
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(rec.exit_code)
        }
        Command::Verify { common, record } => {
            let path = record
                .or_else(|| common.config.clone())
                .ok_or_else(|| noisylmi_cli::CliError::Config("a run record path is required".into()))?;
            let (report, written) = commands::verify(&path, common.samples, common.seed, common.out.as_deref())?;
            for r in &report.results {
                match &r.verification {
                    Some(v) => println!(
                        "{}: {} (exact {}, sampling {} of {})",
                        r.mode,
                        if v.passed { "pass" } else { "FAIL" },
                        v.exact,
                        v.sampling.checked,
                        v.sampling.requested
                    ),
                    None => println!("{}: no certificate ({})", r.mode, r.status),
                }
            }
            println!("wrote {}", written.display());
            Ok(report.exit_code)
        }
        Command::Sweep(c) => {
            let spec = SweepSpec::from_config(&load(&c)?)?;
            let (table, written) = commands::sweep(&spec)?;
            let errors: usize = table.cells.iter().map(|c| c.n_error).sum();
            if errors > 0 {
                eprintln!("warning: {errors} trials failed numerically and were not counted");
            }
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
