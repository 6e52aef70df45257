use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kmcert_cli::runner::{cmd_run, cmd_suite, cmd_verify, load_config, suite_passed, suite_table};
use kmcert_cli::{presets, CliError};

#[derive(Parser)]
#[command(name = "kmcert", version, about = "Inexact KM iterations: runs, bound verification and certificates")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one configuration and write its trace and report.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Re-check a trace against the constants in its report.
    Verify {
        trace: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run every preset with exact and inexact evaluations.
    Suite {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// List the preset names.
    Presets,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Run { config, preset, out, seed, max_iters, tol, json } => {
            let cfg = load_config(config.as_deref(), preset.as_deref(), seed, max_iters, tol)?;
            let r = cmd_run(&cfg, &out)?;
            let rep = &r.report;
            if json {
                println!("{}", serde_json::to_string_pretty(rep).expect("report serializes"));
            } else {
                let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
                println!("{}: {} steps, final residual {:e}", rep.problem, rep.steps, rep.final_residual);
                println!("observed rate {}, theoretical {}", f(rep.observed_rate), f(rep.theoretical_rate));
                if let Some(flag) = &rep.summability.flag {
                    println!("note: {flag}");
                }
                println!("{} violations: {}", rep.violations.len(), rep.verdict);
            }
            if rep.verdict != "pass" {
                return Err(CliError::Violation(format!("{} bound violations", rep.violations.len())));
            }
        }
        Cmd::Verify { trace, report, json } => {
            let v = cmd_verify(&trace, &report)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&v).expect("serializes"));
            } else {
                for x in v.recomputed.iter().chain(&v.carried).take(20) {
                    println!("k={:?} {}: {:e} > {:e}", x.k, x.kind, x.observed, x.bound);
                }
                println!("{} rows, {} violations: {}", v.rows, v.recomputed.len() + v.carried.len(), v.verdict);
            }
            if v.verdict != "pass" {
                return Err(CliError::Violation("trace fails verification".into()));
            }
        }
        Cmd::Suite { out, json } => {
            let rows = cmd_suite(out.as_deref());
            if json {
                println!("{}", serde_json::to_string_pretty(&rows).expect("serializes"));
            } else {
                print!("{}", suite_table(&rows));
            }
            if !suite_passed(&rows) {
                if rows.iter().any(|r| r.failure.is_some()) {
                    return Err(CliError::Numerical("suite member failed to run".into()));
                }
                return Err(CliError::Violation("suite has violations".into()));
            }
        }
        Cmd::Presets => {
            for n in presets::NAMES {
                println!("{n}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
