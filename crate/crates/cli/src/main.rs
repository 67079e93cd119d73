use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use purityforge::infoq::WMode;
use purityforge_cli::*;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "purityforge",
    version,
    about = "Rate/purity regions and protocol simulation for catalytic purity distillation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Problem file (JSON).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Binning fraction in [0, 1].
    #[arg(long)]
    b: Option<f64>,
    #[arg(long, value_parser = parse_w_mode)]
    w_mode: Option<WMode>,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the summary table as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Entropies, mutual informations and local purities.
    Entropies(Common),
    /// Rate-region constraints and purity bound.
    Region {
        #[command(flatten)]
        common: Common,
        /// Report the vertices of the region.
        #[arg(long)]
        corners: bool,
        /// Replace the right-hand sides with R1,R2,SUM.
        #[arg(long, value_delimiter = ',')]
        constraints: Option<Vec<f64>>,
    },
    /// Monte Carlo experiments on the random-coding protocol.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, group = "mode")]
        budget: bool,
        #[arg(long, group = "mode")]
        subpovm: bool,
        #[arg(long, group = "mode")]
        binning: bool,
        #[arg(long, group = "mode")]
        chernoff: bool,
    },
    /// Checks the state, POVMs and parameters.
    Validate(Common),
}

fn parse_w_mode(s: &str) -> std::result::Result<WMode, String> {
    s.parse()
}

fn overrides(c: &Common) -> Overrides {
    Overrides { seed: c.seed, trials: c.trials, b: c.b, w_mode: c.w_mode }
}

fn emit<T: Serialize>(report: &RunReport<T>, rows: &[(String, f64)], common: &Common) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| CliError::Io(e.to_string()))?;
    println!("{json}");
    eprint!("{}", text_table(rows));
    if let Some(path) = &common.out {
        std::fs::write(path, json + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    if let Some(path) = &common.csv {
        std::fs::write(path, csv_table(rows)).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Entropies(common) => {
            let problem = load_problem(&common.input, &overrides(&common))?;
            let report = run_report("entropies", &problem, || cmd_entropies(&problem))?;
            emit(&report, &report.result.rows(), &common)
        }
        Command::Region { common, corners, constraints } => {
            let problem = load_problem(&common.input, &overrides(&common))?;
            let constraints = match constraints.as_deref() {
                None => None,
                Some(&[r1, r2, sum]) => Some([r1, r2, sum]),
                Some(v) => return Err(CliError::Parse(format!("--constraints needs 3 values, got {}", v.len()))),
            };
            let report = run_report("region", &problem, || cmd_region(&problem, corners, constraints))?;
            emit(&report, &report.result.rows(), &common)
        }
        Command::Simulate { common, budget, subpovm, binning, chernoff } => {
            let mode = match (budget, subpovm, binning, chernoff) {
                (true, ..) => SimMode::Budget,
                (_, true, ..) => SimMode::Subpovm,
                (_, _, true, _) => SimMode::Binning,
                (.., true) => SimMode::Chernoff,
                _ => {
                    return Err(CliError::Parse(
                        "simulate needs one of --budget, --subpovm, --binning, --chernoff".into(),
                    ))
                }
            };
            let problem = load_problem(&common.input, &overrides(&common))?;
            let report = run_report("simulate", &problem, || cmd_simulate(&problem, mode))?;
            emit(&report, &report.result.rows(), &common)
        }
        Command::Validate(common) => {
            let problem = load_problem(&common.input, &overrides(&common))?;
            let report = run_report("validate", &problem, || Ok(cmd_validate(&problem)))?;
            let valid = report.result.valid;
            emit(&report, &[("valid".into(), if valid { 1.0 } else { 0.0 })], &common)?;
            if valid {
                Ok(())
            } else {
                Err(CliError::Invalid("validation failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage errors share the parse/validation exit code
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = threads_from_env().and_then(|threads| match threads {
        Some(t) => with_threads(t, || run(cli))?,
        None => run(cli),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
