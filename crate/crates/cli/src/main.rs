use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tradealloc::harness::config::Config;
use tradealloc::harness::io::{parse_accounts, parse_allocations, parse_blotter};
use tradealloc::harness::report::{emit_report, ReportFormat};
use tradealloc::harness::sim::{simulate_with, Execution, SimReport, SimSpec};
use tradealloc::harness::{self, HarnessError};

#[derive(Parser, Debug)]
#[command(
    name = "tradealloc",
    version,
    about = "Allocate bunched-order fills across accounts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Output {
    /// TOML configuration (rounding policy, FOUR settings)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// json or csv
    #[arg(long, default_value = "json")]
    format: ReportFormat,
}

#[derive(Args, Debug)]
struct Inputs {
    /// Blotter CSV: seq,day,price,qty
    #[arg(long)]
    fills: PathBuf,
    /// Accounts CSV: account_id,aum
    #[arg(long)]
    accounts: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Allocate with one method and report the per-fill trajectory
    Run {
        /// simple, hpha, aps or four
        #[arg(long, default_value = "four")]
        method: String,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        output: Output,
    },
    /// Book a fixed allocation file (seq,account_id,qty) through the ledger
    Replay {
        #[arg(long)]
        allocations: PathBuf,
        /// Row label; defaults to the allocation file stem
        #[arg(long)]
        label: Option<String>,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        output: Output,
    },
    /// Run every method side by side, plus optional replay rows
    Compare {
        /// Extra replay row as LABEL=PATH; repeatable
        #[arg(long = "replay", value_name = "LABEL=PATH")]
        replays: Vec<String>,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        output: Output,
    },
    /// Monte Carlo comparison over generated portfolios
    Simulate {
        /// TOML simulation spec; defaults apply to missing keys
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Overrides the spec's master seed
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the spec's scenario count
        #[arg(long)]
        scenarios: Option<usize>,
        /// Run scenarios on one thread
        #[arg(long)]
        sequential: bool,
        #[command(flatten)]
        output: Output,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config, HarnessError> {
    path.map_or_else(|| Ok(Config::default()), Config::load)
}

fn label_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "replay".to_string())
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run {
            method,
            inputs,
            output,
        } => {
            let config = load_config(output.config.as_deref())?;
            let fills = parse_blotter(&inputs.fills)?;
            let accounts = parse_accounts(&inputs.accounts)?;
            let report = harness::run_method(&method, &fills, &accounts, &config)?;
            emit_report(&report, output.format, output.out.as_deref())
        }
        Command::Replay {
            allocations,
            label,
            inputs,
            output,
        } => {
            let config = load_config(output.config.as_deref())?;
            let fills = parse_blotter(&inputs.fills)?;
            let accounts = parse_accounts(&inputs.accounts)?;
            let allocs = parse_allocations(&allocations, &fills, &accounts)?;
            let label = label.unwrap_or_else(|| label_of(&allocations));
            let report = harness::replay(&label, &fills, &allocs, &accounts, &config)?;
            emit_report(&report, output.format, output.out.as_deref())
        }
        Command::Compare {
            replays,
            inputs,
            output,
        } => {
            let config = load_config(output.config.as_deref())?;
            let fills = parse_blotter(&inputs.fills)?;
            let accounts = parse_accounts(&inputs.accounts)?;
            let mut rows = Vec::with_capacity(replays.len());
            for arg in &replays {
                let (label, path) = match arg.split_once('=') {
                    Some((l, p)) => (l.to_string(), PathBuf::from(p)),
                    None => (label_of(Path::new(arg)), PathBuf::from(arg)),
                };
                rows.push((label, parse_allocations(&path, &fills, &accounts)?));
            }
            let report = harness::compare(&fills, &accounts, &config, &rows)?;
            emit_report(&report, output.format, output.out.as_deref())
        }
        Command::Simulate {
            spec,
            seed,
            scenarios,
            sequential,
            output,
        } => {
            let config = load_config(output.config.as_deref())?;
            let mut spec = spec
                .as_deref()
                .map_or_else(|| Ok(SimSpec::default()), SimSpec::load)?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            if let Some(n) = scenarios {
                spec.scenarios = n;
            }
            let execution = if sequential {
                Execution::Sequential
            } else {
                Execution::default()
            };
            let summary = simulate_with(&spec, &config, execution)?;
            emit_report(
                &SimReport::new(&spec, &config, &summary),
                output.format,
                output.out.as_deref(),
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let record = serde_json::to_string(&err.record()).expect("error record serializes");
            eprintln!("{record}");
            ExitCode::from(2)
        }
    }
}
