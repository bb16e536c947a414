use std::path::PathBuf;
use std::process::ExitCode;

use bsk_cli::{
    cmd_attack, cmd_demo, cmd_run, cmd_sweep, default_attack_events, load_config, parse_values,
    render_attack, render_run, render_sweep, CliError,
};
use bsk_core::simnet::AdversaryMode;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bsk", version, about = "Biometric key establishment simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario; writes trace.jsonl, metrics.json and report.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Empirical vs analytic establishment rate over one parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// One of p, R, t, N, code.D.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attack campaign over consecutive seeds.
    Attack {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: AdversaryMode,
        /// Target event count; defaults to 10000 for tamper, 100000 for
        /// foreign_body and 1000 otherwise.
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print an annotated trace of the first key establishment.
    Demo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn execute(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let report = cmd_run(&cfg, &out)?;
            print!("{}", render_run(&report));
            Ok(report.pass)
        }
        Command::Sweep {
            config,
            seed,
            param,
            values,
            trials,
            out,
        } => {
            let cfg = load_config(&config, seed)?;
            let values = parse_values(&values)?;
            let table = cmd_sweep(&cfg, &param, &values, trials, out.as_deref())?;
            print!("{}", render_sweep(&table));
            Ok(true)
        }
        Command::Attack {
            config,
            seed,
            mode,
            trials,
            out,
        } => {
            let cfg = load_config(&config, seed)?;
            let events = trials.unwrap_or_else(|| default_attack_events(mode));
            let report = cmd_attack(&cfg, mode, events, out.as_deref())?;
            print!("{}", render_attack(&report));
            Ok(report.secure())
        }
        Command::Demo { config, seed } => {
            let cfg = load_config(&config, seed)?;
            print!("{}", cmd_demo(&cfg)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BSK_LOG", "off")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
