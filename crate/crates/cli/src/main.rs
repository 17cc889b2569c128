//! `lls`: batch driver for generation, discriminator training, pipeline runs,
//! sweeps and self-tests.
//!
//! Exit codes: 0 success, 1 invalid configuration or input, 2 runtime
//! failure, 3 sweep finished with failed rows.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lls_core::eval::Mode;

use crate::commands::Failure;
use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "lls", version, about = "Latent label shift identification pipeline")]
struct Cli {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample an instance; writes dataset.csv (labels hidden), truth.json and config.json.
    Generate,
    /// Train the domain discriminator on a dataset's train and valid splits.
    TrainDisc {
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the full pipeline on a dataset and predict its test split.
    Run {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Read the ground-truth file and score the predictions.
        #[arg(long)]
        with_metrics: bool,
        /// Ground-truth file; defaults to truth.json next to the dataset.
        #[arg(long, requires = "with_metrics")]
        truth: Option<PathBuf>,
    },
    /// Run the configured grid over all seeds.
    Sweep {
        /// Worker threads; defaults to all cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run the identifiability checks and report each one.
    Selftest {
        /// Corrupt an intermediate quantity to confirm failures are reported.
        #[arg(long, value_enum)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Oracle,
    Learned,
    Naive,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Oracle => Mode::Oracle,
            ModeArg::Learned => Mode::Learned,
            ModeArg::Naive => Mode::Naive,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FaultArg {
    RankCollapse,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cfg = match RunConfig::load(cli.config.as_deref()) {
        Ok(cfg) => cfg.with_seed(cli.seed),
        Err(e) => return report(Failure::Validation(e)),
    };
    let out = cli.out;
    let result = match cli.command {
        Command::Generate => commands::generate(&cfg, &out),
        Command::TrainDisc { data } => commands::train_disc(&cfg, &data, &out),
        Command::Run {
            data,
            mode,
            with_metrics,
            truth,
        } => {
            let mut cfg = cfg;
            if let Some(m) = mode {
                cfg.mode = m.into();
            }
            let truth = with_metrics.then(|| {
                truth.unwrap_or_else(|| data.parent().unwrap_or(std::path::Path::new(".")).join("truth.json"))
            });
            commands::run(&cfg, &data, &out, truth.as_deref())
        }
        Command::Sweep { jobs } => commands::sweep(&cfg, &out, jobs),
        Command::Selftest { inject_fault } => {
            let mut cfg = cfg;
            if let Some(FaultArg::RankCollapse) = inject_fault {
                cfg.selftest.fault = Some(lls_core::selftest::Fault::RankCollapse);
            }
            commands::selftest(&cfg, &out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    let code = f.exit_code();
    match f {
        Failure::Validation(e) => eprintln!("error: invalid input: {e:#}"),
        Failure::Runtime(e) => eprintln!("error: {e:#}"),
        Failure::PartialSweep { failed, total } => eprintln!("error: {failed} of {total} sweep rows failed"),
        Failure::Checks { failed } => eprintln!("error: {failed} self-test checks failed"),
    }
    ExitCode::from(code)
}
