//! `lack` binary: scenario experiments, figure datasets, trace analysis
//! from a warden's viewpoint, and the acceptance self-test.
//!
//! Exit codes: 0 on success, 1 on configuration errors (bad flags, malformed
//! scenarios or input files, unknown figure ids), 2 on runtime errors
//! (simulation or I/O failures, a failing self-test).

mod figures;

use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lack_core::duration::calibrate_scale;
use lack_core::quality::MosParams;
use lack_core::runner::run_experiment;
use lack_core::selftest;
use lack_core::sim::Scenario;
use lack_core::warden::{
    active_filter, duration_distribution_test, loss_fractions, passive_loss_scan,
    read_packets_csv, read_summaries_csv, DurationReference, FilterAction, PassiveThreshold,
};

#[derive(Parser)]
#[command(
    name = "lack",
    version,
    about = "Packet-delay steganography toolkit: batch call simulation, analytic datasets, and steganalysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario experiment and write its CSV artifacts.
    Run(RunArgs),
    /// Write the analytic dataset behind a numbered figure.
    Figure(FigureArgs),
    /// Analyze experiment CSVs the way a warden would.
    Warden(WardenArgs),
    /// Run the acceptance battery; one PASS/FAIL line per criterion.
    Selftest,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario description (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Directory the CSV artifacts are written into (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the scenario's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the scenario's replication count.
    #[arg(long)]
    replications: Option<u32>,
}

#[derive(Args)]
struct FigureArgs {
    /// Figure number to tabulate.
    #[arg(long, value_name = "ID")]
    figure_id: u8,
    /// Directory the dataset is written into (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct WardenArgs {
    /// Per-call summary CSV (the `calls.csv` written by `lack run`).
    #[arg(long)]
    calls: Option<PathBuf>,
    /// Clean-cohort summary CSV used to calibrate the sigma rule.
    #[arg(long, requires = "calls")]
    baseline: Option<PathBuf>,
    /// Flag calls whose total loss fraction exceeds this value.
    #[arg(long, requires = "calls", conflicts_with = "sigma_multiplier")]
    threshold: Option<f64>,
    /// Flag calls above baseline mean + K standard deviations.
    #[arg(long, value_name = "K", requires = "baseline")]
    sigma_multiplier: Option<f64>,
    /// Reference Weibull shape for the call-duration distribution test.
    #[arg(long, requires = "calls", requires = "ks_mean")]
    ks_shape: Option<f64>,
    /// Reference mean call duration in seconds.
    #[arg(long, requires = "ks_shape")]
    ks_mean: Option<f64>,
    /// Significance level of the distribution test.
    #[arg(long, default_value_t = 0.05)]
    ks_alpha: f64,
    /// Packet trace CSV (the `packets.csv` written by `lack run`).
    #[arg(long, requires = "assumed_buffer_ms")]
    packets: Option<PathBuf>,
    /// Jitter-buffer allowance in ms the active filter assumes.
    #[arg(long, requires = "packets")]
    assumed_buffer_ms: Option<u32>,
    /// Drop over-delayed packets instead of erasing their payload.
    #[arg(long, requires = "packets")]
    drop: bool,
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn config(e: impl std::fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Figure(args) => figure(args),
        Command::Warden(args) => warden(args),
        Command::Selftest => run_selftest(),
    }
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let mut scenario = Scenario::from_path(&args.scenario).map_err(CliError::config)?;
    if let Some(seed) = args.seed {
        scenario.experiment.master_seed = seed;
    }
    if let Some(reps) = args.replications {
        if reps == 0 {
            return Err(CliError::Config("replications must be at least 1".into()));
        }
        scenario.experiment.replications = reps;
    }
    std::fs::create_dir_all(&args.out).map_err(CliError::runtime)?;
    let output = run_experiment(&scenario, &args.out).map_err(CliError::runtime)?;
    println!(
        "ran {} calls (seed {}); wrote:",
        output.total_calls, scenario.experiment.master_seed
    );
    for file in &output.files {
        println!("  {}", file.display());
    }
    Ok(())
}

fn figure(args: FigureArgs) -> Result<(), CliError> {
    if !figures::is_supported(args.figure_id) {
        return Err(CliError::config(figures::UnknownFigure(args.figure_id)));
    }
    std::fs::create_dir_all(&args.out).map_err(CliError::runtime)?;
    let paths = figures::write_figure(args.figure_id, &args.out).map_err(CliError::runtime)?;
    for path in paths {
        println!("{}", path.display());
    }
    Ok(())
}

fn warden(args: WardenArgs) -> Result<(), CliError> {
    let mut analyses = 0;

    if let Some(calls_path) = &args.calls {
        let file = File::open(calls_path)
            .map_err(|e| CliError::Config(format!("{}: {e}", calls_path.display())))?;
        let summaries = read_summaries_csv(file).map_err(CliError::config)?;
        let losses = loss_fractions(&summaries);

        if args.threshold.is_some() || args.sigma_multiplier.is_some() {
            let baseline_losses = match &args.baseline {
                Some(path) => {
                    let file = File::open(path)
                        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                    Some(loss_fractions(&read_summaries_csv(file).map_err(CliError::config)?))
                }
                None => None,
            };
            let rule = match args.threshold {
                Some(t) => PassiveThreshold::Absolute(t),
                None => PassiveThreshold::MeanPlusSigma {
                    multiplier: args.sigma_multiplier.unwrap_or(2.0),
                },
            };
            let report = passive_loss_scan(&losses, baseline_losses.as_deref(), rule)
                .map_err(CliError::config)?;
            println!(
                "passive scan: flagged {} of {} calls (loss threshold {})",
                report.flagged,
                report.flags.len(),
                report.threshold
            );
            analyses += 1;
        }

        if let (Some(shape), Some(mean)) = (args.ks_shape, args.ks_mean) {
            let model = calibrate_scale(shape, mean).map_err(CliError::config)?;
            let durations: Vec<f64> = summaries.iter().map(|s| s.duration_s).collect();
            let report =
                duration_distribution_test(&durations, DurationReference::Weibull(&model), args.ks_alpha)
                    .map_err(CliError::config)?;
            println!(
                "duration test: statistic {:.4} vs critical {:.4} over {} calls (alpha {}) -> {}",
                report.statistic,
                report.critical,
                report.n,
                report.alpha,
                if report.flagged { "FLAGGED" } else { "consistent" }
            );
            analyses += 1;
        }
    }

    if let Some(packets_path) = &args.packets {
        let buffer = args
            .assumed_buffer_ms
            .expect("clap enforces --assumed-buffer-ms together with --packets");
        let file = File::open(packets_path)
            .map_err(|e| CliError::Config(format!("{}: {e}", packets_path.display())))?;
        let events = read_packets_csv(file).map_err(CliError::config)?;
        let action = if args.drop { FilterAction::Drop } else { FilterAction::Erase };
        let (_, report) =
            active_filter(&events, buffer, action, &MosParams::default()).map_err(CliError::config)?;
        println!(
            "active filter at {} ms: destroyed {} covert bits in {} packets, \
             {} played packets as collateral (MOS penalty {:.4}){}",
            report.assumed_buffer_ms,
            report.steg_bits_destroyed,
            report.packets_affected,
            report.collateral_played,
            report.mos_penalty,
            if report.flagged { "; covert traffic detected" } else { "" }
        );
        analyses += 1;
    }

    if analyses == 0 {
        return Err(CliError::Config(
            "nothing to analyze: pass --calls with --threshold/--sigma-multiplier or \
             --ks-shape/--ks-mean, or --packets with --assumed-buffer-ms"
                .into(),
        ));
    }
    Ok(())
}

fn run_selftest() -> Result<(), CliError> {
    let outcomes = selftest::run_all();
    let mut failed = 0;
    for outcome in &outcomes {
        println!("{outcome}");
        if !outcome.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::Runtime(format!(
            "{failed} of {} acceptance criteria failed",
            outcomes.len()
        )));
    }
    println!("all {} acceptance criteria passed", outcomes.len());
    Ok(())
}
