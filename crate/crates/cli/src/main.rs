//! Command-line front end: one subcommand per experiment kind.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lmc::runner::{run_experiment_with, ExperimentConfig, ExperimentKind, ExtremeSparsity, RunOptions, RunRecord};
use lmc::Error;

#[derive(Debug, Parser)]
#[command(name = "lmc", version, about = "Linear mode connectivity and IMP experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train dense networks from each init seed.
    Train(RunArgs),
    /// Dense instability at every rewind step.
    Instability(RunArgs),
    /// IMP subnetworks and their baselines.
    Imp(RunArgs),
    /// Dense and sparse instability plus sparsity selection.
    Sweep(RunArgs),
    /// Everything the config asks for, then its pass/fail checks.
    Report(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory, replacing `out_dir` from the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Replicates trained in parallel.
    #[arg(long, value_name = "N", default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    threads: u16,
    /// Derive every seed from this one instead of using the config's.
    #[arg(long, value_name = "SEED")]
    seed_override: Option<u64>,
    /// No progress lines on stderr.
    #[arg(long, short)]
    quiet: bool,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CHECKS: u8 = 3;

fn load(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::from_file(&args.config).map_err(|e| match e {
        Error::Io { path, source } => Error::Config {
            path: path.display().to_string(),
            message: source.to_string(),
        },
        e => e,
    })?;
    match config.kind {
        Some(k) if k != kind => {
            return Err(Error::Config {
                path: "kind".into(),
                message: format!("config is for `{}` but the subcommand is `{}`", k.as_str(), kind.as_str()),
            })
        }
        _ => config.kind = Some(kind),
    }
    if let Some(out) = &args.out {
        config.out_dir = Some(out.clone());
    }
    if let Some(seed) = args.seed_override {
        config.override_seeds(seed);
    }
    config.validate()?;
    Ok(config)
}

fn print_summary(record: &RunRecord) {
    println!("{} run written to {}", record.kind.as_str(), record.out_dir.display());
    println!("config hash {}", record.config_hash);
    println!("full accuracy {:.4}", record.full_accuracy);
    for r in &record.reports {
        let level = if r.level.is_empty() { String::new() } else { format!(" {}", r.level) };
        println!(
            "{}{} k={} density={:.4} instability={:.4}±{:.4} error={:.4}±{:.4} stable={} matching={}",
            r.provenance,
            level,
            r.row.k,
            r.row.density,
            r.row.mean_instability,
            r.row.std_instability,
            r.row.mean_error,
            r.row.std_error,
            r.row.stable,
            r.row.matching
        );
    }
    match record.extreme_sparsity {
        Some(ExtremeSparsity::Matching { density }) => println!("extreme matching density {density:.4}"),
        Some(ExtremeSparsity::None) => println!("no matching density"),
        None => {}
    }
    for c in &record.checks {
        let k = c.k.map(|k| format!(" k={k}")).unwrap_or_default();
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status} {}{k}: {:.4} against {:.4}", c.name, c.value, c.threshold);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Train(a) => (ExperimentKind::Train, a),
        Command::Instability(a) => (ExperimentKind::Instability, a),
        Command::Imp(a) => (ExperimentKind::Imp, a),
        Command::Sweep(a) => (ExperimentKind::Sweep, a),
        Command::Report(a) => (ExperimentKind::Report, a),
    };
    let result = load(kind, args).and_then(|config| {
        run_experiment_with(
            &config,
            RunOptions {
                threads: usize::from(args.threads),
                verbose: !args.quiet,
            },
        )
    });
    match result {
        Ok(record) => {
            print_summary(&record);
            if kind == ExperimentKind::Report && !record.checks_passed() {
                ExitCode::from(EXIT_CHECKS)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Config { .. }) { EXIT_CONFIG } else { EXIT_FAILURE })
        }
    }
}
