//! Command-line harness: `tune` runs one configured model, `mnist` runs the
//! four-model experiment ladder, `gradcheck` runs the finite-difference
//! verification suites.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
//! failure.

mod config;
mod errors;
mod experiment;
mod idx;
mod report;
mod split;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, Model, Scale, TunerSettings};
use errors::{CliError, Result};
use report::{LadderReport, RunReport};

#[derive(Parser)]
#[command(name = "lsqtune", version, about = "Hyper-parameter tuning harness for least squares models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one model from a JSON config file.
    Tune(TuneArgs),
    /// Run the four-model ladder on MNIST-format data.
    Mnist(MnistArgs),
    /// Run the finite-difference verification suites.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct TuneArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output path.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Enable early stopping on a monitor split.
    #[arg(long)]
    early_stopping: bool,
}

#[derive(Args)]
struct MnistArgs {
    /// Directory with the IDX quartet (or train.csv/test.csv).
    #[arg(long, default_value = "data/mnist")]
    data_dir: PathBuf,
    /// Dataset scale: small (3500/1500) or full (35000/15000).
    #[arg(long, default_value = "small")]
    scale: Scale,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the ladder report JSON (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    early_stopping: bool,
    /// Tuner iteration budget per model.
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn write_json(path: Option<&PathBuf>, json: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, json)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", p.display()))),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn run_tune(args: &TuneArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.output {
        cfg.output_path = Some(out.display().to_string());
    }
    if args.early_stopping {
        cfg.early_stopping = true;
    }
    let data = experiment::load_data(std::path::Path::new(&cfg.data_path))?;
    let report = experiment::run_experiment(&cfg, &data)?;
    summarize(&report);
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_json(cfg.output_path.clone().map(PathBuf::from).as_ref(), &json)
}

fn run_mnist(args: &MnistArgs) -> Result<()> {
    let data = experiment::load_data(&args.data_dir)?;
    let mut runs = Vec::new();
    for model in Model::LADDER {
        let cfg = ExperimentConfig {
            data_path: args.data_dir.display().to_string(),
            dataset_scale: args.scale,
            model,
            seed: args.seed,
            tuner: TunerSettings { max_iter: args.max_iter, ..TunerSettings::default() },
            early_stopping: args.early_stopping,
            output_path: None,
        };
        let report = experiment::run_experiment(&cfg, &data)?;
        summarize(&report);
        runs.push(report);
    }
    let json = serde_json::to_string_pretty(&LadderReport { runs }).expect("report serializes");
    write_json(args.output.as_ref(), &json)
}

fn summarize(report: &RunReport) {
    let f = &report.final_metrics;
    eprintln!(
        "{}: validation loss {:.4}, test error {:.2}%, {} hyper-parameters, {} accepted / {} iterations, {:.1}s",
        report.config.model,
        f.validation_loss,
        100.0 * f.test_error,
        f.hyperparam_count,
        report.trace.iter().filter(|t| t.accepted).count(),
        report.trace.len(),
        f.wall_seconds,
    );
}

fn run_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let suites = [
        lsqtune::gradcheck::dense_suite(args.seed),
        lsqtune::gradcheck::sparse_suite(args.seed.wrapping_add(1)),
        lsqtune::gradcheck::eq_suite(args.seed.wrapping_add(2)),
        lsqtune::gradcheck::pipeline_suite(args.seed.wrapping_add(3)),
    ];
    let mut all_ok = true;
    for s in &suites {
        println!(
            "gradcheck {:<22} {} problems, max relative error {:.3e} (tolerance {:.1e}) {}",
            s.label,
            s.problems,
            s.max_rel_err,
            s.tolerance,
            if s.passed() { "PASS" } else { "FAIL" }
        );
        all_ok &= s.passed();
    }
    if all_ok {
        Ok(())
    } else {
        Err(CliError::Numerical(lsqtune::Error::AdjointInconsistent {
            relative_error: suites
                .iter()
                .map(|s| s.max_rel_err)
                .fold(0.0, f64::max),
        }))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes, anything else is a
            // configuration error
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match &cli.command {
        Command::Tune(args) => run_tune(args),
        Command::Mnist(args) => run_mnist(args),
        Command::Gradcheck(args) => run_gradcheck(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
