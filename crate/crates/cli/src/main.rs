//! Command-line front end for the acquisition simulator.
//!
//! A run is described either by a named preset (plus override flags) or by a
//! previously written `config.json` echo, and produces per-repetition CSV and
//! JSON outputs plus a seed-averaged aggregate curve in `--out`.

mod presets;

use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser};
use thiserror::Error;

use imparq::arq::ArqError;
use imparq::datasets::{DataError, DataSource};
use imparq::simulator::{
    aggregate, run_repetitions, write_aggregate_csv, write_run_outputs, ExperimentConfig, RunLog,
    SimError,
};

use presets::{PolicyChoice, PresetName, PresetOptions, DEFAULT_PC, DEFAULT_SNR_DB,
    DEFAULT_THETA_SNR_DB};

/// Importance-aware retransmission simulator for wireless data acquisition.
#[derive(Debug, Parser)]
#[command(name = "imparq", version, about)]
struct Cli {
    /// Experiment preset to run.
    #[arg(long, value_enum)]
    preset: Option<PresetName>,

    /// Retransmission policy variant of the preset [default: importance].
    #[arg(long, value_enum)]
    policy: Option<PolicyChoice>,

    /// Replay the exact experiment echoed into a previous run's config.json.
    /// Cannot be combined with --preset or override flags.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Average transmit SNR in dB [default: 4].
    #[arg(long, value_name = "FLOAT")]
    snr_db: Option<f64>,

    /// Target alignment probability p_c in (0.5, 1) for SVM importance
    /// policies [default: 0.8].
    #[arg(long, value_name = "FLOAT")]
    pc: Option<f64>,

    /// Retransmission SNR cap (and channel-aware target) in dB [default: 25].
    #[arg(long, value_name = "FLOAT")]
    theta_snr_db: Option<f64>,

    /// Transmission budget in symbol blocks, overriding the preset.
    #[arg(long, value_name = "INT")]
    budget: Option<usize>,

    /// Master seed; repetition seeds derive from it [default: 0].
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,

    /// Number of repetitions, overriding the preset.
    #[arg(long, value_name = "INT")]
    reps: Option<usize>,

    /// Output directory for CSV/JSON results.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    out: PathBuf,

    /// Directory holding the four MNIST IDX files. Falls back to the
    /// IMPARQ_MNIST_DIR environment variable, then to data/mnist.
    #[arg(long, value_name = "DIR")]
    mnist: Option<PathBuf>,

    /// Shrink the preset to a laptop-sized run (fewer repetitions, smaller
    /// budget, batched retraining).
    #[arg(long)]
    desk_scale: bool,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Arq(#[from] ArqError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{verb} {path}: {source}")]
    Io {
        verb: &'static str,
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    BadConfig {
        path: PathBuf,
        source: serde_json::Error,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(error) = run(cli) {
        match error {
            CliError::Usage(message) => Cli::command()
                .error(clap::error::ErrorKind::InvalidValue, message)
                .exit(),
            other => {
                eprintln!("error: {other}");
                std::process::exit(1);
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let experiment = experiment_from(&cli)?;
    if let DataSource::MnistIdx { dir } = &experiment.dataset.source {
        ensure_mnist_present(dir)?;
    }
    let data = experiment.dataset.materialize()?;

    std::fs::create_dir_all(&cli.out).map_err(|source| CliError::Io {
        verb: "creating",
        path: cli.out.clone(),
        source,
    })?;
    let config_path = cli.out.join("config.json");
    let echo = serde_json::to_string_pretty(&experiment).expect("experiment configs serialize");
    std::fs::write(&config_path, echo).map_err(|source| CliError::Io {
        verb: "writing",
        path: config_path.clone(),
        source,
    })?;

    let simulation = &experiment.simulation;
    println!(
        "average transmit SNR {:.4} dB (linear {:.4}); policy {}, model {}, task {}",
        simulation.channel.average_snr_db(),
        simulation.channel.average_snr(),
        simulation.arq.policy,
        simulation.model_kind,
        experiment.dataset.task.slug(),
    );
    println!(
        "budget {} blocks x {} repetitions from master seed {:#x}",
        simulation.budget_blocks, simulation.repetitions, simulation.rng_seed,
    );

    let logs = run_repetitions(simulation, &data)?;
    let mut written = 1usize; // config.json
    for log in &logs {
        written += write_run_outputs(&experiment, log, &cli.out)?.len();
        println!("{}", run_line(log));
    }
    let curves = aggregate(&logs)?;
    let aggregate_path = cli.out.join("aggregate.csv");
    write_aggregate_csv(&curves, &aggregate_path)?;
    written += 1;
    println!("wrote {written} files to {}", cli.out.display());
    Ok(())
}

fn run_line(log: &RunLog) -> String {
    let metrics = &log.final_metrics;
    let mut line = format!(
        "seed {:#018x}: accepted {} of {} blocks, final accuracy {:.4}",
        log.seed,
        log.accepted.len(),
        log.blocks_consumed,
        metrics.accuracy,
    );
    if let Some(imbalanced) = &metrics.imbalanced {
        line.push_str(&format!(
            ", g-mean {:.4}, f-measure {:.4}",
            imbalanced.g_mean, imbalanced.f_measure
        ));
    }
    line
}

/// Resolves the preset, override flags and config replay into one experiment.
fn experiment_from(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    if let Some(path) = &cli.config {
        let overrides = [
            cli.preset.is_some(),
            cli.policy.is_some(),
            cli.snr_db.is_some(),
            cli.pc.is_some(),
            cli.theta_snr_db.is_some(),
            cli.budget.is_some(),
            cli.seed.is_some(),
            cli.reps.is_some(),
            cli.mnist.is_some(),
            cli.desk_scale,
        ];
        if overrides.contains(&true) {
            return Err(CliError::Usage(
                "--config replays a saved experiment exactly and cannot be combined with \
                 --preset, --policy or override flags"
                    .into(),
            ));
        }
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            verb: "reading",
            path: path.clone(),
            source,
        })?;
        let experiment: ExperimentConfig =
            serde_json::from_str(&text).map_err(|source| CliError::BadConfig {
                path: path.clone(),
                source,
            })?;
        experiment.simulation.arq.validate()?;
        return Ok(experiment);
    }

    let Some(name) = cli.preset else {
        return Err(CliError::Usage(
            "pass --preset NAME (or --config FILE to replay a saved run)".into(),
        ));
    };
    let policy = cli.policy.unwrap_or(PolicyChoice::Importance);

    if cli.pc.is_some() {
        let entropy_model = matches!(
            name,
            PresetName::SoftmaxEntropy | PresetName::ImbalancedSoftmax
        );
        if policy != PolicyChoice::Importance || entropy_model {
            return Err(CliError::Usage(
                "--pc only shapes SVM importance thresholds; it conflicts with this \
                 preset/policy combination"
                    .into(),
            ));
        }
    }
    if let Some(pc) = cli.pc {
        if !(pc > 0.5 && pc < 1.0) {
            return Err(CliError::Usage(format!(
                "--pc {pc} is out of range: the alignment probability must lie in (0.5, 1)"
            )));
        }
    }
    if cli.theta_snr_db.is_some() && policy == PolicyChoice::None {
        return Err(CliError::Usage(
            "--theta-snr-db has no effect when nothing is retransmitted; drop it or pick \
             --policy importance or channel"
                .into(),
        ));
    }
    for (flag, value) in [("--snr-db", cli.snr_db), ("--theta-snr-db", cli.theta_snr_db)] {
        if let Some(v) = value {
            if !v.is_finite() {
                return Err(CliError::Usage(format!("{flag} must be finite, got {v}")));
            }
        }
    }

    let options = PresetOptions {
        policy,
        snr_db: cli.snr_db.unwrap_or(DEFAULT_SNR_DB),
        pc: cli.pc.unwrap_or(DEFAULT_PC),
        theta_snr_db: cli.theta_snr_db.unwrap_or(DEFAULT_THETA_SNR_DB),
        mnist_dir: mnist_dir(cli),
        seed: cli.seed.unwrap_or(0),
        desk_scale: cli.desk_scale,
    };
    let mut experiment = presets::build(name, &options)?;
    if let Some(budget) = cli.budget {
        experiment.simulation.budget_blocks = budget;
    }
    if let Some(reps) = cli.reps {
        experiment.simulation.repetitions = reps;
    }
    Ok(experiment)
}

fn mnist_dir(cli: &Cli) -> PathBuf {
    cli.mnist
        .clone()
        .or_else(|| std::env::var_os("IMPARQ_MNIST_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

fn ensure_mnist_present(dir: &Path) -> Result<(), CliError> {
    let probe = dir.join("train-images-idx3-ubyte");
    if !probe.is_file() {
        return Err(CliError::Usage(format!(
            "no MNIST IDX files under {}; pass --mnist DIR or set IMPARQ_MNIST_DIR",
            dir.display()
        )));
    }
    Ok(())
}
