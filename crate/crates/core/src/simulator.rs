//! The acquisition event loop and its outputs.
//!
//! A run owns one seeded RNG and proceeds sample by sample: the scheduled
//! device (round-robin) transmits a fresh sample, the server combines all
//! attempts received so far, measures the estimate's uncertainty under the
//! current model snapshot, and the configured policy decides between
//! accepting the estimate into the training pool and requesting one more
//! block. Every transmitted block counts against the budget; a sample caught
//! in flight when the budget runs out is abandoned. The model is retrained
//! (warm-started) every `retrain_cadence` acceptances and never mid-sample;
//! test metrics are recorded every `metric_cadence` acceptances, keyed by
//! blocks spent so far, which makes the metric-versus-budget curves.
//!
//! Budget is counted in symbol blocks: one transmission of one sample costs
//! one unit regardless of the feature dimension.
//!
//! Accepted samples enter the pool as their noisy combined estimates paired
//! with the true labels; the clean features never reach the server.
//!
//! Repetitions are independent runs whose seeds derive from the master seed
//! as `splitmix64(master ^ index)`, so they can execute in parallel and in
//! any order without changing results. `SimulationConfig::rng_seed` drives
//! everything in a run, including the channel draws (the seed inside
//! `ChannelConfig` only matters when the channel is used standalone).

use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arq::{
    decide_binary_svm, decide_channel_aware, decide_entropy, decide_multiclass_svm,
    distance_uncertainty, entropy_uncertainty, multiclass_distance_uncertainty, ArqConfig,
    ArqError, Decision, DecisionTrace, PolicyKind, Uncertainty,
};
use crate::channel::{self, ChannelConfig, ChannelError, CombinedSample};
use crate::classifiers::{
    train_binary_svm_warm, train_multiclass_svm, train_softmax, Sample, SoftmaxTrainConfig,
    SvmTrainConfig, TrainError, TrainedModel,
};
use crate::datasets::{partition, DataError, DatasetSpec, Task, TaskData};

/// Number of uncertainty bins in the stored retransmission histogram.
const HISTOGRAM_BINS: usize = 10;

/// Errors from configuring or executing a simulation.
#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Arq(#[from] ArqError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("policy {policy} cannot drive a {model} model over {classes} classes")]
    PolicyModelMismatch {
        policy: PolicyKind,
        model: ModelKind,
        classes: usize,
    },
    #[error("cannot evaluate on an empty test set")]
    EmptyTestSet,
    #[error("cannot aggregate: {0}")]
    MismatchedLogs(String),
    #[error("failed to write {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Which model family the server trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Binary soft-margin SVM for two classes, one-vs-one SVM otherwise.
    Svm,
    /// Softmax probabilistic classifier.
    Softmax,
}

impl ModelKind {
    /// Short name used in output file names.
    pub fn slug(self) -> &'static str {
        match self {
            ModelKind::Svm => "svm",
            ModelKind::Softmax => "softmax",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.slug())
    }
}

/// Everything one run needs besides the data itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub channel: ChannelConfig,
    pub arq: ArqConfig,
    pub model_kind: ModelKind,
    /// Transmission budget in symbol blocks.
    pub budget_blocks: usize,
    /// Retrain after every this many acceptances.
    pub retrain_cadence: usize,
    /// Record test metrics after every this many acceptances.
    pub metric_cadence: usize,
    /// Independent runs averaged by [`aggregate`].
    pub repetitions: usize,
    /// Master seed; drives partitioning, scheduling and the channel.
    pub rng_seed: u64,
    /// Devices the training pool is sharded over.
    pub device_count: usize,
    pub svm: SvmTrainConfig,
    pub softmax: SoftmaxTrainConfig,
}

impl SimulationConfig {
    /// Checks the config against itself and the task's class count.
    pub fn validate(&self, class_count: usize) -> Result<(), SimError> {
        self.channel.validate()?;
        self.arq.validate()?;
        self.svm.validate()?;
        self.softmax.validate()?;
        for (name, value) in [
            ("budget_blocks", self.budget_blocks),
            ("retrain_cadence", self.retrain_cadence),
            ("metric_cadence", self.metric_cadence),
            ("repetitions", self.repetitions),
            ("device_count", self.device_count),
        ] {
            if value == 0 {
                return Err(SimError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        let compatible = match self.arq.policy {
            PolicyKind::ImportanceBinarySvm => {
                self.model_kind == ModelKind::Svm && class_count == 2
            }
            PolicyKind::ImportanceMulticlassSvm => {
                self.model_kind == ModelKind::Svm && class_count > 2
            }
            PolicyKind::ImportanceEntropy => self.model_kind == ModelKind::Softmax,
            PolicyKind::ChannelAware | PolicyKind::NoRetransmission => true,
        };
        if !compatible {
            return Err(SimError::PolicyModelMismatch {
                policy: self.arq.policy,
                model: self.model_kind,
                classes: class_count,
            });
        }
        Ok(())
    }
}

/// A full experiment description; serializing it is the config echo that
/// reproduces a run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub simulation: SimulationConfig,
    pub dataset: DatasetSpec,
}

/// Binary confusion counts with class 1 as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positive: usize,
    pub false_negative: usize,
    pub false_positive: usize,
    pub true_negative: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.true_positive + self.false_negative + self.false_positive + self.true_negative
    }
}

/// Metrics that matter when the positive class is rare.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImbalancedMetrics {
    pub confusion: ConfusionCounts,
    pub recall: f64,
    pub specificity: f64,
    /// `None` when the model never predicts the positive class.
    pub precision: Option<f64>,
    /// Geometric mean of recall and specificity.
    pub g_mean: f64,
    /// Harmonic mean of precision and recall; 0 when precision is undefined.
    pub f_measure: f64,
}

/// Test-set metrics; the imbalanced extras appear only for imbalanced tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub imbalanced: Option<ImbalancedMetrics>,
}

/// Metrics computed from predicted and true labels directly.
pub fn metrics_from_predictions(
    predictions: &[usize],
    labels: &[usize],
    task: Task,
) -> Result<Metrics, SimError> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(SimError::EmptyTestSet);
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    let accuracy = correct as f64 / labels.len() as f64;

    let imbalanced = task.is_imbalanced().then(|| {
        let mut confusion = ConfusionCounts::default();
        for (&p, &l) in predictions.iter().zip(labels) {
            match (l == 1, p == 1) {
                (true, true) => confusion.true_positive += 1,
                (true, false) => confusion.false_negative += 1,
                (false, true) => confusion.false_positive += 1,
                (false, false) => confusion.true_negative += 1,
            }
        }
        let positives = confusion.true_positive + confusion.false_negative;
        let negatives = confusion.true_negative + confusion.false_positive;
        let recall = confusion.true_positive as f64 / positives as f64;
        let specificity = confusion.true_negative as f64 / negatives as f64;
        let predicted_positive = confusion.true_positive + confusion.false_positive;
        let precision =
            (predicted_positive > 0).then(|| confusion.true_positive as f64 / predicted_positive as f64);
        let f_measure = match precision {
            Some(p) if p + recall > 0.0 => 2.0 * p * recall / (p + recall),
            _ => 0.0,
        };
        ImbalancedMetrics {
            confusion,
            recall,
            specificity,
            precision,
            g_mean: (recall * specificity).sqrt(),
            f_measure,
        }
    });

    Ok(Metrics {
        accuracy,
        imbalanced,
    })
}

/// Runs the model over the test set and summarizes the outcome. Imbalanced
/// tasks additionally report recall, specificity, precision, G-mean and
/// F-measure with class 1 positive.
pub fn evaluate(model: &TrainedModel, test: &[Sample], task: Task) -> Result<Metrics, SimError> {
    if test.is_empty() {
        return Err(SimError::EmptyTestSet);
    }
    let predictions = test
        .iter()
        .map(|s| model.predict(&s.features))
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    metrics_from_predictions(&predictions, &labels, task)
}

/// One accepted sample, as it ended up in the training pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedRecord {
    /// Index into the training split.
    pub sample_id: usize,
    pub device_id: usize,
    /// Total transmissions (T) the sample took.
    pub attempts: usize,
    /// Effective SNR of the accepted combined estimate.
    pub effective_snr: f64,
    /// Uncertainty measured at the first attempt.
    pub first_uncertainty: Uncertainty,
    /// Uncertainty of the estimate that entered the pool.
    pub final_uncertainty: Uncertainty,
}

/// One transmitted block and the decision it led to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    /// Global block index, 1-based; doubles as budget spent so far.
    pub block: usize,
    pub sample_id: usize,
    /// Attempt number within this sample's acquisition, 1-based.
    pub attempt: usize,
    #[serde(flatten)]
    pub trace: DecisionTrace,
}

/// One point of the metric-versus-budget curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub blocks_spent: usize,
    pub accepted: usize,
    pub metrics: Metrics,
}

/// One uncertainty bin of the retransmission histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub samples: usize,
    pub mean_attempts: f64,
}

/// Everything one run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub policy: PolicyKind,
    pub model_kind: ModelKind,
    pub task: Task,
    pub budget_blocks: usize,
    /// Blocks actually transmitted; equals the budget unless the devices ran
    /// out of data first.
    pub blocks_consumed: usize,
    /// Blocks spent on the sample that was in flight at budget exhaustion.
    pub abandoned_attempts: usize,
    pub data_exhausted: bool,
    pub accepted: Vec<AcceptedRecord>,
    pub decisions: Vec<DecisionRow>,
    pub curve: Vec<CurvePoint>,
    /// Mean transmission count per final-uncertainty bin.
    pub histogram: Vec<HistogramBin>,
    pub final_metrics: Metrics,
    pub final_model: TrainedModel,
}

impl RunLog {
    /// Base name for this run's output files.
    pub fn basename(&self) -> String {
        format!(
            "{}_{}_{}_{}",
            self.policy.slug(),
            self.model_kind.slug(),
            self.task.slug(),
            self.seed
        )
    }
}

/// 64-bit finalizer used to derive independent per-repetition seeds.
fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of repetition `rep` under master seed `master`.
pub fn repetition_seed(master: u64, rep: usize) -> u64 {
    splitmix64(master ^ rep as u64)
}

fn train_model(
    cfg: &SimulationConfig,
    pool: &[Sample],
    class_count: usize,
    warm: Option<&TrainedModel>,
) -> Result<TrainedModel, SimError> {
    let model = match cfg.model_kind {
        ModelKind::Svm if class_count == 2 => {
            let prev = match warm {
                Some(TrainedModel::BinarySvm(fit)) => Some(fit),
                _ => None,
            };
            TrainedModel::BinarySvm(train_binary_svm_warm(pool, &cfg.svm, prev)?)
        }
        ModelKind::Svm => {
            let prev = match warm {
                Some(TrainedModel::MulticlassSvm(m)) => Some(m),
                _ => None,
            };
            TrainedModel::MulticlassSvm(train_multiclass_svm(pool, class_count, &cfg.svm, prev)?)
        }
        ModelKind::Softmax => {
            let prev = match warm {
                Some(TrainedModel::Softmax(m)) => Some(m),
                _ => None,
            };
            TrainedModel::Softmax(train_softmax(pool, class_count, prev, &cfg.softmax)?)
        }
    };
    Ok(model)
}

/// Uncertainty of `x` under `model`, using the model's native measure.
pub fn measured_uncertainty(model: &TrainedModel, x: &[f64]) -> Result<Uncertainty, SimError> {
    match model {
        TrainedModel::BinarySvm(fit) => Ok(distance_uncertainty(fit.boundary.score(x)?)),
        TrainedModel::MulticlassSvm(m) => {
            let (class, scores) = m.predict(x)?;
            Ok(multiclass_distance_uncertainty(&scores, class, m.coding()))
        }
        TrainedModel::Softmax(m) => Ok(Uncertainty::Finite(entropy_uncertainty(&m.posterior(x)?)?)),
    }
}

fn decide_for(
    model: &TrainedModel,
    arq: &ArqConfig,
    est: &CombinedSample,
) -> Result<DecisionTrace, SimError> {
    let mismatch = || SimError::PolicyModelMismatch {
        policy: arq.policy,
        model: match model {
            TrainedModel::Softmax(_) => ModelKind::Softmax,
            _ => ModelKind::Svm,
        },
        classes: model.class_count(),
    };
    match arq.policy {
        // Importance-blind policies still log the measured uncertainty so
        // retransmission distributions stay comparable across policies.
        PolicyKind::ChannelAware | PolicyKind::NoRetransmission => {
            let mut trace = decide_channel_aware(est.effective_snr, arq);
            trace.uncertainty = measured_uncertainty(model, &est.estimate)?;
            Ok(trace)
        }
        PolicyKind::ImportanceBinarySvm => {
            let TrainedModel::BinarySvm(fit) = model else {
                return Err(mismatch());
            };
            let score = fit.boundary.score(&est.estimate)?;
            Ok(decide_binary_svm(score, est.effective_snr, arq))
        }
        PolicyKind::ImportanceMulticlassSvm => {
            let TrainedModel::MulticlassSvm(m) = model else {
                return Err(mismatch());
            };
            let (class, scores) = m.predict(&est.estimate)?;
            Ok(decide_multiclass_svm(
                &scores,
                class,
                m.coding(),
                est.effective_snr,
                arq,
            ))
        }
        PolicyKind::ImportanceEntropy => {
            let TrainedModel::Softmax(m) = model else {
                return Err(mismatch());
            };
            let posterior = m.posterior(&est.estimate)?;
            Ok(decide_entropy(&posterior, est.effective_snr, arq)?)
        }
    }
}

/// Executes one acquisition run.
pub fn run(cfg: &SimulationConfig, data: &TaskData) -> Result<RunLog, SimError> {
    cfg.validate(data.class_count)?;
    if data.test.is_empty() {
        return Err(SimError::EmptyTestSet);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let partition = partition(data, cfg.device_count, &mut rng)?;
    let mut queues: Vec<VecDeque<usize>> =
        partition.shards.into_iter().map(|s| s.queue).collect();

    let mut pool: Vec<Sample> = partition
        .seed_set
        .indices
        .iter()
        .map(|&i| data.train[i].clone())
        .collect();
    let mut model = train_model(cfg, &pool, data.class_count, None)?;

    let mut budget_left = cfg.budget_blocks;
    let mut blocks_spent = 0usize;
    let mut accepted: Vec<AcceptedRecord> = Vec::new();
    let mut decisions: Vec<DecisionRow> = Vec::new();
    let mut curve: Vec<CurvePoint> = Vec::new();
    let mut abandoned_attempts = 0usize;
    let mut data_exhausted = false;
    let mut pending_retrain = 0usize;
    let mut device_cursor = 0usize;

    'acquisition: while budget_left > 0 {
        // Next device with data, round-robin.
        let mut scanned = 0;
        let device = loop {
            if scanned == queues.len() {
                data_exhausted = true;
                break 'acquisition;
            }
            let d = device_cursor % queues.len();
            device_cursor += 1;
            scanned += 1;
            if !queues[d].is_empty() {
                break d;
            }
        };
        let sample_id = queues[device].pop_front().expect("device queue checked nonempty");
        let sample = &data.train[sample_id];

        let mut combined: Option<CombinedSample> = None;
        let mut attempts = 0usize;
        let mut first_uncertainty: Option<Uncertainty> = None;
        loop {
            if budget_left == 0 {
                abandoned_attempts = attempts;
                break 'acquisition;
            }
            budget_left -= 1;
            blocks_spent += 1;
            attempts += 1;

            let attempt = channel::transmit(&sample.features, &cfg.channel, &mut rng)?;
            let est = match combined.take() {
                None => channel::combine(std::slice::from_ref(&attempt), &cfg.channel)?,
                Some(prev) => channel::combine_incremental(&prev, &attempt, &cfg.channel)?,
            };

            let trace = decide_for(&model, &cfg.arq, &est)?;
            let first = *first_uncertainty.get_or_insert(trace.uncertainty);
            let is_accept = trace.decision == Decision::Accept;
            decisions.push(DecisionRow {
                block: blocks_spent,
                sample_id,
                attempt: attempts,
                trace: trace.clone(),
            });

            if !is_accept {
                combined = Some(est);
                continue;
            }

            accepted.push(AcceptedRecord {
                sample_id,
                device_id: device,
                attempts,
                effective_snr: est.effective_snr,
                first_uncertainty: first,
                final_uncertainty: trace.uncertainty,
            });
            pool.push(Sample::new(est.estimate, sample.label));
            pending_retrain += 1;
            if pending_retrain >= cfg.retrain_cadence {
                model = train_model(cfg, &pool, data.class_count, Some(&model))?;
                pending_retrain = 0;
            }
            if accepted.len() % cfg.metric_cadence == 0 {
                curve.push(CurvePoint {
                    blocks_spent,
                    accepted: accepted.len(),
                    metrics: evaluate(&model, &data.test, data.task)?,
                });
            }
            break;
        }
    }

    if pending_retrain > 0 {
        model = train_model(cfg, &pool, data.class_count, Some(&model))?;
    }
    let final_metrics = evaluate(&model, &data.test, data.task)?;
    match curve.last_mut() {
        Some(point) if point.blocks_spent == blocks_spent => {
            point.accepted = accepted.len();
            point.metrics = final_metrics;
        }
        _ => curve.push(CurvePoint {
            blocks_spent,
            accepted: accepted.len(),
            metrics: final_metrics,
        }),
    }

    let histogram = retransmission_histogram(&accepted, HISTOGRAM_BINS);
    Ok(RunLog {
        seed: cfg.rng_seed,
        policy: cfg.arq.policy,
        model_kind: cfg.model_kind,
        task: data.task,
        budget_blocks: cfg.budget_blocks,
        blocks_consumed: blocks_spent,
        abandoned_attempts,
        data_exhausted,
        accepted,
        decisions,
        curve,
        histogram,
        final_metrics,
        final_model: model,
    })
}

/// Runs `cfg.repetitions` independent runs with derived seeds, in parallel.
/// Results are ordered by repetition index regardless of scheduling.
pub fn run_repetitions(cfg: &SimulationConfig, data: &TaskData) -> Result<Vec<RunLog>, SimError> {
    (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| {
            let rep_cfg = SimulationConfig {
                rng_seed: repetition_seed(cfg.rng_seed, rep),
                ..cfg.clone()
            };
            run(&rep_cfg, data)
        })
        .collect()
}

/// Mean transmissions per final-uncertainty bin over the accepted samples.
/// Infinite uncertainties land in the highest bin.
pub fn retransmission_histogram(accepted: &[AcceptedRecord], bins: usize) -> Vec<HistogramBin> {
    if accepted.is_empty() || bins == 0 {
        return Vec::new();
    }
    let finite: Vec<f64> = accepted
        .iter()
        .filter_map(|r| r.final_uncertainty.finite())
        .collect();
    let lower = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let upper = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lower, upper) = if finite.is_empty() {
        (0.0, 0.0)
    } else {
        (lower, upper)
    };
    let width = (upper - lower) / bins as f64;

    let mut counts = vec![0usize; bins];
    let mut totals = vec![0usize; bins];
    for record in accepted {
        let bin = match record.final_uncertainty.finite() {
            Some(u) if width > 0.0 => (((u - lower) / width) as usize).min(bins - 1),
            Some(_) => 0,
            None => bins - 1,
        };
        counts[bin] += 1;
        totals[bin] += record.attempts;
    }
    (0..bins)
        .map(|i| HistogramBin {
            lower: lower + width * i as f64,
            upper: lower + width * (i + 1) as f64,
            samples: counts[i],
            mean_attempts: if counts[i] > 0 {
                totals[i] as f64 / counts[i] as f64
            } else {
                0.0
            },
        })
        .collect()
}

/// Mean transmission counts in the bottom and top quartiles of accepted
/// samples ranked by final uncertainty; `None` with fewer than 4 acceptances.
pub fn uncertainty_quartile_attempts(accepted: &[AcceptedRecord]) -> Option<(f64, f64)> {
    let quarter = accepted.len() / 4;
    if quarter == 0 {
        return None;
    }
    let mut ranked: Vec<&AcceptedRecord> = accepted.iter().collect();
    ranked.sort_by(|a, b| {
        a.final_uncertainty
            .partial_cmp(&b.final_uncertainty)
            .expect("uncertainties are totally ordered")
    });
    let mean = |records: &[&AcceptedRecord]| {
        records.iter().map(|r| r.attempts as f64).sum::<f64>() / records.len() as f64
    };
    Some((
        mean(&ranked[..quarter]),
        mean(&ranked[ranked.len() - quarter..]),
    ))
}

/// One aggregated metric curve over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateCurve {
    pub metric: &'static str,
    pub blocks: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Values of one named metric along a log's curve.
fn metric_series(log: &RunLog, metric: &str) -> (Vec<f64>, Vec<f64>) {
    let xs = log.curve.iter().map(|p| p.blocks_spent as f64).collect();
    let ys = log
        .curve
        .iter()
        .map(|p| match (metric, p.metrics.imbalanced.as_ref()) {
            ("accuracy", _) => p.metrics.accuracy,
            ("recall", Some(m)) => m.recall,
            ("specificity", Some(m)) => m.specificity,
            ("g_mean", Some(m)) => m.g_mean,
            ("f_measure", Some(m)) => m.f_measure,
            _ => unreachable!("metric {metric} not recorded by this task"),
        })
        .collect();
    (xs, ys)
}

/// Linear interpolation of a sorted series at `x`; `xs` must bracket `x`.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert!(!xs.is_empty());
    match xs.iter().position(|&v| v >= x) {
        Some(0) => ys[0],
        Some(i) => {
            let span = xs[i] - xs[i - 1];
            let t = if span > 0.0 { (x - xs[i - 1]) / span } else { 0.0 };
            ys[i - 1] + t * (ys[i] - ys[i - 1])
        }
        None => *ys.last().expect("nonempty series"),
    }
}

/// Averages metric curves from repeated runs of one configuration onto a
/// common budget grid (the union of the logs' curve points within the span
/// every log covers), reporting pointwise means and standard errors.
pub fn aggregate(logs: &[RunLog]) -> Result<Vec<AggregateCurve>, SimError> {
    let Some(first) = logs.first() else {
        return Err(SimError::MismatchedLogs("no logs given".into()));
    };
    for log in logs {
        if (log.policy, log.model_kind, log.task, log.budget_blocks)
            != (first.policy, first.model_kind, first.task, first.budget_blocks)
        {
            return Err(SimError::MismatchedLogs(format!(
                "{} differs from {}",
                log.basename(),
                first.basename()
            )));
        }
        if log.curve.is_empty() {
            return Err(SimError::MismatchedLogs(format!(
                "{} has an empty metric curve",
                log.basename()
            )));
        }
    }

    let span_lo = logs
        .iter()
        .map(|l| l.curve[0].blocks_spent)
        .max()
        .expect("nonempty");
    let span_hi = logs
        .iter()
        .map(|l| l.curve.last().expect("nonempty curve").blocks_spent)
        .min()
        .expect("nonempty");
    if span_lo > span_hi {
        return Err(SimError::MismatchedLogs(
            "metric curves share no budget span".into(),
        ));
    }
    let mut grid: Vec<usize> = logs
        .iter()
        .flat_map(|l| l.curve.iter().map(|p| p.blocks_spent))
        .filter(|&b| (span_lo..=span_hi).contains(&b))
        .collect();
    grid.sort_unstable();
    grid.dedup();
    let grid: Vec<f64> = grid.into_iter().map(|b| b as f64).collect();

    let mut metrics: Vec<&'static str> = vec!["accuracy"];
    if logs.iter().all(|l| l.final_metrics.imbalanced.is_some()) {
        metrics.extend(["recall", "specificity", "g_mean", "f_measure"]);
    }

    let mut curves = Vec::with_capacity(metrics.len());
    for metric in metrics {
        let per_log: Vec<Vec<f64>> = logs
            .iter()
            .map(|log| {
                let (xs, ys) = metric_series(log, metric);
                grid.iter().map(|&x| interpolate(&xs, &ys, x)).collect()
            })
            .collect();
        let n = per_log.len() as f64;
        let mut mean = Vec::with_capacity(grid.len());
        let mut stderr = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let m = per_log.iter().map(|ys| ys[i]).sum::<f64>() / n;
            let var = if per_log.len() > 1 {
                per_log.iter().map(|ys| (ys[i] - m).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            mean.push(m);
            stderr.push((var / n).sqrt());
        }
        curves.push(AggregateCurve {
            metric,
            blocks: grid.clone(),
            mean,
            stderr,
        });
    }
    Ok(curves)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, SimError> {
    let file = std::fs::File::create(path).map_err(|source| SimError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(std::io::BufWriter::new(file))
}

fn finish(mut writer: std::io::BufWriter<std::fs::File>, path: &Path) -> Result<(), SimError> {
    writer.flush().map_err(|source| SimError::Io {
        path: path.to_path_buf(),
        source,
    })
}

macro_rules! emit {
    ($writer:expr, $path:expr, $($arg:tt)*) => {
        writeln!($writer, $($arg)*).map_err(|source| SimError::Io {
            path: $path.to_path_buf(),
            source,
        })?
    };
}

/// Writes the metric-versus-budget curve as CSV.
pub fn write_curve_csv(log: &RunLog, path: &Path) -> Result<(), SimError> {
    let mut w = create(path)?;
    let imbalanced = log.final_metrics.imbalanced.is_some();
    if imbalanced {
        emit!(w, path, "blocks,accepted,accuracy,recall,specificity,g_mean,f_measure");
    } else {
        emit!(w, path, "blocks,accepted,accuracy");
    }
    for p in &log.curve {
        if let Some(m) = &p.metrics.imbalanced {
            emit!(
                w,
                path,
                "{},{},{},{},{},{},{}",
                p.blocks_spent,
                p.accepted,
                p.metrics.accuracy,
                m.recall,
                m.specificity,
                m.g_mean,
                m.f_measure
            );
        } else {
            emit!(w, path, "{},{},{}", p.blocks_spent, p.accepted, p.metrics.accuracy);
        }
    }
    finish(w, path)
}

/// Writes every per-block decision as CSV.
pub fn write_decisions_csv(log: &RunLog, path: &Path) -> Result<(), SimError> {
    let mut w = create(path)?;
    emit!(
        w,
        path,
        "block,sample_id,attempt,uncertainty,snr_threshold,effective_snr,decision"
    );
    for row in &log.decisions {
        emit!(
            w,
            path,
            "{},{},{},{},{},{},{}",
            row.block,
            row.sample_id,
            row.attempt,
            row.trace.uncertainty,
            row.trace.snr_threshold,
            row.trace.effective_snr,
            row.trace.decision
        );
    }
    finish(w, path)
}

/// Writes the accepted-sample records as CSV.
pub fn write_accepted_csv(log: &RunLog, path: &Path) -> Result<(), SimError> {
    let mut w = create(path)?;
    emit!(
        w,
        path,
        "sample_id,device_id,attempts,effective_snr,first_uncertainty,final_uncertainty"
    );
    for r in &log.accepted {
        emit!(
            w,
            path,
            "{},{},{},{},{},{}",
            r.sample_id,
            r.device_id,
            r.attempts,
            r.effective_snr,
            r.first_uncertainty,
            r.final_uncertainty
        );
    }
    finish(w, path)
}

/// Writes the aggregated curves as one CSV (grid + columns per metric).
pub fn write_aggregate_csv(curves: &[AggregateCurve], path: &Path) -> Result<(), SimError> {
    let Some(first) = curves.first() else {
        return Err(SimError::MismatchedLogs("no curves to write".into()));
    };
    let mut w = create(path)?;
    let mut header = String::from("blocks");
    for curve in curves {
        header.push_str(&format!(",{0}_mean,{0}_stderr", curve.metric));
    }
    emit!(w, path, "{header}");
    for (i, &b) in first.blocks.iter().enumerate() {
        let mut line = format!("{b}");
        for curve in curves {
            line.push_str(&format!(",{},{}", curve.mean[i], curve.stderr[i]));
        }
        emit!(w, path, "{line}");
    }
    finish(w, path)
}

#[derive(Serialize)]
struct RunSummary<'a> {
    config: &'a ExperimentConfig,
    seed: u64,
    blocks_consumed: usize,
    accepted_samples: usize,
    abandoned_attempts: usize,
    data_exhausted: bool,
    final_metrics: &'a Metrics,
    histogram: &'a [HistogramBin],
}

/// Writes the config echo plus summary statistics as pretty JSON. The
/// embedded config can be re-ingested to reproduce the run.
pub fn write_summary_json(
    config: &ExperimentConfig,
    log: &RunLog,
    path: &Path,
) -> Result<(), SimError> {
    let summary = RunSummary {
        config,
        seed: log.seed,
        blocks_consumed: log.blocks_consumed,
        accepted_samples: log.accepted.len(),
        abandoned_attempts: log.abandoned_attempts,
        data_exhausted: log.data_exhausted,
        final_metrics: &log.final_metrics,
        histogram: &log.histogram,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summaries serialize");
    let mut w = create(path)?;
    emit!(w, path, "{json}");
    finish(w, path)
}

/// Writes curve, decisions and accepted CSVs plus the summary JSON and the
/// final model snapshot into `out_dir`, named `{policy}_{model}_{task}_{seed}`.
/// Returns the written paths.
pub fn write_run_outputs(
    config: &ExperimentConfig,
    log: &RunLog,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, SimError> {
    std::fs::create_dir_all(out_dir).map_err(|source| SimError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let base = log.basename();
    let curve = out_dir.join(format!("{base}.curve.csv"));
    let decisions = out_dir.join(format!("{base}.decisions.csv"));
    let accepted = out_dir.join(format!("{base}.accepted.csv"));
    let summary = out_dir.join(format!("{base}.summary.json"));
    let model = out_dir.join(format!("{base}.model.json"));

    write_curve_csv(log, &curve)?;
    write_decisions_csv(log, &decisions)?;
    write_accepted_csv(log, &accepted)?;
    write_summary_json(config, log, &summary)?;
    std::fs::write(&model, log.final_model.to_json()).map_err(|source| SimError::Io {
        path: model.clone(),
        source,
    })?;
    Ok(vec![curve, decisions, accepted, summary, model])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{DataSource, SyntheticSpec};
    use approx::assert_relative_eq;

    fn synthetic_binary_data() -> TaskData {
        DatasetSpec {
            source: DataSource::Synthetic(SyntheticSpec {
                class_means: vec![vec![0.2, 0.8], vec![0.8, 0.2]],
                covariance_scale: 0.03,
                train_per_class: 120,
                test_per_class: 40,
                seed: 9,
            }),
            task: Task::Binary {
                positive: 1,
                negative: 0,
            },
        }
        .materialize()
        .unwrap()
    }

    fn base_config(arq: ArqConfig, budget: usize) -> SimulationConfig {
        SimulationConfig {
            channel: ChannelConfig::from_average_snr_db(4.0, 0).unwrap(),
            arq,
            model_kind: ModelKind::Svm,
            budget_blocks: budget,
            retrain_cadence: 1,
            metric_cadence: 10,
            repetitions: 3,
            rng_seed: 7,
            device_count: 4,
            svm: SvmTrainConfig::default(),
            softmax: SoftmaxTrainConfig::default(),
        }
    }

    #[test]
    fn no_retransmission_accepts_every_sample_in_one_block() {
        let data = synthetic_binary_data();
        let cfg = base_config(ArqConfig::no_retransmission(), 50);
        let log = run(&cfg, &data).unwrap();
        assert_eq!(log.accepted.len(), 50);
        assert_eq!(log.blocks_consumed, 50);
        assert_eq!(log.abandoned_attempts, 0);
        assert!(log.accepted.iter().all(|r| r.attempts == 1));
        assert!(!log.data_exhausted);
    }

    #[test]
    fn budget_is_conserved_exactly_under_retransmissions() {
        let data = synthetic_binary_data();
        let arq = ArqConfig::importance_binary_svm(0.9, 316.22776601683793).unwrap();
        let cfg = base_config(arq, 80);
        let log = run(&cfg, &data).unwrap();

        let accepted_blocks: usize = log.accepted.iter().map(|r| r.attempts).sum();
        assert_eq!(accepted_blocks + log.abandoned_attempts, log.blocks_consumed);
        assert_eq!(log.blocks_consumed, 80);
        assert_eq!(log.decisions.len(), 80);
        assert!(
            log.accepted.iter().any(|r| r.attempts > 1),
            "expected at least one retransmission at this alignment target"
        );
    }

    #[test]
    fn channel_aware_with_a_tiny_target_never_retransmits() {
        let data = synthetic_binary_data();
        let cfg = base_config(ArqConfig::channel_aware(1e-9).unwrap(), 40);
        let log = run(&cfg, &data).unwrap();
        assert!(log.accepted.iter().all(|r| r.attempts == 1));
        assert_eq!(log.accepted.len(), 40);
    }

    #[test]
    fn identical_seeds_give_identical_logs_and_different_seeds_differ() {
        let data = synthetic_binary_data();
        let arq = ArqConfig::importance_binary_svm(0.8, 316.22776601683793).unwrap();
        let cfg = base_config(arq, 60);
        let log_a = run(&cfg, &data).unwrap();
        let log_b = run(&cfg, &data).unwrap();
        assert_eq!(log_a, log_b);

        let other = SimulationConfig {
            rng_seed: 8,
            ..cfg
        };
        let log_c = run(&other, &data).unwrap();
        assert_ne!(log_a, log_c);
    }

    #[test]
    fn runs_stop_early_when_devices_run_dry() {
        let data = synthetic_binary_data();
        // 240 training samples minus 4 seeds = 236 transmittable samples.
        let cfg = base_config(ArqConfig::no_retransmission(), 10_000);
        let log = run(&cfg, &data).unwrap();
        assert!(log.data_exhausted);
        assert_eq!(log.accepted.len(), 236);
        assert_eq!(log.blocks_consumed, 236);
    }

    #[test]
    fn policy_model_mismatch_is_rejected_upfront() {
        let data = synthetic_binary_data();
        let arq = ArqConfig::importance_entropy(10.0, 316.0, 2).unwrap();
        let cfg = base_config(arq, 10); // svm model + entropy policy
        assert!(matches!(
            run(&cfg, &data),
            Err(SimError::PolicyModelMismatch { .. })
        ));
    }

    #[test]
    fn metrics_match_hand_computed_confusion_values() {
        let task = Task::Imbalanced { minority: 1 };
        // TP=1, FN=1, FP=1, TN=7.
        let labels = vec![1, 1, 0, 0, 0, 0, 0, 0, 0, 0];
        let preds = vec![1, 0, 1, 0, 0, 0, 0, 0, 0, 0];
        let m = metrics_from_predictions(&preds, &labels, task).unwrap();
        let im = m.imbalanced.unwrap();
        assert_eq!(
            im.confusion,
            ConfusionCounts {
                true_positive: 1,
                false_negative: 1,
                false_positive: 1,
                true_negative: 7
            }
        );
        assert_eq!(im.confusion.total(), labels.len());
        assert_relative_eq!(im.recall, 0.5);
        assert_relative_eq!(im.specificity, 0.875);
        assert_relative_eq!(im.precision.unwrap(), 0.5);
        assert_relative_eq!(im.g_mean, 0.4375f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(im.f_measure, 0.5);
        assert_relative_eq!(m.accuracy, 0.8);
    }

    #[test]
    fn all_negative_predictor_scores_zero_on_imbalanced_metrics() {
        let task = Task::Imbalanced { minority: 1 };
        let labels = vec![1, 0, 0, 0, 0, 0, 0, 0, 0, 0];
        let preds = vec![0; 10];
        let m = metrics_from_predictions(&preds, &labels, task).unwrap();
        let im = m.imbalanced.unwrap();
        assert_eq!(im.recall, 0.0);
        assert_eq!(im.g_mean, 0.0);
        assert_eq!(im.f_measure, 0.0);
        assert!(im.precision.is_none());
        assert_relative_eq!(m.accuracy, 0.9);
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let task = Task::Imbalanced { minority: 1 };
        let labels = vec![1, 1, 0, 0, 0, 0];
        let m = metrics_from_predictions(&labels, &labels, task).unwrap();
        let im = m.imbalanced.unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(im.g_mean, 1.0);
        assert_eq!(im.f_measure, 1.0);
    }

    fn record(attempts: usize, uncertainty: f64) -> AcceptedRecord {
        AcceptedRecord {
            sample_id: 0,
            device_id: 0,
            attempts,
            effective_snr: 1.0,
            first_uncertainty: Uncertainty::Finite(uncertainty),
            final_uncertainty: Uncertainty::Finite(uncertainty),
        }
    }

    #[test]
    fn quartile_attempts_split_ranked_records() {
        let accepted: Vec<AcceptedRecord> =
            (1..=8).map(|i| record(i, i as f64)).collect();
        let (bottom, top) = uncertainty_quartile_attempts(&accepted).unwrap();
        assert_relative_eq!(bottom, 1.5);
        assert_relative_eq!(top, 7.5);
        assert!(uncertainty_quartile_attempts(&accepted[..3]).is_none());
    }

    #[test]
    fn histogram_bins_cover_the_uncertainty_range() {
        let accepted: Vec<AcceptedRecord> = (0..20)
            .map(|i| record(1 + i % 3, i as f64))
            .collect();
        let bins = retransmission_histogram(&accepted, 5);
        assert_eq!(bins.len(), 5);
        assert_eq!(bins.iter().map(|b| b.samples).sum::<usize>(), 20);
        assert_relative_eq!(bins[0].lower, 0.0);
        assert_relative_eq!(bins[4].upper, 19.0);
        assert!(bins.windows(2).all(|w| w[0].upper == w[1].lower));
    }

    #[test]
    fn interpolation_is_linear_between_curve_points() {
        let xs = [10.0, 20.0, 40.0];
        let ys = [0.5, 0.7, 0.8];
        assert_relative_eq!(interpolate(&xs, &ys, 10.0), 0.5);
        assert_relative_eq!(interpolate(&xs, &ys, 15.0), 0.6);
        assert_relative_eq!(interpolate(&xs, &ys, 20.0), 0.7);
        assert_relative_eq!(interpolate(&xs, &ys, 30.0), 0.75);
        assert_relative_eq!(interpolate(&xs, &ys, 40.0), 0.8);
    }

    #[test]
    fn aggregate_of_identical_logs_has_zero_stderr() {
        let data = synthetic_binary_data();
        let cfg = base_config(ArqConfig::no_retransmission(), 40);
        let log = run(&cfg, &data).unwrap();
        let curves = aggregate(&[log.clone(), log.clone()]).unwrap();
        assert_eq!(curves.len(), 1); // balanced task: accuracy only
        assert!(curves[0].stderr.iter().all(|&e| e == 0.0));
        let single = aggregate(std::slice::from_ref(&log)).unwrap();
        assert_eq!(single[0].mean, curves[0].mean);
    }

    #[test]
    fn aggregate_rejects_mismatched_logs() {
        let data = synthetic_binary_data();
        let none = run(&base_config(ArqConfig::no_retransmission(), 40), &data).unwrap();
        let aware = run(
            &base_config(ArqConfig::channel_aware(2.0).unwrap(), 40),
            &data,
        )
        .unwrap();
        assert!(matches!(
            aggregate(&[none, aware]),
            Err(SimError::MismatchedLogs(_))
        ));
        assert!(matches!(
            aggregate(&[]),
            Err(SimError::MismatchedLogs(_))
        ));
    }

    #[test]
    fn aggregate_means_use_linear_interpolation_between_grids() {
        let data = synthetic_binary_data();
        let cfg = base_config(ArqConfig::no_retransmission(), 40);
        let log_a = run(&cfg, &data).unwrap();
        let log_b = run(
            &SimulationConfig {
                metric_cadence: 7,
                rng_seed: 21,
                ..cfg
            },
            &data,
        )
        .unwrap();
        let curves = aggregate(&[log_a.clone(), log_b.clone()]).unwrap();
        let curve = &curves[0];
        for (i, &b) in curve.blocks.iter().enumerate() {
            let (xa, ya) = metric_series(&log_a, "accuracy");
            let (xb, yb) = metric_series(&log_b, "accuracy");
            let expected = 0.5 * (interpolate(&xa, &ya, b) + interpolate(&xb, &yb, b));
            assert_relative_eq!(curve.mean[i], expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn repetition_seeds_are_distinct_and_reproducible() {
        let seeds: Vec<u64> = (0..16).map(|i| repetition_seed(99, i)).collect();
        let again: Vec<u64> = (0..16).map(|i| repetition_seed(99, i)).collect();
        assert_eq!(seeds, again);
        let mut unique = seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), seeds.len());
    }

    #[test]
    fn run_repetitions_returns_ordered_independent_logs() {
        let data = synthetic_binary_data();
        let cfg = SimulationConfig {
            repetitions: 3,
            ..base_config(ArqConfig::no_retransmission(), 30)
        };
        let logs = run_repetitions(&cfg, &data).unwrap();
        assert_eq!(logs.len(), 3);
        for (rep, log) in logs.iter().enumerate() {
            assert_eq!(log.seed, repetition_seed(cfg.rng_seed, rep));
        }
        assert_ne!(logs[0].accepted, logs[1].accepted);
    }

    #[test]
    fn written_outputs_are_byte_identical_across_identical_runs() {
        let data = synthetic_binary_data();
        let arq = ArqConfig::importance_binary_svm(0.8, 316.22776601683793).unwrap();
        let cfg = base_config(arq, 50);
        let experiment = ExperimentConfig {
            simulation: cfg.clone(),
            dataset: DatasetSpec {
                source: DataSource::Synthetic(SyntheticSpec {
                    class_means: vec![vec![0.2, 0.8], vec![0.8, 0.2]],
                    covariance_scale: 0.03,
                    train_per_class: 120,
                    test_per_class: 40,
                    seed: 9,
                }),
                task: Task::Binary {
                    positive: 1,
                    negative: 0,
                },
            },
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let log_a = run(&cfg, &data).unwrap();
        let log_b = run(&cfg, &data).unwrap();
        let paths_a = write_run_outputs(&experiment, &log_a, dir_a.path()).unwrap();
        let paths_b = write_run_outputs(&experiment, &log_b, dir_b.path()).unwrap();
        assert_eq!(paths_a.len(), 5);
        for (a, b) in paths_a.iter().zip(&paths_b) {
            assert_eq!(
                std::fs::read(a).unwrap(),
                std::fs::read(b).unwrap(),
                "{} differs",
                a.display()
            );
        }
    }

    #[test]
    fn curve_csv_has_imbalanced_columns_only_for_imbalanced_tasks() {
        let data = DatasetSpec {
            source: DataSource::Synthetic(SyntheticSpec {
                class_means: vec![vec![0.2, 0.8], vec![0.8, 0.2], vec![0.5, 0.5]],
                covariance_scale: 0.03,
                train_per_class: 60,
                test_per_class: 20,
                seed: 4,
            }),
            task: Task::Imbalanced { minority: 1 },
        }
        .materialize()
        .unwrap();
        let cfg = base_config(ArqConfig::no_retransmission(), 30);
        let log = run(&cfg, &data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        write_curve_csv(&log, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("blocks,accepted,accuracy,recall,specificity,g_mean,f_measure"));
        assert!(log.final_metrics.imbalanced.is_some());
    }
}
