//! Canonical experiment setups and their reduced desk-scale variants.

use std::path::PathBuf;

use clap::ValueEnum;

use imparq::arq::{ArqConfig, ArqError};
use imparq::channel::ChannelConfig;
use imparq::classifiers::{SoftmaxTrainConfig, SvmTrainConfig};
use imparq::datasets::{DataSource, DatasetSpec, Task};
use imparq::simulator::{ExperimentConfig, ModelKind, SimulationConfig};

/// Average transmit SNR of the canonical setups, in dB.
pub const DEFAULT_SNR_DB: f64 = 4.0;
/// Target alignment probability of the SVM importance policies.
pub const DEFAULT_PC: f64 = 0.8;
/// Retransmission SNR cap of the canonical setups, in dB.
pub const DEFAULT_THETA_SNR_DB: f64 = 25.0;
/// Entropy-policy base requirement at zero entropy (linear, i.e. 10 dB).
pub const ENTROPY_THETA0: f64 = 10.0;
/// Devices the training stream is sharded over.
pub const DEVICE_COUNT: usize = 10;

/// The retransmission policy variants every preset supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyChoice {
    /// Uncertainty-scaled retransmission (the preset's native flavor).
    Importance,
    /// Fixed SNR target for every sample.
    Channel,
    /// Accept everything on the first attempt.
    None,
}

/// The canonical experiment setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetName {
    /// Balanced MNIST 3-vs-5 with a binary SVM.
    BinarySvmBalanced,
    /// All ten MNIST digits with a one-vs-one multiclass SVM.
    MulticlassSvm,
    /// All ten MNIST digits with a softmax model and entropy uncertainty.
    SoftmaxEntropy,
    /// Minority digit 1 versus the rest with a binary SVM.
    ImbalancedSvm,
    /// Minority digit 1 versus the rest with a softmax model.
    ImbalancedSoftmax,
}

impl PresetName {
    fn task(self) -> Task {
        match self {
            PresetName::BinarySvmBalanced => Task::Binary {
                positive: 3,
                negative: 5,
            },
            PresetName::MulticlassSvm | PresetName::SoftmaxEntropy => Task::Multiclass,
            PresetName::ImbalancedSvm | PresetName::ImbalancedSoftmax => {
                Task::Imbalanced { minority: 1 }
            }
        }
    }

    fn model_kind(self) -> ModelKind {
        match self {
            PresetName::BinarySvmBalanced
            | PresetName::MulticlassSvm
            | PresetName::ImbalancedSvm => ModelKind::Svm,
            PresetName::SoftmaxEntropy | PresetName::ImbalancedSoftmax => ModelKind::Softmax,
        }
    }

    /// Classes the task's model discriminates, for the entropy policy.
    fn class_count(self) -> usize {
        match self {
            PresetName::MulticlassSvm | PresetName::SoftmaxEntropy => 10,
            _ => 2,
        }
    }

    fn budget_blocks(self) -> usize {
        match self {
            PresetName::BinarySvmBalanced => 4_000,
            _ => 20_000,
        }
    }

    fn repetitions(self) -> usize {
        match self {
            PresetName::BinarySvmBalanced => 200,
            _ => 20,
        }
    }

    /// The SVM is refreshed after every acceptance; the softmax model every
    /// ten, mirroring its heavier training loop.
    fn retrain_cadence(self) -> usize {
        match self.model_kind() {
            ModelKind::Svm => 1,
            ModelKind::Softmax => 10,
        }
    }

    /// The policy under the importance flavor.
    pub fn importance_arq(self, pc: f64, theta_snr: f64) -> Result<ArqConfig, ArqError> {
        match self {
            PresetName::BinarySvmBalanced | PresetName::ImbalancedSvm => {
                ArqConfig::importance_binary_svm(pc, theta_snr)
            }
            PresetName::MulticlassSvm => ArqConfig::importance_multiclass_svm(pc, theta_snr),
            PresetName::SoftmaxEntropy | PresetName::ImbalancedSoftmax => {
                ArqConfig::importance_entropy(ENTROPY_THETA0, theta_snr, self.class_count())
            }
        }
    }
}

/// Everything that shapes a preset beyond its name.
pub struct PresetOptions {
    pub policy: PolicyChoice,
    pub snr_db: f64,
    pub pc: f64,
    pub theta_snr_db: f64,
    pub mnist_dir: PathBuf,
    pub seed: u64,
    pub desk_scale: bool,
}

/// Builds the full experiment description for a preset.
pub fn build(name: PresetName, options: &PresetOptions) -> Result<ExperimentConfig, ArqError> {
    let theta_snr = 10f64.powf(options.theta_snr_db / 10.0);
    let arq = match options.policy {
        PolicyChoice::Importance => name.importance_arq(options.pc, theta_snr)?,
        PolicyChoice::Channel => ArqConfig::channel_aware(theta_snr)?,
        PolicyChoice::None => ArqConfig::no_retransmission(),
    };
    let mut simulation = SimulationConfig {
        channel: ChannelConfig::from_average_snr_db(options.snr_db, 0)
            .expect("finite dB values always yield a valid channel"),
        arq,
        model_kind: name.model_kind(),
        budget_blocks: name.budget_blocks(),
        retrain_cadence: name.retrain_cadence(),
        metric_cadence: 10,
        repetitions: name.repetitions(),
        rng_seed: options.seed,
        device_count: DEVICE_COUNT,
        svm: SvmTrainConfig::default(),
        softmax: SoftmaxTrainConfig::default(),
    };
    if options.desk_scale {
        desk_scale(&mut simulation);
    }
    Ok(ExperimentConfig {
        simulation,
        dataset: DatasetSpec {
            source: DataSource::MnistIdx {
                dir: options.mnist_dir.clone(),
            },
            task: name.task(),
        },
    })
}

/// Shrinks a canonical setup to something a laptop finishes in minutes:
/// fewer repetitions, a smaller budget, a sparser metric grid and a looser
/// (but still KKT-driven) SVM solve with batched retraining.
fn desk_scale(simulation: &mut SimulationConfig) {
    simulation.repetitions = simulation.repetitions.min(20);
    simulation.budget_blocks = simulation.budget_blocks.min(4_000);
    simulation.metric_cadence = 50;
    if simulation.model_kind == ModelKind::Svm {
        simulation.retrain_cadence = simulation.retrain_cadence.max(20);
        simulation.svm.kkt_tolerance = 1e-2;
        simulation.svm.max_epochs = 40;
    }
}
