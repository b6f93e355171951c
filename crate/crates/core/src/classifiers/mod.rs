//! Classifiers trained online at the edge server: linear soft-margin SVMs
//! (binary and one-vs-one multiclass with Hamming decoding) and a softmax
//! probabilistic classifier.
//!
//! Labels are 0-based class indices. Binary tasks use labels `{0, 1}` with 1
//! as the positive class; the SVM maps them to signs `-1 / +1` internally.

mod multiclass;
mod softmax;
mod svm;

pub use multiclass::{
    decode, hamming_distance, train_multiclass_svm, CodingMatrix, MulticlassSvm,
};
pub use softmax::{
    cross_entropy_loss, train_softmax, SoftmaxModel, SoftmaxTrainConfig,
};
pub use svm::{
    train_binary_svm, train_binary_svm_warm, LinearBoundary, SvmFit, SvmTrainConfig,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A labelled feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Feature values, nominally normalized to `[0, 1]` by the data pipeline
    /// (noisy channel estimates may fall outside).
    pub features: Vec<f64>,
    /// 0-based class index.
    pub label: usize,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

/// Errors from classifier training and inference.
#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    /// No training data at all.
    #[error("training set is empty")]
    EmptySet,
    /// Samples must have at least one feature.
    #[error("samples must have at least one feature")]
    ZeroDimension,
    /// All samples must share one feature dimension.
    #[error("sample {index} has {got} features, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    /// A label falls outside the configured class range.
    #[error("sample {index} has label {label}, outside the {classes}-class task")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    /// Binary training requires at least one sample of each class.
    #[error("binary training saw only class {0}")]
    SingleClass(usize),
    /// A multiclass task needs at least two classes.
    #[error("a classification task needs at least two classes, got {0}")]
    TooFewClasses(usize),
    /// Scoring through a boundary whose weight vector is numerically zero.
    #[error("model is untrained: weight vector has (near-)zero norm")]
    UntrainedModel,
    /// Using a one-vs-one component that never received data.
    #[error("one-vs-one component for classes ({0}, {1}) is untrained")]
    UntrainedComponent(usize, usize),
    /// A warm start must come from a fit over a prefix of the current data.
    #[error("warm start invalid: {0}")]
    InvalidWarmStart(String),
    /// A hyperparameter is out of its valid range.
    #[error("invalid {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

/// Checks that `samples` is nonempty, consistently dimensioned and labelled
/// within `class_count`; returns the feature dimension.
pub(crate) fn validate_samples(
    samples: &[Sample],
    class_count: usize,
) -> Result<usize, TrainError> {
    let first = samples.first().ok_or(TrainError::EmptySet)?;
    let dim = first.features.len();
    if dim == 0 {
        return Err(TrainError::ZeroDimension);
    }
    for (index, sample) in samples.iter().enumerate() {
        if sample.features.len() != dim {
            return Err(TrainError::DimensionMismatch {
                index,
                expected: dim,
                got: sample.features.len(),
            });
        }
        if sample.label >= class_count {
            return Err(TrainError::LabelOutOfRange {
                index,
                label: sample.label,
                classes: class_count,
            });
        }
    }
    Ok(dim)
}

/// Any of the trainable models, as used by the acquisition simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedModel {
    /// A single soft-margin SVM for two-class tasks.
    BinarySvm(SvmFit),
    /// One-vs-one multiclass SVM decoded over a coding matrix.
    MulticlassSvm(MulticlassSvm),
    /// Softmax (multinomial logistic) probabilistic classifier.
    Softmax(SoftmaxModel),
}

/// Model snapshot with an explicit class list, for JSON export.
#[derive(Debug, Serialize, Deserialize)]
struct SnapshotEnvelope {
    classes: Vec<usize>,
    model: TrainedModel,
}

impl TrainedModel {
    /// Number of classes the model distinguishes.
    pub fn class_count(&self) -> usize {
        match self {
            TrainedModel::BinarySvm(_) => 2,
            TrainedModel::MulticlassSvm(m) => m.class_count(),
            TrainedModel::Softmax(m) => m.class_count(),
        }
    }

    /// Predicted class index for a feature vector.
    pub fn predict(&self, x: &[f64]) -> Result<usize, TrainError> {
        match self {
            TrainedModel::BinarySvm(fit) => {
                Ok(if fit.boundary.raw_margin(x)? > 0.0 { 1 } else { 0 })
            }
            TrainedModel::MulticlassSvm(m) => Ok(m.predict(x)?.0),
            TrainedModel::Softmax(m) => Ok(m.predict(x)?.0),
        }
    }

    /// Serializes the model (weights, biases, coding matrix where present,
    /// plus the class list) to pretty JSON.
    pub fn to_json(&self) -> String {
        let envelope = SnapshotEnvelope {
            classes: (0..self.class_count()).collect(),
            model: self.clone(),
        };
        serde_json::to_string_pretty(&envelope).expect("model snapshots are always serializable")
    }

    /// Reads a snapshot produced by [`TrainedModel::to_json`].
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str::<SnapshotEnvelope>(json).map(|e| e.model)
    }
}

/// Small shared dense-vector kernels used by the trainers.
pub(crate) mod linalg {
    /// Dot product, unrolled into four accumulators so the reduction
    /// vectorizes.
    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        let mut chunks_a = a.chunks_exact(4);
        let mut chunks_b = b.chunks_exact(4);
        let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
        for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
            s0 += ca[0] * cb[0];
            s1 += ca[1] * cb[1];
            s2 += ca[2] * cb[2];
            s3 += ca[3] * cb[3];
        }
        let rest: f64 = chunks_a
            .remainder()
            .iter()
            .zip(chunks_b.remainder())
            .map(|(x, y)| x * y)
            .sum();
        (s0 + s1) + (s2 + s3) + rest
    }

    /// `acc += scale * x`, element-wise.
    pub fn axpy(acc: &mut [f64], scale: f64, x: &[f64]) {
        debug_assert_eq!(acc.len(), x.len());
        for (a, &v) in acc.iter_mut().zip(x) {
            *a += scale * v;
        }
    }
}
