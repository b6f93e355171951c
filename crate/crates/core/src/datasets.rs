//! Data sources and the acquisition-experiment data layout.
//!
//! An experiment draws from either the MNIST IDX files or synthetic Gaussian
//! blobs, reshapes the labels for one of three task types, and splits the
//! training pool into a tiny clean *seed set* (used to fit the initial model
//! at the server) plus per-device *shards* whose samples are only available
//! through the noisy channel. The held-out test set never crosses the
//! channel.
//!
//! Feature values are normalized to `[0, 1]`: MNIST pixels by `/255`,
//! synthetic features min-max scaled with statistics computed on the training
//! split only.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::Sample;

/// Number of clean seed samples per class for balanced tasks.
pub const BALANCED_SEEDS_PER_CLASS: usize = 2;
/// Clean seed samples of the minority class for imbalanced tasks.
pub const IMBALANCED_MINORITY_SEEDS: usize = 1;
/// Clean seed samples of the majority class for imbalanced tasks.
pub const IMBALANCED_MAJORITY_SEEDS: usize = 8;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Errors from loading, generating or partitioning data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:#010x} at byte 0, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated at byte {offset}, needed {needed} more bytes")]
    Truncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
    },
    #[error("images file lists {images} items but labels file lists {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: label {label} at item {index} is outside 0..=9")]
    InvalidLabel {
        path: PathBuf,
        index: usize,
        label: u8,
    },
    #[error("invalid synthetic specification: {0}")]
    InvalidSynthetic(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("not enough data: {0}")]
    Insufficient(String),
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len(),
            needed: end - bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().expect("4 bytes")))
}

/// Loads one MNIST images/labels file pair in IDX format.
///
/// Pixels are scaled to `[0, 1]` by `/255`; labels are validated to lie in
/// `0..=9`. Malformed files report the byte offset of the problem.
pub fn load_mnist_idx(
    images_path: &Path,
    labels_path: &Path,
) -> Result<Vec<Sample>, DataError> {
    let images = std::fs::read(images_path).map_err(|source| DataError::Io {
        path: images_path.to_path_buf(),
        source,
    })?;
    let labels = std::fs::read(labels_path).map_err(|source| DataError::Io {
        path: labels_path.to_path_buf(),
        source,
    })?;

    let magic = read_u32_be(&images, 0, images_path)?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: images_path.to_path_buf(),
            found: magic,
            expected: IMAGES_MAGIC,
        });
    }
    let count = read_u32_be(&images, 4, images_path)? as usize;
    let rows = read_u32_be(&images, 8, images_path)? as usize;
    let cols = read_u32_be(&images, 12, images_path)? as usize;
    let dim = rows * cols;
    let needed = 16 + count * dim;
    if images.len() < needed {
        return Err(DataError::Truncated {
            path: images_path.to_path_buf(),
            offset: images.len(),
            needed: needed - images.len(),
        });
    }

    let magic = read_u32_be(&labels, 0, labels_path)?;
    if magic != LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: labels_path.to_path_buf(),
            found: magic,
            expected: LABELS_MAGIC,
        });
    }
    let label_count = read_u32_be(&labels, 4, labels_path)? as usize;
    if label_count != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let needed = 8 + count;
    if labels.len() < needed {
        return Err(DataError::Truncated {
            path: labels_path.to_path_buf(),
            offset: labels.len(),
            needed: needed - labels.len(),
        });
    }

    (0..count)
        .map(|i| {
            let label = labels[8 + i];
            if label > 9 {
                return Err(DataError::InvalidLabel {
                    path: labels_path.to_path_buf(),
                    index: i,
                    label,
                });
            }
            let start = 16 + i * dim;
            let features = images[start..start + dim]
                .iter()
                .map(|&b| f64::from(b) / 255.0)
                .collect();
            Ok(Sample::new(features, label as usize))
        })
        .collect()
}

/// Synthetic Gaussian-blob source: one spherical Gaussian per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// One mean vector per class; all must share a dimension.
    pub class_means: Vec<Vec<f64>>,
    /// Variance of every coordinate around its class mean; must be positive.
    pub covariance_scale: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Generation is a pure function of the spec, including this seed.
    pub seed: u64,
}

/// Draws the synthetic training and test splits and min-max normalizes both
/// with the training split's per-coordinate statistics (clamping the test
/// split into `[0, 1]`).
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<(Vec<Sample>, Vec<Sample>), DataError> {
    use rand::SeedableRng;
    use rand_distr::StandardNormal;

    if spec.class_means.len() < 2 {
        return Err(DataError::InvalidSynthetic(format!(
            "need at least two class means, got {}",
            spec.class_means.len()
        )));
    }
    let dim = spec.class_means[0].len();
    if dim == 0 {
        return Err(DataError::InvalidSynthetic("empty mean vectors".into()));
    }
    if let Some(bad) = spec.class_means.iter().find(|m| m.len() != dim) {
        return Err(DataError::InvalidSynthetic(format!(
            "mean dimensions differ: {} vs {dim}",
            bad.len()
        )));
    }
    if !(spec.covariance_scale.is_finite() && spec.covariance_scale > 0.0) {
        return Err(DataError::InvalidSynthetic(format!(
            "degenerate covariance scale {}",
            spec.covariance_scale
        )));
    }
    if spec.train_per_class == 0 || spec.test_per_class == 0 {
        return Err(DataError::InvalidSynthetic(
            "train_per_class and test_per_class must be positive".into(),
        ));
    }

    let std = spec.covariance_scale.sqrt();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw_split = |per_class: usize| -> Vec<Sample> {
        let mut samples = Vec::with_capacity(per_class * spec.class_means.len());
        for (label, mean) in spec.class_means.iter().enumerate() {
            for _ in 0..per_class {
                let features = mean
                    .iter()
                    .map(|&m| m + std * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                samples.push(Sample::new(features, label));
            }
        }
        samples
    };
    let mut train = draw_split(spec.train_per_class);
    let mut test = draw_split(spec.test_per_class);

    // Per-coordinate min-max normalization fitted on the training split.
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for sample in &train {
        for (j, &v) in sample.features.iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let range: Vec<f64> = lo.iter().zip(&hi).map(|(&l, &h)| h - l).collect();
    for sample in train.iter_mut().chain(test.iter_mut()) {
        for (j, v) in sample.features.iter_mut().enumerate() {
            *v = if range[j] > 0.0 {
                ((*v - lo[j]) / range[j]).clamp(0.0, 1.0)
            } else {
                0.5
            };
        }
    }
    Ok((train, test))
}

/// Where the raw samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Directory holding the standard four MNIST IDX files.
    MnistIdx { dir: PathBuf },
    /// Synthetic Gaussian blobs.
    Synthetic(SyntheticSpec),
}

/// How the source labels are turned into task labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    /// Keep only two source classes; `positive` becomes label 1, `negative`
    /// label 0.
    Binary { positive: usize, negative: usize },
    /// Keep everything: the `minority` source class becomes label 1 and all
    /// other classes collapse to label 0, preserving the natural class ratio.
    Imbalanced { minority: usize },
    /// Keep all source classes and labels as they are.
    Multiclass,
}

impl Task {
    /// Task label for a source label, or `None` if the sample is dropped.
    fn relabel(self, source_label: usize) -> Option<usize> {
        match self {
            Task::Binary { positive, negative } => {
                if source_label == positive {
                    Some(1)
                } else if source_label == negative {
                    Some(0)
                } else {
                    None
                }
            }
            Task::Imbalanced { minority } => Some(usize::from(source_label == minority)),
            Task::Multiclass => Some(source_label),
        }
    }

    /// Number of task classes given the source's class count.
    fn class_count(self, source_classes: usize) -> usize {
        match self {
            Task::Binary { .. } | Task::Imbalanced { .. } => 2,
            Task::Multiclass => source_classes,
        }
    }

    /// Clean seed samples required per task class.
    fn seed_rule(self, class_count: usize) -> Vec<usize> {
        match self {
            Task::Binary { .. } | Task::Multiclass => {
                vec![BALANCED_SEEDS_PER_CLASS; class_count]
            }
            Task::Imbalanced { .. } => {
                vec![IMBALANCED_MAJORITY_SEEDS, IMBALANCED_MINORITY_SEEDS]
            }
        }
    }

    /// Whether evaluation should report imbalanced-classification metrics.
    pub fn is_imbalanced(self) -> bool {
        matches!(self, Task::Imbalanced { .. })
    }

    /// Short name used in output file names.
    pub fn slug(self) -> String {
        match self {
            Task::Binary { positive, negative } => format!("binary-{positive}v{negative}"),
            Task::Imbalanced { minority } => format!("imbalanced-{minority}"),
            Task::Multiclass => "multiclass".into(),
        }
    }
}

/// A complete data description: source plus task shaping. Serializable so a
/// run's configuration echo reproduces the exact data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub source: DataSource,
    pub task: Task,
}

/// Materialized task data: relabeled train/test splits.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub class_count: usize,
    pub task: Task,
}

impl DatasetSpec {
    /// Loads or generates the data and applies the task relabeling.
    pub fn materialize(&self) -> Result<TaskData, DataError> {
        let (raw_train, raw_test, source_classes) = match &self.source {
            DataSource::MnistIdx { dir } => {
                let train = load_mnist_idx(
                    &dir.join("train-images-idx3-ubyte"),
                    &dir.join("train-labels-idx1-ubyte"),
                )?;
                let test = load_mnist_idx(
                    &dir.join("t10k-images-idx3-ubyte"),
                    &dir.join("t10k-labels-idx1-ubyte"),
                )?;
                (train, test, 10)
            }
            DataSource::Synthetic(spec) => {
                let (train, test) = make_synthetic(spec)?;
                let classes = spec.class_means.len();
                (train, test, classes)
            }
        };

        match self.task {
            Task::Binary { positive, negative } => {
                if positive == negative {
                    return Err(DataError::InvalidTask(format!(
                        "binary task needs two distinct classes, got {positive} twice"
                    )));
                }
                for class in [positive, negative] {
                    if class >= source_classes {
                        return Err(DataError::InvalidTask(format!(
                            "class {class} outside the source's {source_classes} classes"
                        )));
                    }
                }
            }
            Task::Imbalanced { minority } => {
                if minority >= source_classes {
                    return Err(DataError::InvalidTask(format!(
                        "minority class {minority} outside the source's {source_classes} classes"
                    )));
                }
            }
            Task::Multiclass => {}
        }

        let apply = |samples: Vec<Sample>| -> Vec<Sample> {
            samples
                .into_iter()
                .filter_map(|mut sample| {
                    self.task.relabel(sample.label).map(|label| {
                        sample.label = label;
                        sample
                    })
                })
                .collect()
        };
        let train = apply(raw_train);
        let test = apply(raw_test);
        let class_count = self.task.class_count(source_classes);

        for (name, split) in [("train", &train), ("test", &test)] {
            for class in 0..class_count {
                if !split.iter().any(|s| s.label == class) {
                    return Err(DataError::Insufficient(format!(
                        "{name} split has no samples of task class {class}"
                    )));
                }
            }
        }

        Ok(TaskData {
            train,
            test,
            class_count,
            task: self.task,
        })
    }
}

/// The clean seed samples the server starts from, as indices into
/// `TaskData::train`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSet {
    pub indices: Vec<usize>,
}

/// One device's stream of pending samples, as indices into
/// `TaskData::train`, in transmission order.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceShard {
    pub device_id: usize,
    pub queue: VecDeque<usize>,
}

/// Seed set plus device shards; together they partition the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub seed_set: SeedSet,
    pub shards: Vec<DeviceShard>,
}

/// Randomly splits the training data into the task's seed set and
/// `device_count` equal shards (sizes differing by at most one).
pub fn partition<R: Rng + ?Sized>(
    data: &TaskData,
    device_count: usize,
    rng: &mut R,
) -> Result<Partition, DataError> {
    if device_count == 0 {
        return Err(DataError::InvalidTask("device_count must be at least 1".into()));
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.class_count];
    for (i, sample) in data.train.iter().enumerate() {
        by_class[sample.label].push(i);
    }

    let seed_rule = data.task.seed_rule(data.class_count);
    let mut seed_indices = Vec::new();
    let mut pool = Vec::with_capacity(data.train.len());
    for (class, indices) in by_class.iter_mut().enumerate() {
        let need = seed_rule[class];
        if indices.len() < need + 1 {
            return Err(DataError::Insufficient(format!(
                "class {class} has {} samples, needs more than {need}",
                indices.len()
            )));
        }
        indices.shuffle(rng);
        seed_indices.extend_from_slice(&indices[..need]);
        pool.extend_from_slice(&indices[need..]);
    }
    if pool.len() < device_count {
        return Err(DataError::Insufficient(format!(
            "{} pooled samples cannot fill {device_count} devices",
            pool.len()
        )));
    }

    pool.shuffle(rng);
    let mut shards: Vec<DeviceShard> = (0..device_count)
        .map(|device_id| DeviceShard {
            device_id,
            queue: VecDeque::new(),
        })
        .collect();
    for (i, index) in pool.into_iter().enumerate() {
        shards[i % device_count].queue.push_back(index);
    }

    Ok(Partition {
        seed_set: SeedSet {
            indices: seed_indices,
        },
        shards,
    })
}
