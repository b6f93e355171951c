//! Softmax (multinomial logistic) classifier trained by minibatch SGD with
//! momentum, serving as the probabilistic model whose posterior feeds the
//! entropy-based retransmission policy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{axpy, dot};
use super::{validate_samples, Sample, TrainError};

/// Hyperparameters of the softmax trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxTrainConfig {
    /// SGD step size, must be positive.
    pub learning_rate: f64,
    /// Momentum coefficient in `[0, 1)`.
    pub momentum: f64,
    /// Minibatch size; capped at the training-set size.
    pub batch_size: usize,
    /// Passes over the data per training call.
    pub epochs: usize,
    /// Seed for the per-epoch sample shuffle.
    pub shuffle_seed: u64,
}

impl Default for SoftmaxTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            batch_size: 2048,
            epochs: 120,
            shuffle_seed: 0,
        }
    }
}

impl SoftmaxTrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::InvalidParameter {
                name: "learning_rate",
                value: self.learning_rate,
            });
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::InvalidParameter {
                name: "momentum",
                value: self.momentum,
            });
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidParameter {
                name: "batch_size",
                value: 0.0,
            });
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidParameter {
                name: "epochs",
                value: 0.0,
            });
        }
        Ok(())
    }
}

/// Linear softmax model: per-class weight rows and biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    class_count: usize,
    dim: usize,
    /// Row-major `class_count x dim` weights.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl SoftmaxModel {
    /// An untrained model (all parameters zero): its posterior is uniform.
    pub fn zeros(class_count: usize, dim: usize) -> Result<Self, TrainError> {
        if class_count < 2 {
            return Err(TrainError::TooFewClasses(class_count));
        }
        if dim == 0 {
            return Err(TrainError::ZeroDimension);
        }
        Ok(Self {
            class_count,
            dim,
            weights: vec![0.0; class_count * dim],
            biases: vec![0.0; class_count],
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn weight_row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    /// Class posterior `p(c | x)` via the numerically stabilized softmax.
    /// The returned entries are nonnegative and sum to 1 (within 1e-9).
    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>, TrainError> {
        if x.len() != self.dim {
            return Err(TrainError::DimensionMismatch {
                index: 0,
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut logits: Vec<f64> = (0..self.class_count)
            .map(|c| dot(self.weight_row(c), x) + self.biases[c])
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for logit in &mut logits {
            *logit = (*logit - max).exp();
            total += *logit;
        }
        for logit in &mut logits {
            *logit /= total;
        }
        Ok(logits)
    }

    /// Most probable class and the full posterior; ties resolve to the lowest
    /// class index.
    pub fn predict(&self, x: &[f64]) -> Result<(usize, Vec<f64>), TrainError> {
        let posterior = self.posterior(x)?;
        let mut best = 0usize;
        for (c, &p) in posterior.iter().enumerate() {
            if p > posterior[best] {
                best = c;
            }
        }
        Ok((best, posterior))
    }
}

/// Mean cross-entropy (negative log-likelihood) of the model on `samples`.
pub fn cross_entropy_loss(model: &SoftmaxModel, samples: &[Sample]) -> Result<f64, TrainError> {
    let dim = validate_samples(samples, model.class_count)?;
    if dim != model.dim {
        return Err(TrainError::DimensionMismatch {
            index: 0,
            expected: model.dim,
            got: dim,
        });
    }
    let mut total = 0.0;
    for sample in samples {
        let p = model.posterior(&sample.features)?[sample.label];
        total -= p.max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / samples.len() as f64)
}

/// Cross-entropy gradient over a batch of sample indices, accumulated into
/// flat weight/bias buffers laid out like the model parameters.
fn accumulate_gradient(
    model: &SoftmaxModel,
    samples: &[Sample],
    batch: &[usize],
    grad_weights: &mut [f64],
    grad_biases: &mut [f64],
) -> Result<(), TrainError> {
    grad_weights.fill(0.0);
    grad_biases.fill(0.0);
    let scale = 1.0 / batch.len() as f64;
    for &i in batch {
        let sample = &samples[i];
        let posterior = model.posterior(&sample.features)?;
        for (c, &p) in posterior.iter().enumerate() {
            let coefficient = scale * (p - f64::from(u8::from(c == sample.label)));
            if coefficient != 0.0 {
                let row = &mut grad_weights[c * model.dim..(c + 1) * model.dim];
                axpy(row, coefficient, &sample.features);
                grad_biases[c] += coefficient;
            }
        }
    }
    Ok(())
}

/// Trains a softmax classifier by minibatch SGD with momentum.
///
/// With `warm` given, optimization continues from those parameters (the
/// momentum buffer starts fresh each call); otherwise it starts from zeros.
pub fn train_softmax(
    samples: &[Sample],
    class_count: usize,
    warm: Option<&SoftmaxModel>,
    cfg: &SoftmaxTrainConfig,
) -> Result<SoftmaxModel, TrainError> {
    cfg.validate()?;
    let dim = validate_samples(samples, class_count)?;
    let mut model = match warm {
        Some(prev) => {
            if prev.class_count != class_count || prev.dim != dim {
                return Err(TrainError::InvalidWarmStart(format!(
                    "previous model is {}x{}, expected {class_count}x{dim}",
                    prev.class_count, prev.dim
                )));
            }
            prev.clone()
        }
        None => SoftmaxModel::zeros(class_count, dim)?,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let batch_size = cfg.batch_size.min(samples.len());
    let mut grad_weights = vec![0.0; model.weights.len()];
    let mut grad_biases = vec![0.0; model.biases.len()];
    let mut velocity_weights = vec![0.0; model.weights.len()];
    let mut velocity_biases = vec![0.0; model.biases.len()];

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            accumulate_gradient(&model, samples, batch, &mut grad_weights, &mut grad_biases)?;
            for ((w, v), g) in model
                .weights
                .iter_mut()
                .zip(&mut velocity_weights)
                .zip(&grad_weights)
            {
                *v = cfg.momentum * *v - cfg.learning_rate * g;
                *w += *v;
            }
            for ((b, v), g) in model
                .biases
                .iter_mut()
                .zip(&mut velocity_biases)
                .zip(&grad_biases)
            {
                *v = cfg.momentum * *v - cfg.learning_rate * g;
                *b += *v;
            }
        }
    }
    Ok(model)
}
