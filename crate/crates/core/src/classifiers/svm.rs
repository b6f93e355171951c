//! Linear soft-margin SVM trained by single-coordinate dual ascent (ISDA
//! style) with an augmented linear kernel.
//!
//! The primal problem is the usual soft-margin objective
//!
//! ```text
//! min_{w, b}  1/2 (||w||^2 + b^2) + C * sum_i max(0, 1 - c_i (w . x_i + b))
//! ```
//!
//! where the bias is folded into the regularizer by augmenting the kernel with
//! a constant component, `k(x, x') = x . x' + 1`. The dual then has box
//! constraints only,
//!
//! ```text
//! max_a  sum_i a_i - 1/2 sum_ij a_i a_j c_i c_j k(x_i, x_j),   0 <= a_i <= C,
//! ```
//!
//! which single-coordinate updates can solve without maintaining an equality
//! constraint: picking coordinates in a seeded random order, each step moves
//! `a_i` to its box-clipped unconstrained optimum and updates `w = sum a_i c_i
//! x_i` and `b = sum a_i c_i` in place. Iteration stops when every coordinate
//! satisfies the Karush-Kuhn-Tucker conditions within a tolerance. Because the
//! per-coordinate state is the dual vector itself, a fit over a sample list
//! warm-starts the fit over any extension of that list, which keeps
//! sample-by-sample retraining cheap during acquisition.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{axpy, dot};
use super::{validate_samples, Sample, TrainError};

/// Weight norms below this are treated as an untrained boundary.
const NORM_FLOOR: f64 = 1e-12;

/// Hyperparameters of the dual-ascent SVM trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmTrainConfig {
    /// Slack penalty `C`: upper bound on every dual coefficient.
    pub slack_penalty: f64,
    /// Training stops once the largest KKT violation falls below this.
    pub kkt_tolerance: f64,
    /// Upper bound on full passes over the data.
    pub max_epochs: usize,
    /// Seed for the per-epoch coordinate shuffle.
    pub shuffle_seed: u64,
}

impl Default for SvmTrainConfig {
    fn default() -> Self {
        Self {
            slack_penalty: 1.0,
            kkt_tolerance: 1e-3,
            max_epochs: 1000,
            shuffle_seed: 0,
        }
    }
}

impl SvmTrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.slack_penalty.is_finite() && self.slack_penalty > 0.0) {
            return Err(TrainError::InvalidParameter {
                name: "slack_penalty",
                value: self.slack_penalty,
            });
        }
        if !(self.kkt_tolerance.is_finite() && self.kkt_tolerance > 0.0) {
            return Err(TrainError::InvalidParameter {
                name: "kkt_tolerance",
                value: self.kkt_tolerance,
            });
        }
        if self.max_epochs == 0 {
            return Err(TrainError::InvalidParameter {
                name: "max_epochs",
                value: 0.0,
            });
        }
        Ok(())
    }
}

/// A separating hyperplane `w . x + b = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearBoundary {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearBoundary {
    /// An all-zero (untrained) boundary of the given dimension.
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    /// Euclidean norm of the weight vector (the bias is excluded).
    pub fn weight_norm(&self) -> f64 {
        dot(&self.weights, &self.weights).sqrt()
    }

    /// Unnormalized margin `w . x + b`. Its sign is the predicted class.
    pub fn raw_margin(&self, x: &[f64]) -> Result<f64, TrainError> {
        if x.len() != self.weights.len() {
            return Err(TrainError::DimensionMismatch {
                index: 0,
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        Ok(dot(&self.weights, x) + self.bias)
    }

    /// Normalized score `(w . x + b) / ||w||`: the signed Euclidean distance
    /// of `x` from the boundary. Errors on a (near-)zero weight vector.
    pub fn score(&self, x: &[f64]) -> Result<f64, TrainError> {
        let norm = self.weight_norm();
        if norm < NORM_FLOOR {
            return Err(TrainError::UntrainedModel);
        }
        Ok(self.raw_margin(x)? / norm)
    }
}

/// A trained SVM: the boundary plus the solver state needed to warm-start
/// retraining after the sample list grows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmFit {
    pub boundary: LinearBoundary,
    /// Value of the box-constrained dual objective at the returned solution.
    pub dual_objective: f64,
    /// Whether the KKT tolerance was reached within the epoch budget.
    pub converged: bool,
    /// Full passes the solver actually ran.
    pub epochs_run: usize,
    /// Dual coefficients, one per training sample, in sample order.
    alphas: Vec<f64>,
}

impl SvmFit {
    /// Dual coefficients in training-sample order.
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }
}

/// Trains a binary SVM from scratch. Labels must be `{0, 1}`; label 1 is the
/// positive class (`+1` sign).
pub fn train_binary_svm(samples: &[Sample], cfg: &SvmTrainConfig) -> Result<SvmFit, TrainError> {
    train_binary_svm_warm(samples, cfg, None)
}

/// Trains a binary SVM, optionally warm-starting from a previous fit.
///
/// The warm fit must have been produced on a prefix of `samples` (the online
/// pool only ever appends); its dual coefficients are reused and new samples
/// enter with zero coefficients.
pub fn train_binary_svm_warm(
    samples: &[Sample],
    cfg: &SvmTrainConfig,
    warm: Option<&SvmFit>,
) -> Result<SvmFit, TrainError> {
    cfg.validate()?;
    let dim = validate_samples(samples, 2)?;
    let positives = samples.iter().filter(|s| s.label == 1).count();
    if positives == 0 || positives == samples.len() {
        return Err(TrainError::SingleClass(samples[0].label));
    }

    let xs: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
    let signs: Vec<f64> = samples
        .iter()
        .map(|s| if s.label == 1 { 1.0 } else { -1.0 })
        .collect();
    solve(&xs, &signs, dim, cfg, warm)
}

/// Shared dual-ascent core, also used per one-vs-one component.
pub(crate) fn solve(
    xs: &[&[f64]],
    signs: &[f64],
    dim: usize,
    cfg: &SvmTrainConfig,
    warm: Option<&SvmFit>,
) -> Result<SvmFit, TrainError> {
    let n = xs.len();
    let (mut alphas, mut weights, mut bias) = match warm {
        Some(fit) => {
            if fit.alphas.len() > n {
                return Err(TrainError::InvalidWarmStart(format!(
                    "previous fit covers {} samples but only {} were provided",
                    fit.alphas.len(),
                    n
                )));
            }
            if fit.boundary.weights.len() != dim {
                return Err(TrainError::InvalidWarmStart(format!(
                    "previous fit has dimension {}, expected {dim}",
                    fit.boundary.weights.len()
                )));
            }
            if fit.alphas.is_empty() && fit.boundary.weight_norm() > 0.0 {
                return Err(TrainError::InvalidWarmStart(
                    "previous fit carries no dual coefficients".into(),
                ));
            }
            let mut alphas = fit.alphas.clone();
            alphas.resize(n, 0.0);
            (alphas, fit.boundary.weights.clone(), fit.boundary.bias)
        }
        None => (vec![0.0; n], vec![0.0; dim], 0.0),
    };

    // Diagonal of the augmented kernel, q_ii = ||x_i||^2 + 1 > 0.
    let diag: Vec<f64> = xs.iter().map(|x| dot(x, x) + 1.0).collect();
    let c = cfg.slack_penalty;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);

    let mut converged = false;
    let mut epochs_run = 0;
    for _ in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut worst_violation = 0.0f64;
        for &i in &order {
            let margin = dot(&weights, xs[i]) + bias;
            // Gradient of the dual objective with respect to alpha_i.
            let gradient = 1.0 - signs[i] * margin;
            let violation = if alphas[i] <= 0.0 {
                gradient.max(0.0)
            } else if alphas[i] >= c {
                (-gradient).max(0.0)
            } else {
                gradient.abs()
            };
            worst_violation = worst_violation.max(violation);

            let updated = (alphas[i] + gradient / diag[i]).clamp(0.0, c);
            let delta = updated - alphas[i];
            if delta != 0.0 {
                axpy(&mut weights, delta * signs[i], xs[i]);
                bias += delta * signs[i];
                alphas[i] = updated;
            }
        }
        epochs_run += 1;
        if worst_violation < cfg.kkt_tolerance {
            converged = true;
            break;
        }
    }

    let sum_alpha: f64 = alphas.iter().sum();
    // a' Q a collapses to ||w||^2 + b^2 for the augmented linear kernel.
    let dual_objective = sum_alpha - 0.5 * (dot(&weights, &weights) + bias * bias);

    Ok(SvmFit {
        boundary: LinearBoundary { weights, bias },
        dual_objective,
        converged,
        epochs_run,
        alphas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn tight() -> SvmTrainConfig {
        SvmTrainConfig {
            kkt_tolerance: 1e-8,
            ..SvmTrainConfig::default()
        }
    }

    /// Two opposing points on the x-axis: the dual optimum is alpha = 1/2 for
    /// both, giving w = (1, 0), b = 0 and score((2, 0)) = 2.
    #[test]
    fn two_point_problem_has_known_solution() {
        let samples = vec![
            Sample::new(vec![1.0, 0.0], 1),
            Sample::new(vec![-1.0, 0.0], 0),
        ];
        let fit = train_binary_svm(&samples, &tight()).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.alphas()[0], 0.5, max_relative = 1e-6);
        assert_relative_eq!(fit.alphas()[1], 0.5, max_relative = 1e-6);
        assert_relative_eq!(fit.boundary.weights[0], 1.0, max_relative = 1e-6);
        assert!(fit.boundary.weights[1].abs() < 1e-9);
        assert!(fit.boundary.bias.abs() < 1e-9);
        assert_relative_eq!(fit.dual_objective, 0.5, max_relative = 1e-6);
        assert_relative_eq!(
            fit.boundary.score(&[2.0, 0.0]).unwrap(),
            2.0,
            max_relative = 1e-6
        );
    }

    #[test]
    fn rejects_single_class_and_bad_config() {
        let one_class = vec![Sample::new(vec![1.0], 1), Sample::new(vec![2.0], 1)];
        assert_eq!(
            train_binary_svm(&one_class, &SvmTrainConfig::default()),
            Err(TrainError::SingleClass(1))
        );
        let cfg = SvmTrainConfig {
            slack_penalty: -1.0,
            ..SvmTrainConfig::default()
        };
        let ok = vec![Sample::new(vec![1.0], 1), Sample::new(vec![-1.0], 0)];
        assert_eq!(
            train_binary_svm(&ok, &cfg),
            Err(TrainError::InvalidParameter {
                name: "slack_penalty",
                value: -1.0
            })
        );
    }

    #[test]
    fn score_errors_on_untrained_boundary_and_wrong_dimension() {
        let boundary = LinearBoundary::zeros(3);
        assert_eq!(boundary.score(&[1.0, 2.0, 3.0]), Err(TrainError::UntrainedModel));
        let boundary = LinearBoundary {
            weights: vec![1.0, 0.0],
            bias: 0.0,
        };
        assert!(matches!(
            boundary.score(&[1.0]),
            Err(TrainError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn score_is_invariant_to_boundary_rescaling() {
        let base = LinearBoundary {
            weights: vec![0.3, -1.2, 0.7],
            bias: 0.4,
        };
        let scaled = LinearBoundary {
            weights: base.weights.iter().map(|w| w * 7.5).collect(),
            bias: base.bias * 7.5,
        };
        let x = [0.2, 0.9, -0.3];
        assert_relative_eq!(
            base.score(&x).unwrap(),
            scaled.score(&x).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn points_on_the_hyperplane_score_zero() {
        let boundary = LinearBoundary {
            weights: vec![1.0, 1.0],
            bias: -1.0,
        };
        assert!(boundary.score(&[0.5, 0.5]).unwrap().abs() < 1e-12);
    }

    fn gaussian_blobs(n_per_class: usize, separation: f64, seed: u64) -> Vec<Sample> {
        use rand_distr::StandardNormal;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::new();
        for label in [0usize, 1] {
            let center = if label == 1 { separation } else { -separation };
            for _ in 0..n_per_class {
                let features = (0..4)
                    .map(|_| center + 0.5 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                samples.push(Sample::new(features, label));
            }
        }
        samples
    }

    #[test]
    fn separable_blobs_are_classified_perfectly() {
        let samples = gaussian_blobs(60, 2.0, 3);
        let fit = train_binary_svm(&samples, &SvmTrainConfig::default()).unwrap();
        assert!(fit.converged);
        for sample in &samples {
            let margin = fit.boundary.raw_margin(&sample.features).unwrap();
            let predicted = usize::from(margin > 0.0);
            assert_eq!(predicted, sample.label);
        }
    }

    #[test]
    fn duplicating_a_training_point_leaves_the_boundary_unchanged() {
        let mut samples = gaussian_blobs(40, 1.5, 11);
        let base = train_binary_svm(&samples, &tight()).unwrap();
        samples.push(samples[0].clone());
        let dup = train_binary_svm(&samples, &tight()).unwrap();

        let norm_a = base.boundary.weight_norm();
        let norm_b = dup.boundary.weight_norm();
        for (a, b) in base.boundary.weights.iter().zip(&dup.boundary.weights) {
            assert_relative_eq!(a / norm_a, b / norm_b, epsilon = 1e-4);
        }
        assert_relative_eq!(
            base.boundary.bias / norm_a,
            dup.boundary.bias / norm_b,
            epsilon = 1e-4
        );
    }

    /// Warm-started incremental retraining lands on the same solution as a
    /// cold solve over the grown pool.
    #[test]
    fn warm_start_matches_cold_solution() {
        let samples = gaussian_blobs(50, 1.0, 7);
        let cfg = tight();
        let mut warm = train_binary_svm(&samples[..60], &cfg).unwrap();
        for end in [70, 85, 100] {
            warm = train_binary_svm_warm(&samples[..end], &cfg, Some(&warm)).unwrap();
        }
        let cold = train_binary_svm(&samples, &cfg).unwrap();
        assert_relative_eq!(
            warm.dual_objective,
            cold.dual_objective,
            max_relative = 1e-6
        );
        let x = [0.3, -0.2, 0.8, 0.1];
        assert_relative_eq!(
            warm.boundary.score(&x).unwrap(),
            cold.boundary.score(&x).unwrap(),
            epsilon = 1e-3
        );
    }

    #[test]
    fn warm_start_rejects_shrunken_or_mismatched_pools() {
        let samples = gaussian_blobs(10, 1.0, 5);
        let fit = train_binary_svm(&samples, &SvmTrainConfig::default()).unwrap();
        // Two samples (one per class) cannot be an extension of the
        // twenty-sample pool the fit was produced on.
        let shrunk = vec![samples[0].clone(), samples[10].clone()];
        assert!(matches!(
            train_binary_svm_warm(&shrunk, &SvmTrainConfig::default(), Some(&fit)),
            Err(TrainError::InvalidWarmStart(_))
        ));
        // Dimension changes are rejected too.
        let narrow = vec![Sample::new(vec![1.0], 1), Sample::new(vec![-1.0], 0)];
        assert!(matches!(
            train_binary_svm_warm(&narrow, &SvmTrainConfig::default(), Some(&fit)),
            Err(TrainError::InvalidWarmStart(_))
        ));
    }

    #[test]
    fn dual_coefficients_respect_the_box() {
        let samples = gaussian_blobs(30, 0.3, 13); // heavily overlapping
        let cfg = SvmTrainConfig {
            slack_penalty: 0.7,
            ..tight()
        };
        let fit = train_binary_svm(&samples, &cfg).unwrap();
        for &alpha in fit.alphas() {
            assert!((-1e-12..=0.7 + 1e-12).contains(&alpha), "alpha {alpha}");
        }
    }
}
