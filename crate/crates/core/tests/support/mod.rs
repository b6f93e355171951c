//! Shared helpers for the integration-test oracles. Everything here is an
//! *independent* reference implementation: it deliberately avoids the library
//! code paths it is used to check.

#![allow(dead_code)]

use std::path::PathBuf;

/// Reference solution of the box-constrained SVM dual by projected gradient
/// ascent over the explicit kernel matrix.
///
/// Maximizes `sum a - 1/2 a' Q a` over `0 <= a <= c` with
/// `Q_ij = s_i s_j (x_i . x_j + 1)`, using the step size `1 / L` where `L`
/// bounds the largest eigenvalue of `Q` by its worst absolute row sum.
pub struct QpReference {
    pub alphas: Vec<f64>,
    pub objective: f64,
    pub weights: Vec<f64>,
    pub bias: f64,
}

pub fn qp_reference_solve(xs: &[Vec<f64>], signs: &[f64], c: f64) -> QpReference {
    let n = xs.len();
    let mut q = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = xs[i].iter().zip(&xs[j]).map(|(a, b)| a * b).sum();
            q[i][j] = signs[i] * signs[j] * (dot + 1.0);
        }
    }
    let lipschitz = q
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let step = 1.0 / lipschitz;

    let mut alphas = vec![0.0f64; n];
    for _ in 0..500_000 {
        let mut worst = 0.0f64;
        for i in 0..n {
            let qa: f64 = q[i].iter().zip(&alphas).map(|(qi, a)| qi * a).sum();
            let gradient = 1.0 - qa;
            let violation = if alphas[i] <= 0.0 {
                gradient.max(0.0)
            } else if alphas[i] >= c {
                (-gradient).max(0.0)
            } else {
                gradient.abs()
            };
            worst = worst.max(violation);
            alphas[i] = (alphas[i] + step * gradient).clamp(0.0, c);
        }
        if worst < 1e-10 {
            break;
        }
    }

    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alphas[i] * alphas[j] * q[i][j];
        }
    }
    let objective = alphas.iter().sum::<f64>() - 0.5 * quad;

    let dim = xs[0].len();
    let mut weights = vec![0.0f64; dim];
    let mut bias = 0.0;
    for i in 0..n {
        for (w, &x) in weights.iter_mut().zip(&xs[i]) {
            *w += alphas[i] * signs[i] * x;
        }
        bias += alphas[i] * signs[i];
    }
    QpReference {
        alphas,
        objective,
        weights,
        bias,
    }
}

/// Primal soft-margin objective `1/2 (||w||^2 + b^2) + c * sum hinge`, for
/// weak-duality checks against the dual objective.
pub fn primal_objective(xs: &[Vec<f64>], signs: &[f64], weights: &[f64], bias: f64, c: f64) -> f64 {
    let mut hinge = 0.0;
    for (x, &s) in xs.iter().zip(signs) {
        let margin: f64 = x.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>() + bias;
        hinge += (1.0 - s * margin).max(0.0);
    }
    let norm: f64 = weights.iter().map(|w| w * w).sum::<f64>() + bias * bias;
    0.5 * norm + c * hinge
}

/// Reference sign-based Hamming decoder over an explicit coding matrix,
/// written as plain loops straight from the distance definition.
pub fn reference_decode(scores: &[f64], matrix: &[Vec<i8>]) -> usize {
    let mut best_class = 0usize;
    let mut best_distance = f64::INFINITY;
    for (class, row) in matrix.iter().enumerate() {
        let mut distance = 0.0;
        for (&m, &s) in row.iter().zip(scores) {
            if m == 0 {
                continue;
            }
            let product = f64::from(m) * s;
            if product < 0.0 {
                distance += 1.0;
            } else if product == 0.0 {
                distance += 0.5;
            }
        }
        if distance < best_distance {
            best_distance = distance;
            best_class = class;
        }
    }
    best_class
}

/// Monte-Carlo check of the closed-form alignment probability.
///
/// For random `(score, snr)` pairs with `score ~ U[-2, 2]` and `snr`
/// log-uniform over `[0.1, 100]`, draws the true score from
/// `N(score, 1/snr)` and compares the empirical same-sign frequency against
/// the closed form. Returns `(pairs_within_3_stderr, total_pairs)`.
pub fn alignment_mc_agreement(pairs: usize, draws: usize, seed: u64) -> (usize, usize) {
    use rand::Rng;
    use rand::SeedableRng;
    use rand_distr::StandardNormal;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut within = 0usize;
    for _ in 0..pairs {
        let mut score = 0.0f64;
        while score == 0.0 {
            score = rng.random::<f64>() * 4.0 - 2.0;
        }
        let snr = 10f64.powf(rng.random::<f64>() * 3.0 - 1.0);
        let closed = imparq::arq::alignment_probability(score, snr);

        let sigma = (1.0 / snr).sqrt();
        let mut agree = 0usize;
        for _ in 0..draws {
            let true_score = score + sigma * rng.sample::<f64, _>(StandardNormal);
            if true_score * score > 0.0 {
                agree += 1;
            }
        }
        let empirical = agree as f64 / draws as f64;
        let stderr = (closed * (1.0 - closed) / draws as f64).sqrt();
        if (empirical - closed).abs() <= 3.0 * stderr || empirical == closed {
            within += 1;
        }
    }
    (within, pairs)
}

/// Locates the MNIST IDX directory: `IMPARQ_MNIST_DIR` if set, else the
/// repository's `data/mnist`.
pub fn mnist_dir() -> PathBuf {
    if let Ok(dir) = std::env::var("IMPARQ_MNIST_DIR") {
        return PathBuf::from(dir);
    }
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}
