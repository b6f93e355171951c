//! Analog transmission of feature vectors over a Rayleigh block-fading channel
//! with additive white Gaussian noise, plus maximum ratio combining (MRC) of
//! repeated transmission attempts.
//!
//! Each attempt sends the real feature vector `x` uncoded. The i-th attempt is
//! received as
//!
//! ```text
//! y_i = sqrt(P) * h_i * x + z_i
//! ```
//!
//! where `h_i ~ CN(0, 1)` is the block-fading coefficient (constant over the
//! whole vector, independent across attempts) and the entries of `z_i` are
//! i.i.d. `CN(0, sigma2)`. MRC over `T` attempts weighs each attempt by its
//! conjugate fading coefficient and keeps the real part:
//!
//! ```text
//! x_hat = Re( sum_i conj(h_i) * y_i ) / (sqrt(P) * sum_i |h_i|^2)
//! ```
//!
//! Conditioned on the fading draws, `x_hat = x + e` with the entries of `e`
//! i.i.d. zero-mean Gaussian of variance `1 / snr(T)`, where the effective
//! post-combining SNR is
//!
//! ```text
//! snr(T) = (2 P / sigma2) * sum_{i<=T} |h_i|^2
//! ```
//!
//! (the factor 2 because only the real noise component survives combining).
//! Every retransmission therefore adds an independent exponential increment to
//! the effective SNR; the ARQ policies in [`crate::arq`] decide when the
//! accumulated SNR is good enough for the current sample.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Total fading energy below which a combined sample carries no usable signal.
const DEGENERACY_FLOOR: f64 = 1e-12;

/// Errors from channel configuration and combining.
#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    /// Transmit power must be a positive, finite number.
    #[error("transmit power must be positive and finite, got {0}")]
    InvalidPower(f64),
    /// Noise variance must be a positive, finite number.
    #[error("noise variance must be positive and finite, got {0}")]
    InvalidNoiseVariance(f64),
    /// Transmitting an empty feature vector is meaningless.
    #[error("feature vector is empty")]
    EmptyFeatures,
    /// Feature values must be finite reals.
    #[error("feature {index} is not finite ({value})")]
    NonFiniteFeature { index: usize, value: f64 },
    /// Combining needs at least one attempt.
    #[error("no transmission attempts to combine")]
    NoAttempts,
    /// All attempts for one sample must carry the same number of symbols.
    #[error("attempt {index} carries {got} symbols, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    /// The summed fading energy is numerically zero: the estimate would be
    /// pure noise (or a division by zero).
    #[error("total fading energy {0:e} is below the degeneracy floor {DEGENERACY_FLOOR:e}")]
    DegenerateChannel(f64),
}

/// Static parameters of the transmission link.
///
/// The average per-attempt receive SNR is `transmit_power / noise_variance`
/// (features are treated as unit-scale symbols). `rng_seed` seeds the
/// generator used when the channel is driven standalone via [`ChannelConfig::rng`];
/// the simulator instead threads a single run-level generator through
/// [`transmit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Transmit power `P` scaling every sent symbol.
    pub transmit_power: f64,
    /// Variance `sigma2` of the complex receiver noise per symbol.
    pub noise_variance: f64,
    /// Seed for standalone channel use.
    pub rng_seed: u64,
}

impl ChannelConfig {
    /// Builds a configuration from explicit power and noise variance.
    pub fn new(
        transmit_power: f64,
        noise_variance: f64,
        rng_seed: u64,
    ) -> Result<Self, ChannelError> {
        let cfg = Self {
            transmit_power,
            noise_variance,
            rng_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds a configuration with unit noise variance and the transmit power
    /// chosen so that the average per-attempt SNR equals `snr_db` decibels.
    pub fn from_average_snr_db(snr_db: f64, rng_seed: u64) -> Result<Self, ChannelError> {
        Self::new(10f64.powf(snr_db / 10.0), 1.0, rng_seed)
    }

    /// Checks that power and noise variance are usable.
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.transmit_power.is_finite() && self.transmit_power > 0.0) {
            return Err(ChannelError::InvalidPower(self.transmit_power));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance > 0.0) {
            return Err(ChannelError::InvalidNoiseVariance(self.noise_variance));
        }
        Ok(())
    }

    /// Average per-attempt SNR `P / sigma2` (linear).
    pub fn average_snr(&self) -> f64 {
        self.transmit_power / self.noise_variance
    }

    /// Average per-attempt SNR in decibels.
    pub fn average_snr_db(&self) -> f64 {
        10.0 * self.average_snr().log10()
    }

    /// A deterministic generator seeded from `rng_seed`, for standalone use.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng_seed)
    }
}

/// One transmission of a feature vector: the fading draw and what arrived.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionAttempt {
    /// Block-fading coefficient `h ~ CN(0, 1)` for this attempt.
    pub fading: Complex64,
    /// Received symbols `y_j = sqrt(P) * h * x_j + z_j`.
    pub received: Vec<Complex64>,
}

/// MRC output over one or more attempts of the same sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedSample {
    /// The estimate `x_hat` of the transmitted feature vector.
    pub estimate: Vec<f64>,
    /// Effective post-combining SNR `(2 P / sigma2) * sum |h_i|^2`.
    pub effective_snr: f64,
    /// Number of attempts combined so far.
    pub attempt_count: usize,
}

/// Sends `features` once over the channel.
///
/// Draw order from `rng` is fixed: fading real part, fading imaginary part,
/// then for each symbol the noise real part followed by the imaginary part.
/// This order is part of the reproducibility contract.
pub fn transmit<R: Rng + ?Sized>(
    features: &[f64],
    cfg: &ChannelConfig,
    rng: &mut R,
) -> Result<TransmissionAttempt, ChannelError> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(ChannelError::EmptyFeatures);
    }
    if let Some((index, &value)) = features.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(ChannelError::NonFiniteFeature { index, value });
    }
    // h ~ CN(0, 1): independent real/imaginary parts of variance 1/2.
    let comp_std = 0.5f64.sqrt();
    let h_re: f64 = rng.sample(StandardNormal);
    let h_im: f64 = rng.sample(StandardNormal);
    let fading = Complex64::new(h_re * comp_std, h_im * comp_std);

    let amplitude = cfg.transmit_power.sqrt();
    // z entries ~ CN(0, sigma2): real/imaginary parts of variance sigma2 / 2.
    let noise_std = (cfg.noise_variance / 2.0).sqrt();
    let received = features
        .iter()
        .map(|&x| {
            let z_re: f64 = rng.sample(StandardNormal);
            let z_im: f64 = rng.sample(StandardNormal);
            amplitude * fading * x + Complex64::new(z_re * noise_std, z_im * noise_std)
        })
        .collect();

    Ok(TransmissionAttempt {
        fading,
        received,
    })
}

/// Maximum ratio combining over all `attempts` of one sample.
pub fn combine(
    attempts: &[TransmissionAttempt],
    cfg: &ChannelConfig,
) -> Result<CombinedSample, ChannelError> {
    cfg.validate()?;
    let first = attempts.first().ok_or(ChannelError::NoAttempts)?;
    let dim = first.received.len();
    if dim == 0 {
        return Err(ChannelError::EmptyFeatures);
    }
    for (index, attempt) in attempts.iter().enumerate() {
        if attempt.received.len() != dim {
            return Err(ChannelError::DimensionMismatch {
                index,
                expected: dim,
                got: attempt.received.len(),
            });
        }
    }

    let energy: f64 = attempts.iter().map(|a| a.fading.norm_sqr()).sum();
    if energy < DEGENERACY_FLOOR {
        return Err(ChannelError::DegenerateChannel(energy));
    }

    let scale = cfg.transmit_power.sqrt() * energy;
    let estimate = (0..dim)
        .map(|j| {
            let acc: f64 = attempts
                .iter()
                .map(|a| (a.fading.conj() * a.received[j]).re)
                .sum();
            acc / scale
        })
        .collect();

    Ok(CombinedSample {
        estimate,
        effective_snr: effective_snr(energy, cfg),
        attempt_count: attempts.len(),
    })
}

/// Folds one more attempt into an existing combined sample in `O(p)` without
/// revisiting earlier attempts.
///
/// The result is numerically the same as [`combine`] over the full attempt
/// list: the running MRC numerator is recovered from the stored estimate and
/// effective SNR, updated with the new attempt, and renormalized.
pub fn combine_incremental(
    current: &CombinedSample,
    attempt: &TransmissionAttempt,
    cfg: &ChannelConfig,
) -> Result<CombinedSample, ChannelError> {
    cfg.validate()?;
    let dim = current.estimate.len();
    if dim == 0 {
        return Err(ChannelError::EmptyFeatures);
    }
    if attempt.received.len() != dim {
        return Err(ChannelError::DimensionMismatch {
            index: current.attempt_count,
            expected: dim,
            got: attempt.received.len(),
        });
    }

    let amplitude = cfg.transmit_power.sqrt();
    let prev_energy =
        current.effective_snr * cfg.noise_variance / (2.0 * cfg.transmit_power);
    let energy = prev_energy + attempt.fading.norm_sqr();
    if energy < DEGENERACY_FLOOR {
        return Err(ChannelError::DegenerateChannel(energy));
    }

    let estimate = current
        .estimate
        .iter()
        .zip(&attempt.received)
        .map(|(&est, &y)| {
            let acc = est * amplitude * prev_energy + (attempt.fading.conj() * y).re;
            acc / (amplitude * energy)
        })
        .collect();

    Ok(CombinedSample {
        estimate,
        effective_snr: effective_snr(energy, cfg),
        attempt_count: current.attempt_count + 1,
    })
}

fn effective_snr(fading_energy: f64, cfg: &ChannelConfig) -> f64 {
    2.0 * cfg.transmit_power / cfg.noise_variance * fading_energy
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> ChannelConfig {
        ChannelConfig::new(2.0, 0.5, 7).unwrap()
    }

    #[test]
    fn config_validation_rejects_bad_parameters() {
        assert_eq!(
            ChannelConfig::new(0.0, 1.0, 0),
            Err(ChannelError::InvalidPower(0.0))
        );
        assert_eq!(
            ChannelConfig::new(1.0, -1.0, 0),
            Err(ChannelError::InvalidNoiseVariance(-1.0))
        );
        assert!(ChannelConfig::new(f64::NAN, 1.0, 0).is_err());
    }

    #[test]
    fn snr_db_conversion_matches_linear() {
        let cfg = ChannelConfig::from_average_snr_db(4.0, 0).unwrap();
        assert_relative_eq!(cfg.transmit_power, 2.511886431509580, max_relative = 1e-12);
        assert_eq!(cfg.noise_variance, 1.0);
        assert_relative_eq!(cfg.average_snr_db(), 4.0, max_relative = 1e-12);
    }

    #[test]
    fn transmit_rejects_bad_features() {
        let cfg = cfg();
        let mut rng = cfg.rng();
        assert_eq!(
            transmit(&[], &cfg, &mut rng),
            Err(ChannelError::EmptyFeatures)
        );
        let err = transmit(&[1.0, f64::INFINITY], &cfg, &mut rng).unwrap_err();
        assert_eq!(
            err,
            ChannelError::NonFiniteFeature {
                index: 1,
                value: f64::INFINITY
            }
        );
    }

    #[test]
    fn transmit_is_deterministic_for_a_seed() {
        let cfg = cfg();
        let x = [0.25, 0.0, 1.0];
        let a = transmit(&x, &cfg, &mut cfg.rng()).unwrap();
        let b = transmit(&x, &cfg, &mut cfg.rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn combine_reports_effective_snr_from_fading_energy() {
        let cfg = cfg();
        // Hand-built attempts with known fading: energy = 1^2 + |3/4i|^2.
        let h1 = Complex64::new(1.0, 0.0);
        let h2 = Complex64::new(0.0, 0.75);
        let x = [0.5, -0.25];
        let make = |h: Complex64| TransmissionAttempt {
            fading: h,
            received: x
                .iter()
                .map(|&v| cfg.transmit_power.sqrt() * h * v)
                .collect(),
        };
        let combined = combine(&[make(h1), make(h2)], &cfg).unwrap();
        let energy = 1.0 + 0.5625;
        assert_relative_eq!(
            combined.effective_snr,
            2.0 * cfg.transmit_power / cfg.noise_variance * energy,
            max_relative = 1e-12
        );
        // Noiseless attempts recover the features exactly.
        for (est, truth) in combined.estimate.iter().zip(&x) {
            assert_relative_eq!(est, truth, max_relative = 1e-12);
        }
        assert_eq!(combined.attempt_count, 2);
    }

    #[test]
    fn combine_rejects_empty_and_mismatched_input() {
        let cfg = cfg();
        assert_eq!(combine(&[], &cfg), Err(ChannelError::NoAttempts));
        let mut rng = cfg.rng();
        let a = transmit(&[1.0, 2.0], &cfg, &mut rng).unwrap();
        let b = transmit(&[1.0], &cfg, &mut rng).unwrap();
        assert_eq!(
            combine(&[a, b], &cfg),
            Err(ChannelError::DimensionMismatch {
                index: 1,
                expected: 2,
                got: 1
            })
        );
    }

    #[test]
    fn combine_rejects_degenerate_fading() {
        let cfg = cfg();
        let attempt = TransmissionAttempt {
            fading: Complex64::new(1e-9, 0.0),
            received: vec![Complex64::new(0.3, 0.1)],
        };
        match combine(&[attempt], &cfg) {
            Err(ChannelError::DegenerateChannel(e)) => assert!(e < 1e-12),
            other => panic!("expected degenerate channel, got {other:?}"),
        }
    }

    #[test]
    fn incremental_combining_matches_batch() {
        let cfg = cfg();
        let mut rng = cfg.rng();
        let x: Vec<f64> = (0..16).map(|i| (i as f64) / 15.0).collect();
        let attempts: Vec<_> = (0..6)
            .map(|_| transmit(&x, &cfg, &mut rng).unwrap())
            .collect();

        let mut incremental = combine(&attempts[..1], &cfg).unwrap();
        for attempt in &attempts[1..] {
            incremental = combine_incremental(&incremental, attempt, &cfg).unwrap();
        }
        let batch = combine(&attempts, &cfg).unwrap();

        assert_eq!(incremental.attempt_count, batch.attempt_count);
        assert_relative_eq!(
            incremental.effective_snr,
            batch.effective_snr,
            max_relative = 1e-9
        );
        for (a, b) in incremental.estimate.iter().zip(&batch.estimate) {
            assert_relative_eq!(a, b, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn effective_snr_is_additive_over_attempts() {
        let cfg = cfg();
        let mut rng = cfg.rng();
        let x = [0.2, 0.4, 0.9];
        let attempts: Vec<_> = (0..5)
            .map(|_| transmit(&x, &cfg, &mut rng).unwrap())
            .collect();
        let total = combine(&attempts, &cfg).unwrap().effective_snr;
        let sum: f64 = attempts
            .iter()
            .map(|a| combine(std::slice::from_ref(a), &cfg).unwrap().effective_snr)
            .sum();
        assert_relative_eq!(total, sum, max_relative = 1e-9);
    }
}
