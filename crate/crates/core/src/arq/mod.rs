//! Retransmission decision policies: when has a sample been received well
//! enough for learning?
//!
//! After `T` combined attempts a sample's estimate has effective SNR
//! `snr(T)`, and the current model assigns it an importance: either the
//! distance-based uncertainty of an SVM score or the entropy of a softmax
//! posterior. The policies compare `snr(T)` against a per-sample threshold:
//!
//! * **Importance (binary SVM).** The true score of the clean sample,
//!   conditioned on the estimate's score `s`, is Gaussian with mean `s` and
//!   variance `1 / snr(T)`. The probability that estimate and truth sit on
//!   the same side of the boundary (the *alignment probability*) is
//!   `1/2 [1 + erf(sqrt(snr) |s| / sqrt(2))]`, so requiring alignment at
//!   least `p_c` is exactly requiring `snr(T) > theta0 / s^2 = theta0 * U_d`
//!   with the conversion ratio `theta0 = [sqrt(2) erfinv(2 p_c - 1)]^2`. A
//!   cap `theta_snr` bounds the budget spent on hopelessly uncertain samples.
//! * **Importance (multiclass SVM).** Same per component: the threshold is
//!   the worst capped per-component requirement over the components in which
//!   the predicted class participates.
//! * **Importance (entropy).** For probabilistic models the threshold scales
//!   linearly in the posterior entropy `U_e` from `theta0` (certain) to
//!   `theta_snr` (uniform posterior): `theta0 * (1 + gamma * U_e)` with
//!   `gamma = (theta_snr / theta0 - 1) / ln C`.
//! * **Channel-aware.** The conventional baseline: a fixed SNR target
//!   `theta_snr`, independent of the sample.
//!
//! Acceptance is strict (`snr > threshold`); equality retransmits.

mod special;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::CodingMatrix;
use special::{erf, erf_inv};

/// Scores with magnitude below this produce an infinite distance uncertainty.
const SCORE_FLOOR: f64 = 1e-12;

/// Errors from policy configuration and uncertainty inputs.
#[derive(Debug, Error, PartialEq)]
pub enum ArqError {
    /// The target alignment probability must lie strictly in (0.5, 1).
    #[error("alignment probability must lie strictly between 0.5 and 1, got {0}")]
    InvalidAlignmentProbability(f64),
    /// Thresholds must be positive finite numbers.
    #[error("{name} must be positive and finite, got {value}")]
    InvalidThreshold { name: &'static str, value: f64 },
    /// The entropy policy interpolates from `theta0` up to the cap, so the
    /// cap cannot sit below `theta0`.
    #[error("SNR cap {cap} is below the conversion ratio {theta0}")]
    ThresholdOrder { theta0: f64, cap: f64 },
    /// Entropy scaling needs the number of classes for `U_max = ln C`.
    #[error("entropy policy needs at least two classes, got {0}")]
    TooFewClasses(usize),
    /// A posterior input was not a probability vector.
    #[error("invalid posterior: {0}")]
    InvalidPosterior(String),
    /// Stored derived fields disagree with the primary parameter.
    #[error("inconsistent configuration: {0}")]
    Inconsistent(String),
}

/// The retransmission policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Importance ARQ driven by binary-SVM distance uncertainty.
    ImportanceBinarySvm,
    /// Importance ARQ over one-vs-one multiclass SVM components.
    ImportanceMulticlassSvm,
    /// Importance ARQ driven by posterior entropy.
    ImportanceEntropy,
    /// Conventional ARQ with a fixed SNR target.
    ChannelAware,
    /// Accept every sample after its first transmission.
    NoRetransmission,
}

impl PolicyKind {
    /// Whether the policy adapts its threshold to model uncertainty.
    pub fn is_importance(self) -> bool {
        matches!(
            self,
            PolicyKind::ImportanceBinarySvm
                | PolicyKind::ImportanceMulticlassSvm
                | PolicyKind::ImportanceEntropy
        )
    }

    /// Short name used in output file names.
    pub fn slug(self) -> &'static str {
        match self {
            PolicyKind::ImportanceBinarySvm => "importance-svm",
            PolicyKind::ImportanceMulticlassSvm => "importance-mc-svm",
            PolicyKind::ImportanceEntropy => "importance-entropy",
            PolicyKind::ChannelAware => "channel-aware",
            PolicyKind::NoRetransmission => "none",
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.slug())
    }
}

/// A sample's importance to the current model.
///
/// `Finite` values order naturally and every `Finite` is below `Infinite`
/// (the derived ordering guarantees this because the variants are declared in
/// that order). Infinite uncertainty arises when an estimate lands exactly on
/// a decision boundary.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Uncertainty {
    Finite(f64),
    Infinite,
}

impl Uncertainty {
    pub fn is_infinite(self) -> bool {
        matches!(self, Uncertainty::Infinite)
    }

    /// The finite value, if there is one.
    pub fn finite(self) -> Option<f64> {
        match self {
            Uncertainty::Finite(v) => Some(v),
            Uncertainty::Infinite => None,
        }
    }
}

impl std::fmt::Display for Uncertainty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Uncertainty::Finite(v) => write!(f, "{v}"),
            Uncertainty::Infinite => f.write_str("inf"),
        }
    }
}

/// Whether to keep or stop retransmitting a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Retransmit,
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decision::Accept => "accept",
            Decision::Retransmit => "retransmit",
        })
    }
}

/// Everything a policy looked at for one decision, for run logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    /// Measured uncertainty of the estimate under the current model.
    pub uncertainty: Uncertainty,
    /// SNR the sample had to exceed to be accepted.
    pub snr_threshold: f64,
    /// Effective SNR the estimate actually had.
    pub effective_snr: f64,
    pub decision: Decision,
}

/// Parameters of a retransmission policy.
///
/// Exactly one of `{alignment_target, conversion_ratio}` is primary: when the
/// alignment target `p_c` is given, `conversion_ratio` is derived from it via
/// [`theta0_from_pc`]; the entropy policy sets `conversion_ratio` directly and
/// leaves `alignment_target` empty. All SNR quantities are linear (not dB).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArqConfig {
    pub policy: PolicyKind,
    /// Target alignment probability `p_c` in (0.5, 1), where applicable.
    pub alignment_target: Option<f64>,
    /// Conversion ratio `theta0` from uncertainty to an SNR requirement.
    pub conversion_ratio: f64,
    /// Cap `theta_snr` on any per-sample SNR requirement; also the fixed
    /// target of the channel-aware policy.
    pub max_snr_threshold: f64,
    /// Entropy scaling `gamma` (entropy policy only, zero otherwise).
    pub entropy_scaling: f64,
    /// Largest possible entropy `ln C` (entropy policy only, zero otherwise).
    pub max_entropy: f64,
}

fn check_threshold(name: &'static str, value: f64) -> Result<(), ArqError> {
    if !(value.is_finite() && value > 0.0) {
        return Err(ArqError::InvalidThreshold { name, value });
    }
    Ok(())
}

impl ArqConfig {
    /// Importance ARQ for a binary SVM, with `theta0` derived from the target
    /// alignment probability.
    pub fn importance_binary_svm(
        alignment_target: f64,
        max_snr_threshold: f64,
    ) -> Result<Self, ArqError> {
        check_threshold("max_snr_threshold", max_snr_threshold)?;
        Ok(Self {
            policy: PolicyKind::ImportanceBinarySvm,
            alignment_target: Some(alignment_target),
            conversion_ratio: theta0_from_pc(alignment_target)?,
            max_snr_threshold,
            entropy_scaling: 0.0,
            max_entropy: 0.0,
        })
    }

    /// Importance ARQ for a binary SVM with `theta0` given directly.
    pub fn importance_binary_svm_from_theta0(
        conversion_ratio: f64,
        max_snr_threshold: f64,
    ) -> Result<Self, ArqError> {
        check_threshold("conversion_ratio", conversion_ratio)?;
        check_threshold("max_snr_threshold", max_snr_threshold)?;
        Ok(Self {
            policy: PolicyKind::ImportanceBinarySvm,
            alignment_target: None,
            conversion_ratio,
            max_snr_threshold,
            entropy_scaling: 0.0,
            max_entropy: 0.0,
        })
    }

    /// Importance ARQ over one-vs-one multiclass components.
    pub fn importance_multiclass_svm(
        alignment_target: f64,
        max_snr_threshold: f64,
    ) -> Result<Self, ArqError> {
        Ok(Self {
            policy: PolicyKind::ImportanceMulticlassSvm,
            ..Self::importance_binary_svm(alignment_target, max_snr_threshold)?
        })
    }

    /// Entropy-scaled importance ARQ for probabilistic classifiers over
    /// `class_count` classes. The threshold interpolates from
    /// `conversion_ratio` at zero entropy to `max_snr_threshold` at the
    /// uniform posterior, so the cap must not sit below the ratio.
    pub fn importance_entropy(
        conversion_ratio: f64,
        max_snr_threshold: f64,
        class_count: usize,
    ) -> Result<Self, ArqError> {
        check_threshold("conversion_ratio", conversion_ratio)?;
        check_threshold("max_snr_threshold", max_snr_threshold)?;
        if class_count < 2 {
            return Err(ArqError::TooFewClasses(class_count));
        }
        if max_snr_threshold < conversion_ratio {
            return Err(ArqError::ThresholdOrder {
                theta0: conversion_ratio,
                cap: max_snr_threshold,
            });
        }
        let max_entropy = (class_count as f64).ln();
        Ok(Self {
            policy: PolicyKind::ImportanceEntropy,
            alignment_target: None,
            conversion_ratio,
            max_snr_threshold,
            entropy_scaling: (max_snr_threshold / conversion_ratio - 1.0) / max_entropy,
            max_entropy,
        })
    }

    /// Conventional channel-aware ARQ with a fixed SNR target.
    pub fn channel_aware(max_snr_threshold: f64) -> Result<Self, ArqError> {
        check_threshold("max_snr_threshold", max_snr_threshold)?;
        Ok(Self {
            policy: PolicyKind::ChannelAware,
            alignment_target: None,
            conversion_ratio: 0.0,
            max_snr_threshold,
            entropy_scaling: 0.0,
            max_entropy: 0.0,
        })
    }

    /// Accept everything on the first attempt.
    pub fn no_retransmission() -> Self {
        Self {
            policy: PolicyKind::NoRetransmission,
            alignment_target: None,
            conversion_ratio: 0.0,
            max_snr_threshold: 0.0,
            entropy_scaling: 0.0,
            max_entropy: 0.0,
        }
    }

    /// Re-checks the invariants, for configurations read from files.
    pub fn validate(&self) -> Result<(), ArqError> {
        match self.policy {
            PolicyKind::NoRetransmission => Ok(()),
            PolicyKind::ChannelAware => check_threshold("max_snr_threshold", self.max_snr_threshold),
            PolicyKind::ImportanceBinarySvm | PolicyKind::ImportanceMulticlassSvm => {
                check_threshold("conversion_ratio", self.conversion_ratio)?;
                check_threshold("max_snr_threshold", self.max_snr_threshold)?;
                if let Some(pc) = self.alignment_target {
                    let derived = theta0_from_pc(pc)?;
                    if (derived - self.conversion_ratio).abs() > 1e-9 * derived {
                        return Err(ArqError::Inconsistent(format!(
                            "conversion ratio {} does not match alignment target {pc} (expected {derived})",
                            self.conversion_ratio
                        )));
                    }
                }
                Ok(())
            }
            PolicyKind::ImportanceEntropy => {
                let rebuilt = Self::importance_entropy(
                    self.conversion_ratio,
                    self.max_snr_threshold,
                    // max_entropy = ln C; recover C for the constructor check.
                    self.max_entropy.exp().round() as usize,
                )?;
                if (rebuilt.entropy_scaling - self.entropy_scaling).abs()
                    > 1e-9 * rebuilt.entropy_scaling.abs().max(1.0)
                    || (rebuilt.max_entropy - self.max_entropy).abs() > 1e-9
                {
                    return Err(ArqError::Inconsistent(
                        "entropy scaling does not match the thresholds and class count".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// SNR requirement for a binary-SVM uncertainty: `min(theta0 * U_d,
    /// theta_snr)`; infinite uncertainty saturates at the cap.
    pub fn binary_svm_threshold(&self, uncertainty: Uncertainty) -> f64 {
        match uncertainty {
            Uncertainty::Finite(u) => (self.conversion_ratio * u).min(self.max_snr_threshold),
            Uncertainty::Infinite => self.max_snr_threshold,
        }
    }

    /// SNR requirement for a multiclass score vector: the worst capped
    /// per-component requirement over the predicted class's active
    /// components.
    ///
    /// # Panics
    /// If `scores` does not match the coding matrix or `predicted_class` is
    /// out of range: those are programming errors upstream.
    pub fn multiclass_svm_threshold(
        &self,
        scores: &[f64],
        predicted_class: usize,
        coding: &CodingMatrix,
    ) -> f64 {
        assert_eq!(
            scores.len(),
            coding.component_count(),
            "score vector does not match the coding matrix"
        );
        let mut threshold = 0.0f64;
        for (&m, &s) in coding.row(predicted_class).iter().zip(scores) {
            if m == 0 {
                continue;
            }
            threshold = threshold.max(self.binary_svm_threshold(distance_uncertainty(s)));
        }
        threshold
    }

    /// SNR requirement for a posterior entropy: linear from `theta0` at zero
    /// entropy to `theta_snr` at the uniform posterior (`U_e = ln C`), with
    /// exact values at both endpoints.
    pub fn entropy_threshold(&self, entropy: f64) -> f64 {
        let u = entropy.clamp(0.0, self.max_entropy);
        if u == 0.0 {
            self.conversion_ratio
        } else if u == self.max_entropy {
            self.max_snr_threshold
        } else {
            (self.conversion_ratio * (1.0 + self.entropy_scaling * u))
                .min(self.max_snr_threshold)
        }
    }
}

/// Distance-based uncertainty of an SVM score: `U_d = 1 / s^2`. Estimates on
/// the boundary (|s| below 1e-12) are infinitely uncertain.
pub fn distance_uncertainty(score: f64) -> Uncertainty {
    if score.abs() < SCORE_FLOOR {
        Uncertainty::Infinite
    } else {
        Uncertainty::Finite(1.0 / (score * score))
    }
}

/// Shannon entropy (natural log) of a class posterior; the input must be a
/// probability vector within 1e-6.
pub fn entropy_uncertainty(posterior: &[f64]) -> Result<f64, ArqError> {
    if posterior.is_empty() {
        return Err(ArqError::InvalidPosterior("empty posterior".into()));
    }
    let mut total = 0.0;
    for (i, &p) in posterior.iter().enumerate() {
        if !p.is_finite() || !(-1e-12..=1.0 + 1e-9).contains(&p) {
            return Err(ArqError::InvalidPosterior(format!(
                "entry {i} is {p}, outside [0, 1]"
            )));
        }
        total += p;
    }
    if (total - 1.0).abs() > 1e-6 {
        return Err(ArqError::InvalidPosterior(format!(
            "entries sum to {total}, not 1"
        )));
    }
    let entropy: f64 = posterior
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    Ok(entropy.max(0.0))
}

/// Probability that the clean sample's score has the same sign as the
/// estimate's score `s` at effective SNR `snr`:
/// `1/2 [1 + erf(sqrt(snr) |s| / sqrt(2))]`.
///
/// Meaningful for `snr > 0`; non-positive SNR is treated as zero information
/// (probability 1/2).
pub fn alignment_probability(score: f64, effective_snr: f64) -> f64 {
    let snr = effective_snr.max(0.0);
    0.5 * (1.0 + erf((snr.sqrt() * score.abs()) / std::f64::consts::SQRT_2))
}

/// Conversion ratio `theta0 = [sqrt(2) erfinv(2 p_c - 1)]^2` for a target
/// alignment probability `p_c` in the open interval (0.5, 1).
pub fn theta0_from_pc(alignment_target: f64) -> Result<f64, ArqError> {
    if !(alignment_target.is_finite() && 0.5 < alignment_target && alignment_target < 1.0) {
        return Err(ArqError::InvalidAlignmentProbability(alignment_target));
    }
    let x = std::f64::consts::SQRT_2 * erf_inv(2.0 * alignment_target - 1.0);
    Ok(x * x)
}

fn decide(uncertainty: Uncertainty, snr_threshold: f64, effective_snr: f64) -> DecisionTrace {
    let decision = if effective_snr > snr_threshold {
        Decision::Accept
    } else {
        Decision::Retransmit
    };
    DecisionTrace {
        uncertainty,
        snr_threshold,
        effective_snr,
        decision,
    }
}

/// Importance decision for a binary SVM from the estimate's normalized score.
pub fn decide_binary_svm(
    estimate_score: f64,
    effective_snr: f64,
    cfg: &ArqConfig,
) -> DecisionTrace {
    let uncertainty = distance_uncertainty(estimate_score);
    decide(
        uncertainty,
        cfg.binary_svm_threshold(uncertainty),
        effective_snr,
    )
}

/// Worst (largest) distance uncertainty among the predicted class's active
/// one-vs-one components — the uncertainty a multiclass decision reports.
///
/// # Panics
/// Panics if `scores` does not match the coding matrix's component count or
/// `predicted_class` is out of range, like the threshold computation.
pub fn multiclass_distance_uncertainty(
    scores: &[f64],
    predicted_class: usize,
    coding: &CodingMatrix,
) -> Uncertainty {
    coding
        .row(predicted_class)
        .iter()
        .zip(scores)
        .filter(|(&m, _)| m != 0)
        .map(|(_, &s)| distance_uncertainty(s))
        .fold(Uncertainty::Finite(0.0), |a, b| if b > a { b } else { a })
}

/// Importance decision for a multiclass SVM from the component score vector
/// and the decoded class. The recorded uncertainty is the worst one among the
/// predicted class's active components.
pub fn decide_multiclass_svm(
    scores: &[f64],
    predicted_class: usize,
    coding: &CodingMatrix,
    effective_snr: f64,
    cfg: &ArqConfig,
) -> DecisionTrace {
    let threshold = cfg.multiclass_svm_threshold(scores, predicted_class, coding);
    let uncertainty = multiclass_distance_uncertainty(scores, predicted_class, coding);
    decide(uncertainty, threshold, effective_snr)
}

/// Entropy-scaled importance decision from a class posterior.
pub fn decide_entropy(
    posterior: &[f64],
    effective_snr: f64,
    cfg: &ArqConfig,
) -> Result<DecisionTrace, ArqError> {
    let entropy = entropy_uncertainty(posterior)?;
    Ok(decide(
        Uncertainty::Finite(entropy),
        cfg.entropy_threshold(entropy),
        effective_snr,
    ))
}

/// Channel-aware decision: fixed SNR target, sample importance ignored. The
/// trace records zero uncertainty; callers that log measured uncertainty
/// overwrite the field.
pub fn decide_channel_aware(effective_snr: f64, cfg: &ArqConfig) -> DecisionTrace {
    decide(
        Uncertainty::Finite(0.0),
        cfg.max_snr_threshold,
        effective_snr,
    )
}
