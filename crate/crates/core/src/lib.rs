//! Deterministic simulator of importance-aware retransmission (importance ARQ)
//! for wireless data acquisition in edge learning.
//!
//! Edge devices transmit raw training samples over a Rayleigh block-fading
//! channel to an edge server that trains a classifier online. Instead of
//! retransmitting until a fixed channel-quality target is met, importance ARQ
//! spends the retransmission budget where it matters for learning: samples the
//! current model is uncertain about get more combining gain, confident ones are
//! accepted early. The crate provides
//!
//! * [`channel`] — analog transmission over Rayleigh fading + AWGN and maximum
//!   ratio combining of repeated attempts,
//! * [`classifiers`] — linear soft-margin SVMs (binary and one-vs-one
//!   multiclass) and a softmax probabilistic classifier, trained online,
//! * [`arq`] — uncertainty measures, retransmission thresholds and the
//!   stop/retransmit decision policies,
//! * [`datasets`] — MNIST IDX loading, synthetic Gaussian tasks and the
//!   seed-set / device-shard / test-set partition,
//! * [`simulator`] — the acquisition event loop, evaluation metrics, run logs
//!   and cross-repetition aggregation.
//!
//! Every stochastic component draws from explicitly seeded generators, so a
//! run configuration plus a seed reproduces results bit for bit.

pub mod arq;
pub mod channel;
pub mod classifiers;
pub mod datasets;
pub mod simulator;
