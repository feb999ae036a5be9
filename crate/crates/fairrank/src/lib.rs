//! Turn a pretrained deterministic ranking scorer into a stochastic ranker
//! with a finite-sample utility guarantee.
//!
//! Deterministic rankers hand the top position to whichever item edges ahead
//! by the tiniest score margin, so items of equal relevance can receive wildly
//! different exposure. This crate wraps a fixed scorer in a **thresholded
//! Plackett-Luce (TPL)** ranking model: at each position, items whose
//! bounded *risk-control score* clears a threshold λ form a candidate set, and
//! one of them is sampled with probability proportional to `exp(score/τ)`.
//! λ = 0 recovers the plain Plackett-Luce sampler; λ at or above the maximum
//! score recovers the deterministic ranking. The threshold is then selected on
//! a calibration split so that the utility risk `1 − NDCG@K` stays below a
//! user-specified level α with probability at least 1 − δ over calibration
//! draws, via either Hoeffding-Bentkus p-values or a DKWM upper confidence
//! bound. When no threshold certifies, the calibrator abstains and the system
//! falls back to the deterministic ranking.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`dataset`]: JSONL / SVMLight ingestion, degenerate-query filtering,
//!   deterministic calibration/test splits.
//! - [`plmodel`]: score normalization, risk-control scores, and the
//!   deterministic / PL / TPL ranking models (sampling and exact enumeration).
//! - [`metrics`]: NDCG@K, Monte Carlo and exact risk, expected exposure, and
//!   the squared-disparity fairness measure.
//! - [`riskcontrol`]: concentration bounds, risk curves with the monotone
//!   envelope, and threshold selection with abstention.
//! - [`harness`]: synthetic data generation, repeated-split coverage
//!   experiments, and utility/fairness trade-off sweeps.
//! - [`cli`]: the `fairrank` binary surface (`synth`, `convert`, `calibrate`,
//!   `evaluate`, `sweep`, `coverage`).
//!
//! ## Examples
//!
//! Each major capability has a runnable example:
//!
//! ```bash
//! cargo run --example synthesize_dataset
//! cargo run --example tpl_sampling
//! cargo run --example exact_vs_monte_carlo
//! cargo run --example calibrate_threshold
//! cargo run --example tradeoff_sweep
//! cargo run --example coverage_experiment
//! cargo run --example letor_pipeline
//! ```

pub mod cli;
pub mod dataset;
mod error;
pub mod harness;
pub mod metrics;
pub mod plmodel;
pub mod riskcontrol;
pub(crate) mod seeds;

pub use error::{Error, Result};
