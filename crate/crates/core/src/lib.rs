//! Transferability scoring for pre-trained speech models.
//!
//! Candidates (whole models or individual layers) are scored without
//! fine-tuning:
//!
//! * [`logme`] computes the log maximum evidence of a Bayesian linear head,
//!   optionally over frame/label pairs obtained by CTC forced alignment
//!   ([`align`]).
//! * [`swd`] measures the sliced 1-Wasserstein distance between source and
//!   target latents per timestep and aggregates with the median.
//! * [`tsne`] embeds source and target jointly and measures the distance
//!   between the per-domain median points.
//!
//! [`rankeval`] turns scores into rankings and compares them against
//! fine-tuning ground truth with Spearman's rank correlation.

pub mod align;
pub mod ingest;
pub mod logme;
pub mod matrix;
pub mod rankeval;
pub mod rng;
pub mod score;
pub mod selftest;
pub mod swd;
pub mod tsne;

pub use matrix::{FeatureMatrix, MatrixError};
pub use score::{ScoreDetails, TransferScore};
