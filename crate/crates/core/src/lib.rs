//! Differentiable ranking objectives for quality-assessment training.
//!
//! The crate is organised bottom-up:
//!
//! - [`grad`]: a small reverse-mode autodiff tape.
//! - [`checks`]: gradient and low-temperature limit self-checks.
//! - [`metrics`]: exact PLCC/SRCC/KRCC, the four-parameter logistic fit and
//!   the 2AFC score.
//! - [`objectives`]: Bradley-Terry pairwise cross-entropy and the smooth
//!   Pearson/Spearman/Kendall regularizers built on the tape.
//! - [`pairs`]: mini-batch sampling and the three pair-formation strategies.
//! - [`synth`]: a synthetic content-sensitive quality dataset with CSV I/O.
//! - [`scorer`]: a small MLP scorer and its weight snapshot format.
//! - [`train`]: Adam with cosine annealing, evaluation, and ablation grids.

pub mod checks;
pub mod grad;
pub mod metrics;
pub mod objectives;
pub mod pairs;
pub mod scorer;
pub mod synth;
pub mod train;
