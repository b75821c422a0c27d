//! Zero-shot machine unlearning lab.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`] — a minimal reverse-mode tape over `f64` tensors; every
//!   differentiable operation used anywhere else lives here.
//! * [`models`] — tiny classifiers (MLP, small CNN, 1-D sigmoid) built on the
//!   tape, plus SGD training and a flat binary serialization format.
//! * [`data`] — synthetic 2-D datasets, a CIFAR-10 binary loader, a synthetic
//!   image corpus in the same binary format, and forget/retain partitioning.
//! * [`unlearn`] — the noise-smoothing unlearning update and the comparison
//!   baselines (retrain oracle, fine-tune, amnesiac, boundary shrink).
//! * [`eval`] — accuracy, output entropy, a loss-threshold membership
//!   inference attack, the Wilcoxon signed-rank test, and wall-clock timing.
//! * [`experiment`] — config files, the benchmark runner, the geometry /
//!   sigmoid / entropy studies, the sensitivity sweep, and report rendering
//!   (CSV + SVG).
//!
//! Everything is deterministic given the seeds in the relevant config; see
//! [`seeding`] for how independent named streams are derived from one base
//! seed.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod models;
pub mod seeding;
pub mod unlearn;

pub use error::{Error, Result};
