//! Training and evaluation of binary classifiers under decision-centric
//! demographic-parity constraints.
//!
//! The toolkit covers the full experimental loop:
//!
//! - [`data`] — CSV ingestion, one-hot encoding / standardization, seeded
//!   train/validation/test splits, and semi-synthetic bias injection via
//!   informed label flipping.
//! - [`model`] — a from-scratch fully connected ReLU MLP with reverse-mode
//!   gradients and Adam updates, all in `f64`.
//! - [`losses`] — binary cross-entropy, an exact 1-D Wasserstein oracle, a
//!   Sinkhorn-approximated Wasserstein unfairness penalty (global or
//!   restricted to the top-k% of scores per protected group), and the
//!   composite trade-off objective.
//! - [`metrics`] — decision-centric evaluation: ABPC_tau / ABCC_tau over the
//!   decision region `[tau, 1]` and the partial precision-recall area
//!   AUC-PR_tau.
//! - [`training`] — the mini-batch loop with BCE warmup, composite loss,
//!   validation-loss early stopping, and k% calibration from an
//!   unconstrained baseline.
//! - [`experiment`] — lambda sweeps over fairness modes, hyperparameter grid
//!   search, Pareto-front extraction, and resumable CSV record stores.
//! - [`synth`] — seeded generators for benchmark datasets shaped like the
//!   public churn/income corpora, used by the test suite and the demo CLI.

pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
