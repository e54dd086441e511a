//! Feature-memory anomaly detection and benchmark evaluation.
//!
//! The pipeline stages, each usable on its own:
//!
//! 1. [`manifest`] — dataset index (samples, labels, categories, splits) and
//!    the stratified supervision partition of the training set.
//! 2. [`memory_bank`] — reference-row banks built from labeled-normal
//!    samples, optionally thinned by greedy k-center selection, with exact
//!    nearest-neighbor search.
//! 3. [`scoring`] — sample-level anomaly scores against a bank, and fusion
//!    of score streams with optional validation-range calibration.
//! 4. [`metrics`] — AUROC, ROC curves, bootstrap confidence intervals,
//!    threshold selection, confusion counts.
//! 5. [`report`] — per-category evaluation reports and their JSON, markdown,
//!    and CSV renderings.
//! 6. [`synthetic`] / [`demo`] — a generated two-cluster benchmark and a
//!    self-checking end-to-end run over it.
//!
//! File formats live in [`tensor_io`]: `.nfmb` binary feature matrices and
//! `sample_id,score` CSV tables. All distance arithmetic accumulates in
//! `f64` in a fixed order, so results never depend on batching or thread
//! scheduling.

pub mod demo;
pub mod error;
pub mod manifest;
pub mod memory_bank;
pub mod metrics;
pub mod report;
pub mod scoring;
pub mod synthetic;
pub mod tensor_io;

pub use error::{Error, Result};
