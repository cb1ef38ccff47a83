//! Calibrated uncertainty distillation.
//!
//! A teacher classifier is trained so that its uncertainty rises on hard or
//! misclassified examples, its wrong top-1 predictions are clipped before
//! distillation, and a smaller student learns from the resulting targets.
//!
//! * [`simplex`]: logits, probability distributions, softmax, entropy, KL.
//! * [`calibrate`]: target operators (W-Clip, exact KL projection, TS, LS).
//! * [`losses`]: the difficulty-aware teacher objective and the KD student loss.
//! * [`model`]: a small MLP with manual backprop, AdamW and checkpoints.
//! * [`data`]: Gaussian mixtures, OOD shift, CSV ingestion, stratified splits.
//! * [`metrics`]: ECE, ECE on errors, Brier, ROC/AUROC, FPR@TPR, histograms.
//! * [`pipeline`]: end-to-end runs, γ sweeps and report files.
//! * [`cli`]: the `cud` command line.

pub mod calibrate;
pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod simplex;

pub use error::{CudError, Result};
