//! Calibration-aware training toolkit.
//!
//! The centrepiece is an auxiliary loss that aligns a classifier's predictive
//! mean confidence with its predictive certainty, both estimated with MC
//! dropout over a single dropout layer placed after the feature extractor.
//! Around it sit the usual calibration metrics (ECE, SCE, MCE, class-wise
//! ECE, AUROC), task losses, temperature scaling, dataset/corruption
//! utilities and a small train/evaluate/report pipeline.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod math;
pub mod mc;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod scaling;
pub mod train;

pub use error::{Error, Result};
