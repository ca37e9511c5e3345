//! Annotation-budget analysis for multi-annotator classification datasets.
//!
//! The pipeline: load per-instance label counts ([`data`]), simulate `k`
//! annotations per instance ([`simulate`]), turn them into majority-label or
//! label-distribution targets ([`targets`]), train a softmax-regression
//! reference classifier ([`model`]), and measure accuracy, V-information
//! ([`vinfo`]) and training-dynamics regions ([`cartography`]) across a sweep
//! of budgets ([`experiment`], [`summary`]).

pub mod cartography;
pub mod data;
pub mod error;
pub mod experiment;
pub mod features;
pub mod io;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod summary;
pub mod synth;
pub mod targets;
pub mod vinfo;

pub use error::{Error, Result};
