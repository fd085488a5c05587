//! Thin price sampling for household consumption surveys.
//!
//! The library screens items by within-FSU price homogeneity, computes the
//! probability that a one-household-per-FSU sample covers an item, fits the
//! log-log demand model with actual and substituted prices, and runs the
//! repeated two-sample Kolmogorov-Smirnov comparison of predicted budget
//! shares.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod inference;
pub mod prevalence;
pub mod sampling;
pub mod seeding;
pub mod synth;
pub mod testing;

pub use error::{Error, ErrorKind, Result};
