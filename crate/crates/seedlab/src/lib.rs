//! Desk-scale laboratory for measuring how perturbations of the initial seed
//! vector degrade conditional diffusion samplers.
//!
//! The crate trains small fixed-variance and learned-variance denoisers on
//! synthetic class-conditional data, applies five synthetic seed shifts
//! (random, mean, standard deviation, mixed, arrangement), and measures
//! generation reliability: distribution overlap analytics, top-k accuracy
//! sweeps, alignment scores and reverse-process trajectory diagnostics.

pub mod error;
pub mod numerics;
pub mod schedule;
pub mod shifts;

pub mod denoiser;
pub mod eval;
pub mod sampler;

pub mod cli;
pub mod config;
pub mod manifest;
pub mod report;
pub mod stats;

pub use error::{Error, Result};
