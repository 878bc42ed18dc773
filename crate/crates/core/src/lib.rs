//! Confidence bands for the density of a latent variable observed through two
//! error-contaminated measurements.
//!
//! The band inverts studentized moment inequalities over a Hermite sieve and
//! widens the result by a sieve-bias bound. [`livuong`] provides the classical
//! deconvolution point estimate and [`simlab`] a Monte Carlo harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandsolver;
pub mod calib;
pub mod cli;
pub mod hermite;
pub mod livuong;
pub mod pipeline;
pub mod restriction;
pub mod simlab;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Hermite(#[from] hermite::HermiteError),
    #[error(transparent)]
    Restriction(#[from] restriction::RestrictionError),
    #[error(transparent)]
    Calib(#[from] calib::CalibError),
    #[error(transparent)]
    Solve(#[from] bandsolver::SolveError),
    #[error(transparent)]
    LiVuong(#[from] livuong::LiVuongError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("i/o error: {0}")]
    Io(String),
}
