//! Numerical laboratory for the first-exit (Kramers) problem of dynamical
//! systems perturbed by epsilon-small, (1/epsilon)-accelerated pure-jump
//! Levy noise.
//!
//! The crate has three layers:
//!
//! * *Simulation*: jump measures ([`measures`]), Poisson random measures and
//!   their exponentially tilted variants ([`noise`]), and the perturbed
//!   dynamics with first-exit detection ([`dynamics`]).
//! * *Variational*: jump-intensity controls with entropy costs ([`controls`])
//!   and the quasi-potential obtained by optimizing transfer costs over
//!   finite horizons ([`quasipotential`]).
//! * *Experiments*: Monte Carlo exit statistics, cycle diagnostics and
//!   importance sampling ([`exitlab`]), driven from a small CLI ([`cli`]).
//!
//! All randomness flows through per-task counter-derived streams
//! ([`stream`]), so every experiment is reproducible from a single `u64`
//! seed regardless of how many worker threads participate.

pub mod cli;
pub mod config;
pub mod controls;
pub mod dynamics;
pub mod exitlab;
pub mod interp;
pub mod la;
pub mod measures;
pub mod noise;
pub mod quad;
pub mod quasipotential;
pub mod report;
pub mod stream;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A numerical routine failed to reach its tolerance or diverged.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Invalid argument or configuration detected at a public boundary.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// Feature combination that is recognised but not implemented.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// I/O error while reading configs or writing reports.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
