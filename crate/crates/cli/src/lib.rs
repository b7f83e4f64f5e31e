//! Config-driven runner: basis → Gramian → duals → bounds → report, plus
//! `verify`, which re-checks a finished run from its artifacts alone.

pub mod config;
pub mod invariants;
pub mod run;
pub mod verify;

use std::fmt;

pub use config::RunConfig;
pub use invariants::{Invariant, Verdict};
pub use run::{execute, RunReport, Stage};
pub use verify::{verify_dir, VerifySummary};

/// Failure of a command, carrying its exit status.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or invalid config, missing or unparseable artifacts.
    Config(String),
    Hypothesis(String),
    /// Section inversion did not converge, or a section is not positive definite.
    Convergence(String),
    /// The run finished but `n` hard invariants failed.
    Invariants(usize),
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Hypothesis(_) => 3,
            CliError::Convergence(_) => 4,
            CliError::Invariants(_) => 5,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Hypothesis(m) => write!(f, "{m}"),
            CliError::Convergence(m) => write!(f, "convergence failure: {m}"),
            CliError::Invariants(n) => write!(f, "{n} hard invariant(s) failed"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<rieszdual::Error> for CliError {
    fn from(e: rieszdual::Error) -> Self {
        use rieszdual::Error as E;
        match e {
            E::Hypothesis(_) | E::Divergent { .. } => CliError::Hypothesis(e.to_string()),
            E::NotRiesz { .. } | E::SingularSection { .. } | E::NonConvergence { .. } | E::Asymmetric { .. } | E::NonFinite(_) => {
                CliError::Convergence(e.to_string())
            }
            E::Io(io) => CliError::Io(io),
            other => CliError::Config(other.to_string()),
        }
    }
}
