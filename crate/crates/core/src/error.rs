use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// A violated hypothesis of the dual-decay theorem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    /// `C >= 1`
    ConstantAtLeastOne,
    /// `t > d`
    TargetAboveDimension,
    /// `s > d + t`
    DecayAboveDimensionPlusTarget,
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hypothesis::ConstantAtLeastOne => write!(f, "C >= 1"),
            Hypothesis::TargetAboveDimension => write!(f, "t > d"),
            Hypothesis::DecayAboveDimensionPlusTarget => write!(f, "s > d+t"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown basis family `{0}`")]
    UnknownFamily(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("perturbation at node {node:?} has max-norm {magnitude} above the cap {cap}")]
    PerturbationTooLarge {
        node: Vec<i64>,
        magnitude: f64,
        cap: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("lattice index {0:?} lies outside the window")]
    IndexOutOfWindow(Vec<i64>),

    #[error("grid extent {extent} does not cover radius {needed} around the requested centers")]
    GridTooSmall { extent: f64, needed: f64 },

    #[error("axis {axis} out of range for dimension {dim}")]
    AxisOutOfRange { axis: usize, dim: usize },

    #[error("Gramian asymmetry {residual:e} exceeds 100x the quadrature tail bound {tail:e}")]
    Asymmetric { residual: f64, tail: f64 },

    #[error("not a Riesz sequence at this resolution: lambda_min = {lambda_min:e} at radius {radius}")]
    NotRiesz { radius: usize, lambda_min: f64 },

    #[error("section at radius {radius} is not positive definite")]
    SingularSection { radius: usize },

    #[error("finite sections did not converge: central change {change:e} exceeds tolerance {tol:e}")]
    NonConvergence { change: f64, tol: f64 },

    #[error("index {index:?} lies outside the stabilized core of radius {core_radius}")]
    OutsideCore { index: Vec<i64>, core_radius: usize },

    #[error("hypothesis {0} violated")]
    Hypothesis(Hypothesis),

    #[error("lattice sum diverges: u = {u} must exceed d = {d}")]
    Divergent { u: f64, d: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
