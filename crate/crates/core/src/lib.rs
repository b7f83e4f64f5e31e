//! Polynomially localized Riesz bases on `Z^d` and their dual systems.
//!
//! The pipeline runs basis → Gramian → finite-section inverse → duals → bounds:
//!
//! * [`basis`]: generator families centered at (perturbed) lattice nodes and
//!   their measured decay envelopes.
//! * [`gramian`]: quadrature Gramians, the derivations `D_h`, Schur bounds and
//!   Riesz bounds from nested sections.
//! * [`dual`]: Cholesky inversion of nested sections, the stabilized core and
//!   synthesized dual functions.
//! * [`bounds`]: lattice sums `W_u`, convolution constants, the bound `D` on
//!   the dual decay and calibration of its dimension constant.
//! * [`analysis`]: one family pushed through the whole pipeline.

// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod basis;
pub mod bounds;
pub mod dual;
pub mod envelope;
pub mod error;
pub mod gramian;
pub mod lattice;

pub use basis::{make_basis, BasisSet, Family, GeneratorSpec};
pub use bounds::{compute_w, theoretical_d, TheoreticalBound};
pub use dual::{invert_section, synthesize_dual, DualSystem, SampledFunction};
pub use envelope::{DecayFlag, DecayMeasurement, EnvelopeFit, FitMethod};
pub use error::{Error, Result};
pub use gramian::{apply_derivation, assemble, riesz_bounds, schur_bound, DecayMatrix, RieszBounds};
pub use lattice::{Grid, LatticeWindow};
