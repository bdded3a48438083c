//! Numerical laboratory for potential theory of superforms on boxes in ℝⁿ.
//!
//! The crate is organised bottom-up:
//! [`superalgebra`] (exact pointwise forms), [`grid`] (fields, stencils,
//! measures, file formats), [`mconvex`] (Γ_m tests and the weight family φ_m),
//! [`hessmeasure`] (the m-superHessian measure), [`potential`] (Newton-kernel
//! local potentials), [`lelong`] (Lelong numbers and ladders) and
//! [`capacity`] (extremal functions and capacities).

pub mod acceptance;
pub mod capacity;
pub mod grid;
pub mod hessmeasure;
pub mod lelong;
pub mod mconvex;
pub mod numeric;
pub mod potential;
pub mod report;
pub mod superalgebra;

pub use grid::{Grid, Mask, MatrixField, Measure, MollifierSpec, ScalarField, Stencil};
pub use hessmeasure::{Current, HessOptions};
pub use lelong::LelongLadder;

pub use mconvex::{Regime, WeightSpec};
pub use superalgebra::{FormValue, MultiIndex, SymMatrix};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
