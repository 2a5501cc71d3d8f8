//! Dense linear algebra and a small reverse-mode differentiation tape.

mod eig;
mod matrix;
mod qr;
mod spd;
pub mod tape;

pub use eig::sym_eig_small;
pub use matrix::DenseMatrix;
pub use qr::qr_thin;
pub use spd::{Cholesky, sym_sqrt};
pub use tape::{DiffTape, Unary, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix is rank deficient at column {column}")]
    Rank { column: usize },
    #[error("matrix is not symmetric (max |a_ij - a_ji| = {max_asymmetry:e})")]
    Symmetry { max_asymmetry: f64 },
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("contract violated: {0}")]
    Contract(String),
}
