//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of a forward pass. Values are dense
//! [`Matrix`] instances; graph structure enters as constant
//! [`SparseMatrix`] operands. Calling [`Tape::backward`] on a `1 × 1` loss
//! returns the gradient of every named leaf.
//!
//! ```
//! use mgnm::autodiff::{Matrix, Tape};
//!
//! let mut tape = Tape::new();
//! let w = tape.leaf("w", Matrix::from_rows(&[[1.0, -2.0], [3.0, 0.5]])).unwrap();
//! let sq = tape.mul(w, w).unwrap();
//! let total = tape.sum(sq).unwrap();
//! let loss = tape.scale(total, 0.5).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads["w"], *tape.value(w));
//! ```

mod check;
mod matrix;
mod sparse;
mod tape;

pub use check::{
    finite_diff_check, finite_diff_check_with, relative_error, GradCheckConfig, GradCheckReport,
};
pub use matrix::Matrix;
pub(crate) use matrix::dot;
pub use sparse::SparseMatrix;
pub use tape::{Gradients, Tape, Var, EPS};
