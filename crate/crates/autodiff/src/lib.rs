//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records each operation of one forward pass; calling
//! [`Tape::backward`] on a scalar output returns gradients for every
//! differentiable leaf. Tapes are cheap to build, so callers create a fresh
//! one per forward pass and per thread.
//!
//! ```
//! use eventgc_autodiff::{Array, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.var(Array::scalar(3.0));
//! let y = x * x;
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).item(), 6.0);
//! ```

mod array;
pub mod check;
mod tape;

pub use array::Array;
pub use tape::{normal_cdf, sigmoid, softplus, Gradients, Tape, Var};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AdError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
}
