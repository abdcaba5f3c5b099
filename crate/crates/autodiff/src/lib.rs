//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations are recorded on a [`Graph`] as they are evaluated; calling
//! [`Graph::backward`] on a scalar node accumulates gradients into every leaf
//! created with [`Graph::param`]. Constants never receive gradients, and
//! nodes whose inputs are all constant are skipped during the reverse sweep.
//!
//! ```
//! use mgsr_autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::from_slice(&[1.0, 2.0, 3.0]));
//! let sq = g.mul(x, x).unwrap();
//! let y = g.sum(sq, None).unwrap();
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

mod error;
mod gradcheck;
mod graph;
mod linalg;
mod nn;
mod ops;
mod tensor;

pub use error::{AutodiffError, Result};
pub use gradcheck::grad_check;
pub use graph::{Graph, Var, LOG_FLOOR};
pub use ops::sigmoid;
pub use tensor::Tensor;
