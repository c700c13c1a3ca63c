//! Dense tensors with tape-based reverse-mode automatic differentiation.
//!
//! The primitive set is deliberately small: 2-D convolution and its
//! transpose, grouped 1-D convolution, an LSTM layer, (grouped) linear maps,
//! layer normalization, scaled dot-product attention, pointwise
//! nonlinearities, shape plumbing and the two training losses. Everything
//! is generic over `f32` / `f64`; the 64-bit path exists for gradient checks.
//!
//! ```
//! use rtsdoa_autograd::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param("x", Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
//! ```

mod error;
mod gradcheck;
mod graph;
mod kernels;
mod params;
mod real;
mod tensor;

pub use error::{Error, IoError, Result};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{Conv1d, Conv2d, ConvT2d, Gradients, Graph, Var};
pub use params::{Binder, Init, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use real::{DType, Real};
pub use tensor::Tensor;
