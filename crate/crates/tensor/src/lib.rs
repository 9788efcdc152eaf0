//! Dense `f64` tensors and a define-by-run reverse-mode differentiation tape.
//!
//! ```
//! use did_tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(&Tensor::filled(&[1], 3.0).with_requires_grad(true));
//! let loss = x.mul(&x).unwrap().sum();
//! tape.backward(&loss).unwrap();
//! assert_eq!(tape.grad(&x).unwrap(), vec![6.0]);
//! ```

mod error;
pub mod gradcheck;
mod kernels;
mod ops;
pub mod serialize;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::{concat, STD_FLOOR};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
