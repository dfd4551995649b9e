//! Minimal differentiable numeric kernel.
//!
//! 64-bit dense tensors, CSR sparse matrices, a reverse-mode op tape covering
//! exactly the operations the fixed architecture needs, and an AdamW-style
//! optimizer. Tensors and sparse matrices are immutable values; a tape is
//! single-threaded, but independent tapes may run concurrently.

mod optim;
mod sparse;
mod tape;
mod tensor;

pub use optim::OptimizerState;
pub use sparse::SparseMatrix;
pub use tape::{GradTape, Gradients, ValueId};
pub use tensor::{attention_single_query, sigmoid, softplus, Tensor};
