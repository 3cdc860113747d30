//! Dense `f64` tensors with a define-by-run reverse-mode tape, the error
//! function and its inverse, an AdamW optimizer, and a named-tensor
//! checkpoint container.

mod backward;
pub mod checkpoint;
mod error;
pub mod fdcheck;
mod graph;
mod kernels;
pub mod optim;
pub mod special;
mod tensor;

pub use backward::Gradients;
pub use checkpoint::{Checkpoint, CheckpointError};
pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use optim::{AdamW, AdamWConfig};
pub use tensor::{numel, ParamId, Params, Tensor};
