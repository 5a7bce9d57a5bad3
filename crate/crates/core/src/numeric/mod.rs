//! Dense tensors, reverse-mode differentiation, and AdamW.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use optim::{adamw_step, Checkpoint, OptimConfig, ParamStore};
pub use tape::{softmax, Bag, Gradients, Tape, Var};
pub use tensor::Tensor;
