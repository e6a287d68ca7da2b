//! Differentiable compute core: dense real tensors, a single-use reverse-mode
//! tape, and the Adam update used by the trainer.

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
