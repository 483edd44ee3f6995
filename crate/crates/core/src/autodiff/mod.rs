//! Small reverse-mode differentiation engine for dense desk-scale tensors.

mod params;
mod tape;
mod tensor;

pub use params::{adam_step, AdamOptions, Gradients, ParamId, ParameterStore};
pub use tape::{sigmoid, softplus, Tape, Var, LOG_FLOOR};
pub use tensor::Tensor;
