//! Dense vectors, parameter storage, reverse-mode differentiation and SGD.

mod optim;
mod tape;
mod tensor;

pub use optim::{global_grad_norm, sgd_step, StepReport};
pub use tape::{softmax, Gradients, Tape, Var};
pub use tensor::{ParamId, ParamSet, Tensor};
