//! Reverse-mode differentiation over dense `f64` matrices.

mod check;
mod optim;
mod params;
mod tape;
mod tensor;

pub use check::{finite_diff_check, relative_error, GRAD_CHECK_FLOOR};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
