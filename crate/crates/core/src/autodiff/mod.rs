//! Reverse-mode differentiation, gradient checking and optimisation.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, CoordinateCheck, GradCheckReport, DENOM_FLOOR};
pub use optim::{adam_step, AdamState, LrSchedule, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use tape::{CustomBackward, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
