//! Tensor math, reverse-mode differentiation, Adam and the learning-rate
//! schedule.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{adam_step, transformer_lr, AdamHyper, AdamState, ScheduleConfig};
pub use tape::{AttnWindow, Gradients, Segments, Tape, Var};
pub use tensor::{gemm, log_add, log_sum_exp, softmax, MatMut, MatRef, Precision, Real, Tensor};
