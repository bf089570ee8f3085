//! Minimal reverse-mode autodiff: tensors, a Wengert tape with the ops the
//! detector and discriminators need, SGD with momentum, and a
//! finite-difference gradient checker.

mod conv;
mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_smooth, GradCheckReport};
pub use optim::OptimizerState;
pub use params::ParamSet;
pub use tape::{sigmoid, smooth_l1, Activation, Gradients, Tape, Var, PROB_EPS};
pub use tensor::Tensor;
