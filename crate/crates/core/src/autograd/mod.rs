//! Minimal reverse-mode differentiation over dense `f64` tensors, plus the
//! one-hidden-layer networks and the two optimizers used for training.

mod gradcheck;
mod graph;
mod nn;
mod optim;
mod tensor;

pub use gradcheck::{
    analytic_gradient, compare_gradients, grad_check, numerical_gradient, relative_error,
    GradCheckReport,
};
pub use graph::{logsumexp, sigmoid, softplus, CustomBackward, Gradients, Graph, Unary, Var};
pub use nn::{Activation, BoundMlp, Mlp, MlpConfig, OutputActivation};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind, SGD_MOMENTUM};
pub use tensor::Tensor;
