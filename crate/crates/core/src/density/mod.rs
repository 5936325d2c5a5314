//! Conditional density estimation of outcomes given treatment and
//! representation.

mod flow;
mod spline;

pub use flow::{
    cnf_nll, flow_grad_check, log_density_with, train_cnf, ConditionalFlow, FlowConfig, FlowData, FlowTrainConfig,
    NoiseRegConfig, Standardizer,
};
pub use spline::{
    forward_with_raw_gradient, num_raw_params, rq_spline_transform, Direction, RawGradient,
    SplineParams, DEFAULT_TAIL_BOUND, MIN_BIN_FRACTION, MIN_DERIVATIVE,
};
