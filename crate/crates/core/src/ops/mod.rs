//! Differentiable primitives with analytic backward passes.

mod activation;
mod conv;

pub use activation::{
    leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar, tanh, tanh_backward,
    LEAKY_SLOPE,
};
pub use conv::{conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, ConvGrads, ConvSpec};
pub(crate) use conv::{conv2d_backward_opt, conv2d_forward_opt};
