//! Dense numeric kernels, reverse-mode tape, parameters and the optimizer.

mod check;
mod graph;
pub mod kernels;
mod param;
mod tensor;

pub use check::{grad_check, DEFAULT_EPS};
pub use graph::{bce_with_logit, sigmoid, AttentionKernel, Grads, Graph, Var};
pub use kernels::{
    bilinear_resize, conv2d, gelu, layer_norm, matmul, softmax_over_axis, transposed_conv2d, ConvGeom,
};
pub use param::{adamw_step, AdamW, Param, ParamId, ParamSet};
pub use tensor::{Real, Tensor};
