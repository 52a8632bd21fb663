//! Minimal reverse-mode autodiff engine used by the motion predictors.

mod graph;
mod layers;
mod optim;
mod tensor;

pub use graph::{Conv2dParams, Gradients, Graph, Var};
pub use layers::{
    BatchNorm, BufferId, Conv2d, Init, LayerNorm, Linear, NamedTensor, ParamId, ParamStore,
    Session, BN_EPS, BN_MOMENTUM,
};
pub use optim::{Adam, AdamConfig};
pub use tensor::{gemm, Float, Tensor};
