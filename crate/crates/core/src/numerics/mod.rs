//! Deterministic differentiable numerics: tensors, a reverse-mode tape, the
//! layer primitives used by the network, AdamW, and a finite-difference
//! gradient checker.

pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod param;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use layers::{default_groups, Activation, Conv2d, GroupNorm, Init};
pub use optim::AdamW;
pub use param::{ParamId, ParamStore, Parameter};
pub use rng::Rng;
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;
