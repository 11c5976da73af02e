//! Numeric core of the off-policy learning engine: fixed-architecture MLPs
//! with analytic gradients, Adam, value-distribution heads, the DDPG / TD3 /
//! SAC learners, n-step replay, built-in environments and the binary wire
//! codec shared by every distributed role.

pub mod adam;
pub mod algorithms;
pub mod checkpoint;
mod codec;
pub mod distributions;
pub mod envs;
pub mod error;
pub mod mlp;
pub mod replay;
pub mod tensor;
pub mod wire;

pub use error::{Error, Result};
pub use tensor::Tensor2;
