//! Dense numeric substrate: MLPs with manual backprop, Adam, diagonal
//! Gaussians and the checkpoint record format.

mod activation;
mod adam;
mod checkpoint;
mod gaussian;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, Tensor, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use gaussian::{
    kl_normal, normal_log_density, soft_bound, DiagGaussian, LOG_STD_MAX, LOG_STD_MIN,
};
pub use mlp::{input_gradient, Linear, Mlp, Tape};
