//! Control as hybrid inference.
//!
//! An amortised Gaussian policy proposes an initial posterior over a short
//! action sequence by rolling itself through a learned ensemble dynamics
//! model. A sampling-based variational planner then refines that posterior
//! with reward-weighted updates before the first mean action is executed.
//! Pure SAC-style and CEM-MPC agents are provided as baselines.

pub mod agent;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod harness;
pub mod planner;
pub mod policy;
pub mod replay;
pub mod rng;
pub mod tensor;

pub use error::{ChiError, Result};
