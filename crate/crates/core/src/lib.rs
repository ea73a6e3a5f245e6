pub mod codec;
pub mod diffusion;
pub mod error;
pub mod layout;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod revision;
pub mod rewards;
pub mod rlhf;

pub use error::{Error, Result};
