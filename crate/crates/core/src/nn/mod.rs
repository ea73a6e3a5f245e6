//! Minimal dense autodiff used by every trainable model in the crate.

mod graph;
pub mod layers;
mod optim;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use layers::{sinusoidal_embedding, LayerNorm, Linear, Transformer, TransformerConfig};
pub use optim::{Adam, AdamConfig, DivergenceGuard};
pub use params::{ParamId, ParamStore};
pub use tensor::{Mat, Segments};
