//! Small dense-network engine: forward/backward passes, Adam, seeded streams
//! and checkpoints. All math is `f64`.

pub mod adam;
pub mod checkpoint;
pub mod dense;
pub mod matrix;
pub mod rng;

pub use adam::OptimizerState;
pub use dense::{
    sigmoid, softmax_in_place, Activation, DenseNet, ForwardCache, Layer, LayerGrads, NetGrads,
};
pub use matrix::Matrix;
pub use rng::RngStream;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}
