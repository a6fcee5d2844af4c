//! A small convolutional encoder-decoder with manual backpropagation.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod model;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint};
pub use model::{Architecture, ForwardCache, LayerKind, LayerSpec, ModelParams, TinyNet};
