//! Vertebra-focused landmark detection on spine radiographs: heatmap target
//! codec, training losses, a small trainable encoder-decoder, Cobb-angle
//! metrics, a synthetic data generator and the train/evaluate pipeline.

pub mod codec;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod plot;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub use types::{Point2, SpineAnnotation, VertebraCorners, LANDMARK_COUNT, VERTEBRA_COUNT};
