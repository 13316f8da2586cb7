//! Video anomaly detection with a spatio-temporal convolutional LSTM
//! encoder-decoder.
//!
//! The model reads a volume of `tau` grayscale frames and either predicts
//! the next `tau` frames or reconstructs the input in reverse order. Volumes
//! the model cannot predict well get a low regularity score and are flagged
//! as anomalous.

pub mod convlstm;
pub mod dataio;
pub mod error;
pub mod model;
pub mod ops;
pub mod optimizer;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod scoring;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{count_parameters, make_target, ArchitectureConfig, Mode, ModelParams};
pub use scalar::Scalar;
pub use tensor::{GradPair, Tensor};
