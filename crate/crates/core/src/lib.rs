//! Few-shot 3D part segmentation by propagating image features over a
//! graph of multi-view segments.
//!
//! The network, training loop and autodiff tape are generic over
//! [`Scalar`] (`f32` for training, `f64` for gradient checks); geometry
//! and preprocessing run in `f64`.

pub mod container;
pub mod error;
pub mod features;
pub mod geometry;
pub mod gradsuite;
pub mod graph;
pub mod masks;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pca;
pub mod pipeline;
pub mod scalar;
pub mod study;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use model::{Ablation, ModelConfig, PreparedShape, SegGraphModel, SegGraphNet};
pub use scalar::Scalar;
pub use train::TrainConfig;

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type Tape32 = nn::Tape<f32>;
pub type Tape64 = nn::Tape<f64>;
pub type ParamStore32 = nn::ParamStore<f32>;
pub type ParamStore64 = nn::ParamStore<f64>;
pub type Model32 = SegGraphModel<f32>;
pub type Model64 = SegGraphModel<f64>;
pub type PreparedShape32 = PreparedShape<f32>;
pub type PreparedShape64 = PreparedShape<f64>;
