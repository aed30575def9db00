//! Unsupervised singing voice conversion.
//!
//! A single dilated-convolution encoder maps audio to a low-rate latent code,
//! and a WaveNet decoder conditioned on that code plus a learned singer
//! embedding regenerates the waveform in any training singer's voice.
//! Training alternates a reconstruction objective with a domain-confusion
//! adversary, then adds backtranslation through mixup singers.

pub mod audio;
pub mod augment;
pub mod dataset;
pub mod eval;
pub mod gradients;
pub mod inference;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod synthdata;
pub mod training;

pub use scalar::{DenormalGuard, Scalar};

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type Model32 = model::SvcModel<f32>;
pub type Model64 = model::SvcModel<f64>;
pub type Decoder32 = model::Decoder<f32>;
pub type Decoder64 = model::Decoder<f64>;
