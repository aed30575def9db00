//! Encoder, conditional decoder, confusion network and singer embeddings.

pub mod checkpoint;
pub mod conditioning;
pub mod confusion;
pub mod decoder;
pub mod embedding;
pub mod encoder;
pub mod spec;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use conditioning::{build_conditioning, ConditioningSignal};
pub use confusion::ConfusionNet;
pub use decoder::{shifted_inputs, Decoder};
pub use embedding::{project_embeddings, EmbeddingTable};
pub use encoder::Encoder;
pub use spec::{receptive_field, ConfusionSpec, DecoderSpec, EncoderSpec, ModelSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nn::{Module, NnError, Param, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("input length {len} is not a positive multiple of {period}")]
    LengthNotMultiple { len: usize, period: usize },
    #[error("{what}: {left} != {right}")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("embedding norm {0} exceeds 1")]
    EmbeddingOutsideBall(f64),
    #[error("unknown singer {id:?}; known singers: {}", known.join(", "))]
    UnknownSinger { id: String, known: Vec<String> },
    #[error("need at least 2 singers, got {0}")]
    TooFewSingers(usize),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// `E(s)`: one `latent_dim` column per pooling period.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSequence<T> {
    /// `[latent_dim, frames]`.
    pub frames: Tensor<T>,
}

impl<T: Scalar> LatentSequence<T> {
    pub fn len(&self) -> usize {
        self.frames.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The full trainable system for `k` singers.
#[derive(Clone, Debug, PartialEq)]
pub struct SvcModel<T> {
    pub spec: ModelSpec,
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
    pub confusion: ConfusionNet<T>,
    pub embeddings: EmbeddingTable<T>,
}

impl<T: Scalar> SvcModel<T> {
    pub fn new(spec: &ModelSpec, k: usize, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        if k < 2 {
            return Err(ModelError::TooFewSingers(k));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(&spec.encoder, &mut rng);
        let decoder = Decoder::new(&spec.decoder, &mut rng);
        let confusion = ConfusionNet::new(&spec.confusion, spec.encoder.latent_dim, k, &mut rng);
        let embeddings = EmbeddingTable::new(k, spec.embedding_dim, &mut rng);
        Ok(Self { spec: spec.clone(), encoder, decoder, confusion, embeddings })
    }

    pub fn k(&self) -> usize {
        self.embeddings.k()
    }

    /// Conditioning for decoding `companded` as singer `singer`.
    pub fn condition(&self, latent: &LatentSequence<T>, embedding: &[T]) -> Result<ConditioningSignal<T>, ModelError> {
        build_conditioning(latent, embedding, self.spec.hop())
    }

    /// Teacher-forced logits of `D[v_j](E(s))`.
    pub fn reconstruction_logits(&self, companded: &[T], targets: &[u8], singer: usize) -> Result<Tensor<T>, ModelError> {
        let latent = self.encoder.encode(companded)?;
        let cond = self.condition(&latent, self.embeddings.vector(singer))?;
        self.decoder.logits(targets, &cond)
    }

    /// Parameters updated by the reconstruction and backtranslation steps.
    pub fn autoencoder_params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = prefixed_mut("encoder", self.encoder.params_mut());
        out.extend(prefixed_mut("decoder", self.decoder.params_mut()));
        out.extend(prefixed_mut("embeddings", self.embeddings.params_mut()));
        out
    }

    pub fn confusion_params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        prefixed_mut("confusion", self.confusion.params_mut())
    }

    pub fn cast<U: Scalar>(&self) -> SvcModel<U> {
        SvcModel {
            spec: self.spec.clone(),
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
            confusion: self.confusion.cast(),
            embeddings: self.embeddings.cast(),
        }
    }
}

fn prefixed_mut<'a, T>(prefix: &str, items: Vec<(String, &'a mut Param<T>)>) -> Vec<(String, &'a mut Param<T>)> {
    encoder::prefixed(prefix, items)
}

impl<T: Scalar> Module<T> for SvcModel<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = encoder::prefixed("encoder", self.encoder.params());
        out.extend(encoder::prefixed("decoder", self.decoder.params()));
        out.extend(encoder::prefixed("confusion", self.confusion.params()));
        out.extend(encoder::prefixed("embeddings", self.embeddings.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = prefixed_mut("encoder", self.encoder.params_mut());
        out.extend(prefixed_mut("decoder", self.decoder.params_mut()));
        out.extend(prefixed_mut("confusion", self.confusion.params_mut()));
        out.extend(prefixed_mut("embeddings", self.embeddings.params_mut()));
        out
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny_spec() -> ModelSpec {
        ModelSpec {
            sample_rate: 8000,
            encoder: EncoderSpec { blocks: 1, layers_per_block: 2, channels: 4, latent_dim: 3, kernel_size: 3, pool: 20 },
            decoder: DecoderSpec {
                blocks: 1,
                layers_per_block: 3,
                kernel_size: 2,
                residual_channels: 4,
                skip_channels: 4,
                quant_levels: 256,
                conditioning_dim: 5,
            },
            confusion: ConfusionSpec { layers: 2, channels: 4, kernel_size: 3 },
            embedding_dim: 2,
        }
    }

    #[test]
    fn encoder_shape_law_for_default_spec() {
        let spec = ModelSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::<f32>::new(&spec.encoder, &mut rng);
        let x: Vec<f32> = (0..16000).map(|i| (i as f32 * 0.01).sin() * 0.3).collect();
        assert_eq!(enc.encode(&x).unwrap().frames.shape(), &[64, 20]);
    }

    #[test]
    fn model_needs_two_singers() {
        assert!(matches!(SvcModel::<f32>::new(&tiny_spec(), 1, 0), Err(ModelError::TooFewSingers(1))));
    }

    #[test]
    fn param_groups_partition_the_model() {
        let mut m = SvcModel::<f32>::new(&tiny_spec(), 3, 0).unwrap();
        let total = m.param_count();
        let ae: usize = m.autoencoder_params_mut().iter().map(|(_, p)| p.value.len()).sum();
        let c: usize = m.confusion_params_mut().iter().map(|(_, p)| p.value.len()).sum();
        assert_eq!(ae + c, total);
        let names: Vec<String> = m.params().into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }
}
