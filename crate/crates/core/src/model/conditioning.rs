use super::{LatentSequence, ModelError};
use crate::nn::{upsample_repeat, Tensor};
use crate::scalar::Scalar;

/// Decoder conditioning: latent frames stacked over the singer embedding,
/// held constant for `hop` samples each.
///
/// Stored at frame rate; [`ConditioningSignal::to_audio_rate`] materializes
/// the upsampled `[channels, len]` view.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningSignal<T> {
    frames: Tensor<T>,
    hop: usize,
    len: usize,
}

impl<T: Scalar> ConditioningSignal<T> {
    pub fn from_frames(frames: Tensor<T>, hop: usize, len: usize) -> Self {
        assert!(hop >= 1, "hop must be positive");
        assert!(len <= frames.cols() * hop, "conditioning shorter than requested length");
        Self { frames, hop, len }
    }

    pub fn frames(&self) -> &Tensor<T> {
        &self.frames
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    /// Audio-rate length.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channels(&self) -> usize {
        self.frames.rows()
    }

    /// The same signal cut to its first `len` samples.
    pub fn truncated(&self, len: usize) -> Self {
        assert!(len <= self.len);
        let frames = len.div_ceil(self.hop).max(1).min(self.frames.cols());
        Self { frames: self.frames.slice_cols(0, frames), hop: self.hop, len }
    }

    pub fn to_audio_rate(&self) -> Tensor<T> {
        let full = upsample_repeat(&self.frames, self.hop).expect("valid hop");
        full.slice_cols(0, self.len)
    }
}

/// Concatenates every latent frame with `embedding` and repeats each frame
/// `hop` times.
pub fn build_conditioning<T: Scalar>(
    latent: &LatentSequence<T>,
    embedding: &[T],
    hop: usize,
) -> Result<ConditioningSignal<T>, ModelError> {
    let norm = embedding.iter().map(|&v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
    if norm > 1.0 + 1e-5 {
        return Err(ModelError::EmbeddingOutsideBall(norm));
    }
    let (dim, count) = (latent.frames.rows(), latent.frames.cols());
    let mut frames = Tensor::zeros(&[dim + embedding.len(), count]);
    for r in 0..dim {
        frames.row_mut(r).copy_from_slice(latent.frames.row(r));
    }
    for (j, &v) in embedding.iter().enumerate() {
        frames.row_mut(dim + j).iter_mut().for_each(|x| *x = v);
    }
    Ok(ConditioningSignal::from_frames(frames, hop, count * hop))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_frames_become_two_hops() {
        let latent = LatentSequence { frames: Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap() };
        let v = [0.5, -0.25, 0.0];
        let c = build_conditioning(&latent, &v, 800).unwrap();
        assert_eq!(c.len(), 1600);
        let full = c.to_audio_rate();
        assert_eq!(full.shape(), &[5, 1600]);
        for t in [0, 799, 800, 1599] {
            for (j, &vj) in v.iter().enumerate() {
                assert_eq!(full.at(2 + j, t), vj);
            }
        }
        assert_eq!(full.at(0, 799), 1.0);
        assert_eq!(full.at(0, 800), 2.0);
    }

    #[test]
    fn zero_embedding_gives_zero_rows() {
        let latent = LatentSequence { frames: Tensor::<f32>::full(&[3, 4], 0.7) };
        let c = build_conditioning(&latent, &[0.0; 3], 5).unwrap();
        let full = c.to_audio_rate();
        for r in 3..6 {
            assert!(full.row(r).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn embeddings_outside_ball_are_rejected() {
        let latent = LatentSequence { frames: Tensor::<f32>::zeros(&[1, 1]) };
        assert!(build_conditioning(&latent, &[0.8, 0.8], 4).is_err());
    }

    #[test]
    fn truncation_keeps_covering_frames() {
        let latent = LatentSequence { frames: Tensor::<f64>::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap() };
        let c = build_conditioning(&latent, &[0.1], 4).unwrap();
        let t = c.truncated(5);
        assert_eq!(t.len(), 5);
        assert_eq!(t.frames().cols(), 2);
        assert_eq!(t.to_audio_rate().row(0), &[1.0, 1.0, 1.0, 1.0, 2.0]);
    }
}
