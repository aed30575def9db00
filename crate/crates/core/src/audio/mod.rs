//! Waveforms, the 8-bit mu-law codec, WAV I/O, resampling and spectra.

mod mulaw;
mod resample;
mod spectrum;
mod wav;

pub use mulaw::{
    compand, decode_index, encode_sample, expand, index_to_companded, mu_law_decode, mu_law_encode, MU,
    QUANT_LEVELS, START_INDEX,
};
pub use resample::resample;
pub use spectrum::power_spectrum;
pub use wav::{read_wav, write_wav};

use thiserror::Error;

/// Default working rate: one 800-sample latent frame is 50 ms.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("sample {index} = {value} lies outside [-1, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("audio clip is empty")]
    Empty,
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("malformed WAV file {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("unsupported WAV encoding in {path}: {reason}")]
    Unsupported { path: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Mono waveform with amplitudes nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    /// Validates rate, length and range.
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::ZeroSampleRate);
        }
        if samples.is_empty() {
            return Err(AudioError::Empty);
        }
        check_range(&samples)?;
        Ok(Self { samples, sample_rate })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self { samples: vec![0.0; len], sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, &x| m.max(x.abs()))
    }

    /// Samples `[start, start + len)` as a new clip.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self { samples: self.samples[start..start + len].to_vec(), sample_rate: self.sample_rate }
    }
}

pub(crate) fn check_range(samples: &[f32]) -> Result<(), AudioError> {
    match samples.iter().position(|x| !(-1.0..=1.0).contains(x)) {
        Some(index) => Err(AudioError::OutOfRange { index, value: samples[index] }),
        None => Ok(()),
    }
}

/// 8-bit mu-law indices at a known rate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MuLawClip {
    pub indices: Vec<u8>,
    pub sample_rate: u32,
}

impl MuLawClip {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Bin-center companded values in `(-1, 1)`.
    pub fn companded(&self) -> Vec<f32> {
        self.indices.iter().map(|&i| index_to_companded(i) as f32).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.indices.iter().map(|&i| i as usize).collect()
    }
}

/// Pearson correlation of two equal-length signals (0 when either is flat).
pub fn correlation(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "correlation of unequal lengths");
    let n = a.len() as f64;
    let ma = a.iter().map(|&x| x as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&x| x as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_enforces_invariants() {
        assert!(matches!(AudioClip::new(vec![], 16000), Err(AudioError::Empty)));
        assert!(matches!(AudioClip::new(vec![0.0], 0), Err(AudioError::ZeroSampleRate)));
        match AudioClip::new(vec![0.0, 1.5], 16000) {
            Err(AudioError::OutOfRange { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn correlation_of_scaled_copy_is_one() {
        let a: Vec<f32> = (0..100).map(|i| (i as f32 * 0.1).sin()).collect();
        let b: Vec<f32> = a.iter().map(|x| 0.5 * x).collect();
        assert!((correlation(&a, &b) - 1.0).abs() < 1e-9);
        let c: Vec<f32> = a.iter().map(|x| -x).collect();
        assert!((correlation(&a, &c) + 1.0).abs() < 1e-9);
    }
}
