//! Log mel filter-bank images.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::AudioClip;

use super::EvalError;

pub const LOG_FLOOR: f64 = 1e-6;

/// Log energies, `bands × frames`, row-major by band.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureImage {
    pub bands: usize,
    pub frames: usize,
    pub data: Vec<f32>,
}

impl FeatureImage {
    pub fn at(&self, band: usize, frame: usize) -> f32 {
        self.data[band * self.frames + frame]
    }

    pub fn band(&self, band: usize) -> &[f32] {
        &self.data[band * self.frames..(band + 1) * self.frames]
    }

    /// Frames `start..start + len` of every band.
    pub fn crop(&self, start: usize, len: usize) -> FeatureImage {
        assert!(start + len <= self.frames, "crop outside the image");
        let mut data = Vec::with_capacity(self.bands * len);
        for b in 0..self.bands {
            data.extend_from_slice(&self.band(b)[start..start + len]);
        }
        FeatureImage { bands: self.bands, frames: len, data }
    }
}

/// Anything that turns a clip into a feature image.
pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, clip: &AudioClip) -> Result<FeatureImage, EvalError>;
    fn bands(&self) -> usize;
}

/// Hann-windowed power spectra through a triangular mel filter bank,
/// then `ln(x + 1e-6)`.
#[derive(Clone)]
pub struct LogMel {
    pub bands: usize,
    pub window: usize,
    pub hop: usize,
    fft: Arc<dyn Fft<f64>>,
    hann: Vec<f64>,
    /// Per band: first bin and weights.
    filters: Vec<(usize, Vec<f64>)>,
    sample_rate: u32,
}

impl std::fmt::Debug for LogMel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMel")
            .field("bands", &self.bands)
            .field("window", &self.window)
            .field("hop", &self.hop)
            .field("sample_rate", &self.sample_rate)
            .finish()
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl LogMel {
    /// 40 bands, 400-sample window, 160-sample hop.
    pub fn standard(sample_rate: u32) -> Self {
        Self::new(40, 400, 160, sample_rate)
    }

    pub fn new(bands: usize, window: usize, hop: usize, sample_rate: u32) -> Self {
        assert!(bands > 0 && window > 1 && hop > 0, "degenerate filter bank");
        let fft = FftPlanner::new().plan_fft_forward(window);
        let hann = (0..window)
            .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / window as f64).cos())
            .collect();
        let bins = window / 2 + 1;
        let bin_hz = sample_rate as f64 / window as f64;
        let top = hz_to_mel(sample_rate as f64 / 2.0);
        let edges: Vec<f64> = (0..bands + 2).map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64)).collect();
        let filters = (0..bands)
            .map(|b| {
                let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
                let weight = |k: usize| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                };
                let first = (0..bins).find(|&k| weight(k) > 0.0);
                match first {
                    // Narrow low bands may fall between bins; give them the nearest bin.
                    None => ((mid / bin_hz).round() as usize, vec![1.0]),
                    Some(first) => {
                        let last = (first..bins).take_while(|&k| weight(k) > 0.0).last().unwrap_or(first);
                        (first, (first..=last).map(weight).collect())
                    }
                }
            })
            .collect();
        Self { bands, window, hop, fft, hann, filters, sample_rate }
    }

    /// `⌊(len − window) / hop⌋ + 1`.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window {
            0
        } else {
            (len - self.window) / self.hop + 1
        }
    }
}

impl FeatureExtractor for LogMel {
    fn extract(&self, clip: &AudioClip) -> Result<FeatureImage, EvalError> {
        if clip.len() < self.window {
            return Err(EvalError::ClipTooShort { len: clip.len(), window: self.window });
        }
        let frames = self.frame_count(clip.len());
        let mut data = vec![0f32; self.bands * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); self.window];
        let mut power = vec![0.0; self.window / 2 + 1];
        for f in 0..frames {
            let seg = &clip.samples[f * self.hop..f * self.hop + self.window];
            for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&self.hann) {
                *b = Complex::new(x as f64 * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (b, (first, weights)) in self.filters.iter().enumerate() {
                let e: f64 = weights.iter().zip(&power[*first..]).map(|(w, p)| w * p).sum();
                data[b * frames + f] = (e + LOG_FLOOR).ln() as f32;
            }
        }
        Ok(FeatureImage { bands: self.bands, frames, data })
    }

    fn bands(&self) -> usize {
        self.bands
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, len: usize, amp: f32, sr: u32) -> AudioClip {
        let s = (0..len).map(|n| amp * (std::f64::consts::TAU * freq * n as f64 / sr as f64).sin() as f32).collect();
        AudioClip::new(s, sr).unwrap()
    }

    #[test]
    fn frame_count_follows_window_and_hop() {
        let fx = LogMel::standard(16000);
        let img = fx.extract(&AudioClip::silence(16000, 16000)).unwrap();
        assert_eq!((img.bands, img.frames), (40, 98));
        assert_eq!(fx.frame_count(400), 1);
        assert_eq!(fx.frame_count(559), 1);
        assert_eq!(fx.frame_count(560), 2);
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let img = LogMel::standard(16000).extract(&AudioClip::silence(4000, 16000)).unwrap();
        let floor = LOG_FLOOR.ln() as f32;
        assert!(img.data.iter().all(|&v| v == floor));
    }

    #[test]
    fn doubling_amplitude_adds_log_four() {
        let fx = LogMel::standard(8000);
        let a = fx.extract(&tone(440.0, 4000, 0.2, 8000)).unwrap();
        let b = fx.extract(&tone(440.0, 4000, 0.4, 8000)).unwrap();
        let mut checked = 0;
        for (x, y) in a.data.iter().zip(&b.data) {
            if *x > 0.0 {
                assert!(((y - x) as f64 - 4f64.ln()).abs() < 1e-3, "{x} {y}");
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn shift_by_one_hop_shifts_one_frame() {
        let fx = LogMel::standard(8000);
        let clip = tone(300.0, 4000 + 160, 0.5, 8000);
        let a = fx.extract(&clip.slice(0, 4000)).unwrap();
        let b = fx.extract(&clip.slice(160, 4000)).unwrap();
        for band in 0..40 {
            for f in 0..a.frames - 1 {
                assert!((a.at(band, f + 1) - b.at(band, f)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn every_band_has_weight() {
        let fx = LogMel::standard(8000);
        assert!(fx.filters.iter().all(|(_, w)| w.iter().sum::<f64>() > 0.0));
    }

    #[test]
    fn short_clip_is_rejected() {
        let err = LogMel::standard(8000).extract(&AudioClip::silence(399, 8000)).unwrap_err();
        assert!(matches!(err, EvalError::ClipTooShort { len: 399, window: 400 }));
    }
}
