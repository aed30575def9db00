//! Ground-truth-free identity check for synthetic singers.

use crate::audio::{power_spectrum, AudioClip};
use crate::synthdata::SingerProfile;

/// Power-weighted mean frequency in Hz over the non-negative half spectrum.
/// Silence gives 0.
pub fn spectral_centroid(clip: &AudioClip) -> f64 {
    let n = clip.len();
    if n == 0 {
        return 0.0;
    }
    let power = power_spectrum(clip);
    let bin_hz = clip.sample_rate as f64 / n as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for (k, &p) in power.iter().enumerate().take(n / 2 + 1) {
        num += k as f64 * bin_hz * p;
        den += p;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Index of the profile whose expected centroid is nearest to the clip's.
pub fn centroid_oracle(clip: &AudioClip, profiles: &[SingerProfile]) -> usize {
    nearest_centroid(spectral_centroid(clip), profiles)
}

pub fn nearest_centroid(centroid: f64, profiles: &[SingerProfile]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in profiles.iter().enumerate() {
        let d = (p.expected_centroid_hz() - centroid).abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}
