//! Deterministic synthetic singers: random pentatonic melodies rendered by
//! additive synthesis with a per-singer harmonic envelope and vibrato.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{write_wav, AudioClip, AudioError};
use crate::dataset::{DatasetManifest, FileEntry, SingerEntry, Split};

pub const HARMONICS: usize = 10;
pub const NOTES_PER_SECOND: f64 = 8.0;
pub const RAMP_SECS: f64 = 0.010;
pub const PEAK: f32 = 0.9;
/// Major pentatonic degrees in semitones.
const PENTATONIC: [u32; 5] = [0, 2, 4, 7, 9];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("profile {name:?}: {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("need at least 2 profiles, got {0}")]
    TooFewProfiles(usize),
    #[error("duration must be positive, got {0}")]
    BadDuration(f64),
    #[error("cannot write {path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingerProfile {
    pub name: String,
    /// Amplitudes of harmonics 1..=10; nonnegative, summing to 1.
    pub harmonics: Vec<f64>,
    pub vibrato_rate_hz: f64,
    pub vibrato_depth_cents: f64,
    pub f0_min: f64,
    pub f0_max: f64,
}

impl SingerProfile {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |reason: String| Err(SynthError::InvalidProfile { name: self.name.clone(), reason });
        if self.name.is_empty() {
            return bad("empty name".into());
        }
        if self.harmonics.len() != HARMONICS {
            return bad(format!("expected {HARMONICS} harmonic amplitudes, got {}", self.harmonics.len()));
        }
        if self.harmonics.iter().any(|&a| !(a >= 0.0)) {
            return bad("harmonic amplitudes must be nonnegative".into());
        }
        let sum: f64 = self.harmonics.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return bad(format!("harmonic amplitudes sum to {sum}, expected 1"));
        }
        if !(self.f0_min > 50.0 && self.f0_max < 1000.0 && self.f0_min <= self.f0_max) {
            return bad(format!("f0 range [{}, {}] must lie inside (50, 1000) Hz", self.f0_min, self.f0_max));
        }
        if self.vibrato_rate_hz < 0.0 || self.vibrato_depth_cents < 0.0 {
            return bad("vibrato rate and depth must be nonnegative".into());
        }
        Ok(())
    }

    /// Notes of the pentatonic grid rooted at `f0_min` that fit the range.
    pub fn note_grid(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for octave in 0.. {
            for &deg in &PENTATONIC {
                let f = self.f0_min * 2f64.powf((12 * octave + deg) as f64 / 12.0);
                if f > self.f0_max + 1e-9 {
                    return out;
                }
                out.push(f);
            }
        }
        out
    }

    /// Power-weighted mean harmonic number.
    pub fn harmonic_centroid(&self) -> f64 {
        let p: f64 = self.harmonics.iter().map(|a| a * a).sum();
        let np: f64 = self.harmonics.iter().enumerate().map(|(i, a)| (i + 1) as f64 * a * a).sum();
        np / p
    }

    /// Spectral centroid expected for this singer, taken at the mean note
    /// frequency of the grid.
    pub fn expected_centroid_hz(&self) -> f64 {
        let grid = self.note_grid();
        let mean_f0 = grid.iter().sum::<f64>() / grid.len() as f64;
        self.harmonic_centroid() * mean_f0
    }
}

/// Energy in harmonics 1-3.
pub fn dark_profile() -> SingerProfile {
    let mut harmonics = vec![0.0; HARMONICS];
    harmonics[..3].copy_from_slice(&[0.5, 0.3, 0.2]);
    SingerProfile {
        name: "dark".into(),
        harmonics,
        vibrato_rate_hz: 5.5,
        vibrato_depth_cents: 30.0,
        f0_min: 150.0,
        f0_max: 300.0,
    }
}

/// Harmonics 6-10 emphasized.
pub fn bright_profile() -> SingerProfile {
    let harmonics = (0..HARMONICS).map(|i| if i < 5 { 0.05 } else { 0.15 }).collect();
    SingerProfile {
        name: "bright".into(),
        harmonics,
        vibrato_rate_hz: 5.5,
        vibrato_depth_cents: 30.0,
        f0_min: 150.0,
        f0_max: 300.0,
    }
}

pub fn default_profiles() -> Vec<SingerProfile> {
    vec![dark_profile(), bright_profile()]
}

/// Renders a random melody: 8 notes per second drawn from the profile's
/// pentatonic grid. Harmonic and vibrato phases restart at every note, each
/// note has 10 ms linear attack and release ramps, and the result is scaled
/// to a peak of 0.9.
pub fn generate_song(
    profile: &SingerProfile,
    duration_s: f64,
    melody_seed: u64,
    sample_rate: u32,
) -> Result<AudioClip, SynthError> {
    profile.validate()?;
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(SynthError::BadDuration(duration_s));
    }
    let sr = sample_rate as f64;
    let len = ((duration_s * sr).round() as usize).max(1);
    let note_len = (sr / NOTES_PER_SECOND).round() as usize;
    let ramp = ((RAMP_SECS * sr).round() as usize).max(1);
    let grid = profile.note_grid();
    let nyquist = sr / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(melody_seed);
    let mut samples = vec![0.0f64; len];
    let mut start = 0;
    while start < len {
        let f0 = grid[rng.gen_range(0..grid.len())];
        let end = (start + note_len).min(len);
        let n = end - start;
        let mut phase = 0.0;
        for i in 0..n {
            let tau = i as f64 / sr;
            let cents = profile.vibrato_depth_cents * (TAU * profile.vibrato_rate_hz * tau).sin();
            let f = f0 * 2f64.powf(cents / 1200.0);
            let mut v = 0.0;
            for (h, &a) in profile.harmonics.iter().enumerate() {
                let mult = (h + 1) as f64;
                if a > 0.0 && mult * f < nyquist {
                    v += a * (mult * phase).sin();
                }
            }
            let env = ((i + 1) as f64 / ramp as f64).min((n - i) as f64 / ramp as f64).min(1.0);
            samples[start + i] = v * env;
            phase += TAU * f / sr;
        }
        start = end;
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { PEAK as f64 / peak } else { 0.0 };
    Ok(AudioClip::new(samples.iter().map(|v| (v * scale) as f32).collect(), sample_rate)?)
}

/// Writes `songs_per_singer` songs for every profile under `out_dir` plus a
/// `manifest.json`. Each singer's last song is the validation split.
pub fn make_synthetic_manifest(
    profiles: &[SingerProfile],
    songs_per_singer: usize,
    duration_s: f64,
    sample_rate: u32,
    seed: u64,
    out_dir: &Path,
) -> Result<PathBuf, SynthError> {
    if profiles.len() < 2 {
        return Err(SynthError::TooFewProfiles(profiles.len()));
    }
    for p in profiles {
        p.validate()?;
    }
    let io = |path: &Path, e: std::io::Error| SynthError::Io { path: path.display().to_string(), reason: e.to_string() };
    fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
    let mut singers = Vec::new();
    for (si, p) in profiles.iter().enumerate() {
        let dir = out_dir.join(&p.name);
        fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        let mut files = Vec::new();
        for song in 0..songs_per_singer {
            let melody_seed = seed ^ ((si as u64) << 32 | song as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let clip = generate_song(p, duration_s, melody_seed, sample_rate)?;
            let rel = format!("{}/song_{song:02}.wav", p.name);
            write_wav(&clip, &out_dir.join(&rel)).map_err(|e| SynthError::Io { path: rel.clone(), reason: e.to_string() })?;
            let split = if song + 1 == songs_per_singer { Split::Validation } else { Split::Train };
            files.push(FileEntry { path: rel, split });
        }
        singers.push(SingerEntry { id: p.name.clone(), files });
    }
    let manifest = DatasetManifest { singers, root: out_dir.to_path_buf() };
    let path = out_dir.join("manifest.json");
    fs::write(&path, manifest.to_json()).map_err(|e| io(&path, e))?;
    let profiles_path = out_dir.join("profiles.json");
    let json = serde_json::to_string_pretty(profiles).expect("profiles serialize");
    fs::write(&profiles_path, json).map_err(|e| io(&profiles_path, e))?;
    Ok(path)
}

pub fn load_profiles(path: &Path) -> Result<Vec<SingerProfile>, SynthError> {
    let text = fs::read_to_string(path).map_err(|e| SynthError::Io { path: path.display().to_string(), reason: e.to_string() })?;
    let profiles: Vec<SingerProfile> = serde_json::from_str(&text)
        .map_err(|e| SynthError::InvalidProfile { name: path.display().to_string(), reason: e.to_string() })?;
    for p in &profiles {
        p.validate()?;
    }
    Ok(profiles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::power_spectrum;
    use crate::dataset::load_manifest;

    #[test]
    fn two_seconds_at_16k() {
        let clip = generate_song(&dark_profile(), 2.0, 1, 16000).unwrap();
        assert_eq!(clip.len(), 32000);
        assert!((clip.peak() - 0.9).abs() < 1e-3);
        assert_eq!(clip, generate_song(&dark_profile(), 2.0, 1, 16000).unwrap());
    }

    #[test]
    fn fundamental_only_gives_a_line_near_f0() {
        let mut p = dark_profile();
        p.harmonics = vec![0.0; HARMONICS];
        p.harmonics[0] = 1.0;
        p.f0_max = p.f0_min;
        let clip = generate_song(&p, 1.0, 3, 8000).unwrap();
        let spec = power_spectrum(&clip);
        let n = clip.len();
        let hz = |bin: usize| bin as f64 * 8000.0 / n as f64;
        let total: f64 = spec[..n / 2].iter().sum();
        let near: f64 = spec[..n / 2].iter().enumerate().filter(|(b, _)| (hz(*b) - 150.0).abs() < 25.0).map(|(_, v)| v).sum();
        assert!(near / total > 0.95, "{}", near / total);
    }

    #[test]
    fn profile_validation() {
        let mut p = dark_profile();
        p.harmonics[0] = 0.9;
        assert!(p.validate().is_err());
        let mut q = bright_profile();
        q.f0_max = 1200.0;
        assert!(q.validate().is_err());
        assert!((bright_profile().harmonics.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn manifest_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = make_synthetic_manifest(&default_profiles(), 4, 0.2, 8000, 0, dir.path()).unwrap();
        let (m, reg) = load_manifest(&path).unwrap();
        assert_eq!(reg.k(), 2);
        assert_eq!(m.count(Split::Train), 6);
        assert_eq!(m.count(Split::Validation), 2);
        assert_eq!(load_profiles(&dir.path().join("profiles.json")).unwrap(), default_profiles());
        assert!(matches!(
            make_synthetic_manifest(&default_profiles()[..1], 4, 0.2, 8000, 0, dir.path()),
            Err(SynthError::TooFewProfiles(1))
        ));
    }
}
