//! RIFF/WAVE, 16-bit PCM only.

use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use super::{AudioClip, AudioError};

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn malformed(path: &Path, reason: impl Into<String>) -> AudioError {
    AudioError::Malformed { path: path.display().to_string(), reason: reason.into() }
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Reads a 16-bit PCM file, averaging channels to mono and scaling by 1/32768.
pub fn read_wav(path: &Path) -> Result<AudioClip, AudioError> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => AudioError::NotFound(path.display().to_string()),
        _ => AudioError::Io { path: path.display().to_string(), source: e },
    })?;
    if bytes.len() < 12 {
        return Err(malformed(path, "shorter than a RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed(path, "missing RIFF/WAVE signature"));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(&bytes, pos + 4) as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(malformed(path, format!("chunk {:?} overruns file", String::from_utf8_lossy(id))));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(malformed(path, "fmt chunk too short"));
                }
                let mut tag = le_u16(&bytes, body);
                let channels = le_u16(&bytes, body + 2);
                let rate = le_u32(&bytes, body + 4);
                let bits = le_u16(&bytes, body + 14);
                if tag == WAVE_FORMAT_EXTENSIBLE && size >= 40 {
                    tag = le_u16(&bytes, body + 24);
                }
                if tag != WAVE_FORMAT_PCM {
                    return Err(AudioError::Unsupported {
                        path: path.display().to_string(),
                        reason: format!("format tag {tag} is not PCM"),
                    });
                }
                if bits != 16 {
                    return Err(AudioError::Unsupported {
                        path: path.display().to_string(),
                        reason: format!("{bits}-bit samples"),
                    });
                }
                if channels == 0 {
                    return Err(malformed(path, "zero channels"));
                }
                if rate == 0 {
                    return Err(malformed(path, "zero sample rate"));
                }
                format = Some((tag, rate, channels));
            }
            b"data" => data = Some(&bytes[body..body + size]),
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    let (_, rate, channels) = format.ok_or_else(|| malformed(path, "no fmt chunk"))?;
    let data = data.ok_or_else(|| malformed(path, "no data chunk"))?;
    let frame = 2 * channels as usize;
    let frames = data.len() / frame;
    if frames == 0 {
        return Err(malformed(path, "no sample frames"));
    }
    let scale = 1.0 / (32768.0 * channels as f64);
    let samples = (0..frames)
        .map(|f| {
            let sum: i32 = (0..channels as usize)
                .map(|c| i16::from_le_bytes([data[f * frame + 2 * c], data[f * frame + 2 * c + 1]]) as i32)
                .sum();
            (sum as f64 * scale) as f32
        })
        .collect();
    Ok(AudioClip { samples, sample_rate: rate })
}

/// Writes a mono 16-bit PCM file.
pub fn write_wav(clip: &AudioClip, path: &Path) -> Result<(), AudioError> {
    if clip.samples.is_empty() {
        return Err(AudioError::Empty);
    }
    if clip.sample_rate == 0 {
        return Err(AudioError::ZeroSampleRate);
    }
    super::check_range(&clip.samples)?;
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &x in &clip.samples {
        let q = (x as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| AudioError::Io { path: path.display().to_string(), source: e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stereo_bytes(left: &[i16], right: &[i16], rate: u32) -> Vec<u8> {
        let data_len = left.len() * 4;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&2u16.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * 4).to_le_bytes());
        out.extend_from_slice(&4u16.to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data_len as u32).to_le_bytes());
        for (l, r) in left.iter().zip(right) {
            out.extend_from_slice(&l.to_le_bytes());
            out.extend_from_slice(&r.to_le_bytes());
        }
        out
    }

    #[test]
    fn sine_roundtrip_keeps_length_rate_and_peak() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sine.wav");
        let samples: Vec<f32> =
            (0..16000).map(|n| 0.6 * (2.0 * std::f32::consts::PI * 440.0 * n as f32 / 16000.0).sin()).collect();
        write_wav(&AudioClip::new(samples, 16000).unwrap(), &path).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), 16000);
        assert_eq!(back.sample_rate, 16000);
        assert!((back.peak() - 0.6).abs() < 1e-3);
    }

    #[test]
    fn opposite_channels_average_to_silence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let left: Vec<i16> = (0..100).map(|i| (i * 300 - 15000) as i16).collect();
        let right: Vec<i16> = left.iter().map(|&x| -x).collect();
        fs::write(&path, stereo_bytes(&left, &right, 8000)).unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.len(), 100);
        assert!(clip.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn error_kinds_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_wav(&dir.path().join("nope.wav")), Err(AudioError::NotFound(_))));

        let truncated = dir.path().join("short.wav");
        fs::write(&truncated, b"RIFF\x10\x00\x00\x00WA").unwrap();
        assert!(matches!(read_wav(&truncated), Err(AudioError::Malformed { .. })));

        let mut float_fmt = stereo_bytes(&[0, 0], &[0, 0], 8000);
        float_fmt[20] = 3; // IEEE float tag
        let float_path = dir.path().join("float.wav");
        fs::write(&float_path, float_fmt).unwrap();
        assert!(matches!(read_wav(&float_path), Err(AudioError::Unsupported { .. })));
    }

    #[test]
    fn header_declares_rate_and_empty_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.wav");
        write_wav(&AudioClip::new(vec![0.1; 10], 22050).unwrap(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(le_u32(&bytes, 24), 22050);
        let empty = AudioClip { samples: vec![], sample_rate: 22050 };
        assert!(matches!(write_wav(&empty, &path), Err(AudioError::Empty)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn roundtrip_within_one_lsb(samples in proptest::collection::vec(-1.0f32..=1.0, 1..200)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.wav");
            let clip = AudioClip::new(samples, 16000).unwrap();
            write_wav(&clip, &path).unwrap();
            let back = read_wav(&path).unwrap();
            prop_assert_eq!(back.len(), clip.len());
            for (a, b) in clip.samples.iter().zip(&back.samples) {
                prop_assert!(((a - b).abs() as f64) <= 1.0 / 32768.0 + 1e-9);
            }
        }
    }
}
