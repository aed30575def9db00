use super::AudioClip;

/// Linear-interpolation resampling to `target_rate`.
///
/// Output sample `n` is read at input position `n * source / target`; reads
/// past the last input sample hold its value.
pub fn resample(clip: &AudioClip, target_rate: u32) -> AudioClip {
    assert!(target_rate > 0, "target rate must be positive");
    if clip.sample_rate == target_rate || clip.samples.is_empty() {
        return AudioClip { samples: clip.samples.clone(), sample_rate: target_rate };
    }
    let len = clip.samples.len();
    let ratio = clip.sample_rate as f64 / target_rate as f64;
    let out_len = ((len as f64 / ratio).round() as usize).max(1);
    let last = len - 1;
    let samples = (0..out_len)
        .map(|n| {
            let pos = n as f64 * ratio;
            let i = pos.floor() as usize;
            if i >= last {
                return clip.samples[last];
            }
            let frac = pos - i as f64;
            let (a, b) = (clip.samples[i] as f64, clip.samples[i + 1] as f64);
            (a + (b - a) * frac) as f32
        })
        .collect();
    AudioClip { samples, sample_rate: target_rate }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_rate_is_identity() {
        let clip = AudioClip::new(vec![0.1, -0.4, 0.9], 16000).unwrap();
        assert_eq!(resample(&clip, 16000), clip);
    }

    #[test]
    fn constants_survive_any_ratio() {
        let clip = AudioClip::new(vec![0.3; 441], 44100).unwrap();
        for rate in [8000, 16000, 22050, 48000] {
            let out = resample(&clip, rate);
            assert!(out.samples.iter().all(|&x| (x - 0.3).abs() < 1e-7));
        }
    }

    #[test]
    fn upsampled_ramp_keeps_endpoints() {
        let len = 81;
        let ramp: Vec<f32> = (0..len).map(|i| i as f32 / (len - 1) as f32).collect();
        let out = resample(&AudioClip::new(ramp, 8000).unwrap(), 16000);
        assert_eq!(out.len(), 2 * len);
        assert_eq!(out.samples[0], 0.0);
        assert!((out.samples[out.len() - 1] - 1.0).abs() < 1e-7);
        // interior points follow the line through the input samples
        for (n, &y) in out.samples.iter().enumerate().take(2 * (len - 1)) {
            let expect = (n as f64 / 2.0) / (len - 1) as f64;
            assert!((y as f64 - expect).abs() < 1e-6);
        }
    }
}
