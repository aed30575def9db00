use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::AudioClip;

/// Squared magnitudes of the full-length DFT of the clip.
pub fn power_spectrum(clip: &AudioClip) -> Vec<f64> {
    power_spectrum_of(&clip.samples)
}

pub(crate) fn power_spectrum_of(samples: &[f32]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&x| Complex::new(x as f64, 0.0)).collect();
    if buf.is_empty() {
        return Vec::new();
    }
    let fft = FftPlanner::new().plan_fft_forward(buf.len());
    fft.process(&mut buf);
    buf.iter().map(|c| c.norm_sqr()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft_power(x: &[f32]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for (t, &v) in x.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * t % n) as f64 / n as f64;
                    re += v as f64 * ang.cos();
                    im += v as f64 * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn silence_and_impulse() {
        let zeros = AudioClip::silence(17, 8000);
        assert!(power_spectrum(&zeros).iter().all(|&p| p == 0.0));
        let mut imp = AudioClip::silence(32, 8000);
        imp.samples[0] = 1.0;
        assert!(power_spectrum(&imp).iter().all(|&p| (p - 1.0).abs() < 1e-12));
    }

    #[test]
    fn bin_sinusoid_concentrates_in_conjugate_pair() {
        let n = 128;
        let k0 = 5;
        let x: Vec<f32> =
            (0..n).map(|t| (2.0 * std::f64::consts::PI * k0 as f64 * t as f64 / n as f64).cos() as f32).collect();
        let p = power_spectrum(&AudioClip::new(x, 8000).unwrap());
        let total: f64 = p.iter().sum();
        assert!((p[k0] + p[n - k0]) / total > 1.0 - 1e-9);
    }

    #[test]
    fn matches_naive_dft() {
        for &n in &[1usize, 7, 64, 100, 256] {
            let x: Vec<f32> = (0..n).map(|i| ((i * 37 % 11) as f32 / 11.0) - 0.5).collect();
            let fast = power_spectrum_of(&x);
            let slow = naive_dft_power(&x);
            let scale = slow.iter().fold(0.0f64, |m, &v| m.max(v)).max(1e-30);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-6 * scale, "n={n}: {a} vs {b}");
            }
        }
    }
}
