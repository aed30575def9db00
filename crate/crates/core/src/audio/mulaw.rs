use super::{AudioClip, AudioError, MuLawClip};

pub const MU: f64 = 255.0;
pub const QUANT_LEVELS: usize = 256;
/// Index of companded zero; fed to the decoder before the first sample.
pub const START_INDEX: u8 = 128;

/// `sign(x) * ln(1 + mu|x|) / ln(1 + mu)`.
#[inline]
pub fn compand(x: f64) -> f64 {
    x.signum() * (MU * x.abs()).ln_1p() / MU.ln_1p()
}

/// Inverse of [`compand`].
#[inline]
pub fn expand(y: f64) -> f64 {
    y.signum() * ((1.0 + MU).powf(y.abs()) - 1.0) / MU
}

/// Bin of a companded value: `min(255, floor((y + 1) / 2 * 256))`.
#[inline]
pub fn encode_sample(x: f64) -> u8 {
    let y = compand(x);
    let bin = ((y + 1.0) * 0.5 * QUANT_LEVELS as f64).floor();
    bin.clamp(0.0, 255.0) as u8
}

/// Companded bin center `(2i + 1) / 256 - 1`.
#[inline]
pub fn index_to_companded(i: u8) -> f64 {
    (2.0 * i as f64 + 1.0) / QUANT_LEVELS as f64 - 1.0
}

#[inline]
pub fn decode_index(i: u8) -> f64 {
    expand(index_to_companded(i))
}

pub fn mu_law_encode(clip: &AudioClip) -> Result<MuLawClip, AudioError> {
    super::check_range(&clip.samples)?;
    Ok(MuLawClip {
        indices: clip.samples.iter().map(|&x| encode_sample(x as f64)).collect(),
        sample_rate: clip.sample_rate,
    })
}

pub fn mu_law_decode(mlc: &MuLawClip) -> AudioClip {
    AudioClip {
        samples: mlc.indices.iter().map(|&i| decode_index(i) as f32).collect(),
        sample_rate: mlc.sample_rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_points() {
        assert_eq!(encode_sample(1.0), 255);
        assert_eq!(encode_sample(-1.0), 0);
        assert_eq!(encode_sample(0.0), 128);
        // y = ln(128.5) / ln(256) = 0.87570..., (y + 1) * 128 = 240.08...
        assert_eq!(encode_sample(0.5), 240);
        // y = -255/256, x = -(256^(255/256) - 1) / 255 = -0.97849...
        assert!((index_to_companded(0) + 255.0 / 256.0).abs() < 1e-12);
        assert!((decode_index(0) + 0.978_488).abs() < 1e-5);
    }

    #[test]
    fn out_of_range_sample_is_located() {
        let clip = AudioClip { samples: vec![0.0, 0.2, -1.01], sample_rate: 8000 };
        match mu_law_encode(&clip) {
            Err(AudioError::OutOfRange { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bin_centers_are_fixed_points() {
        for i in 0..=255u8 {
            assert_eq!(encode_sample(decode_index(i)), i);
        }
    }

    #[test]
    fn roundtrip_error_bound_on_grid() {
        let worst = (0..=2000)
            .map(|k| -1.0 + k as f64 * 0.001)
            .map(|x| (decode_index(encode_sample(x)) - x).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.025, "{worst}");
    }

    #[test]
    fn decode_stays_inside_open_interval() {
        for i in 0..=255u8 {
            let x = decode_index(i);
            assert!(x > -1.0 && x < 1.0);
        }
    }

    proptest! {
        #[test]
        fn monotone(a in -1.0f64..=1.0, b in -1.0f64..=1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(encode_sample(lo) <= encode_sample(hi));
        }

        #[test]
        fn odd_symmetry_off_boundaries(x in -1.0f64..=1.0) {
            let pos = (compand(x) + 1.0) * 128.0;
            prop_assume!((pos - pos.round()).abs() > 1e-9);
            prop_assert_eq!(encode_sample(-x), 255 - encode_sample(x));
        }
    }
}
