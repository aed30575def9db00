//! Fourfold augmentation by time reversal and polarity inversion.
//!
//! Both maps preserve the power spectrum of a real signal, so every variant
//! is a plausible recording of the same singer. Pitch shifting is not
//! offered.

use crate::audio::AudioClip;

/// The four elements of the group generated by reversal and negation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Identity,
    Reversed,
    Negated,
    ReversedNegated,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Identity, Variant::Reversed, Variant::Negated, Variant::ReversedNegated];

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i % 4]
    }

    pub fn is_reversed(self) -> bool {
        matches!(self, Variant::Reversed | Variant::ReversedNegated)
    }

    pub fn is_negated(self) -> bool {
        matches!(self, Variant::Negated | Variant::ReversedNegated)
    }

    /// Group product: applying `other` after `self`.
    pub fn then(self, other: Variant) -> Variant {
        let r = self.is_reversed() ^ other.is_reversed();
        let n = self.is_negated() ^ other.is_negated();
        match (r, n) {
            (false, false) => Variant::Identity,
            (true, false) => Variant::Reversed,
            (false, true) => Variant::Negated,
            (true, true) => Variant::ReversedNegated,
        }
    }

    pub fn apply(self, clip: &AudioClip) -> AudioClip {
        let mut samples = clip.samples.clone();
        self.apply_in_place(&mut samples);
        AudioClip { samples, sample_rate: clip.sample_rate }
    }

    pub fn apply_in_place<S: Copy + std::ops::Neg<Output = S>>(self, samples: &mut [S]) {
        if self.is_reversed() {
            samples.reverse();
        }
        if self.is_negated() {
            samples.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

pub fn reverse(clip: &AudioClip) -> AudioClip {
    Variant::Reversed.apply(clip)
}

pub fn negate(clip: &AudioClip) -> AudioClip {
    Variant::Negated.apply(clip)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSet {
    pub variants: [(Variant, AudioClip); 4],
    pub singer_id: usize,
}

impl AugmentedSet {
    pub fn get(&self, v: Variant) -> &AudioClip {
        &self.variants.iter().find(|(tag, _)| *tag == v).expect("all variants present").1
    }

    pub fn contains(&self, clip: &AudioClip) -> bool {
        self.variants.iter().any(|(_, c)| c == clip)
    }
}

pub fn augment(clip: &AudioClip, singer_id: usize) -> AugmentedSet {
    AugmentedSet { variants: Variant::ALL.map(|v| (v, v.apply(clip))), singer_id }
}
