//! Architecture hyper-parameters of the three networks.

use super::ModelError;

/// Non-causal residual stack followed by a pointwise projection and
/// average pooling with `kernel = stride = pool`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderSpec {
    pub blocks: usize,
    pub layers_per_block: usize,
    pub channels: usize,
    pub latent_dim: usize,
    pub kernel_size: usize,
    pub pool: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self { blocks: 3, layers_per_block: 10, channels: 128, latent_dim: 64, kernel_size: 3, pool: 800 }
    }
}

impl EncoderSpec {
    /// Dilation of layer `i` within a block is `2^i`.
    pub fn dilations(&self) -> Vec<usize> {
        (0..self.blocks).flat_map(|_| (0..self.layers_per_block).map(|i| 1usize << i)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderSpec {
    pub blocks: usize,
    pub layers_per_block: usize,
    pub kernel_size: usize,
    pub residual_channels: usize,
    pub skip_channels: usize,
    pub quant_levels: usize,
    pub conditioning_dim: usize,
}

impl Default for DecoderSpec {
    fn default() -> Self {
        Self {
            blocks: 4,
            layers_per_block: 10,
            kernel_size: 2,
            residual_channels: 128,
            skip_channels: 128,
            quant_levels: 256,
            conditioning_dim: 128,
        }
    }
}

impl DecoderSpec {
    pub fn dilations(&self) -> Vec<usize> {
        (0..self.blocks).flat_map(|_| (0..self.layers_per_block).map(|i| 1usize << i)).collect()
    }
}

/// `blocks * (kernel - 1) * (2^layers - 1) + 1` samples.
pub fn receptive_field(spec: &DecoderSpec) -> usize {
    spec.blocks * (spec.kernel_size - 1) * ((1usize << spec.layers_per_block) - 1) + 1
}

/// Convolutions with ELU over latent frames, then a projection to `k`
/// singer logits averaged over time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionSpec {
    pub layers: usize,
    pub channels: usize,
    pub kernel_size: usize,
}

impl Default for ConfusionSpec {
    fn default() -> Self {
        Self { layers: 3, channels: 128, kernel_size: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub sample_rate: u32,
    pub encoder: EncoderSpec,
    pub decoder: DecoderSpec,
    pub confusion: ConfusionSpec,
    pub embedding_dim: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            sample_rate: crate::audio::DEFAULT_SAMPLE_RATE,
            encoder: EncoderSpec::default(),
            decoder: DecoderSpec::default(),
            confusion: ConfusionSpec::default(),
            embedding_dim: 64,
        }
    }
}

impl ModelSpec {
    /// Samples per latent frame.
    pub fn hop(&self) -> usize {
        self.encoder.pool
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let e = &self.encoder;
        let d = &self.decoder;
        let c = &self.confusion;
        let positive = [
            ("encoder_blocks", e.blocks),
            ("encoder_layers", e.layers_per_block),
            ("encoder_channels", e.channels),
            ("latent_dim", e.latent_dim),
            ("encoder_kernel", e.kernel_size),
            ("pool", e.pool),
            ("decoder_blocks", d.blocks),
            ("decoder_layers", d.layers_per_block),
            ("residual_channels", d.residual_channels),
            ("skip_channels", d.skip_channels),
            ("confusion_layers", c.layers),
            ("confusion_channels", c.channels),
            ("confusion_kernel", c.kernel_size),
            ("embedding_dim", self.embedding_dim),
            ("sample_rate", self.sample_rate as usize),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidSpec(format!("{name} must be positive")));
        }
        if d.kernel_size < 2 {
            return Err(ModelError::InvalidSpec("decoder kernel must be >= 2".into()));
        }
        if d.quant_levels != crate::audio::QUANT_LEVELS {
            return Err(ModelError::InvalidSpec(format!("decoder must emit {} levels", crate::audio::QUANT_LEVELS)));
        }
        if d.conditioning_dim != e.latent_dim + self.embedding_dim {
            return Err(ModelError::InvalidSpec(format!(
                "conditioning_dim {} != latent_dim {} + embedding_dim {}",
                d.conditioning_dim, e.latent_dim, self.embedding_dim
            )));
        }
        Ok(())
    }

    /// `key=value` pairs understood by [`ModelSpec::set`].
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let (e, d, c) = (&self.encoder, &self.decoder, &self.confusion);
        vec![
            ("sample_rate", self.sample_rate.to_string()),
            ("encoder_blocks", e.blocks.to_string()),
            ("encoder_layers", e.layers_per_block.to_string()),
            ("encoder_channels", e.channels.to_string()),
            ("latent_dim", e.latent_dim.to_string()),
            ("encoder_kernel", e.kernel_size.to_string()),
            ("pool", e.pool.to_string()),
            ("decoder_blocks", d.blocks.to_string()),
            ("decoder_layers", d.layers_per_block.to_string()),
            ("decoder_kernel", d.kernel_size.to_string()),
            ("residual_channels", d.residual_channels.to_string()),
            ("skip_channels", d.skip_channels.to_string()),
            ("quant_levels", d.quant_levels.to_string()),
            ("conditioning_dim", d.conditioning_dim.to_string()),
            ("confusion_layers", c.layers.to_string()),
            ("confusion_channels", c.channels.to_string()),
            ("confusion_kernel", c.kernel_size.to_string()),
            ("embedding_dim", self.embedding_dim.to_string()),
        ]
    }

    /// Sets one architecture field by key. Returns `Ok(false)` for keys that
    /// are not architecture fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, String> {
        let n = || value.trim().parse::<usize>().map_err(|e| format!("{key}: {e}"));
        let (e, d, c) = (&mut self.encoder, &mut self.decoder, &mut self.confusion);
        match key {
            "sample_rate" => self.sample_rate = value.trim().parse().map_err(|e| format!("{key}: {e}"))?,
            "encoder_blocks" => e.blocks = n()?,
            "encoder_layers" => e.layers_per_block = n()?,
            "encoder_channels" => e.channels = n()?,
            "latent_dim" => e.latent_dim = n()?,
            "encoder_kernel" => e.kernel_size = n()?,
            "pool" => e.pool = n()?,
            "decoder_blocks" => d.blocks = n()?,
            "decoder_layers" => d.layers_per_block = n()?,
            "decoder_kernel" => d.kernel_size = n()?,
            "residual_channels" => d.residual_channels = n()?,
            "skip_channels" => d.skip_channels = n()?,
            "quant_levels" => d.quant_levels = n()?,
            "conditioning_dim" => d.conditioning_dim = n()?,
            "confusion_layers" => c.layers = n()?,
            "confusion_channels" => c.channels = n()?,
            "confusion_kernel" => c.kernel_size = n()?,
            "embedding_dim" => self.embedding_dim = n()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Scalars per second into the encoder over scalars per second out.
    pub fn downsampling_ratio(&self) -> f64 {
        self.encoder.pool as f64 / self.encoder.latent_dim as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_receptive_field() {
        assert_eq!(receptive_field(&DecoderSpec::default()), 4093);
        let one = DecoderSpec { blocks: 1, layers_per_block: 1, ..Default::default() };
        assert_eq!(receptive_field(&one), 2);
        let three = DecoderSpec { blocks: 3, ..Default::default() };
        assert_eq!(receptive_field(&three), 3070);
    }

    #[test]
    fn default_spec_is_consistent() {
        let spec = ModelSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.encoder.dilations().len(), 30);
        assert_eq!(spec.decoder.dilations()[9], 512);
        assert_eq!(spec.downsampling_ratio(), 12.5);
    }

    #[test]
    fn pairs_roundtrip() {
        let mut spec = ModelSpec::default();
        spec.encoder.pool = 400;
        spec.decoder.blocks = 2;
        let mut back = ModelSpec { sample_rate: 1, ..Default::default() };
        for (k, v) in spec.to_pairs() {
            assert!(back.set(k, &v).unwrap());
        }
        assert_eq!(back, spec);
        assert!(!back.set("lambda", "0.1").unwrap());
        assert!(back.set("pool", "x").is_err());
    }

    #[test]
    fn conditioning_width_must_add_up() {
        let spec = ModelSpec { embedding_dim: 32, ..ModelSpec::default() };
        assert!(spec.validate().is_err());
    }
}
