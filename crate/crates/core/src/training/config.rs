use std::fmt::Write as _;
use std::path::Path;

use crate::model::ModelSpec;
use crate::nn::AdamConfig;

use super::TrainError;

/// Training hyper-parameters. The config file is `key = value` lines whose
/// keys are these field names plus the architecture keys of
/// [`ModelSpec::to_pairs`]; `#` starts a comment.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the adversarial confusion term.
    pub lambda: f64,
    pub batch_size: usize,
    /// Crop length in samples; a multiple of the pooling period.
    pub crop_len: usize,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub steps_per_epoch: usize,
    pub mixup_refresh_epochs: usize,
    pub backtranslation_weight: f64,
    /// Synthetic items per refresh; 0 means one per training file.
    pub backtranslation_items: usize,
    /// Sampling temperature for synthetic items; 0 is argmax.
    pub backtranslation_temperature: f64,
    /// With `false`, `α = 0` so the synthetic singer is another real singer.
    pub mixup: bool,
    pub rng_seed: u64,
    pub learning_rate: f64,
    /// Multiplied into the learning rate after every epoch.
    pub lr_decay: f64,
    /// Global gradient-norm clip, 0 disables.
    pub grad_clip: f64,
    pub model: ModelSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            batch_size: 8,
            crop_len: 16000,
            phase1_epochs: 10,
            phase2_epochs: 10,
            steps_per_epoch: 100,
            mixup_refresh_epochs: 3,
            backtranslation_weight: 1.0,
            backtranslation_items: 0,
            backtranslation_temperature: 1.0,
            mixup: true,
            rng_seed: 0,
            learning_rate: 1e-3,
            lr_decay: 0.98,
            grad_clip: 0.0,
            model: ModelSpec::default(),
        }
    }
}

fn invalid(key: &str, reason: impl ToString) -> TrainError {
    TrainError::Config { key: key.to_string(), reason: reason.to_string() }
}

fn parse_num<N: std::str::FromStr>(key: &str, value: &str) -> Result<N, TrainError>
where
    N::Err: std::fmt::Display,
{
    value.parse().map_err(|e: N::Err| invalid(key, format!("cannot parse {value:?}: {e}")))
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let value = value.trim();
        match key {
            "lambda" => self.lambda = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "crop_len" => self.crop_len = parse_num(key, value)?,
            "phase1_epochs" => self.phase1_epochs = parse_num(key, value)?,
            "phase2_epochs" => self.phase2_epochs = parse_num(key, value)?,
            "steps_per_epoch" => self.steps_per_epoch = parse_num(key, value)?,
            "mixup_refresh_epochs" => self.mixup_refresh_epochs = parse_num(key, value)?,
            "backtranslation_weight" => self.backtranslation_weight = parse_num(key, value)?,
            "backtranslation_items" => self.backtranslation_items = parse_num(key, value)?,
            "backtranslation_temperature" => self.backtranslation_temperature = parse_num(key, value)?,
            "mixup" => self.mixup = parse_num(key, value)?,
            "rng_seed" => self.rng_seed = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "lr_decay" => self.lr_decay = parse_num(key, value)?,
            "grad_clip" => self.grad_clip = parse_num(key, value)?,
            _ => {
                if !self.model.set(key, value).map_err(|e| invalid(key, e))? {
                    return Err(invalid(key, "unknown key"));
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| invalid(&format!("line {}", n + 1), "expected key = value"))?;
            cfg.set(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let nonneg = [
            ("lambda", self.lambda),
            ("backtranslation_weight", self.backtranslation_weight),
            ("backtranslation_temperature", self.backtranslation_temperature),
            ("grad_clip", self.grad_clip),
        ];
        for (key, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(key, format!("must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(invalid("lr_decay", "must lie in (0, 1]"));
        }
        for (key, v) in [
            ("batch_size", self.batch_size),
            ("steps_per_epoch", self.steps_per_epoch),
            ("mixup_refresh_epochs", self.mixup_refresh_epochs),
        ] {
            if v == 0 {
                return Err(invalid(key, "must be >= 1"));
            }
        }
        let pool = self.model.encoder.pool;
        if self.crop_len == 0 || pool == 0 || self.crop_len % pool != 0 {
            return Err(invalid("crop_len", format!("must be a positive multiple of pool ({pool})")));
        }
        self.model.validate().map_err(|e| invalid("model", e))?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, grad_clip: self.grad_clip, ..Default::default() }
    }

    /// The config as a parseable file.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let fields: [(&str, String); 15] = [
            ("lambda", self.lambda.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("crop_len", self.crop_len.to_string()),
            ("phase1_epochs", self.phase1_epochs.to_string()),
            ("phase2_epochs", self.phase2_epochs.to_string()),
            ("steps_per_epoch", self.steps_per_epoch.to_string()),
            ("mixup_refresh_epochs", self.mixup_refresh_epochs.to_string()),
            ("backtranslation_weight", self.backtranslation_weight.to_string()),
            ("backtranslation_items", self.backtranslation_items.to_string()),
            ("backtranslation_temperature", self.backtranslation_temperature.to_string()),
            ("mixup", self.mixup.to_string()),
            ("rng_seed", self.rng_seed.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("lr_decay", self.lr_decay.to_string()),
            ("grad_clip", self.grad_clip.to_string()),
        ];
        for (k, v) in fields.iter().map(|(k, v)| (*k, v.clone())).chain(self.model.to_pairs()) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut cfg = TrainConfig { lambda: 0.1, mixup: false, crop_len: 4000, ..Default::default() };
        cfg.model.encoder.pool = 400;
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn negative_lambda_names_the_key() {
        match TrainConfig::parse("lambda = -0.5\n") {
            Err(TrainError::Config { key, .. }) => assert_eq!(key, "lambda"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(TrainConfig::parse("colour = red"), Err(TrainError::Config { key, .. }) if key == "colour"));
        assert!(matches!(TrainConfig::parse("batch_size = many"), Err(TrainError::Config { key, .. }) if key == "batch_size"));
        assert!(matches!(TrainConfig::parse("mixup_refresh_epochs = 0"), Err(TrainError::Config { .. })));
        assert!(matches!(TrainConfig::parse("crop_len = 1000"), Err(TrainError::Config { key, .. }) if key == "crop_len"));
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = TrainConfig::parse("# desk run\n\nlambda = 0.05 # weaker\n").unwrap();
        assert_eq!(cfg.lambda, 0.05);
    }
}
