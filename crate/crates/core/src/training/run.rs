use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Corpus, CropSource, SingerRegistry, TrainingItem};
use crate::augment::Variant;
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, SvcModel};
use crate::nn::{argmax, Adam, Tensor};

use super::backtranslation::{from_tensors, to_tensors};
use super::steps::to_scalars;
use super::{
    autoencoder_step, backtranslation_step, confusion_step, generate_backtranslation_set, BacktranslationItem,
    BacktranslationOptions, TrainConfig, TrainError,
};

pub const METRICS_HEADER: &str = "epoch,phase,reconstruction,adversarial,confusion_loss,confusion_accuracy,\
heldout_confusion_accuracy,backtranslation,learning_rate,seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based index of the finished epoch.
    pub epoch: usize,
    pub phase: u8,
    pub reconstruction: f64,
    pub adversarial: f64,
    pub confusion_loss: f64,
    /// Confusion accuracy on the training batches.
    pub confusion_accuracy: f64,
    /// Confusion accuracy on fixed held-out crops after the epoch.
    pub heldout_confusion_accuracy: f64,
    /// NaN in phase one.
    pub backtranslation: f64,
    pub learning_rate: f64,
    pub seconds: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.4},{:.4},{:.6},{:.6e},{:.2}",
            self.epoch,
            self.phase,
            self.reconstruction,
            self.adversarial,
            self.confusion_loss,
            self.confusion_accuracy,
            self.heldout_confusion_accuracy,
            self.backtranslation,
            self.learning_rate,
            self.seconds
        )
    }
}

/// Training state that survives a checkpoint round trip.
pub struct Trainer<'c> {
    pub config: TrainConfig,
    corpus: &'c Corpus,
    singer_ids: Vec<String>,
    pub model: SvcModel<f32>,
    pub opt_ae: Adam<f32>,
    pub opt_c: Adam<f32>,
    pub bt_set: Vec<BacktranslationItem>,
    /// Completed epochs.
    pub epoch: usize,
    probe: Vec<TrainingItem>,
}

fn io_err(path: &Path, e: impl ToString) -> TrainError {
    TrainError::Io { path: path.display().to_string(), reason: e.to_string() }
}

/// Fixed crops for the held-out confusion accuracy: the start of every
/// validation file, or seeded training crops when there is none.
fn probe_items(corpus: &Corpus, crop_len: usize, seed: u64) -> Result<Vec<TrainingItem>, TrainError> {
    let items: Vec<TrainingItem> = corpus
        .validation_files()
        .filter(|f| f.clip.len() >= crop_len)
        .map(|f| {
            TrainingItem::from_audio(
                &f.clip.samples[..crop_len],
                corpus.sample_rate,
                f.singer,
                CropSource { path: f.path.clone(), start: 0, variant: Variant::Identity },
            )
        })
        .collect();
    if !items.is_empty() {
        return Ok(items);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    Ok(corpus.sample_batch(crop_len, 2 * corpus.k(), &mut rng)?)
}

fn opt_tensors(prefix: &str, opt: &Adam<f32>) -> Vec<(String, Tensor<f32>)> {
    let mut out = Vec::new();
    for (name, (m, v)) in &opt.moments {
        out.push((format!("opt/{prefix}/m/{name}"), m.clone()));
        out.push((format!("opt/{prefix}/v/{name}"), v.clone()));
    }
    out
}

fn restore_opt(prefix: &str, opt: &mut Adam<f32>, extra: &[(String, Tensor<f32>)], meta: &BTreeMap<String, String>) {
    let m_prefix = format!("opt/{prefix}/m/");
    for (name, m) in extra {
        if let Some(param) = name.strip_prefix(&m_prefix) {
            let vname = format!("opt/{prefix}/v/{param}");
            if let Some((_, v)) = extra.iter().find(|(n, _)| *n == vname) {
                opt.moments.insert(param.to_string(), (m.clone(), v.clone()));
            }
        }
    }
    if let Some(s) = meta.get(&format!("{prefix}_steps")).and_then(|s| s.parse().ok()) {
        opt.steps = s;
    }
    if let Some(lr) = meta.get("learning_rate").and_then(|s| s.parse().ok()) {
        opt.config.learning_rate = lr;
    }
}

impl<'c> Trainer<'c> {
    pub fn new(config: TrainConfig, corpus: &'c Corpus, registry: &SingerRegistry) -> Result<Self, TrainError> {
        config.validate()?;
        registry.require_trainable()?;
        corpus.check_crop(config.crop_len, config.model.hop())?;
        let model = SvcModel::new(&config.model, registry.k(), config.rng_seed)?;
        let probe = probe_items(corpus, config.crop_len, config.rng_seed)?;
        Ok(Self {
            opt_ae: Adam::new(config.adam()),
            opt_c: Adam::new(config.adam()),
            config,
            corpus,
            singer_ids: registry.ids().to_vec(),
            model,
            bt_set: Vec::new(),
            epoch: 0,
            probe,
        })
    }

    /// Continues from `ck`. The architecture in `config` must match.
    pub fn from_checkpoint(
        config: TrainConfig,
        corpus: &'c Corpus,
        registry: &SingerRegistry,
        ck: Checkpoint,
    ) -> Result<Self, TrainError> {
        if ck.meta.spec != config.model {
            return Err(TrainError::Config { key: "model".into(), reason: "architecture differs from the checkpoint".into() });
        }
        if ck.meta.singer_ids != registry.ids() {
            return Err(TrainError::Config {
                key: "manifest".into(),
                reason: format!("checkpoint singers {:?} differ from manifest singers {:?}", ck.meta.singer_ids, registry.ids()),
            });
        }
        let mut t = Self::new(config, corpus, registry)?;
        t.model = ck.model;
        t.epoch = ck.meta.epoch;
        restore_opt("ae", &mut t.opt_ae, &ck.extra, &ck.meta.extra);
        restore_opt("c", &mut t.opt_c, &ck.extra, &ck.meta.extra);
        t.bt_set = from_tensors(&ck.extra, corpus.sample_rate);
        Ok(t)
    }

    pub fn total_epochs(&self) -> usize {
        self.config.phase1_epochs + self.config.phase2_epochs
    }

    /// Phase of the 0-based epoch `e`.
    pub fn phase_of(&self, e: usize) -> u8 {
        if e < self.config.phase1_epochs {
            1
        } else {
            2
        }
    }

    fn epoch_rng(&self, e: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.rng_seed);
        rng.set_stream(e as u64 + 1);
        rng
    }

    fn bt_items(&self) -> usize {
        match self.config.backtranslation_items {
            0 => self.corpus.train_files().count(),
            n => n,
        }
    }

    /// Regenerates the synthetic set from the current model.
    pub fn refresh_backtranslation(&mut self, seed: u64) -> Result<(), TrainError> {
        let options = BacktranslationOptions {
            temperature: self.config.backtranslation_temperature,
            alpha: if self.config.mixup { None } else { Some(0.0) },
        };
        self.bt_set = generate_backtranslation_set(self.corpus, &self.model, self.bt_items(), self.config.crop_len, seed, options)?;
        Ok(())
    }

    pub fn heldout_confusion_accuracy(&self) -> Result<f64, TrainError> {
        let mut hits = 0;
        for item in &self.probe {
            let latent = self.model.encoder.encode(&to_scalars::<f32>(&item.companded))?;
            if argmax(&self.model.confusion.classify(&latent)?) == item.singer_index {
                hits += 1;
            }
        }
        Ok(hits as f64 / self.probe.len() as f64)
    }

    pub fn run_epoch(&mut self) -> Result<EpochMetrics, TrainError> {
        let start = Instant::now();
        let e = self.epoch;
        let phase = self.phase_of(e);
        let mut rng = self.epoch_rng(e);
        if phase == 2 {
            let q = e - self.config.phase1_epochs;
            let seed: u64 = rng.gen();
            if q % self.config.mixup_refresh_epochs == 0 || self.bt_set.is_empty() {
                log::info!("epoch {}: regenerating {} backtranslation items", e + 1, self.bt_items());
                self.refresh_backtranslation(seed)?;
            }
        }
        let steps = self.config.steps_per_epoch;
        let mut m = EpochMetrics {
            epoch: e + 1,
            phase,
            reconstruction: 0.0,
            adversarial: 0.0,
            confusion_loss: 0.0,
            confusion_accuracy: 0.0,
            heldout_confusion_accuracy: 0.0,
            backtranslation: if phase == 2 { 0.0 } else { f64::NAN },
            learning_rate: self.opt_ae.config.learning_rate,
            seconds: 0.0,
        };
        for _ in 0..steps {
            let batch = self.corpus.sample_batch(self.config.crop_len, self.config.batch_size, &mut rng)?;
            let c = confusion_step(&mut self.model, &mut self.opt_c, &batch)?;
            let a = autoencoder_step(&mut self.model, &mut self.opt_ae, &batch, self.config.lambda)?;
            m.confusion_loss += c.loss / steps as f64;
            m.confusion_accuracy += c.accuracy / steps as f64;
            m.reconstruction += a.reconstruction / steps as f64;
            m.adversarial += a.adversarial / steps as f64;
            if phase == 2 && !self.bt_set.is_empty() {
                let items: Vec<BacktranslationItem> = (0..self.config.batch_size)
                    .map(|_| self.bt_set[rng.gen_range(0..self.bt_set.len())].clone())
                    .collect();
                let l = backtranslation_step(&mut self.model, &mut self.opt_ae, &items, self.config.backtranslation_weight)?;
                m.backtranslation += l / steps as f64;
            }
        }
        self.opt_ae.decay_learning_rate(self.config.lr_decay);
        self.opt_c.decay_learning_rate(self.config.lr_decay);
        self.epoch += 1;
        m.heldout_confusion_accuracy = self.heldout_confusion_accuracy()?;
        m.seconds = start.elapsed().as_secs_f64();
        Ok(m)
    }

    pub fn meta(&self) -> CheckpointMeta {
        let mut extra = BTreeMap::new();
        extra.insert("ae_steps".to_string(), self.opt_ae.steps.to_string());
        extra.insert("c_steps".to_string(), self.opt_c.steps.to_string());
        extra.insert("learning_rate".to_string(), format!("{:e}", self.opt_ae.config.learning_rate));
        CheckpointMeta {
            spec: self.config.model.clone(),
            singer_ids: self.singer_ids.clone(),
            phase: if self.epoch == 0 { 0 } else { self.phase_of(self.epoch - 1) },
            epoch: self.epoch,
            extra,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut extra = opt_tensors("ae", &self.opt_ae);
        extra.extend(opt_tensors("c", &self.opt_c));
        extra.extend(to_tensors(&self.bt_set));
        save_checkpoint(path, &self.model, &self.meta(), &extra)?;
        Ok(())
    }
}

pub fn checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("epoch_{epoch:04}.svc"))
}

/// The checkpoint with the highest epoch number under `out_dir`.
pub fn latest_checkpoint(out_dir: &Path) -> Option<PathBuf> {
    let dir = out_dir.join("checkpoints");
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in fs::read_dir(dir).ok()?.flatten() {
        let path = entry.path();
        let Some(n) = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("epoch_"))
            .and_then(|n| n.strip_suffix(".svc"))
            .and_then(|n| n.parse::<usize>().ok())
        else {
            continue;
        };
        if path.with_extension("meta").exists() && best.as_ref().is_none_or(|(b, _)| n > *b) {
            best = Some((n, path));
        }
    }
    best.map(|(_, p)| p)
}

pub struct TrainOutcome {
    pub model: SvcModel<f32>,
    pub metrics: Vec<EpochMetrics>,
    pub checkpoints: Vec<PathBuf>,
}

/// Runs (or resumes) training under `out_dir`, writing
/// `checkpoints/epoch_NNNN.svc` after every epoch and appending to
/// `metrics.csv`.
pub fn train(
    config: &TrainConfig,
    corpus: &Corpus,
    registry: &SingerRegistry,
    out_dir: &Path,
    resume: bool,
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = if resume {
        let path = latest_checkpoint(out_dir).ok_or_else(|| TrainError::NothingToResume(out_dir.display().to_string()))?;
        log::info!("resuming from {}", path.display());
        Trainer::from_checkpoint(config.clone(), corpus, registry, load_checkpoint(&path)?)?
    } else {
        Trainer::new(config.clone(), corpus, registry)?
    };
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let metrics_path = out_dir.join("metrics.csv");
    let mut checkpoints = Vec::new();
    if !resume {
        fs::write(&metrics_path, format!("{METRICS_HEADER}\n")).map_err(|e| io_err(&metrics_path, e))?;
        let p = checkpoint_path(out_dir, 0);
        trainer.save(&p)?;
        checkpoints.push(p);
    }
    let mut metrics = Vec::new();
    while trainer.epoch < trainer.total_epochs() {
        let m = trainer.run_epoch()?;
        log::info!(
            "epoch {} phase {}: recon {:.4} adv {:.4} conf {:.4} acc {:.3} heldout {:.3} bt {:.4} ({:.1}s)",
            m.epoch,
            m.phase,
            m.reconstruction,
            m.adversarial,
            m.confusion_loss,
            m.confusion_accuracy,
            m.heldout_confusion_accuracy,
            m.backtranslation,
            m.seconds
        );
        let mut f = OpenOptions::new().append(true).create(true).open(&metrics_path).map_err(|e| io_err(&metrics_path, e))?;
        writeln!(f, "{}", m.csv_row()).map_err(|e| io_err(&metrics_path, e))?;
        let p = checkpoint_path(out_dir, trainer.epoch);
        trainer.save(&p)?;
        checkpoints.push(p);
        metrics.push(m);
    }
    Ok(TrainOutcome { model: trainer.model, metrics, checkpoints })
}
