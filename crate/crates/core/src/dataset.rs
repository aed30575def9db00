//! Manifest ingestion, the singer registry and random-crop batch sampling.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, compand, encode_sample, AudioClip, AudioError, MuLawClip};
use crate::augment::Variant;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read manifest {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("manifest {path} is not valid JSON: {reason}")]
    Parse { path: String, reason: String },
    #[error("duplicate singer id {0:?}")]
    DuplicateSinger(String),
    #[error("duplicate file path {0}")]
    DuplicatePath(String),
    #[error("singer {0:?} has no training files")]
    NoTrainFiles(String),
    #[error("audio file {0} listed in the manifest does not exist")]
    MissingFile(String),
    #[error("training needs at least 2 singers, manifest has {0}")]
    TooFewSingers(usize),
    #[error("{path} has {len} samples, shorter than the crop length {crop_len}")]
    FileTooShort { path: String, len: usize, crop_len: usize },
    #[error("crop length {crop_len} is not a positive multiple of {period}")]
    BadCropLength { crop_len: usize, period: usize },
    #[error("unknown singer {id:?}; known singers: {known}")]
    UnknownSinger { id: String, known: String },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingerEntry {
    pub id: String,
    pub files: Vec<FileEntry>,
}

/// On-disk layout: `{"singers": [{"id": ..., "files": [{"path", "split"}]}]}`,
/// paths relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub singers: Vec<SingerEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn files(&self, singer: usize, split: Split) -> impl Iterator<Item = &FileEntry> {
        self.singers[singer].files.iter().filter(move |f| f.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        (0..self.singers.len()).map(|s| self.files(s, split).count()).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Structural checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut ids = HashSet::new();
        let mut paths = HashSet::new();
        for s in &self.singers {
            if !ids.insert(s.id.as_str()) {
                return Err(DatasetError::DuplicateSinger(s.id.clone()));
            }
            if !s.files.iter().any(|f| f.split == Split::Train) {
                return Err(DatasetError::NoTrainFiles(s.id.clone()));
            }
            for f in &s.files {
                if !paths.insert(f.path.as_str()) {
                    return Err(DatasetError::DuplicatePath(f.path.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Bijection between singer ids and indices `0..k`, in manifest order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SingerRegistry {
    ids: Vec<String>,
}

impl SingerRegistry {
    pub fn new(ids: Vec<String>) -> Self {
        Self { ids }
    }

    pub fn k(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn index_of(&self, id: &str) -> Result<usize, DatasetError> {
        self.ids
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| DatasetError::UnknownSinger { id: id.to_string(), known: self.ids.join(", ") })
    }

    pub fn require_trainable(&self) -> Result<(), DatasetError> {
        if self.k() < 2 {
            Err(DatasetError::TooFewSingers(self.k()))
        } else {
            Ok(())
        }
    }
}

pub fn load_manifest(path: &Path) -> Result<(DatasetManifest, SingerRegistry), DatasetError> {
    let text = fs::read_to_string(path)
        .map_err(|e| DatasetError::Unreadable { path: path.display().to_string(), reason: e.to_string() })?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| DatasetError::Parse { path: path.display().to_string(), reason: e.to_string() })?;
    manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.validate()?;
    for s in &manifest.singers {
        for f in &s.files {
            let p = manifest.resolve(&f.path);
            if !p.is_file() {
                return Err(DatasetError::MissingFile(p.display().to_string()));
            }
        }
    }
    let registry = SingerRegistry::new(manifest.singers.iter().map(|s| s.id.clone()).collect());
    Ok((manifest, registry))
}

/// One decoded manifest file.
#[derive(Clone, Debug)]
pub struct CorpusFile {
    pub path: String,
    pub singer: usize,
    pub split: Split,
    pub clip: AudioClip,
}

/// All manifest audio resampled to the working rate and kept in memory.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub sample_rate: u32,
    pub files: Vec<CorpusFile>,
    /// Indices into `files` of each singer's training files.
    train_by_singer: Vec<Vec<usize>>,
}

/// Where a training crop came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CropSource {
    pub path: String,
    pub start: usize,
    pub variant: Variant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingItem {
    pub mulaw: MuLawClip,
    /// Continuous companded crop in `[-1, 1]`, the encoder input.
    pub companded: Vec<f32>,
    pub singer_index: usize,
    pub source: CropSource,
}

impl TrainingItem {
    pub fn from_audio(crop: &[f32], sample_rate: u32, singer_index: usize, source: CropSource) -> Self {
        let companded = crop.iter().map(|&x| compand(x as f64) as f32).collect();
        let indices = crop.iter().map(|&x| encode_sample(x as f64)).collect();
        Self { mulaw: MuLawClip { indices, sample_rate }, companded, singer_index, source }
    }
}

impl Corpus {
    pub fn load(manifest: &DatasetManifest, registry: &SingerRegistry, sample_rate: u32) -> Result<Self, DatasetError> {
        let mut files = Vec::new();
        let mut train_by_singer = vec![Vec::new(); registry.k()];
        for (si, s) in manifest.singers.iter().enumerate() {
            for f in &s.files {
                let clip = audio::read_wav(&manifest.resolve(&f.path))?;
                let mut clip = audio::resample(&clip, sample_rate);
                clip.samples.iter_mut().for_each(|x| *x = x.clamp(-1.0, 1.0));
                if f.split == Split::Train {
                    train_by_singer[si].push(files.len());
                }
                files.push(CorpusFile { path: f.path.clone(), singer: si, split: f.split, clip });
            }
        }
        Ok(Self { sample_rate, files, train_by_singer })
    }

    pub fn k(&self) -> usize {
        self.train_by_singer.len()
    }

    pub fn train_files(&self) -> impl Iterator<Item = &CorpusFile> {
        self.files.iter().filter(|f| f.split == Split::Train)
    }

    pub fn validation_files(&self) -> impl Iterator<Item = &CorpusFile> {
        self.files.iter().filter(|f| f.split == Split::Validation)
    }

    /// Checks the crop grid and that every training file can hold one crop.
    pub fn check_crop(&self, crop_len: usize, period: usize) -> Result<(), DatasetError> {
        if crop_len == 0 || period == 0 || crop_len % period != 0 {
            return Err(DatasetError::BadCropLength { crop_len, period });
        }
        for f in self.train_files() {
            if f.clip.len() < crop_len {
                return Err(DatasetError::FileTooShort { path: f.path.clone(), len: f.clip.len(), crop_len });
            }
        }
        Ok(())
    }

    /// Uniform singer, then uniform training file, crop start and variant.
    pub fn sample_item<R: Rng + ?Sized>(&self, crop_len: usize, rng: &mut R) -> Result<TrainingItem, DatasetError> {
        let singer = rng.gen_range(0..self.k());
        let pool = &self.train_by_singer[singer];
        let file = &self.files[pool[rng.gen_range(0..pool.len())]];
        if file.clip.len() < crop_len {
            return Err(DatasetError::FileTooShort { path: file.path.clone(), len: file.clip.len(), crop_len });
        }
        let start = rng.gen_range(0..=file.clip.len() - crop_len);
        let variant = Variant::from_index(rng.gen_range(0..4));
        let mut crop = file.clip.samples[start..start + crop_len].to_vec();
        variant.apply_in_place(&mut crop);
        Ok(TrainingItem::from_audio(
            &crop,
            self.sample_rate,
            singer,
            CropSource { path: file.path.clone(), start, variant },
        ))
    }

    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        crop_len: usize,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<TrainingItem>, DatasetError> {
        (0..batch_size).map(|_| self.sample_item(crop_len, rng)).collect()
    }
}

/// Seeded convenience wrapper around [`Corpus::sample_batch`].
pub fn sample_batch(
    corpus: &Corpus,
    crop_len: usize,
    batch_size: usize,
    rng_seed: u64,
) -> Result<Vec<TrainingItem>, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    corpus.sample_batch(crop_len, batch_size, &mut rng)
}
