//! Checkpoints: an `SVC1` tensor container plus a `key=value` text record
//! stored beside it with the extension `.meta`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ModelError, ModelSpec, SvcModel};
use crate::nn::{container, Module, Tensor};
use crate::scalar::Scalar;

const FORMAT: &str = "svc-checkpoint-1";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub spec: ModelSpec,
    pub singer_ids: Vec<String>,
    /// 0 for the initial checkpoint, otherwise the training phase (1 or 2).
    pub phase: u8,
    /// Completed epochs over both phases.
    pub epoch: usize,
    /// Free-form extra fields.
    pub extra: BTreeMap<String, String>,
}

impl CheckpointMeta {
    pub fn to_text(&self) -> String {
        let mut out = format!("format={FORMAT}\n");
        for (k, v) in self.spec.to_pairs() {
            out.push_str(&format!("{k}={v}\n"));
        }
        out.push_str(&format!("k={}\n", self.singer_ids.len()));
        for (i, id) in self.singer_ids.iter().enumerate() {
            out.push_str(&format!("singer.{i}={id}\n"));
        }
        out.push_str(&format!("phase={}\nepoch={}\n", self.phase, self.epoch));
        for (k, v) in &self.extra {
            out.push_str(&format!("extra.{k}={v}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut spec = ModelSpec::default();
        let mut k = None;
        let mut singers = BTreeMap::new();
        let mut phase = None;
        let mut epoch = None;
        let mut extra = BTreeMap::new();
        let mut format_ok = false;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value", lineno + 1))?;
            if spec.set(key, value)? {
                continue;
            }
            let num = || value.parse::<usize>().map_err(|e| format!("{key}: {e}"));
            match key {
                "format" if value == FORMAT => format_ok = true,
                "format" => return Err(format!("unsupported format {value:?}")),
                "k" => k = Some(num()?),
                "phase" => phase = Some(value.parse::<u8>().map_err(|e| format!("phase: {e}"))?),
                "epoch" => epoch = Some(num()?),
                _ => {
                    if let Some(i) = key.strip_prefix("singer.") {
                        let i: usize = i.parse().map_err(|e| format!("{key}: {e}"))?;
                        singers.insert(i, value.to_string());
                    } else if let Some(name) = key.strip_prefix("extra.") {
                        extra.insert(name.to_string(), value.to_string());
                    } else {
                        return Err(format!("unknown key {key:?}"));
                    }
                }
            }
        }
        if !format_ok {
            return Err("missing format line".into());
        }
        let k = k.ok_or("missing k")?;
        let singer_ids: Vec<String> = (0..k)
            .map(|i| singers.remove(&i).ok_or_else(|| format!("missing singer.{i}")))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            spec,
            singer_ids,
            phase: phase.ok_or("missing phase")?,
            epoch: epoch.ok_or("missing epoch")?,
            extra,
        })
    }
}

/// A loaded checkpoint. Tensors whose names are not model parameters
/// (optimizer moments, cached training state) are kept in `extra`.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: SvcModel<f32>,
    pub extra: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn singer_index(&self, id: &str) -> Result<usize, ModelError> {
        self.meta
            .singer_ids
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| ModelError::UnknownSinger { id: id.to_string(), known: self.meta.singer_ids.clone() })
    }

    pub fn extra_tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.extra.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

fn ck_err(path: &Path, reason: impl ToString) -> ModelError {
    ModelError::Checkpoint { path: path.display().to_string(), reason: reason.to_string() }
}

/// Writes `path` (tensors) and its `.meta` sibling. Values are stored as f32.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    model: &SvcModel<T>,
    meta: &CheckpointMeta,
    extra: &[(String, Tensor<f32>)],
) -> Result<(), ModelError> {
    if meta.singer_ids.len() != model.k() {
        return Err(ModelError::LengthMismatch { what: "singer ids vs embeddings", left: meta.singer_ids.len(), right: model.k() });
    }
    let mut tensors: Vec<(String, Tensor<f32>)> = model.params().into_iter().map(|(n, p)| (n, p.value.cast())).collect();
    tensors.extend(extra.iter().cloned());
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| ck_err(path, e))?;
    }
    container::write(path, &tensors)?;
    fs::write(meta_path(path), meta.to_text()).map_err(|e| ck_err(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let mp = meta_path(path);
    let text = fs::read_to_string(&mp).map_err(|e| ck_err(&mp, e))?;
    let meta = CheckpointMeta::parse(&text).map_err(|e| ck_err(&mp, e))?;
    let tensors = container::read(path).map_err(|e| ck_err(path, e))?;
    let mut model = SvcModel::<f32>::new(&meta.spec, meta.singer_ids.len(), 0)?;
    let mut by_name: BTreeMap<String, Tensor<f32>> = tensors.into_iter().collect();
    for (name, p) in model.params_mut() {
        let t = by_name.remove(&name).ok_or_else(|| ck_err(path, format!("missing tensor {name}")))?;
        if t.shape() != p.value.shape() {
            return Err(ck_err(path, format!("tensor {name} has shape {:?}, expected {:?}", t.shape(), p.value.shape())));
        }
        p.value = t;
    }
    Ok(Checkpoint { meta, model, extra: by_name.into_iter().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny_spec;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            spec: tiny_spec(),
            singer_ids: vec!["dark".into(), "bright".into()],
            phase: 1,
            epoch: 3,
            extra: [("learning_rate".to_string(), "0.001".to_string())].into_iter().collect(),
        }
    }

    #[test]
    fn meta_text_roundtrip() {
        let m = meta();
        assert_eq!(CheckpointMeta::parse(&m.to_text()).unwrap(), m);
        assert!(CheckpointMeta::parse("k=2\n").is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck/epoch_0003.svc");
        let model = SvcModel::<f32>::new(&tiny_spec(), 2, 7).unwrap();
        let extra = vec![("opt/steps".to_string(), Tensor::full(&[1], 12.0))];
        save_checkpoint(&path, &model, &meta(), &extra).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.model, model);
        assert_eq!(ck.meta, meta());
        assert_eq!(ck.extra_tensor("opt/steps").unwrap().data(), &[12.0]);
        assert_eq!(ck.singer_index("bright").unwrap(), 1);
        let err = ck.singer_index("nobody").unwrap_err().to_string();
        assert!(err.contains("dark") && err.contains("bright"));
    }

    #[test]
    fn missing_meta_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_checkpoint(&dir.path().join("none.svc")).is_err());
    }
}
