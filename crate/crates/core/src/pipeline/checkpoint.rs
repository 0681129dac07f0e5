//! On-disk checkpoints: `manifest.json` plus `arrays.bin`.
//!
//! The manifest holds the configuration, history and an ordered list of
//! arrays (`name`, `shape`, `dtype`). `arrays.bin` is the concatenation of
//! those arrays as little-endian IEEE-754 `f64`, in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{Checkpoint, EpochRecord, SelectedEncoder, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{Encoder, ModelConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ARRAYS_FILE: &str = "arrays.bin";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

impl ArraySpec {
    fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
            dtype: "f64".into(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: TrainConfig,
    pub model_config: ModelConfig,
    pub length: usize,
    pub channels: usize,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub adam_step: u64,
    pub selected_epoch: Option<usize>,
    pub arrays: Vec<ArraySpec>,
}

fn encoder_arrays(prefix: &str, encoder: &Encoder) -> Vec<(ArraySpec, Vec<f64>)> {
    let mut out: Vec<(ArraySpec, Vec<f64>)> = encoder
        .params()
        .into_iter()
        .map(|p| (ArraySpec::new(format!("{prefix}{}", p.name), p.shape.clone()), p.value.clone()))
        .collect();
    out.extend(
        encoder
            .buffers()
            .into_iter()
            .map(|(name, v)| (ArraySpec::new(format!("{prefix}{name}"), vec![v.len()]), v.clone())),
    );
    out
}

/// Every array of the checkpoint in storage order.
pub fn checkpoint_arrays(ckpt: &Checkpoint) -> Vec<(ArraySpec, Vec<f64>)> {
    let mut out = Vec::new();
    for p in ckpt.model.params() {
        out.push((ArraySpec::new(p.name.clone(), p.shape.clone()), p.value.clone()));
    }
    for (name, v) in ckpt.model.encoder.buffers() {
        out.push((ArraySpec::new(name, vec![v.len()]), v.clone()));
    }
    for (p, v) in ckpt.model.params().iter().zip(&ckpt.model.optimizer.velocity) {
        out.push((ArraySpec::new(format!("optim.sgd.velocity.{}", p.name), p.shape.clone()), v.clone()));
    }
    let f = ckpt.scores.len();
    out.push((ArraySpec::new("scores", vec![f]), ckpt.scores.scores().to_vec()));
    let adam = &ckpt.score_optimizer.state;
    if let (Some(m), Some(v)) = (adam.m.first(), adam.v.first()) {
        out.push((ArraySpec::new("optim.adam.m", vec![m.len()]), m.clone()));
        out.push((ArraySpec::new("optim.adam.v", vec![v.len()]), v.clone()));
    }
    if let Some(sel) = &ckpt.selected {
        out.extend(encoder_arrays("selected.", &sel.encoder));
    }
    out
}

pub fn manifest_of(ckpt: &Checkpoint) -> CheckpointManifest {
    CheckpointManifest {
        format_version: FORMAT_VERSION,
        config: ckpt.config.clone(),
        model_config: ckpt.model.config.clone(),
        length: ckpt.length,
        channels: ckpt.channels,
        epoch: ckpt.epoch,
        history: ckpt.history.clone(),
        adam_step: ckpt.score_optimizer.state.step,
        selected_epoch: ckpt.selected.as_ref().map(|s| s.epoch),
        arrays: checkpoint_arrays(ckpt).into_iter().map(|(s, _)| s).collect(),
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let arrays = checkpoint_arrays(ckpt);
    let mut manifest = manifest_of(ckpt);
    manifest.arrays = arrays.iter().map(|(s, _)| s.clone()).collect();
    let mut bytes = Vec::with_capacity(arrays.iter().map(|(s, _)| s.len() * 8).sum());
    for (_, values) in &arrays {
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let bin = dir.join(ARRAYS_FILE);
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let man = dir.join(MANIFEST_FILE);
    fs::write(&man, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&man, e))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let version = value.get("format_version").and_then(serde_json::Value::as_u64);
    if version != Some(u64::from(FORMAT_VERSION)) {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version:?}, expected {FORMAT_VERSION}"
        )));
    }
    serde_json::from_value(value)
        .map_err(|e| Error::Checkpoint(format!("malformed manifest {}: {e}", path.display())))
}

/// Loads a checkpoint. The manifest is validated against the layout implied
/// by its own configuration before `arrays.bin` is opened.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    let mut ckpt = Checkpoint::fresh(manifest.config.clone(), manifest.length, manifest.channels)
        .map_err(|e| Error::Checkpoint(format!("invalid stored config: {e}")))?;
    if ckpt.model.config != manifest.model_config {
        return Err(Error::Checkpoint(
            "model config does not match the stored training profile".into(),
        ));
    }
    let has_velocity = manifest.arrays.iter().any(|a| a.name.starts_with("optim.sgd."));
    let has_adam = manifest.arrays.iter().any(|a| a.name.starts_with("optim.adam."));
    if has_velocity {
        ckpt.model.optimizer.velocity = ckpt.model.params().iter().map(|p| vec![0.0; p.len()]).collect();
    }
    if has_adam {
        let f = ckpt.scores.len();
        ckpt.score_optimizer.state.m = vec![vec![0.0; f]];
        ckpt.score_optimizer.state.v = vec![vec![0.0; f]];
    }
    ckpt.score_optimizer.state.step = manifest.adam_step;
    if let Some(epoch) = manifest.selected_epoch {
        ckpt.selected = Some(SelectedEncoder {
            epoch,
            encoder: ckpt.model.encoder.clone(),
        });
    }
    let expected: Vec<ArraySpec> = checkpoint_arrays(&ckpt).into_iter().map(|(s, _)| s).collect();
    if expected.len() != manifest.arrays.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} arrays, expected {}",
            manifest.arrays.len(),
            expected.len()
        )));
    }
    for (e, got) in expected.iter().zip(&manifest.arrays) {
        if e != got {
            return Err(Error::Checkpoint(format!(
                "array '{}' declared with shape {:?} ({}), expected '{}' {:?} (f64)",
                got.name, got.shape, got.dtype, e.name, e.shape
            )));
        }
    }

    let bin = dir.join(ARRAYS_FILE);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let need: usize = expected.iter().map(|s| s.len() * 8).sum();
    if bytes.len() != need {
        return Err(Error::Checkpoint(format!(
            "{} has {} bytes, manifest requires {need}",
            bin.display(),
            bytes.len()
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };

    for p in ckpt.model.params_mut() {
        let n = p.len();
        p.value = take(n);
    }
    for b in ckpt.model.encoder.buffers_mut() {
        let n = b.len();
        *b = take(n);
    }
    for v in &mut ckpt.model.optimizer.velocity {
        let n = v.len();
        *v = take(n);
    }
    let f = ckpt.scores.len();
    ckpt.scores.scores_mut().copy_from_slice(&take(f));
    if has_adam {
        ckpt.score_optimizer.state.m[0] = take(f);
        ckpt.score_optimizer.state.v[0] = take(f);
    }
    if let Some(sel) = &mut ckpt.selected {
        for p in sel.encoder.params_mut() {
            let n = p.len();
            p.value = take(n);
        }
        for b in sel.encoder.buffers_mut() {
            let n = b.len();
            *b = take(n);
        }
    }
    ckpt.epoch = manifest.epoch;
    ckpt.history = manifest.history;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Profile;

    fn bits(ckpt: &Checkpoint) -> Vec<(ArraySpec, Vec<u64>)> {
        checkpoint_arrays(ckpt)
            .into_iter()
            .map(|(s, v)| (s, v.iter().map(|x| x.to_bits()).collect()))
            .collect()
    }

    fn small() -> Checkpoint {
        let cfg = TrainConfig {
            profile: Profile::Small,
            ..TrainConfig::default()
        };
        let mut c = Checkpoint::fresh(cfg, 16, 2).unwrap();
        c.scores.scores_mut()[3] = 0.1 + 0.2;
        c
    }

    #[test]
    fn fresh_state_roundtrips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let c = small();
        save_checkpoint(&c, dir.path()).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(bits(&back), bits(&c));
        assert_eq!(manifest_of(&back), manifest_of(&c));
    }

    #[test]
    fn truncated_arrays_rejected_with_counts() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&small(), dir.path()).unwrap();
        let bin = dir.path().join(ARRAYS_FILE);
        let mut bytes = fs::read(&bin).unwrap();
        let full = bytes.len();
        bytes.truncate(full - 12);
        fs::write(&bin, bytes).unwrap();
        let msg = load_checkpoint(dir.path()).unwrap_err().to_string();
        assert!(msg.contains(&(full - 12).to_string()) && msg.contains(&full.to_string()), "{msg}");
    }

    #[test]
    fn wrong_shape_rejected_before_reading_arrays() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&small(), dir.path()).unwrap();
        let man = dir.path().join(MANIFEST_FILE);
        let mut m: CheckpointManifest =
            serde_json::from_str(&fs::read_to_string(&man).unwrap()).unwrap();
        m.arrays[0].shape[0] += 1;
        fs::write(&man, serde_json::to_string(&m).unwrap()).unwrap();
        // Without the array file any attempt to read it would be an io error.
        fs::remove_file(dir.path().join(ARRAYS_FILE)).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&small(), dir.path()).unwrap();
        let man = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&man)
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 7");
        fs::write(&man, text).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
