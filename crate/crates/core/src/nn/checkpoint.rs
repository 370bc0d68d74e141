//! Model checkpoints: `manifest.json` plus a raw little-endian `f32` payload
//! `params.bin`, tensors concatenated in layout order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::autoencoder::{ModelConfig, RsalAutoencoder};
use super::params::TensorSpec;
use super::NnError;

const FORMAT: &str = "hsad-checkpoint-1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub dtype: String,
    pub model: ModelConfig,
    pub param_count: usize,
    pub tensors: Vec<TensorSpec>,
    /// Free-form hyperparameters recorded alongside the weights.
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NnError + '_ {
    move |source| NnError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `dir/manifest.json` and `dir/params.bin`, creating `dir`.
pub fn save_checkpoint(
    model: &RsalAutoencoder,
    dir: &Path,
    metadata: serde_json::Map<String, serde_json::Value>,
) -> Result<CheckpointManifest, NnError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        dtype: "f32".into(),
        model: model.config(),
        param_count: model.param_count(),
        tensors: model.param_layout().tensors.clone(),
        metadata,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, json + "\n").map_err(io_err(&mpath))?;
    let payload: Vec<u8> = model
        .flat_params()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    let ppath = dir.join(PAYLOAD_FILE);
    fs::write(&ppath, payload).map_err(io_err(&ppath))?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(RsalAutoencoder, CheckpointManifest), NnError> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| NnError::Checkpoint(format!("{}: {e}", mpath.display())))?;
    if manifest.format != FORMAT || manifest.dtype != "f32" {
        return Err(NnError::Checkpoint(format!(
            "unsupported checkpoint format {} / {}",
            manifest.format, manifest.dtype
        )));
    }
    let mut model = RsalAutoencoder::uninitialized(manifest.model);
    if model.param_layout().tensors != manifest.tensors || model.param_count() != manifest.param_count {
        return Err(NnError::Checkpoint("tensor layout does not match the model configuration".into()));
    }
    let ppath = dir.join(PAYLOAD_FILE);
    let bytes = fs::read(&ppath).map_err(io_err(&ppath))?;
    if bytes.len() != manifest.param_count * 4 {
        return Err(NnError::Checkpoint(format!(
            "payload holds {} bytes, expected {}",
            bytes.len(),
            manifest.param_count * 4
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    model.set_flat_params(&flat)?;
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            bands: 3,
            hidden: 4,
            state_dim: 2,
        }
    }

    #[test]
    fn round_trip_is_exact_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RsalAutoencoder::init(cfg(), 1);
        let rounded: Vec<f64> = m.flat_params().iter().map(|&v| v as f32 as f64).collect();
        m.set_flat_params(&rounded).unwrap();
        let mut meta = serde_json::Map::new();
        meta.insert("lr".into(), 5e-4.into());
        save_checkpoint(&m, dir.path(), meta).unwrap();
        let (back, manifest) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(manifest.metadata["lr"], 5e-4);
        // deterministic bytes
        let first = fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        save_checkpoint(&back, dir.path(), manifest.metadata.clone()).unwrap();
        assert_eq!(first, fs::read(dir.path().join(MANIFEST_FILE)).unwrap());
    }

    #[test]
    fn rejects_truncated_payload_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(NnError::Io { .. })));
        save_checkpoint(&RsalAutoencoder::init(cfg(), 2), dir.path(), Default::default()).unwrap();
        let p = dir.path().join(PAYLOAD_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(NnError::Checkpoint(_))));
    }
}
