//! Checkpoint persistence: a JSON manifest indexing a flat little-endian
//! 64-bit float parameter file. The format is language-neutral and the
//! manifest diffs cleanly; loading then saving reproduces identical bytes.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrained,
    Finetuned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the parameter file.
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub stage: Stage,
    pub seed: u64,
    pub config: TrainConfig,
    /// Time-series width the round-0 parameters expect.
    pub t_dim: usize,
    /// Region count of the dataset the checkpoint was trained on
    /// (informational; parameter shapes are region-independent).
    pub n_regions: usize,
    pub params: Vec<ParamEntry>,
    pub tool: ToolInfo,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(
        params: ModelParams,
        config: TrainConfig,
        stage: Stage,
        n_regions: usize,
    ) -> Checkpoint {
        let mut entries = Vec::new();
        let mut offset = 0u64;
        for t in params.tensors() {
            entries.push(ParamEntry {
                name: t.name,
                shape: t.shape,
                offset,
            });
            offset += (t.data.len() * 8) as u64;
        }
        let manifest = CheckpointManifest {
            format_version: CHECKPOINT_FORMAT_VERSION,
            stage,
            seed: config.seed,
            t_dim: params.t_dim,
            n_regions,
            config,
            params: entries,
            tool: ToolInfo {
                name: "braincon".into(),
                version: env!("CARGO_PKG_VERSION").into(),
            },
        };
        Checkpoint { manifest, params }
    }

    /// Write `manifest.json` and `params.bin` into `dir`, each through a
    /// temp-file rename so interrupted runs never leave partial files.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut blob: Vec<u8> = Vec::new();
        for t in self.params.tensors() {
            for v in t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let expected: u64 = self
            .manifest
            .params
            .iter()
            .map(|e| e.shape.iter().product::<usize>() as u64 * 8)
            .sum();
        if blob.len() as u64 != expected {
            return Err(Error::Checkpoint(format!(
                "parameter bytes {} do not match manifest total {expected}",
                blob.len()
            )));
        }
        atomic_write(&dir.join(PARAMS_FILE), &blob)?;
        let text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| Error::Checkpoint(format!("manifest serialization: {e}")))?;
        atomic_write(&dir.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Checkpoint> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("manifest parse: {e}")))?;
        if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let params_path = dir.join(PARAMS_FILE);
        let blob = fs::read(&params_path).map_err(|e| Error::io(&params_path, e))?;
        let expected: u64 = manifest
            .params
            .iter()
            .map(|e| e.shape.iter().product::<usize>() as u64 * 8)
            .sum();
        if blob.len() as u64 != expected {
            return Err(Error::Checkpoint(format!(
                "parameter file holds {} bytes, manifest expects {expected}",
                blob.len()
            )));
        }

        // Materialize a parameter skeleton, then overwrite every tensor.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ModelParams::init(&manifest.config, manifest.t_dim, &mut rng);
        let tensors = params.tensors_mut();
        if tensors.len() != manifest.params.len() {
            return Err(Error::Checkpoint(format!(
                "manifest lists {} tensors, model has {}",
                manifest.params.len(),
                tensors.len()
            )));
        }
        for (tensor, entry) in tensors.into_iter().zip(&manifest.params) {
            if tensor.name != entry.name {
                return Err(Error::Checkpoint(format!(
                    "tensor order mismatch: `{}` vs `{}`",
                    tensor.name, entry.name
                )));
            }
            let count: usize = entry.shape.iter().product();
            if count != tensor.data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?} in the manifest but {} values in the model",
                    entry.name,
                    entry.shape,
                    tensor.data.len()
                )));
            }
            let start = entry.offset as usize;
            for (i, v) in tensor.data.iter_mut().enumerate() {
                let bytes: [u8; 8] = blob[start + 8 * i..start + 8 * (i + 1)]
                    .try_into()
                    .expect("8-byte slice");
                *v = f64::from_le_bytes(bytes);
            }
        }
        Ok(Checkpoint { manifest, params })
    }

    /// Hex SHA-256 over the parameter file then the manifest bytes.
    pub fn sha256(dir: &Path) -> Result<String> {
        let mut hasher = Sha256::new();
        for file in [PARAMS_FILE, MANIFEST_FILE] {
            let path = dir.join(file);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            hasher.update(&bytes);
        }
        Ok(hex_string(&hasher.finalize()))
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Write through a temporary file and rename, so readers never observe a
/// partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = Path::new(&tmp);
    fs::write(tmp_path, bytes).map_err(|e| Error::io(tmp_path, e))?;
    fs::rename(tmp_path, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn demo_checkpoint() -> Checkpoint {
        let config = TrainConfig {
            iterations: 1,
            heads: 2,
            states: 2,
            hidden: 4,
            classifier_hidden: 3,
            seed: 42,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = ModelParams::init(&config, 12, &mut rng);
        Checkpoint::new(params, config, Stage::Pretrained, 5)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = demo_checkpoint();
        ckpt.save(dir.path()).unwrap();
        let manifest1 = std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        let params1 = std::fs::read(dir.path().join(PARAMS_FILE)).unwrap();

        let loaded = Checkpoint::load(dir.path()).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        loaded.save(dir2.path()).unwrap();
        assert_eq!(manifest1, std::fs::read(dir2.path().join(MANIFEST_FILE)).unwrap());
        assert_eq!(params1, std::fs::read(dir2.path().join(PARAMS_FILE)).unwrap());
        assert_eq!(
            Checkpoint::sha256(dir.path()).unwrap(),
            Checkpoint::sha256(dir2.path()).unwrap()
        );
    }

    #[test]
    fn offsets_and_sizes_agree() {
        let ckpt = demo_checkpoint();
        let mut expected_offset = 0u64;
        for (entry, tensor) in ckpt.manifest.params.iter().zip(ckpt.params.tensors()) {
            assert_eq!(entry.name, tensor.name);
            assert_eq!(entry.shape, tensor.shape);
            assert_eq!(entry.offset, expected_offset);
            expected_offset += (tensor.data.len() * 8) as u64;
        }
    }

    #[test]
    fn truncated_params_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = demo_checkpoint();
        ckpt.save(dir.path()).unwrap();
        let path = dir.path().join(PARAMS_FILE);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            Checkpoint::load(dir.path()),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn no_tmp_files_left_behind() {
        let dir = tempfile::tempdir().unwrap();
        demo_checkpoint().save(dir.path()).unwrap();
        let leftovers: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty(), "{leftovers:?}");
    }
}
