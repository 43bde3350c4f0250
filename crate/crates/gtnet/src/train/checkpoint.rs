//! Checkpoints: a binary parameter blob plus a JSON manifest carrying the
//! model config, ablation, seed, stage and epoch. Loading verifies the
//! embedded config hash.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{GtError, Result};
use crate::nn::ParamStore;

use super::Stage;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub stage: Option<Stage>,
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl CheckpointMeta {
    pub fn new(config: &ModelConfig, stage: Option<Stage>, epoch: usize, seed: u64) -> Self {
        CheckpointMeta {
            config: config.clone(),
            stage,
            epoch,
            seed,
            config_hash: config.hash(),
        }
    }

    /// Fail with a checkpoint mismatch unless `other` hashes identically.
    pub fn verify_matches(&self, other: &ModelConfig) -> Result<()> {
        if self.config_hash != other.hash() {
            return Err(GtError::CheckpointMismatch(format!(
                "checkpoint was produced for config hash {} but the requested config hashes to {}",
                &self.config_hash[..12.min(self.config_hash.len())],
                &other.hash()[..12]
            )));
        }
        Ok(())
    }
}

/// Write `<dir>/<name>.ckpt` and `<dir>/<name>.json`; returns both paths.
pub fn save_checkpoint(
    dir: &Path,
    name: &str,
    store: &ParamStore,
    meta: &CheckpointMeta,
) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let blob_path = dir.join(format!("{name}.ckpt"));
    let meta_path = dir.join(format!("{name}.json"));
    let mut blob = Vec::new();
    store.write_to(&mut blob)?;
    fs::write(&blob_path, blob)?;
    fs::write(&meta_path, serde_json::to_string_pretty(meta)?)?;
    Ok((blob_path, meta_path))
}

/// Load a `.ckpt` blob and its sibling manifest; the manifest's embedded
/// hash must match its own config.
pub fn load_checkpoint(blob_path: &Path) -> Result<(ParamStore, CheckpointMeta)> {
    let meta_path = blob_path.with_extension("json");
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(&meta_path).map_err(
        |e| GtError::CheckpointMismatch(format!("missing manifest {}: {e}", meta_path.display())),
    )?)?;
    if meta.config_hash != meta.config.hash() {
        return Err(GtError::CheckpointMismatch(
            "manifest hash does not match its own config (corrupted checkpoint)".into(),
        ));
    }
    meta.config.validate()?;
    let blob = fs::read(blob_path)?;
    let store = ParamStore::read_from(blob.as_slice())?;
    Ok((store, meta))
}

/// Copy every parameter of `source` into `target`, requiring names to exist.
pub fn splice_into(target: &mut ParamStore, source: &ParamStore) -> Result<()> {
    for (name, value) in source.iter() {
        match target.get_mut(name) {
            Some(slot) => *slot = value.clone(),
            None => {
                return Err(GtError::CheckpointMismatch(format!(
                    "checkpoint parameter '{name}' does not exist in the target model"
                )))
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GtNet;

    #[test]
    fn roundtrip_and_hash_verification() {
        let dir = tempfile::tempdir().unwrap();
        let config = ModelConfig::toy();
        let net = GtNet::new(config.clone()).unwrap();
        let store = net.init_parameters();
        let meta = CheckpointMeta::new(&config, Some(Stage::Teacher), 3, 7);
        let (blob, _) = save_checkpoint(dir.path(), "t", &store, &meta).unwrap();

        let (loaded, meta2) = load_checkpoint(&blob).unwrap();
        assert_eq!(loaded, store);
        assert_eq!(meta2.epoch, 3);
        meta2.verify_matches(&config).unwrap();

        let mut other = config.clone();
        other.seed = 99;
        assert!(matches!(
            meta2.verify_matches(&other),
            Err(GtError::CheckpointMismatch(_))
        ));
    }

    #[test]
    fn splice_rejects_unknown_names() {
        let config = ModelConfig::toy();
        let net = GtNet::new(config).unwrap();
        let mut target = net.init_parameters();
        let mut rogue = ParamStore::new();
        rogue.insert("nonexistent.w", ndarray::arr1(&[1.0]).into_dyn());
        assert!(splice_into(&mut target, &rogue).is_err());
    }
}
