use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::codec::{Codec, CodecArch};
use crate::diffusion::{DiffusionModel, DiffusionSpec};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::rewards::{RewardModel, RewardSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Codec,
    Diffusion,
    Reward,
}

/// JSON sidecar of a parameter blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ComponentKind,
    /// Stage that wrote the checkpoint.
    pub stage: String,
    pub blob_sha256: String,
    /// Architecture / spec needed to rebuild the component.
    pub spec: Value,
    /// Parameter hash of the codec the component was trained against.
    pub codec_hash: Option<String>,
    /// Training summary and evaluation metrics.
    pub info: Value,
}

/// `<base>.bin` and `<base>.json`.
pub fn checkpoint_paths(base: &Path) -> (PathBuf, PathBuf) {
    let stem = match base.extension().and_then(|e| e.to_str()) {
        Some("bin") | Some("json") => base.with_extension(""),
        _ => base.to_path_buf(),
    };
    let name = stem.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    (stem.with_file_name(format!("{name}.bin")), stem.with_file_name(format!("{name}.json")))
}

pub fn save_checkpoint(
    base: &Path,
    kind: ComponentKind,
    stage: &str,
    spec: Value,
    codec_hash: Option<String>,
    info: Value,
    store: &ParamStore,
) -> Result<(PathBuf, PathBuf)> {
    let (bin, json) = checkpoint_paths(base);
    if let Some(dir) = bin.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let blob = store.to_bytes();
    let meta = CheckpointMeta { kind, stage: stage.into(), blob_sha256: hex::encode(Sha256::digest(&blob)), spec, codec_hash, info };
    fs::write(&bin, &blob).map_err(|e| Error::io(&bin, e))?;
    fs::write(&json, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&json, e))?;
    Ok((bin, json))
}

/// Reads and verifies a checkpoint; a hash mismatch names the stage that
/// wrote it.
pub fn load_checkpoint(base: &Path, expect: ComponentKind) -> Result<(CheckpointMeta, ParamStore)> {
    let (bin, json) = checkpoint_paths(base);
    let raw = fs::read(&json).map_err(|e| Error::io(&json, e))?;
    let meta: CheckpointMeta = serde_json::from_slice(&raw).map_err(|e| Error::Checkpoint(format!("{}: unreadable sidecar: {e}", json.display())))?;
    if meta.kind != expect {
        return Err(Error::Checkpoint(format!("{}: written by stage `{}` as a {:?} checkpoint, expected {:?}", json.display(), meta.stage, meta.kind, expect)));
    }
    let blob = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let found = hex::encode(Sha256::digest(&blob));
    if found != meta.blob_sha256 {
        return Err(Error::Checkpoint(format!(
            "stage `{}` checkpoint {} is corrupted: sha256 {} does not match recorded {}",
            meta.stage,
            bin.display(),
            &found[..12],
            &meta.blob_sha256[..12.min(meta.blob_sha256.len())]
        )));
    }
    let store = ParamStore::from_bytes(&blob).map_err(|e| Error::Checkpoint(format!("stage `{}` checkpoint {}: {e}", meta.stage, bin.display())))?;
    Ok((meta, store))
}

fn spec_of<T: for<'de> Deserialize<'de>>(meta: &CheckpointMeta) -> Result<T> {
    serde_json::from_value(meta.spec.clone()).map_err(|e| Error::Checkpoint(format!("stage `{}` checkpoint has an invalid spec: {e}", meta.stage)))
}

pub fn save_codec(base: &Path, codec: &Codec, stage: &str, info: Value) -> Result<(PathBuf, PathBuf)> {
    save_checkpoint(base, ComponentKind::Codec, stage, serde_json::to_value(codec.arch())?, None, info, codec.store())
}

pub fn load_codec(base: &Path) -> Result<(Codec, CheckpointMeta)> {
    let (meta, store) = load_checkpoint(base, ComponentKind::Codec)?;
    let arch: CodecArch = spec_of(&meta)?;
    Ok((Codec::from_store(&arch, &store)?, meta))
}

pub fn save_diffusion(base: &Path, model: &DiffusionModel, codec_hash: &str, stage: &str, info: Value) -> Result<(PathBuf, PathBuf)> {
    save_checkpoint(base, ComponentKind::Diffusion, stage, serde_json::to_value(model.spec())?, Some(codec_hash.into()), info, model.store())
}

pub fn load_diffusion(base: &Path) -> Result<(DiffusionModel, CheckpointMeta)> {
    let (meta, store) = load_checkpoint(base, ComponentKind::Diffusion)?;
    let spec: DiffusionSpec = spec_of(&meta)?;
    Ok((DiffusionModel::from_store(spec, &store)?, meta))
}

pub fn save_reward(base: &Path, model: &RewardModel, codec_hash: &str, stage: &str, info: Value) -> Result<(PathBuf, PathBuf)> {
    save_checkpoint(base, ComponentKind::Reward, stage, serde_json::to_value(model.spec())?, Some(codec_hash.into()), info, model.store())
}

pub fn load_reward(base: &Path) -> Result<(RewardModel, CheckpointMeta)> {
    let (meta, store) = load_checkpoint(base, ComponentKind::Reward)?;
    let spec: RewardSpec = spec_of(&meta)?;
    Ok((RewardModel::from_store(spec, &store)?, meta))
}

/// Errors unless the component was trained against `codec`.
pub fn require_codec(meta: &CheckpointMeta, codec_hash: &str, what: &str) -> Result<()> {
    match &meta.codec_hash {
        Some(h) if h == codec_hash => Ok(()),
        Some(h) => Err(Error::Checkpoint(format!(
            "{what} (stage `{}`) was trained with codec {} but codec {} was supplied",
            meta.stage,
            &h[..12.min(h.len())],
            &codec_hash[..12.min(codec_hash.len())]
        ))),
        None => Err(Error::Checkpoint(format!("{what} (stage `{}`) records no codec hash", meta.stage))),
    }
}
