//! Configuration, checkpoints, run manifests and the evaluation report.

pub mod checkpoint;
pub mod config;
pub mod manifest;
pub mod report;
pub mod stages;

pub use checkpoint::{
    checkpoint_paths, load_checkpoint, load_codec, load_diffusion, load_reward, require_codec, save_checkpoint, save_codec, save_diffusion, save_reward,
    CheckpointMeta, ComponentKind,
};
pub use config::{EvalConfig, PipelineConfig, RenderConfig, RewardSection};
pub use manifest::{check_chain, file_sha256, Artifact, ManifestEntry, RunManifest, StageRecord};
pub use report::{eval_report, EvalReport, EvalRow, Judge, Method};
pub use stages::{train_reward_stage, RewardEval, RewardStage};
