//! Text-conditioned latent diffusion over codec tokens.

pub mod backbone;
mod loss;
mod model;
mod sample;
mod schedule;
mod train;

pub use backbone::{Backbone, BackboneArch};
pub use loss::{ddpm_loss, ddpm_loss_from_prediction, make_noised_batch, q_sample, LossWeighting, NoisedBatch};
pub use model::{DiffusionModel, DiffusionSpec};
pub use sample::{chain_rng, denoise_step_logprob, sample_batch, sample_with_trajectory, transition_logprob_graph, SampleConfig, Trajectory, TransitionBatch};
pub use schedule::{gaussian_logpdf, make_schedule, NoiseSchedule, ScheduleConfig, ScheduleKind};
pub use train::{encode_examples, eval_denoiser_loss, fit_denoiser, sft_finetune, train_diffusion, DiffusionConfig, DiffusionReport, SftConfig};
