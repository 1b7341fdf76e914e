//! Denoising diffusion over normalized plan targets, conditioned on the scene,
//! the diffusion step and each member's inertial reference.

mod checkpoint;
mod model;
mod net;
mod schedule;
mod train;

pub use checkpoint::{loss_log_csv, Checkpoint, CheckpointManifest, LayerShape, CHECKPOINT_VERSION, MAGIC};
pub use model::{
    ddim_sample, decode_samples, predict_trajectories, predict_with, ClusterCondition, Denoiser, DenoiserMeta,
    DiffusionModel, TargetKind, ZeroDenoiser, DDIM_STEPS, DENOISER_KIND,
};
pub use net::{
    reference_encoding, timestep_embedding, DenoiserArch, DenoiserInputs, DenoiserNet, PLAN_DIM, REFERENCE_SCALE,
};
pub use schedule::{forward_noise, make_schedule, mix, NoiseSchedule};
pub use train::{fit_scaler, train_denoiser, LossKind, LossSpace, ScheduleConfig, TrainConfig, TrainOutcome};

#[cfg(test)]
mod tests;
