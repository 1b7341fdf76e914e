//! Experiment configuration and the file-backed pipeline stages.

mod ablate;
mod config;
mod stages;

pub use ablate::{ablate, run_ablation, Ablation, AblationRow, TrainedVariant, ABLATION_CSV_HEADER, VARIANTS};
pub use config::{DataConfig, ExperimentConfig, InferenceConfig, Paths, Stage, Toggles};
pub use stages::{
    analyze_dist, distribution_csv, eval, family_pdms, fit_norm, fit_norm_artifact, gen_data, generate_splits,
    load_denoiser, load_norm, load_ranker, load_test, load_train, sample, train, train_model, train_ranker_model,
    train_ranker_stage, endpoint_std, irp_diversity, DiversityReport, NormArtifact, PlanOutput, Planner, PlannerKind, DIST_CSV_HEADER, NORM_FILE_VERSION,
};

#[cfg(test)]
mod tests;
