//! End-to-end orchestration: configuration, inference, training, evaluation.

mod ablate;
mod config;
mod eval;
mod model;
mod quality;
mod run;
mod train;

pub use ablate::{ablate, run_ablation, AblationResult, AblationRow, AblationSpec, AblationTable, SuiteSpec};
pub use config::{BackendConfig, DecoderKind, PipelineConfig, PsConfig, TrainMode, TrainingConfig};
pub use eval::{evaluate, iou};
pub use model::{binarize, upsample_cells, Checkpoint, Model, Prediction, Prepared};
pub use quality::{
    assess_reference, quality_score, ssim_in_region, QualityReport, SSIM_C1, SSIM_C2, SSIM_RADIUS, SSIM_SIGMA,
};
pub use run::{mean_iou, run_sample, run_sample_per_image, PromptRecord, RunResult, RunSummary};
pub use train::{
    cosine_lr, sample_gradient, train, train_per_image, train_standard, AdamW, SampleGrad, SkipReason,
    StepRecord, TrainReport,
};
