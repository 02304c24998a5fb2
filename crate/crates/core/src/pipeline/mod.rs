//! Experiment orchestration: configuration, seeding, model files, reports and manifests.

pub mod config;
pub mod manifest;
pub mod persist;
pub mod report;
pub mod run;

pub use config::{ExperimentConfig, ModelKind, Precision};
pub use manifest::Manifest;
pub use persist::{load_model, save_model, SavedModel};
pub use report::{emit_reports, ReportFormat};
pub use run::{
    configure_workers,
    evaluate_prediction_file, evaluate_predictions, load_dataset, prepare_task, run_antibiotic, run_experiment, stage_seed,
    train_cnn, train_gbt, train_rf, write_explanations, write_predictions, AntibioticFailure, AntibioticResult, Dataset, ExperimentResult,
    Task,
};
