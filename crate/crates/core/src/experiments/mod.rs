//! Hallucination validation, modality ablation, loss comparison and
//! sampling-rate sweeps, each producing CSV, text and SVG reports.

pub mod ablation;
pub mod config;
pub mod fps;
pub mod huber;
pub mod plot;
pub mod report;
pub mod stats;
pub mod validation;

pub use ablation::{ablate_modalities, AblationReport, AblationRow};
pub use config::{config_hash, default_rates, feature_set, ExperimentConfig, Variant};
pub use fps::{fps_sensitivity, FpsCurve, FpsPoint};
pub use huber::{feature_errors, frozen_fraction, huber_vs_l2, HuberReport, LossRow};
pub use report::{csv_table, num, summary_header, trajectory_plot, Check, Report, MIN_SEEDS};
pub use stats::{ks_statistic, majority, mean, median};
pub use validation::{compare_features, validate_hallucination, RpeSample, ValidationReport};
