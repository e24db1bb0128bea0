//! Losses, optimizers and the staged training procedure.

pub mod config;
pub mod data;
pub mod eval;
pub mod loss;
pub mod optim;
pub mod run;
pub mod stages;

pub use config::{Stage, TrainConfig};
pub use data::{build_batch, epoch_batches, eval_clips, Clip, FeatureTable, TrainData};
pub use eval::{chain, dead_reckoning, dead_reckoning_metrics, evaluate, evaluate_sequence, predict_relative, score, EvalMetrics, PoseNet};
pub use loss::{hallucination_loss, huber, regression_loss, split_targets, LossKind};
pub use optim::{adam_step, rmsprop_step, Optimizer, OptimizerKind, Schedule};
pub use run::{metrics_csv, parse_metrics, EpochRecord, RunDir, CHECKPOINT_FILE, CONFIG_FILE, FINAL_FILE, METRICS_FILE};
pub use stages::{finetune_alternating, train_stage1, train_stage2, train_teacher, validation_loss, odometry_variant, run_snapshot, train_base, train_hallucination, train_pipeline, train_variant, Base, Phase, Pipeline, Trainable};
