use std::fmt;
use std::str::FromStr;

use crate::config::Ini;
use crate::error::{Error, Result};
use crate::model::Mode;

use super::loss::LossKind;
use super::optim::{OptimizerKind, Schedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Teacher,
    Hallucination,
    Odometry,
    Finetune,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Teacher, Stage::Hallucination, Stage::Odometry, Stage::Finetune];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Teacher => "teacher",
            Stage::Hallucination => "hallucination",
            Stage::Odometry => "odometry",
            Stage::Finetune => "finetune",
        }
    }

    /// Stage whose output this one starts from.
    pub fn prerequisite(self) -> Option<Stage> {
        match self {
            Stage::Teacher => None,
            Stage::Hallucination => Some(Stage::Teacher),
            Stage::Odometry => Some(Stage::Hallucination),
            Stage::Finetune => Some(Stage::Odometry),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::config(&["stage"], format!("unknown stage '{s}' (teacher, hallucination, odometry, finetune)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Subsequences per batch.
    pub batch_size: usize,
    /// Consecutive pairs per subsequence.
    pub subseq_len: usize,
    pub teacher_epochs: usize,
    pub stage1_epochs: usize,
    pub epochs: usize,
    /// Epochs per phase of the alternating fine-tune.
    pub finetune_epochs: usize,
    pub finetune_rounds: usize,
    pub delta: f64,
    pub alpha: f64,
    pub loss: LossKind,
    pub teacher_lr: f64,
    pub stage1_lr: f64,
    pub stage2_lr: f64,
    pub lr_decay: f64,
    pub lr_step: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub rmsprop_rho: f64,
    pub eps: f64,
    pub mode: Mode,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Sequences held out from training for validation.
    pub val_sequences: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            subseq_len: 8,
            teacher_epochs: 200,
            stage1_epochs: 200,
            epochs: 200,
            finetune_epochs: 10,
            finetune_rounds: 2,
            delta: 1.0,
            alpha: 0.001,
            loss: LossKind::Huber,
            teacher_lr: 1e-3,
            stage1_lr: 1e-4,
            stage2_lr: 1e-3,
            lr_decay: 0.75,
            lr_step: 25,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            rmsprop_rho: 0.9,
            eps: 1e-8,
            mode: Mode::Full,
            seed: 1,
            checkpoint_every: 5,
            val_sequences: 1,
        }
    }
}

const KEYS: &[&str] = &[
    "batch_size",
    "subseq_len",
    "teacher_epochs",
    "stage1_epochs",
    "epochs",
    "finetune_epochs",
    "finetune_rounds",
    "delta",
    "alpha",
    "loss",
    "teacher_lr",
    "stage1_lr",
    "stage2_lr",
    "lr_decay",
    "lr_step",
    "adam_beta1",
    "adam_beta2",
    "rmsprop_rho",
    "eps",
    "mode",
    "seed",
    "checkpoint_every",
    "val_sequences",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.subseq_len == 0 {
            return Err(Error::config(&["train.batch_size", "train.subseq_len"], "batch sizes must be positive"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::config(&["train.delta"], "delta must be > 0"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config(&["train.alpha"], "alpha must be > 0"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) || self.lr_step == 0 {
            return Err(Error::config(
                &["train.lr_decay", "train.lr_step"],
                "decay factor must lie in (0, 1) and the step be positive",
            ));
        }
        for (k, v) in [("teacher_lr", self.teacher_lr), ("stage1_lr", self.stage1_lr), ("stage2_lr", self.stage2_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(&[&format!("train.{k}")], "learning rate must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(0.0..1.0).contains(&self.rmsprop_rho) {
            return Err(Error::config(
                &["train.adam_beta1", "train.adam_beta2", "train.rmsprop_rho"],
                "moment decay rates must lie in [0, 1)",
            ));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config(&["train.eps"], "eps must be > 0"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config(&["train.checkpoint_every"], "must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> OptimizerKind {
        OptimizerKind::Adam {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.eps,
        }
    }

    pub fn rmsprop(&self) -> OptimizerKind {
        OptimizerKind::RmsProp {
            rho: self.rmsprop_rho,
            eps: self.eps,
        }
    }

    pub fn decayed(&self, lr: f64) -> Schedule {
        Schedule {
            initial: lr,
            factor: self.lr_decay,
            every: self.lr_step,
        }
    }

    pub fn from_ini(ini: &Ini) -> Result<TrainConfig> {
        ini.check_keys("train", KEYS)?;
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            batch_size: ini.get_or("train", "batch_size", d.batch_size)?,
            subseq_len: ini.get_or("train", "subseq_len", d.subseq_len)?,
            teacher_epochs: ini.get_or("train", "teacher_epochs", d.teacher_epochs)?,
            stage1_epochs: ini.get_or("train", "stage1_epochs", d.stage1_epochs)?,
            epochs: ini.get_or("train", "epochs", d.epochs)?,
            finetune_epochs: ini.get_or("train", "finetune_epochs", d.finetune_epochs)?,
            finetune_rounds: ini.get_or("train", "finetune_rounds", d.finetune_rounds)?,
            delta: ini.get_or("train", "delta", d.delta)?,
            alpha: ini.get_or("train", "alpha", d.alpha)?,
            loss: ini.get_or::<String>("train", "loss", d.loss.name().into())?.parse()?,
            teacher_lr: ini.get_or("train", "teacher_lr", d.teacher_lr)?,
            stage1_lr: ini.get_or("train", "stage1_lr", d.stage1_lr)?,
            stage2_lr: ini.get_or("train", "stage2_lr", d.stage2_lr)?,
            lr_decay: ini.get_or("train", "lr_decay", d.lr_decay)?,
            lr_step: ini.get_or("train", "lr_step", d.lr_step)?,
            adam_beta1: ini.get_or("train", "adam_beta1", d.adam_beta1)?,
            adam_beta2: ini.get_or("train", "adam_beta2", d.adam_beta2)?,
            rmsprop_rho: ini.get_or("train", "rmsprop_rho", d.rmsprop_rho)?,
            eps: ini.get_or("train", "eps", d.eps)?,
            mode: ini.get_or::<String>("train", "mode", d.mode.name().into())?.parse()?,
            seed: ini.get_or("train", "seed", d.seed)?,
            checkpoint_every: ini.get_or("train", "checkpoint_every", d.checkpoint_every)?,
            val_sequences: ini.get_or("train", "val_sequences", d.val_sequences)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_ini(&self, ini: &mut Ini) {
        ini.set("train", "batch_size", self.batch_size);
        ini.set("train", "subseq_len", self.subseq_len);
        ini.set("train", "teacher_epochs", self.teacher_epochs);
        ini.set("train", "stage1_epochs", self.stage1_epochs);
        ini.set("train", "epochs", self.epochs);
        ini.set("train", "finetune_epochs", self.finetune_epochs);
        ini.set("train", "finetune_rounds", self.finetune_rounds);
        ini.set_f64("train", "delta", self.delta);
        ini.set_f64("train", "alpha", self.alpha);
        ini.set("train", "loss", self.loss);
        ini.set_f64("train", "teacher_lr", self.teacher_lr);
        ini.set_f64("train", "stage1_lr", self.stage1_lr);
        ini.set_f64("train", "stage2_lr", self.stage2_lr);
        ini.set_f64("train", "lr_decay", self.lr_decay);
        ini.set("train", "lr_step", self.lr_step);
        ini.set_f64("train", "adam_beta1", self.adam_beta1);
        ini.set_f64("train", "adam_beta2", self.adam_beta2);
        ini.set_f64("train", "rmsprop_rho", self.rmsprop_rho);
        ini.set_f64("train", "eps", self.eps);
        ini.set("train", "mode", self.mode.name());
        ini.set("train", "seed", self.seed);
        ini.set("train", "checkpoint_every", self.checkpoint_every);
        ini.set("train", "val_sequences", self.val_sequences);
    }
}
