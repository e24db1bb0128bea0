use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{Mode, Student};
use crate::simulator::{make_dataset, Sequence};
use crate::training::{evaluate, EvalMetrics};

use super::config::ExperimentConfig;
use super::plot::{line_plot, Series};
use super::report::{csv_table, num, summary_header, Report};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FpsPoint {
    pub rate: f64,
    pub samples: usize,
    pub metrics: EvalMetrics,
}

/// Test ATE of one model against the image sampling rate.
#[derive(Clone, Debug, PartialEq)]
pub struct FpsCurve {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub train_rate: f64,
    pub points: Vec<FpsPoint>,
}

impl FpsCurve {
    /// Point sampled at the training rate, if the sweep includes it.
    pub fn at_train_rate(&self) -> Option<&FpsPoint> {
        self.points.iter().find(|p| (p.rate - self.train_rate).abs() < 1e-9)
    }

    pub fn argmin(&self) -> Option<&FpsPoint> {
        self.points.iter().min_by(|a, b| a.metrics.ate.total_cmp(&b.metrics.ate))
    }

    /// Whether the training rate attains the lowest ATE of the sweep.
    pub fn minimum_at_train_rate(&self) -> bool {
        match (self.at_train_rate(), self.argmin()) {
            (Some(t), Some(m)) => t.metrics.ate <= m.metrics.ate,
            _ => false,
        }
    }

    /// Whether every rate of at least twice the training rate is strictly
    /// worse than the training rate. `None` when the sweep has no such rate.
    pub fn faster_is_worse(&self) -> Option<bool> {
        let t = self.at_train_rate()?;
        let fast: Vec<&FpsPoint> = self.points.iter().filter(|p| p.rate >= 2.0 * self.train_rate - 1e-9).collect();
        (!fast.is_empty()).then(|| fast.iter().all(|p| p.metrics.ate > t.metrics.ate))
    }

    pub fn report(&self) -> Result<Report> {
        let rows = self.points.iter().map(|p| {
            vec![
                self.config_hash.clone(),
                num(p.rate),
                p.samples.to_string(),
                num(p.metrics.rpe_t),
                num(p.metrics.rpe_r),
                num(p.metrics.ate),
            ]
        });
        let csv = csv_table(&["config_hash", "fps", "samples", "rpe_t_m", "rpe_r_deg", "ate_m"], rows)?;
        let mut s = summary_header("sampling-rate sensitivity", &self.config_hash, &self.seeds);
        let _ = writeln!(s, "training rate: {} fps", self.train_rate);
        for p in &self.points {
            let _ = writeln!(s, "{:>8.3} fps  ate {:>9.4} m  rpe_t {:.4} m  rpe_r {:.4} deg", p.rate, p.metrics.ate, p.metrics.rpe_t, p.metrics.rpe_r);
        }
        let _ = writeln!(s, "minimum at training rate: {}", self.minimum_at_train_rate());
        if let Some(w) = self.faster_is_worse() {
            let _ = writeln!(s, "rates >= 2x training strictly worse: {w}");
        }
        let pts = self.points.iter().map(|p| (p.rate, p.metrics.ate)).collect();
        let svg = line_plot("ATE against sampling rate", "sampling rate [fps]", "ATE [m]", &[Series::new("ATE", pts)], false, true);
        Ok(Report {
            name: "fps".into(),
            csv,
            summary: s,
            plots: vec![("fps_curve.svg".into(), svg)],
        })
    }
}

/// Regenerates the test sequences at each rate (same trajectories, frames
/// and IMU stream; only the subsampling changes) and evaluates `student`.
pub fn fps_sensitivity(student: &Student, cfg: &ExperimentConfig, rates: &[f64], mode: Mode) -> Result<FpsCurve> {
    if rates.is_empty() {
        return Err(Error::config(&["experiment.rates"], "need at least one rate"));
    }
    let mut points = Vec::with_capacity(rates.len());
    for &rate in rates {
        let ds = make_dataset(&cfg.at_rate(rate)?)?;
        let seqs: Vec<&Sequence> = ds.sequences.iter().collect();
        let metrics = evaluate(student, &seqs, mode, None, cfg.train.subseq_len)?;
        points.push(FpsPoint {
            rate,
            samples: ds.n_samples(),
            metrics,
        });
    }
    Ok(FpsCurve {
        config_hash: cfg.hash(),
        seeds: vec![cfg.train.seed],
        train_rate: cfg.dataset.subsample_fps,
        points,
    })
}
