use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{rpe_errors, Trajectory};
use crate::model::{Mode, ParamStore, Student, Teacher};
use crate::simulator::Sequence;
use crate::training::{chain, predict_relative, score, EvalMetrics, FeatureTable};

use super::plot::histogram;
use super::report::{csv_table, num, summary_header, trajectory_plot, Report};
use super::stats::{ks_statistic, mean, median};

/// Per-window relative error of one sequence position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RpeSample {
    pub seq: usize,
    pub index: usize,
    pub trans: f64,
    pub rot: f64,
}

/// The frozen teacher run on its own visual features and on hallucinated
/// ones, everything else equal.
#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub real: Vec<RpeSample>,
    pub fake: Vec<RpeSample>,
    pub real_metrics: EvalMetrics,
    pub fake_metrics: EvalMetrics,
    pub ks_trans: f64,
    pub ks_rot: f64,
    pub trajectories: Vec<(Trajectory, Trajectory, Trajectory)>,
}

fn require_groups(params: &ParamStore, groups: &[&str], who: &str) -> Result<()> {
    for g in groups {
        if params.count(Some(g)) == 0 {
            return Err(Error::Contract(format!("{who} has no '{g}' parameters")));
        }
    }
    if params.iter().any(|(_, t)| t.data().iter().any(|v| !v.is_finite())) {
        return Err(Error::Contract(format!("{who} has non-finite parameters")));
    }
    Ok(())
}

impl ValidationReport {
    /// Larger of the translation and rotation distances.
    pub fn ks(&self) -> f64 {
        self.ks_trans.max(self.ks_rot)
    }

    pub fn report(&self) -> Result<Report> {
        let rows = [("real", &self.real), ("fake", &self.fake)].into_iter().flat_map(|(branch, v)| {
            v.iter().map(move |s| {
                vec![
                    self.config_hash.clone(),
                    branch.to_string(),
                    s.seq.to_string(),
                    s.index.to_string(),
                    num(s.trans),
                    num(s.rot),
                ]
            })
        });
        let csv = csv_table(&["config_hash", "branch", "seq", "index", "rpe_t_m", "rpe_r_deg"], rows)?;
        let mut s = summary_header("hallucination validation", &self.config_hash, &self.seeds);
        let col = |v: &[RpeSample], f: fn(&RpeSample) -> f64| v.iter().map(f).collect::<Vec<_>>();
        for (name, v, m) in [("real", &self.real, &self.real_metrics), ("fake", &self.fake, &self.fake_metrics)] {
            let t = col(v, |s| s.trans);
            let r = col(v, |s| s.rot);
            let _ = writeln!(
                s,
                "{name}: n={} rpe_t mean {:.4} median {:.4} m, rpe_r mean {:.4} median {:.4} deg, ate {:.4} m",
                v.len(),
                mean(&t),
                median(&t),
                mean(&r),
                median(&r),
                m.ate
            );
        }
        let _ = writeln!(s, "ks translation {:.4}, rotation {:.4}, max {:.4}", self.ks_trans, self.ks_rot, self.ks());
        let hist = |f: fn(&RpeSample) -> f64| vec![("real".to_string(), col(&self.real, f)), ("fake".to_string(), col(&self.fake, f))];
        let mut plots = vec![
            ("rpe_translation_hist.svg".into(), histogram("RPE translation", "error [m]", &hist(|s| s.trans), 30)),
            ("rpe_rotation_hist.svg".into(), histogram("RPE rotation", "error [deg]", &hist(|s| s.rot), 30)),
        ];
        if let Some((gt, real, fake)) = self.trajectories.first() {
            plots.push((
                "trajectory_seq0.svg".into(),
                trajectory_plot("teacher with real and fake features", gt, &[("real features", real), ("fake features", fake)]),
            ));
        }
        Ok(Report {
            name: "validation".into(),
            csv,
            summary: s,
            plots,
        })
    }
}

/// Runs the frozen teacher twice per test sequence, once with its visual
/// features and once with the student's hallucinated ones, and compares
/// the per-window RPE distributions.
pub fn validate_hallucination(
    teacher: &Teacher,
    student: &Student,
    test: &[&Sequence],
    subseq_len: usize,
    delta: usize,
    max_dt: f64,
) -> Result<ValidationReport> {
    require_groups(&student.params, &["halluc"], "student")?;
    if teacher.cfg.d_feature() != student.cfg.d_feature() {
        return Err(Error::Contract(format!(
            "hallucinated features have {} dims but the teacher expects {}",
            student.cfg.d_feature(),
            teacher.cfg.d_feature()
        )));
    }
    if test.is_empty() {
        return Err(Error::Contract("validation needs at least one test sequence".into()));
    }
    let real = FeatureTable::visual(teacher, test)?;
    let fake = FeatureTable::hallucination(student, test)?;
    compare_features(teacher, &real, &fake, test, subseq_len, delta, max_dt)
}

/// The paired teacher runs of [`validate_hallucination`] for arbitrary
/// feature tables over `test`.
pub fn compare_features(
    teacher: &Teacher,
    real_table: &FeatureTable,
    fake_table: &FeatureTable,
    test: &[&Sequence],
    subseq_len: usize,
    delta: usize,
    max_dt: f64,
) -> Result<ValidationReport> {
    require_groups(&teacher.params, &["visual", "imu", "regressor"], "teacher")?;
    for t in [real_table, fake_table] {
        if t.tables.len() != test.len() || t.dim() != teacher.cfg.d_feature() {
            return Err(Error::Contract(format!(
                "feature table of {} sequences x {} dims does not fit {} sequences x {} dims",
                t.tables.len(),
                t.dim(),
                test.len(),
                teacher.cfg.d_feature()
            )));
        }
    }
    let mut real = Vec::new();
    let mut fake = Vec::new();
    let mut real_m = Vec::new();
    let mut fake_m = Vec::new();
    let mut trajectories = Vec::new();
    for (i, seq) in test.iter().enumerate() {
        let run = |table: &FeatureTable, out: &mut Vec<RpeSample>, metrics: &mut Vec<EvalMetrics>| -> Result<Trajectory> {
            let rels = predict_relative(teacher, test, i, Mode::Full, Some(table), subseq_len)?;
            let est = chain(seq, &rels)?;
            let errs = rpe_errors(&est, &seq.frame_gt, delta, max_dt)?;
            out.extend(errs.iter().enumerate().map(|(k, e)| RpeSample {
                seq: seq.id,
                index: k,
                trans: e.0,
                rot: e.1,
            }));
            metrics.push(score(&est, &seq.frame_gt, delta, max_dt)?);
            Ok(est)
        };
        let r = run(real_table, &mut real, &mut real_m)?;
        let f = run(fake_table, &mut fake, &mut fake_m)?;
        trajectories.push((seq.frame_gt.clone(), r, f));
    }
    let pick = |v: &[RpeSample], f: fn(&RpeSample) -> f64| v.iter().map(f).collect::<Vec<_>>();
    Ok(ValidationReport {
        config_hash: String::new(),
        seeds: Vec::new(),
        ks_trans: ks_statistic(&pick(&real, |s| s.trans), &pick(&fake, |s| s.trans)),
        ks_rot: ks_statistic(&pick(&real, |s| s.rot), &pick(&fake, |s| s.rot)),
        real,
        fake,
        real_metrics: EvalMetrics::mean(&real_m),
        fake_metrics: EvalMetrics::mean(&fake_m),
        trajectories,
    })
}
