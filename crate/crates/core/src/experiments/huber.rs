use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Mode, Student, Teacher};
use crate::simulator::{Dataset, Sequence};
use crate::training::{evaluate, train_base, train_hallucination, EvalMetrics, FeatureTable, LossKind, TrainConfig, TrainData};

use super::config::ExperimentConfig;
use super::report::{csv_table, num, summary_header, Check, Report};

/// Hallucination quality of one stage-1 student.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub seed: u64,
    pub loss: LossKind,
    /// Mean feature distance to the teacher on test pairs with distinct frames.
    pub clean_error: f64,
    /// The same on frozen (NUC) pairs; NaN when there are none.
    pub outlier_error: f64,
    /// Teacher driven by this student's features.
    pub fake: EvalMetrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HuberReport {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Share of training pairs whose thermal frames are identical.
    pub outlier_fraction: f64,
    pub rows: Vec<LossRow>,
    /// The comparison repeated on data without NUC freezes.
    pub control: Vec<LossRow>,
}

fn find(rows: &[LossRow], seed: u64, loss: LossKind) -> Option<&LossRow> {
    rows.iter().find(|r| r.seed == seed && r.loss == loss)
}

impl HuberReport {
    pub fn checks(&self) -> Vec<Check> {
        let count = |f: &dyn Fn(&LossRow, &LossRow) -> bool| {
            self.seeds
                .iter()
                .filter(|&&s| match (find(&self.rows, s, LossKind::Huber), find(&self.rows, s, LossKind::L2)) {
                    (Some(h), Some(l)) => f(h, l),
                    _ => false,
                })
                .count()
        };
        let total = self.seeds.len();
        vec![
            Check {
                name: "huber clean feature error < l2".into(),
                wins: count(&|h, l| h.clean_error < l.clean_error),
                total,
            },
            Check {
                name: "huber fake-branch rpe_r <= l2".into(),
                wins: count(&|h, l| h.fake.rpe_r <= l.fake.rpe_r),
                total,
            },
        ]
    }

    /// L2 over Huber clean error per seed in the outlier-free control.
    pub fn control_ratios(&self) -> Vec<f64> {
        self.seeds
            .iter()
            .filter_map(|&s| match (find(&self.control, s, LossKind::Huber), find(&self.control, s, LossKind::L2)) {
                (Some(h), Some(l)) => Some(l.clean_error / h.clean_error),
                _ => None,
            })
            .collect()
    }

    pub fn report(&self) -> Result<Report> {
        let rows = [("nuc", &self.rows), ("control", &self.control)].into_iter().flat_map(|(set, rows)| {
            rows.iter().map(move |r| {
                vec![
                    self.config_hash.clone(),
                    set.to_string(),
                    r.seed.to_string(),
                    r.loss.name().to_string(),
                    num(r.clean_error),
                    num(r.outlier_error),
                    num(r.fake.rpe_t),
                    num(r.fake.rpe_r),
                    num(r.fake.ate),
                ]
            })
        });
        let csv = csv_table(
            &["config_hash", "data", "seed", "loss", "clean_error", "outlier_error", "fake_rpe_t_m", "fake_rpe_r_deg", "fake_ate_m"],
            rows,
        )?;
        let mut s = summary_header("huber versus l2 distillation", &self.config_hash, &self.seeds);
        let _ = writeln!(s, "frozen training pairs: {:.2}%", 100.0 * self.outlier_fraction);
        for r in self.rows.iter().chain(&self.control) {
            let set = if self.control.contains(r) { "control" } else { "nuc" };
            let _ = writeln!(
                s,
                "{set:<8} seed {:<4} {:<6} clean {:.5} outlier {:.5} fake rpe_t {:.4} rpe_r {:.4} ate {:.4}",
                r.seed,
                r.loss.name(),
                r.clean_error,
                r.outlier_error,
                r.fake.rpe_t,
                r.fake.rpe_r,
                r.fake.ate
            );
        }
        for c in self.checks() {
            let _ = writeln!(s, "{}", c.line());
        }
        let ratios = self.control_ratios();
        if !ratios.is_empty() {
            let _ = writeln!(s, "control l2/huber clean error ratios: {ratios:?}");
        }
        Ok(Report {
            name: "huber_vs_l2".into(),
            csv,
            summary: s,
            plots: Vec::new(),
        })
    }
}

pub fn frozen_fraction(ds: &Dataset) -> f64 {
    let frozen: usize = ds.sequences.iter().map(|s| s.frozen_samples().len()).sum();
    frozen as f64 / ds.n_samples().max(1) as f64
}

/// Mean `||a_H - a_V||` over test pairs, split into distinct and frozen
/// thermal pairs.
pub fn feature_errors(teacher: &Teacher, student: &Student, test: &[&Sequence]) -> Result<(f64, f64)> {
    let real = FeatureTable::visual(teacher, test)?;
    let fake = FeatureTable::hallucination(student, test)?;
    let (mut clean, mut nc, mut outlier, mut no) = (0.0, 0usize, 0.0, 0usize);
    for (si, seq) in test.iter().enumerate() {
        for (k, sample) in seq.samples.iter().enumerate() {
            let d = real
                .row(si, k)
                .iter()
                .zip(fake.row(si, k))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if sample.thermal_pair.identical() {
                outlier += d;
                no += 1;
            } else {
                clean += d;
                nc += 1;
            }
        }
    }
    if nc == 0 {
        return Err(Error::Contract("no clean test pairs".into()));
    }
    Ok((clean / nc as f64, if no == 0 { f64::NAN } else { outlier / no as f64 }))
}

fn compare(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset, root: Option<&Path>) -> Result<Vec<LossRow>> {
    let data = TrainData::split(train, cfg.train.val_sequences)?;
    let test_seqs: Vec<&Sequence> = test.sequences.iter().collect();
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let dir = root.map(|r| r.join(format!("seed_{seed}")));
        let huber = TrainConfig {
            loss: LossKind::Huber,
            ..cfg.train_config(seed)
        };
        let base = train_base(&data, &cfg.model, &huber, dir.as_deref())?;
        let l2 = TrainConfig {
            loss: LossKind::L2,
            ..huber.clone()
        };
        let (l2_student, _) = train_hallucination(&base.teacher, &data, &l2, dir.as_ref().map(|d| d.join("l2")).as_deref())?;
        for (loss, student) in [(LossKind::Huber, &base.student), (LossKind::L2, &l2_student)] {
            let (clean_error, outlier_error) = feature_errors(&base.teacher, student, &test_seqs)?;
            let table = FeatureTable::hallucination(student, &test_seqs)?;
            let fake = evaluate(&base.teacher, &test_seqs, Mode::Full, Some(&table), huber.subseq_len)?;
            rows.push(LossRow {
                seed,
                loss,
                clean_error,
                outlier_error,
                fake,
            });
        }
    }
    Ok(rows)
}

/// Trains Huber and L2 hallucination students from identical seeds and data
/// order on NUC-affected data. With `control`, the comparison is repeated on
/// an outlier-free training/test pair.
pub fn huber_vs_l2(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    control: Option<(&Dataset, &Dataset)>,
    root: Option<&Path>,
) -> Result<HuberReport> {
    if train.config.rig.nuc.is_none() {
        return Err(Error::config(&["rig.nuc"], "the loss comparison needs NUC freezes in the training data"));
    }
    let rows = compare(cfg, train, test, root)?;
    let control = match control {
        Some((ctrain, ctest)) => {
            if frozen_fraction(ctrain) > 0.0 {
                return Err(Error::config(&["rig.nuc"], "control data must not contain frozen pairs"));
            }
            compare(cfg, ctrain, ctest, root.map(|r| r.join("control")).as_deref())?
        }
        None => Vec::new(),
    };
    Ok(HuberReport {
        config_hash: cfg.hash(),
        seeds: cfg.seeds.clone(),
        outlier_fraction: frozen_fraction(train),
        rows,
        control,
    })
}
