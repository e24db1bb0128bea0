use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::model::Mode;
use crate::parallel::par_map;
use crate::simulator::{Dataset, Sequence};
use crate::training::{evaluate, train_base, train_variant, EvalMetrics, TrainData};

use super::config::{feature_set, ExperimentConfig, Variant};
use super::report::{csv_table, num, summary_header, Check, Report};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub seed: u64,
    pub variant: Variant,
    /// Test metrics, or the reason training or evaluation failed.
    pub outcome: std::result::Result<EvalMetrics, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn ate(&self, seed: u64, variant: Variant) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.seed == seed && r.variant == variant)
            .and_then(|r| r.outcome.as_ref().ok())
            .map(|m| m.ate)
    }

    fn present(&self, v: Variant) -> bool {
        self.rows.iter().any(|r| r.variant == v)
    }

    /// Seeds on which `better` (strictly if `strict`) beats `worse` in ATE.
    /// A failed row counts against the claim.
    fn compare(&self, name: String, better: Variant, worse: Variant, strict: bool) -> Check {
        let wins = self
            .seeds
            .iter()
            .filter(|&&s| match (self.ate(s, better), self.ate(s, worse)) {
                (Some(a), Some(b)) => if strict { a < b } else { a <= b },
                _ => false,
            })
            .count();
        Check {
            name,
            wins,
            total: self.seeds.len(),
        }
    }

    /// Directional claims that the present rows allow: fusion on versus off
    /// per feature set, inertial data helping thermal, and hallucinated
    /// features helping imu+thermal.
    pub fn checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        let mut modes: Vec<Mode> = Vec::new();
        for r in &self.rows {
            if !modes.contains(&r.variant.mode) {
                modes.push(r.variant.mode);
            }
        }
        for m in modes {
            let (on, off) = (Variant::new(m, true), Variant::new(m, false));
            if self.present(on) && self.present(off) {
                out.push(self.compare(format!("{} sf on <= off", feature_set(m)), on, off, false));
            }
        }
        for sf in [true, false] {
            let tag = if sf { "on" } else { "off" };
            let (t, it, full) = (
                Variant::new(Mode::ThermalOnly, sf),
                Variant::new(Mode::ImuThermal, sf),
                Variant::new(Mode::Full, sf),
            );
            if self.present(t) && self.present(it) {
                out.push(self.compare(format!("imu+thermal < thermal (sf {tag})"), it, t, true));
            }
            if self.present(it) && self.present(full) {
                out.push(self.compare(format!("imu+thermal+fake_rgb <= imu+thermal (sf {tag})"), full, it, false));
            }
        }
        out
    }

    pub fn report(&self) -> Result<Report> {
        let rows = self.rows.iter().map(|r| {
            let (status, m) = match &r.outcome {
                Ok(m) => ("ok".to_string(), [num(m.rpe_t), num(m.rpe_r), num(m.ate)]),
                Err(e) => (format!("failed: {e}"), [String::new(), String::new(), String::new()]),
            };
            vec![
                self.config_hash.clone(),
                r.seed.to_string(),
                feature_set(r.variant.mode).to_string(),
                r.variant.selective_fusion.to_string(),
                m[0].clone(),
                m[1].clone(),
                m[2].clone(),
                status,
            ]
        });
        let csv = csv_table(
            &["config_hash", "seed", "features", "selective_fusion", "rpe_t_m", "rpe_r_deg", "ate_m", "status"],
            rows,
        )?;
        let mut s = summary_header("modality and fusion ablation", &self.config_hash, &self.seeds);
        let _ = writeln!(s, "{:<24} {:>4} {:>10} {:>10} {:>10}", "features", "sf", "rpe_t", "rpe_r", "ate");
        let mut variants: Vec<Variant> = Vec::new();
        for r in &self.rows {
            if !variants.contains(&r.variant) {
                variants.push(r.variant);
            }
        }
        for v in variants {
            let ok: Vec<EvalMetrics> = self
                .rows
                .iter()
                .filter(|r| r.variant == v)
                .filter_map(|r| r.outcome.as_ref().ok().copied())
                .collect();
            let failed = self.rows.iter().filter(|r| r.variant == v && r.outcome.is_err()).count();
            let m = EvalMetrics::mean(&ok);
            let _ = writeln!(
                s,
                "{:<24} {:>4} {:>10.4} {:>10.4} {:>10.4}{}",
                feature_set(v.mode),
                if v.selective_fusion { "on" } else { "off" },
                m.rpe_t,
                m.rpe_r,
                m.ate,
                if failed > 0 { format!("  ({failed} failed)") } else { String::new() }
            );
        }
        for c in self.checks() {
            let _ = writeln!(s, "{}", c.line());
        }
        Ok(Report {
            name: "ablation".into(),
            csv,
            summary: s,
            plots: Vec::new(),
        })
    }
}

/// Trains every variant for every seed and scores it on `test`. Per seed,
/// the teacher and hallucination stage are trained once and shared; each
/// variant then runs stage 2 and the fine-tune from identical seeds. A
/// failing row is recorded and the others continue.
pub fn ablate_modalities(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset, root: Option<&Path>) -> Result<AblationReport> {
    let data = TrainData::split(train, cfg.train.val_sequences)?;
    let test_seqs: Vec<&Sequence> = test.sequences.iter().collect();
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let tc = cfg.train_config(seed);
        let dir = root.map(|r| r.join(format!("seed_{seed}")));
        let base = match train_base(&data, &cfg.model, &tc, dir.as_deref()) {
            Ok(b) => b,
            Err(e) => {
                rows.extend(cfg.variants.iter().map(|&variant| AblationRow {
                    seed,
                    variant,
                    outcome: Err(e.to_string()),
                }));
                continue;
            }
        };
        let outcomes = par_map(&cfg.variants, |_, v| -> Result<EvalMetrics> {
            let vc = crate::training::TrainConfig { mode: v.mode, ..tc.clone() };
            let vdir = dir.as_ref().map(|d| d.join(v.slug()));
            let (student, _) = train_variant(&base.student, &data, &vc, v.selective_fusion, vdir.as_deref())?;
            evaluate(&student, &test_seqs, v.mode, None, vc.subseq_len)
        });
        rows.extend(cfg.variants.iter().zip(outcomes).map(|(&variant, o)| AblationRow {
            seed,
            variant,
            outcome: o.map_err(|e| e.to_string()),
        }));
    }
    Ok(AblationReport {
        config_hash: cfg.hash(),
        seeds: cfg.seeds.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, mode: Mode, sf: bool, ate: f64) -> AblationRow {
        AblationRow {
            seed,
            variant: Variant::new(mode, sf),
            outcome: Ok(EvalMetrics { ate, rpe_t: 0.0, rpe_r: 0.0 }),
        }
    }

    #[test]
    fn checks_count_seeds_and_failures() {
        let mut rows = Vec::new();
        for (s, on, off) in [(1, 1.0, 2.0), (2, 3.0, 2.0), (3, 1.0, 1.5)] {
            rows.push(row(s, Mode::Full, true, on));
            rows.push(row(s, Mode::Full, false, off));
            rows.push(row(s, Mode::ThermalOnly, true, 9.0));
            rows.push(row(s, Mode::ImuThermal, true, 2.0));
        }
        rows[3 * 4 - 1].outcome = Err("diverged".into());
        let r = AblationReport {
            config_hash: "h".into(),
            seeds: vec![1, 2, 3],
            rows,
        };
        let c = r.checks();
        let get = |n: &str| c.iter().find(|c| c.name == n).unwrap().clone();
        assert_eq!(get("imu+thermal+fake_rgb sf on <= off").wins, 2);
        assert_eq!(get("imu+thermal < thermal (sf on)").wins, 2);
        let full = get("imu+thermal+fake_rgb <= imu+thermal (sf on)");
        assert_eq!(full.wins, 1);
        assert!(!full.passed());
        let rep = r.report().unwrap();
        assert!(rep.csv.lines().skip(1).all(|l| l.starts_with("h,")));
        assert!(rep.csv.contains("failed: diverged"));
    }
}
