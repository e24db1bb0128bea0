use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::Trajectory;

use super::plot::{line_plot, Series};
use super::stats::majority;

/// Fewest seeds over which a directional claim may be judged.
pub const MIN_SEEDS: usize = 3;

/// One directional claim evaluated across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub wins: usize,
    pub total: usize,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.total >= MIN_SEEDS && majority(self.wins, self.total)
    }

    pub fn line(&self) -> String {
        let verdict = if self.passed() {
            "PASS"
        } else if self.total < MIN_SEEDS {
            "FAIL (too few seeds)"
        } else {
            "FAIL"
        };
        format!("{}: {}/{} seeds {verdict}", self.name, self.wins, self.total)
    }
}

/// A finished experiment: CSV table, text summary and SVG plots.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub name: String,
    pub csv: String,
    pub summary: String,
    pub plots: Vec<(String, String)>,
}

impl Report {
    /// Writes `<name>.csv`, `<name>.txt` and every plot into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        let csv = dir.join(format!("{}.csv", self.name));
        std::fs::write(&csv, &self.csv)?;
        out.push(csv);
        let txt = dir.join(format!("{}.txt", self.name));
        std::fs::write(&txt, &self.summary)?;
        out.push(txt);
        for (file, svg) in &self.plots {
            let p = dir.join(file);
            std::fs::write(&p, svg)?;
            out.push(p);
        }
        Ok(out)
    }
}

pub fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(&r).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(format!("csv: {e}")))
}

/// Shortest text that parses back to the same float.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn summary_header(title: &str, hash: &str, seeds: &[u64]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let _ = writeln!(s, "config hash: {hash}");
    let _ = writeln!(s, "seeds: {seeds:?}");
    s
}

/// Top-down (x, y) overlay of a reference and estimated trajectories.
pub fn trajectory_plot(title: &str, reference: &Trajectory, estimates: &[(&str, &Trajectory)]) -> String {
    let xy = |t: &Trajectory| t.positions().iter().map(|p| (p.x, p.y)).collect::<Vec<_>>();
    let mut series = vec![Series::new("ground truth", xy(reference))];
    series.extend(estimates.iter().map(|(l, t)| Series::new(*l, xy(t))));
    line_plot(title, "x [m]", "y [m]", &series, true, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_needs_enough_seeds() {
        let c = Check {
            name: "x".into(),
            wins: 2,
            total: 3,
        };
        assert!(c.passed());
        assert!(!Check { total: 2, wins: 2, ..c.clone() }.passed());
        assert!(!Check { wins: 1, ..c }.passed());
    }

    #[test]
    fn csv_quotes_fields() {
        let s = csv_table(&["a", "b"], vec![vec!["1".into(), "x,y".into()]]).unwrap();
        assert_eq!(s, "a,b\n1,\"x,y\"\n");
        let dir = tempfile::tempdir().unwrap();
        let r = Report {
            name: "r".into(),
            csv: s,
            summary: "ok\n".into(),
            plots: vec![("p.svg".into(), "<svg/>".into())],
        };
        assert_eq!(r.write(dir.path()).unwrap().len(), 3);
        assert!(dir.path().join("p.svg").exists());
    }
}
