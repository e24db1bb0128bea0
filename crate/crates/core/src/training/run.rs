//! Run directory layout:
//!
//! ```text
//! <dir>/config.ini       resolved configuration snapshot
//! <dir>/metrics.csv      epoch,loss,val_ate,lr
//! <dir>/checkpoint.bin   latest periodic checkpoint (model, optimizer, epoch)
//! <dir>/final.bin        model after the last epoch
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::Ini;
use crate::error::{Error, Result};
use crate::model::Checkpoint;

pub const CONFIG_FILE: &str = "config.ini";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const FINAL_FILE: &str = "final.bin";
const HEADER: &str = "epoch,loss,val_ate,lr";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_ate: Option<f64>,
    pub lr: f64,
}

impl EpochRecord {
    fn csv(&self) -> String {
        let val = self.val_ate.map(|v| format!("{v:?}")).unwrap_or_default();
        format!("{},{:?},{},{:?}", self.epoch, self.loss, val, self.lr)
    }

    fn parse(line: &str) -> Result<EpochRecord> {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Format(format!("malformed metrics row '{line}'"));
        if f.len() != 4 {
            return Err(bad());
        }
        Ok(EpochRecord {
            epoch: f[0].parse().map_err(|_| bad())?,
            loss: f[1].parse().map_err(|_| bad())?,
            val_ate: if f[2].is_empty() { None } else { Some(f[2].parse().map_err(|_| bad())?) },
            lr: f[3].parse().map_err(|_| bad())?,
        })
    }
}

pub fn metrics_csv(records: &[EpochRecord]) -> String {
    let mut s = format!("{HEADER}\n");
    for r in records {
        let _ = writeln!(s, "{}", r.csv());
    }
    s
}

pub fn parse_metrics(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(HEADER) {
        return Err(Error::Format("metrics file lacks its header".into()));
    }
    lines.filter(|l| !l.trim().is_empty()).map(EpochRecord::parse).collect()
}

#[derive(Clone, Debug)]
pub struct RunDir {
    pub path: PathBuf,
    pub checkpoint_every: usize,
}

impl RunDir {
    /// Creates the directory and its config snapshot. Reopening a directory
    /// whose snapshot differs from `snapshot` is refused.
    pub fn open(path: &Path, snapshot: &Ini, checkpoint_every: usize) -> Result<RunDir> {
        std::fs::create_dir_all(path)?;
        let cfg = path.join(CONFIG_FILE);
        if cfg.exists() {
            let existing = Ini::read(&cfg)?;
            if existing != *snapshot {
                return Err(Error::Compatibility(format!(
                    "{} was created with a different configuration",
                    path.display()
                )));
            }
        } else {
            snapshot.write(&cfg)?;
        }
        Ok(RunDir {
            path: path.to_path_buf(),
            checkpoint_every: checkpoint_every.max(1),
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn records(&self) -> Result<Vec<EpochRecord>> {
        let p = self.file(METRICS_FILE);
        if !p.exists() {
            return Ok(Vec::new());
        }
        parse_metrics(&std::fs::read_to_string(p)?)
    }

    pub fn write_records(&self, records: &[EpochRecord]) -> Result<()> {
        std::fs::write(self.file(METRICS_FILE), metrics_csv(records))?;
        Ok(())
    }

    pub fn append(&self, r: &EpochRecord) -> Result<()> {
        use std::io::Write;
        let p = self.file(METRICS_FILE);
        if !p.exists() {
            std::fs::write(&p, format!("{HEADER}\n"))?;
        }
        let mut f = std::fs::OpenOptions::new().append(true).open(p)?;
        writeln!(f, "{}", r.csv())?;
        Ok(())
    }

    pub fn latest(&self) -> Result<Option<Checkpoint>> {
        let p = self.file(CHECKPOINT_FILE);
        if p.exists() {
            Checkpoint::load(&p).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn final_checkpoint(&self) -> Result<Option<Checkpoint>> {
        let p = self.file(FINAL_FILE);
        if p.exists() {
            Checkpoint::load(&p).map(Some)
        } else {
            Ok(None)
        }
    }
}
