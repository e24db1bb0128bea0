//! Versioned binary checkpoints.
//!
//! ```text
//! magic  b"TIOCKPT\0"
//! u32    format version
//! u64    config length, then UTF-8 INI text
//! u64    tensor count
//! per tensor: u64 name length, name, u64 rank, u64 dims, f64 values
//! ```
//!
//! All integers and floats are little-endian, so values round-trip bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::Ini;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

use super::config::{InputNorm, ModelConfig};
use super::network::{Student, Teacher};
use super::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TIOCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub config: Ini,
    pub tensors: BTreeMap<String, Tensor>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("implausible length {v} in checkpoint")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(format!("checkpoint text: {e}")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let text = self.config.to_string();
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Compatibility(format!(
                "checkpoint format version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let config = Ini::parse(&r.string()?)?;
        let count = r.len()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.len()?;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.saturating_mul(8) <= buf.len())
                .ok_or_else(|| Error::Format(format!("tensor '{name}' has an implausible shape")))?;
            let data = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != buf.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // Write-then-rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }

    /// Tensors under `prefix/`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> ParamStore {
        let head = format!("{prefix}/");
        let mut store = ParamStore::new();
        for (name, t) in &self.tensors {
            if let Some(rest) = name.strip_prefix(&head) {
                store.insert(rest, t.clone());
            }
        }
        store
    }

    pub fn put_section(&mut self, prefix: &str, store: &ParamStore) {
        for (name, t) in store.iter() {
            self.tensors.insert(format!("{prefix}/{name}"), t.clone());
        }
    }
}

fn model_checkpoint(kind: &str, cfg: &ModelConfig, norm: &InputNorm, params: &ParamStore) -> Checkpoint {
    let mut ck = Checkpoint::default();
    ck.config.set("checkpoint", "kind", kind);
    cfg.write_ini(&mut ck.config);
    norm.write_ini(&mut ck.config);
    ck.put_section("param", params);
    ck
}

fn model_parts(ck: &Checkpoint, kind: &str) -> Result<(ModelConfig, InputNorm, ParamStore)> {
    let found: String = ck.config.require("checkpoint", "kind")?;
    if found != kind {
        return Err(Error::Compatibility(format!("expected a {kind} checkpoint, found {found}")));
    }
    Ok((ModelConfig::from_ini(&ck.config)?, InputNorm::from_ini(&ck.config)?, ck.section("param")))
}

fn check_params(expected: &ParamStore, found: &ParamStore) -> Result<()> {
    for (name, t) in expected.iter() {
        let got = found
            .get(name)
            .map_err(|_| Error::Compatibility(format!("checkpoint lacks parameter '{name}'")))?;
        if got.shape() != t.shape() {
            return Err(Error::Compatibility(format!(
                "parameter '{name}' has shape {:?}, the model expects {:?}",
                got.shape(),
                t.shape()
            )));
        }
    }
    if let Some(extra) = found.names().into_iter().find(|n| !expected.contains(n)) {
        return Err(Error::Compatibility(format!("checkpoint holds unknown parameter '{extra}'")));
    }
    Ok(())
}

impl Student {
    pub fn to_checkpoint(&self) -> Checkpoint {
        model_checkpoint("student", &self.cfg, &self.norm, &self.params)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Student> {
        let (cfg, norm, params) = model_parts(ck, "student")?;
        let mut s = Student::new(cfg, norm, 0)?;
        check_params(&s.params, &params)?;
        s.params = params;
        Ok(s)
    }
}

impl Teacher {
    pub fn to_checkpoint(&self) -> Checkpoint {
        model_checkpoint("teacher", &self.cfg, &self.norm, &self.params)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Teacher> {
        let (cfg, norm, params) = model_parts(ck, "teacher")?;
        let mut t = Teacher::new(cfg, norm, 0)?;
        check_params(&t.params, &params)?;
        t.params = params;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm() -> InputNorm {
        InputNorm {
            thermal_mean: 0.5,
            thermal_scale: 0.1,
            visual_mean: 0.3,
            visual_scale: 0.2,
            imu_mean: [0.1, 0.0, -0.1, 0.0, 0.0, 9.8],
            imu_scale: [0.3; 6],
        }
    }

    #[test]
    fn student_round_trip_is_bit_exact() {
        let s = Student::new(ModelConfig::tiny(), norm(), 5).unwrap();
        let bytes = s.to_checkpoint().to_bytes();
        let back = Student::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_checkpoint().to_bytes(), bytes);
    }

    #[test]
    fn rejects_wrong_kind_version_and_truncation() {
        let t = Teacher::new(ModelConfig::tiny(), norm(), 5).unwrap();
        let ck = t.to_checkpoint();
        assert!(matches!(Student::from_checkpoint(&ck), Err(Error::Compatibility(_))));
        let mut bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        bytes[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Compatibility(_))));
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_shape_mismatch() {
        let s = Student::new(ModelConfig::tiny(), norm(), 5).unwrap();
        let mut ck = s.to_checkpoint();
        ck.tensors.insert("param/imu.lstm.b".into(), Tensor::vector(&[0.0]));
        assert!(matches!(Student::from_checkpoint(&ck), Err(Error::Compatibility(_))));
    }
}
