use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tio_forge_core::config::Ini;
use tio_forge_core::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.ini";
const RUN: &str = "run";

/// What a command did: enough to replay it into another directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    /// Resolved configuration the command ran with.
    pub snapshot: Ini,
    pub seeds: Vec<u64>,
    /// Command flags other than the output directory.
    pub args: BTreeMap<String, String>,
    /// Files written, relative to the output directory.
    pub artifacts: Vec<String>,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, snapshot: Ini, seeds: Vec<u64>) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config_path: config_path.map(Path::to_path_buf),
            snapshot,
            seeds,
            args: BTreeMap::new(),
            artifacts: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn arg(mut self, key: &str, value: impl ToString) -> RunManifest {
        self.args.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.args.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::config(&[&format!("run.arg.{key}")], "missing from manifest"))
    }

    pub fn to_ini(&self) -> Ini {
        let mut ini = self.snapshot.clone();
        ini.set(RUN, "command", &self.command);
        if let Some(p) = &self.config_path {
            ini.set(RUN, "config", p.display());
        }
        ini.set_list(RUN, "seeds", &self.seeds);
        for (k, v) in &self.args {
            ini.set(RUN, &format!("arg.{k}"), v);
        }
        ini.set(RUN, "artifacts", self.artifacts.join(", "));
        ini.set(RUN, "tool_version", &self.tool_version);
        ini
    }

    pub fn from_ini(ini: &Ini) -> Result<RunManifest> {
        let mut snapshot = ini.clone();
        snapshot.remove_section(RUN);
        let args = ini
            .entries(RUN)
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix("arg.").map(|k| (k.to_string(), v.to_string())))
            .collect();
        Ok(RunManifest {
            command: ini.require(RUN, "command")?,
            config_path: ini.get(RUN, "config").map(PathBuf::from),
            snapshot,
            seeds: ini.get_list(RUN, "seeds")?.unwrap_or_default(),
            args,
            artifacts: ini.get_list(RUN, "artifacts")?.unwrap_or_default(),
            tool_version: ini.require(RUN, "tool_version")?,
        })
    }

    /// Lists the files under `dir` as artifacts and writes the manifest there.
    pub fn finish(mut self, dir: &Path) -> Result<RunManifest> {
        self.artifacts = list_files(dir)?
            .into_iter()
            .filter(|f| f != MANIFEST_FILE)
            .collect();
        self.to_ini().write(&dir.join(MANIFEST_FILE))?;
        Ok(self)
    }

    pub fn read(path: &Path) -> Result<RunManifest> {
        RunManifest::from_ini(&Ini::read(path)?)
    }
}

/// Relative paths of all files below `dir`, sorted.
pub fn list_files(dir: &Path) -> Result<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let p = entry?.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else {
                let rel = p.strip_prefix(root).expect("below root");
                out.push(rel.to_string_lossy().replace('\\', "/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}
