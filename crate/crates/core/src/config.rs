//! Minimal INI-style key/value files: `[section]` headers, `key = value`
//! lines, `#` or `;` comments.

use std::collections::BTreeMap;
use std::fmt::{self, Display, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Ini {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Ini {
    pub fn new() -> Ini {
        Ini::default()
    }

    pub fn parse(text: &str) -> Result<Ini> {
        let mut ini = Ini::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| {
                    Error::config(&[&format!("line {}", i + 1)], format!("malformed section header '{line}'"))
                })?;
                section = name.trim().to_string();
                ini.sections.entry(section.clone()).or_default();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(&[&format!("line {}", i + 1)], format!("expected 'key = value', got '{line}'"))
            })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::config(&[&format!("line {}", i + 1)], "empty key"));
            }
            let full = qualified(&section, key);
            let entry = ini.sections.entry(section.clone()).or_default();
            if entry.insert(key.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::config(&[&full], "duplicate key"));
            }
        }
        Ok(ini)
    }

    pub fn read(path: &Path) -> Result<Ini> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(&[&path.display().to_string()], format!("cannot read: {e}")))?;
        Ini::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string())?;
        Ok(())
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Display) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    /// Stores a float so that parsing it back yields the same bits.
    pub fn set_f64(&mut self, section: &str, key: &str, value: f64) {
        self.set(section, key, format!("{value:?}"));
    }

    pub fn set_list<T: fmt::Debug>(&mut self, section: &str, key: &str, values: &[T]) {
        let text: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
        self.set(section, key, text.join(", "));
    }

    pub fn parse_value<T>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::config(&[&qualified(section, key)], format!("invalid value '{v}': {e}"))),
        }
    }

    pub fn get_or<T>(&self, section: &str, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.parse_value(section, key)?.unwrap_or(default))
    }

    pub fn require<T>(&self, section: &str, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.parse_value(section, key)?
            .ok_or_else(|| Error::config(&[&qualified(section, key)], "missing required key"))
    }

    /// Comma-separated list; empty string gives an empty list.
    pub fn get_list<T>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(v) = self.get(section, key) else {
            return Ok(None);
        };
        if v.trim().is_empty() {
            return Ok(Some(Vec::new()));
        }
        v.split(',')
            .map(|item| {
                let item = item.trim();
                item.parse().map_err(|e| {
                    Error::config(&[&qualified(section, key)], format!("invalid list item '{item}': {e}"))
                })
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Rejects keys of `section` outside `known`.
    pub fn check_keys(&self, section: &str, known: &[&str]) -> Result<()> {
        let Some(map) = self.sections.get(section) else {
            return Ok(());
        };
        let unknown: Vec<String> = map
            .keys()
            .filter(|k| !known.contains(&k.as_str()))
            .map(|k| qualified(section, k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config {
                keys: unknown,
                reason: "unknown key".into(),
            })
        }
    }

    pub fn sections(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(String::as_str)
    }

    /// Key/value pairs of `section` in key order.
    pub fn entries(&self, section: &str) -> Vec<(&str, &str)> {
        self.sections
            .get(section)
            .map(|m| m.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect())
            .unwrap_or_default()
    }

    pub fn remove_section(&mut self, section: &str) {
        self.sections.remove(section);
    }

    /// Only the named sections.
    pub fn subset(&self, sections: &[&str]) -> Ini {
        Ini {
            sections: self
                .sections
                .iter()
                .filter(|(k, _)| sections.contains(&k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Copies every entry of `other` over `self`.
    pub fn merge(&mut self, other: &Ini) {
        for (s, map) in &other.sections {
            for (k, v) in map {
                self.set(s, k, v);
            }
        }
    }
}

impl fmt::Display for Ini {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        for (name, map) in &self.sections {
            if !out.is_empty() {
                out.push('\n');
            }
            if !name.is_empty() {
                let _ = writeln!(out, "[{name}]");
            }
            for (k, v) in map {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        f.write_str(&out)
    }
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}
