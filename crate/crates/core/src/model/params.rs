use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};
use crate::seeds::derive_seed;

/// Named parameter tensors. Names are `group.rest`; the group is the part
/// before the first dot.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a: stable across platforms and releases.
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    /// Uniform in `±bound`, seeded by `(seed, name)` so the draw does not
    /// depend on insertion order.
    pub fn insert_uniform(&mut self, seed: u64, name: &str, shape: &[usize], bound: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[name_hash(name)]));
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("valid shape"));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    pub fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> = self.tensors.keys().map(|n| group_of(n).to_string()).collect();
        g.dedup();
        g
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Scalar parameter count, optionally restricted to one group.
    pub fn count(&self, group: Option<&str>) -> usize {
        self.tensors
            .iter()
            .filter(|(n, _)| group.is_none_or(|g| group_of(n) == g))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// SHA-256 over names, shapes and little-endian values of a group.
    pub fn checksum(&self, group: &str) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.tensors.iter().filter(|(n, _)| group_of(n) == group) {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Copies a group from `other`, renaming its prefix.
    pub fn copy_group(&mut self, other: &ParamStore, from: &str, to: &str) -> Result<()> {
        let mut found = false;
        for (name, t) in other.tensors.iter().filter(|(n, _)| group_of(n) == from) {
            let rest = &name[from.len()..];
            self.insert(format!("{to}{rest}"), t.clone());
            found = true;
        }
        if !found {
            return Err(Error::Contract(format!("parameter group '{from}' is empty")));
        }
        Ok(())
    }

    /// Places every tensor on `tape`; those rejected by `trainable` become
    /// constants and receive no gradient.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(n, t)| (n.clone(), tape.leaf(t.clone(), trainable(n))))
            .collect();
        Bound { vars }
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }
}

/// Parameter handles on one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Bound {
        Bound {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter '{name}' is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}
