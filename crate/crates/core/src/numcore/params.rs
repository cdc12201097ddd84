use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Named tensors partitioned into frozen and trainable sets.
///
/// Iteration order is lexicographic by name, which keeps checkpoint layout
/// and gradient reduction order stable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor, trainable: bool) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        self.entries
            .insert(name.to_string(), ParamEntry { tensor, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.tensor)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|e| e.trainable)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.iter().filter(|(_, e)| e.trainable).map(|(k, _)| k)
    }

    /// Overwrites the value of a trainable tensor, keeping its shape.
    pub fn set_trainable(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if !entry.trainable {
            return Err(Error::FrozenUpdate(name.to_string()));
        }
        if entry.tensor.shape() != tensor.shape() {
            return Err(Error::InvalidTensor(alloc::format!(
                "`{name}` has shape {:?}, replacement has {:?}",
                entry.tensor.shape(),
                tensor.shape()
            )));
        }
        entry.tensor = tensor;
        Ok(())
    }

    /// One plain gradient-descent step: `p ← p − lr·g` for every gradient.
    pub fn sgd_step(&mut self, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let entry = self
                .entries
                .get(name)
                .ok_or_else(|| Error::UnknownParam(name.clone()))?;
            if !entry.trainable {
                return Err(Error::FrozenUpdate(name.clone()));
            }
            if entry.tensor.shape() != g.shape() {
                return Err(Error::InvalidTensor(alloc::format!(
                    "gradient for `{name}` has shape {:?}",
                    g.shape()
                )));
            }
        }
        for (name, g) in grads {
            if let Some(entry) = self.entries.get_mut(name) {
                entry.tensor.axpy(-lr, g);
            }
        }
        Ok(())
    }

    /// FNV-1a over the names, shapes and bit patterns of every frozen tensor.
    pub fn frozen_fingerprint(&self) -> u64 {
        self.fingerprint(|e| !e.trainable)
    }

    pub fn trainable_fingerprint(&self) -> u64 {
        self.fingerprint(|e| e.trainable)
    }

    fn fingerprint(&self, select: impl Fn(&ParamEntry) -> bool) -> u64 {
        let mut h = Fnv64::new();
        for (name, entry) in self.entries.iter().filter(|(_, e)| select(e)) {
            h.write(name.as_bytes());
            for &d in entry.tensor.shape() {
                h.write(&(d as u64).to_le_bytes());
            }
            for v in entry.tensor.data() {
                h.write(&v.to_bits().to_le_bytes());
            }
        }
        h.0
    }
}

struct Fnv64(u64);

impl Fnv64 {
    fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}
