//! Named parameter storage and the `weights.bin` / `manifest.json` format.
//!
//! `weights.bin` is the concatenation of every entry, in store order, as
//! little-endian binary32. `manifest.json` lists each entry's name, shape,
//! kind and byte offset.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Updated by the optimizer.
    Param,
    /// Persistent state that is not trained (batch-norm running statistics).
    Buffer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry; the insertion order is the canonical order.
    pub fn insert(&mut self, name: &str, kind: ParamKind, tensor: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(NnError::InvalidArgument {
                op: "ParamStore::insert",
                detail: format!("duplicate parameter name {name}"),
            });
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            kind,
            tensor,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|id| self.entries[id.0].kind == ParamKind::Param)
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().map(|id| self.get(id).len()).sum()
    }

    /// Rounds every value through binary32, the precision checkpoints hold.
    pub fn round_to_f32(&mut self) {
        for e in &mut self.entries {
            e.tensor.round_to_f32();
        }
    }

    /// Checks that `other` has the same names, kinds and shapes in the same
    /// order.
    pub fn check_layout(&self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(NnError::Manifest(format!(
                "expected {} entries, found {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.kind != b.kind || a.tensor.shape() != b.tensor.shape() {
                return Err(NnError::Manifest(format!(
                    "expected {} {:?} {:?}, found {} {:?} {:?}",
                    a.name,
                    a.kind,
                    a.tensor.shape(),
                    b.name,
                    b.kind,
                    b.tensor.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Kaiming-uniform draw: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub total_bytes: usize,
    pub entries: Vec<ManifestEntry>,
}

pub fn save_params(store: &ParamStore, dir: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    let mut entries = Vec::with_capacity(store.len());
    for e in store.entries() {
        entries.push(ManifestEntry {
            name: e.name.clone(),
            kind: e.kind,
            shape: e.tensor.shape().to_vec(),
            offset: bytes.len(),
        });
        for &v in e.tensor.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: 1,
        dtype: "f32le".into(),
        total_bytes: bytes.len(),
        entries,
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join(WEIGHTS_FILE), &bytes)?;
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

pub fn load_params(dir: &Path) -> Result<ParamStore> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.format_version != 1 || manifest.dtype != "f32le" {
        return Err(NnError::Manifest(format!(
            "unsupported format {} / {}",
            manifest.format_version, manifest.dtype
        )));
    }
    let bytes = fs::read(dir.join(WEIGHTS_FILE))?;
    if bytes.len() != manifest.total_bytes {
        return Err(NnError::Manifest(format!(
            "{WEIGHTS_FILE} has {} bytes, manifest declares {}",
            bytes.len(),
            manifest.total_bytes
        )));
    }
    let mut store = ParamStore::new();
    let mut expected_offset = 0;
    for e in &manifest.entries {
        let n: usize = e.shape.iter().product();
        if e.offset != expected_offset || e.offset + 4 * n > bytes.len() {
            return Err(NnError::Manifest(format!(
                "entry {} at offset {} with {n} values does not fit",
                e.name, e.offset
            )));
        }
        let data = bytes[e.offset..e.offset + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        store.insert(&e.name, e.kind, Tensor::new(&e.shape, data)?)?;
        expected_offset += 4 * n;
    }
    if expected_offset != bytes.len() {
        return Err(NnError::Manifest(format!(
            "entries cover {expected_offset} of {} bytes",
            bytes.len()
        )));
    }
    Ok(store)
}
