use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Tape, Tensor4, Var};
use crate::sigproc::io::{read_f64_le, write_f64_le};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor4>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor4) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor4 {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor4 {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor4] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor4] {
        &mut self.tensors
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor4::len).sum()
    }

    /// Record every parameter as a trainable leaf; `vars[id]` maps ids to handles.
    pub fn attach(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    pub fn var(vars: &[Var], id: ParamId) -> Var {
        vars[id.0]
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    total_values: usize,
    param: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    offset: usize,
    dims: [usize; 4],
}

/// Write `store` as flat little-endian `f64` values plus a TOML manifest of
/// `name -> (offset, dims)`, offsets counted in values.
pub fn save_checkpoint(store: &ParamStore, bin: &Path, manifest: &Path) -> Result<()> {
    let mut values = Vec::with_capacity(store.num_values());
    let mut param = Vec::with_capacity(store.len());
    for (name, t) in store.names.iter().zip(&store.tensors) {
        param.push(ManifestEntry { name: name.clone(), offset: values.len(), dims: t.dims() });
        values.extend_from_slice(t.data());
    }
    write_f64_le(bin, &values)?;
    let m = Manifest { dtype: "f64le".into(), total_values: values.len(), param };
    fs::write(manifest, toml::to_string(&m).map_err(|e| Error::format(manifest, e))?)?;
    Ok(())
}

pub fn load_checkpoint(bin: &Path, manifest: &Path) -> Result<ParamStore> {
    let text = fs::read_to_string(manifest)?;
    let m: Manifest = toml::from_str(&text).map_err(|e| Error::format(manifest, e))?;
    let values = read_f64_le(bin)?;
    if values.len() != m.total_values {
        return Err(Error::format(bin, format!("{} values, manifest says {}", values.len(), m.total_values)));
    }
    let mut store = ParamStore::new();
    for e in m.param {
        let n: usize = e.dims.iter().product();
        let slice = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::format(manifest, format!("parameter {} overruns the data", e.name)))?;
        store.insert(e.name, Tensor4::new(e.dims, slice.to_vec())?);
    }
    Ok(store)
}
