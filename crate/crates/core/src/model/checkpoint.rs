//! Binary checkpoint: magic, canonical config text, named `f64` arrays.
//!
//! ```text
//! "LOBQR1"
//! u64 LE  config text length, then UTF-8 key=value text
//! u64 LE  array count
//! per array: u32 LE name length, name, u32 LE rank, rank x u64 LE extents,
//!            product(extents) x f64 LE values
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::kv::KeyValues;
use crate::nn::Tensor;
use crate::scalar::Scalar;

use super::{ModelConfig, ModelError, NetworkState};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"LOBQR1";

/// Guards against absurd allocations from corrupt headers.
const MAX_ELEMENTS: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> Self {
        NamedArray { name: name.into(), shape: shape.to_vec(), values }
    }

    pub fn scalar(name: impl Into<String>, v: f64) -> Self {
        Self::new(name, &[1], vec![v])
    }
}

pub fn write_arrays<W: Write>(mut w: W, config_text: &str, arrays: &[NamedArray]) -> Result<(), ModelError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(config_text.len() as u64).to_le_bytes())?;
    w.write_all(config_text.as_bytes())?;
    w.write_all(&(arrays.len() as u64).to_le_bytes())?;
    for a in arrays {
        if a.shape.iter().product::<usize>() != a.values.len() {
            return Err(ModelError::Checkpoint(format!("array {} has inconsistent shape", a.name)));
        }
        w.write_all(&(a.name.len() as u32).to_le_bytes())?;
        w.write_all(a.name.as_bytes())?;
        w.write_all(&(a.shape.len() as u32).to_le_bytes())?;
        for &e in &a.shape {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for v in &a.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ModelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, len: u64) -> Result<String, ModelError> {
    if len > MAX_ELEMENTS {
        return Err(ModelError::Checkpoint("string length out of range".into()));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| ModelError::Checkpoint("invalid UTF-8".into()))
}

pub fn read_arrays<R: Read>(mut r: R) -> Result<(String, Vec<NamedArray>), ModelError> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let len = read_u64(&mut r)?;
    let config = read_string(&mut r, len)?;
    let count = read_u64(&mut r)?;
    let mut arrays = Vec::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)?;
        let name = read_string(&mut r, name_len as u64)?;
        let rank = read_u32(&mut r)?;
        let mut shape = Vec::with_capacity(rank as usize);
        let mut total: u64 = 1;
        for _ in 0..rank {
            let e = read_u64(&mut r)?;
            total = total.saturating_mul(e);
            shape.push(e as usize);
        }
        if total > MAX_ELEMENTS {
            return Err(ModelError::Checkpoint(format!("array {name} too large")));
        }
        let mut values = Vec::with_capacity(total as usize);
        let mut b = [0u8; 8];
        for _ in 0..total {
            r.read_exact(&mut b)?;
            values.push(f64::from_le_bytes(b));
        }
        arrays.push(NamedArray { name, shape, values });
    }
    Ok((config, arrays))
}

/// Indexes arrays by name, rejecting duplicates.
pub fn by_name(arrays: Vec<NamedArray>) -> Result<BTreeMap<String, NamedArray>, ModelError> {
    let mut map = BTreeMap::new();
    for a in arrays {
        if map.contains_key(&a.name) {
            return Err(ModelError::Checkpoint(format!("duplicate array {}", a.name)));
        }
        map.insert(a.name.clone(), a);
    }
    Ok(map)
}

/// Removes `name` from `map` and checks its shape.
pub fn take_array(
    map: &mut BTreeMap<String, NamedArray>,
    name: &str,
    shape: &[usize],
) -> Result<Vec<f64>, ModelError> {
    let a = map.remove(name).ok_or_else(|| ModelError::Checkpoint(format!("missing array {name}")))?;
    if a.shape != shape {
        return Err(ModelError::Checkpoint(format!("array {name} has shape {:?}, expected {shape:?}", a.shape)));
    }
    Ok(a.values)
}

fn tensor_values<F: Scalar>(t: &Tensor<F>) -> Vec<f64> {
    t.data().iter().map(|v| v.to_f64_lossy()).collect()
}

fn fill<F: Scalar>(t: &mut Tensor<F>, values: &[f64]) {
    for (d, &v) in t.data_mut().iter_mut().zip(values) {
        *d = F::from_f64_lossy(v);
    }
}

impl<F: Scalar> NetworkState<F> {
    pub fn to_arrays(&self) -> Vec<NamedArray> {
        let mut out = Vec::new();
        for (name, p) in self.named_params() {
            out.push(NamedArray::new(name.clone(), p.value.shape(), tensor_values(&p.value)));
            out.push(NamedArray::new(format!("adam.m.{name}"), p.value.shape(), tensor_values(&p.first_moment)));
            out.push(NamedArray::new(format!("adam.v.{name}"), p.value.shape(), tensor_values(&p.second_moment)));
        }
        out.push(NamedArray::scalar("meta.epoch", self.epoch as f64));
        out.push(NamedArray::scalar("meta.adam_step", self.adam_step as f64));
        out.push(NamedArray::new("meta.target_center", &[2], self.target_center.to_vec()));
        out.push(NamedArray::new("meta.target_scale", &[2], self.target_scale.to_vec()));
        out
    }

    pub fn from_arrays(config_text: &str, arrays: Vec<NamedArray>) -> Result<Self, ModelError> {
        let config = ModelConfig::from_kv(&KeyValues::parse(config_text)?)?;
        let mut state = NetworkState::build(&config)?;
        let mut map = by_name(arrays)?;
        let names: Vec<(String, Vec<usize>)> =
            state.named_params().into_iter().map(|(n, p)| (n, p.value.shape().to_vec())).collect();
        for ((name, shape), p) in names.iter().zip(state.params_mut()) {
            fill(&mut p.value, &take_array(&mut map, name, shape)?);
            fill(&mut p.first_moment, &take_array(&mut map, &format!("adam.m.{name}"), shape)?);
            fill(&mut p.second_moment, &take_array(&mut map, &format!("adam.v.{name}"), shape)?);
        }
        state.epoch = take_array(&mut map, "meta.epoch", &[1])?[0] as u64;
        state.adam_step = take_array(&mut map, "meta.adam_step", &[1])?[0] as u64;
        let c = take_array(&mut map, "meta.target_center", &[2])?;
        let s = take_array(&mut map, "meta.target_scale", &[2])?;
        state.target_center = [c[0], c[1]];
        state.target_scale = [s[0], s[1]];
        if let Some(extra) = map.keys().next() {
            return Err(ModelError::Checkpoint(format!("unexpected array {extra}")));
        }
        Ok(state)
    }

    pub fn write_checkpoint<W: Write>(&self, w: W) -> Result<(), ModelError> {
        write_arrays(w, &self.config.canonical_text(), &self.to_arrays())
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<Self, ModelError> {
        let (text, arrays) = read_arrays(r)?;
        Self::from_arrays(&text, arrays)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        self.write_checkpoint(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::read_checkpoint(BufReader::new(File::open(path)?))
    }
}
