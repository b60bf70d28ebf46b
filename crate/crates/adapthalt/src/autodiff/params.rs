//! Named parameter tensors with Adam moment slots and a versioned binary
//! checkpoint format.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Magic header of checkpoint files produced by [`ParamStore::save`].
pub const CHECKPOINT_MAGIC: &str = "ADAPTHALT-CKPT-1";

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Adam first-moment slot.
    pub m: Tensor,
    /// Adam second-moment slot.
    pub v: Tensor,
}

/// Insertion-ordered parameter map. Iteration order is the registration
/// order, which keeps graph construction, checkpoints, and finite-difference
/// sweeps deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            m,
            v,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|i| &self.entries[*i].value)
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name:?}")))?;
        if self.entries[i].value.shape() != value.shape() {
            return Err(Error::invalid(format!(
                "parameter {name:?} has shape {:?}, got {:?}",
                self.entries[i].value.shape(),
                value.shape()
            )));
        }
        self.entries[i].value = value;
        Ok(())
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// One Adam update. `grads` is aligned with `entries()` order and `t` is
    /// the 1-based update count used for bias correction.
    pub fn adam_step(&mut self, grads: &[Tensor], cfg: &AdamConfig, t: u64) -> Result<()> {
        if grads.len() != self.entries.len() {
            return Err(Error::invalid(format!(
                "adam_step got {} gradients for {} parameters",
                grads.len(),
                self.entries.len()
            )));
        }
        if t == 0 {
            return Err(Error::invalid("adam_step timestep must be >= 1"));
        }
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        for (entry, grad) in self.entries.iter_mut().zip(grads) {
            if grad.shape() != entry.value.shape() {
                return Err(Error::invalid(format!(
                    "gradient shape {:?} does not match parameter {:?} of shape {:?}",
                    grad.shape(),
                    entry.name,
                    entry.value.shape()
                )));
            }
            let m = entry.m.data_mut();
            for (mi, gi) in m.iter_mut().zip(grad.data()) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            }
            let v = entry.v.data_mut();
            for (vi, gi) in v.iter_mut().zip(grad.data()) {
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            }
            let theta = entry.value.data_mut();
            for ((ti, mi), vi) in theta.iter_mut().zip(entry.m.data()).zip(entry.v.data()) {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *ti -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        Ok(())
    }

    /// Writes `magic\n`, an entry count, then per entry: name, shape, and
    /// little-endian f64 data. Optimizer slots are not persisted.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC.as_bytes())?;
        w.write_all(b"\n")?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            let name = e.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(e.value.shape().len() as u32).to_le_bytes())?;
            for d in e.value.shape() {
                w.write_all(&(*d as u32).to_le_bytes())?;
            }
            for v in e.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ParamStore> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = vec![0u8; CHECKPOINT_MAGIC.len() + 1];
        r.read_exact(&mut magic)
            .map_err(|_| Error::CheckpointFormat("file too short for magic header".into()))?;
        if &magic[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC.as_bytes()
            || magic[CHECKPOINT_MAGIC.len()] != b'\n'
        {
            return Err(Error::CheckpointFormat(format!(
                "bad magic header, expected {CHECKPOINT_MAGIC:?}"
            )));
        }
        let n = read_u32(&mut r)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..n {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)
                .map_err(|_| Error::CheckpointFormat("truncated name".into()))?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::CheckpointFormat("non-utf8 parameter name".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u32(&mut r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::CheckpointFormat("truncated tensor data".into()))?;
                data.push(f64::from_le_bytes(buf));
            }
            store.insert(&name, Tensor::new(shape, data)?)?;
        }
        Ok(store)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::CheckpointFormat("truncated integer field".into()))?;
    Ok(u32::from_le_bytes(buf))
}
