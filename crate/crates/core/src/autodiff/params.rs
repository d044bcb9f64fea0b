use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Grads, Tensor};
use crate::{Error, Result};

/// Adam hyperparameters. Defaults are the usual `β1 = 0.9, β2 = 0.999, ε = 1e-8`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    m: Tensor,
    v: Tensor,
}

/// Named parameter tensors plus Adam state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    moments: BTreeMap<String, Moments>,
    step: u64,
}

const MAGIC: &[u8; 8] = b"PMCKPT\0\0";
const FORMAT_VERSION: u32 = 1;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Number of optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Copy of the parameter values without optimizer state.
    pub fn values_only(&self) -> Self {
        Self {
            params: self.params.clone(),
            ..Self::default()
        }
    }

    /// Merge all entries of `other` into `self`; names must not collide.
    pub fn extend(&mut self, other: &ParamStore) -> Result<()> {
        for (k, v) in &other.params {
            self.insert(k.clone(), v.clone())?;
        }
        Ok(())
    }

    /// Entries whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> Self {
        Self {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            ..Self::default()
        }
    }

    fn check_grads(&self, grads: &Grads) -> Result<()> {
        for (name, p) in &self.params {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::MissingGrad(name.clone()))?;
            if !g.same_shape(p) {
                return Err(Error::Shape {
                    op: "optimizer step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// One bias-corrected Adam step over every parameter.
    pub fn adam_step(&mut self, grads: &Grads, cfg: &AdamConfig) -> Result<()> {
        if cfg.lr <= 0.0 {
            return Err(Error::Invalid(format!("learning rate must be > 0, got {}", cfg.lr)));
        }
        self.check_grads(grads)?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, p) in self.params.iter_mut() {
            let g = &grads[name];
            let mo = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: Tensor::zeros(p.shape()),
                v: Tensor::zeros(p.shape()),
            });
            let gd = g.data();
            let (m, v) = (mo.m.data_mut(), mo.v.data_mut());
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gd[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    /// Plain gradient descent `p ← p − lr·g`.
    pub fn sgd_step(&mut self, grads: &Grads, lr: f64) -> Result<()> {
        self.check_grads(grads)?;
        for (name, p) in self.params.iter_mut() {
            for (w, g) in p.data_mut().iter_mut().zip(grads[name].data()) {
                *w -= lr * g;
            }
        }
        Ok(())
    }

    /// Serialize the parameter values (not optimizer state).
    ///
    /// Layout, all integers little-endian: magic, `u32` format version,
    /// `u32` metadata length + UTF-8 metadata, `u32` entry count, then per
    /// entry `u32` name length, name, `u32` rank, `u64` dims, `f64` values.
    pub fn to_bytes(&self, metadata: &str) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.num_values() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
        out.extend_from_slice(metadata.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Inverse of [`ParamStore::to_bytes`]; returns the store and its metadata.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, String)> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Invalid("not a parameter checkpoint".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Invalid(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let mlen = r.u32()? as usize;
        let metadata = String::from_utf8(r.take(mlen)?.to_vec())
            .map_err(|_| Error::Invalid("checkpoint metadata is not UTF-8".into()))?;
        let count = r.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|_| Error::Invalid("parameter name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
            }
            store.insert(name, Tensor::new(shape, data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Invalid("trailing bytes in checkpoint".into()));
        }
        Ok((store, metadata))
    }

    pub fn save(&self, path: &Path, metadata: &str) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes(metadata))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf).map_err(|e| Error::format(path, e.to_string()))
    }

    /// SHA-256 of the serialized values (empty metadata), hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes("")))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Invalid("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
