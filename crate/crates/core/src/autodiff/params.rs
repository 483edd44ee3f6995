//! Trainable parameters, Adam, and the checkpoint archive.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    names: Vec<String>,
    index: HashMap<String, usize>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = self.values.len();
        let zeros = Tensor::zeros(value.shape());
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.grads.push(zeros.clone());
        self.first_moment.push(zeros.clone());
        self.second_moment.push(zeros);
        self.values.push(value);
        Ok(ParamId(id))
    }

    /// Glorot-uniform matrix, bounds ±√(6/(fan_in+fan_out)).
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.add(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn add_filled(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        let mut t = Tensor::zeros(shape);
        t.data_mut().iter_mut().for_each(|v| *v = value);
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|i| ParamId(*i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn moments(&self, id: ParamId) -> (&Tensor, &Tensor) {
        (&self.first_moment[id.0], &self.second_moment[id.0])
    }

    pub fn moments_mut(&mut self, id: ParamId) -> (&mut Tensor, &mut Tensor) {
        (&mut self.first_moment[id.0], &mut self.second_moment[id.0])
    }

    /// Optimizer steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Adds `grads` to the gradient slots (accumulating, never overwriting).
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (slot, g) in self.grads.iter_mut().zip(&grads.0) {
            if let Some(g) = g {
                for (s, v) in slot.data_mut().iter_mut().zip(g) {
                    *s += v;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }
}

/// Per-parameter gradients from one backward pass; `None` means untouched.
#[derive(Debug, Clone, Default)]
pub struct Gradients(pub(crate) Vec<Option<Vec<f64>>>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.0.get(id.0).and_then(|g| g.as_deref())
    }

    /// Elementwise sum; `other` is added after `self`, so a fixed reduction
    /// order gives bit-identical totals.
    pub fn add_assign(&mut self, other: &Gradients) {
        if self.0.len() < other.0.len() {
            self.0.resize(other.0.len(), None);
        }
        for (mine, theirs) in self.0.iter_mut().zip(&other.0) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.iter_mut().zip(t).for_each(|(a, b)| *a += b),
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.0.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= k);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamOptions {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamOptions {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
            clip_norm: 10.0,
        }
    }
}

/// One Adam update from the accumulated gradients, which are then cleared.
///
/// Weight decay is decoupled: `p ← p − lr·wd·p` alongside the Adam step.
pub fn adam_step(store: &mut ParameterStore, lr: f64, opts: &AdamOptions) {
    let norm = store.grad_norm();
    let clip = if opts.clip_norm > 0.0 && norm > opts.clip_norm {
        opts.clip_norm / norm
    } else {
        1.0
    };
    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - opts.beta1.powi(t);
    let bc2 = 1.0 - opts.beta2.powi(t);
    for k in 0..store.values.len() {
        let p = store.values[k].data_mut();
        let g = store.grads[k].data();
        let m = store.first_moment[k].data_mut();
        let v = store.second_moment[k].data_mut();
        for i in 0..p.len() {
            let gi = g[i] * clip;
            m[i] = opts.beta1 * m[i] + (1.0 - opts.beta1) * gi;
            v[i] = opts.beta2 * v[i] + (1.0 - opts.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * (m_hat / (v_hat.sqrt() + opts.eps) + opts.weight_decay * p[i]);
        }
    }
    store.zero_grad();
}

const MAGIC: &[u8; 8] = b"PFXCKPT\0";
const CHECKPOINT_VERSION: u32 = 1;

impl ParameterStore {
    /// Archive layout (little-endian): magic, version `u32`, metadata length
    /// `u64` + JSON, optimizer step `u64`, tensor count `u32`, then per tensor
    /// name length `u32` + UTF-8 name, rank `u32`, dims `u64`…, values `f64`….
    /// Adam moments are stored as `<name>#m` and `<name>#v`.
    pub fn save(&self, path: &Path, metadata: &serde_json::Value) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let meta = serde_json::to_vec(metadata)?;
        out.write_all(&(meta.len() as u64).to_le_bytes())?;
        out.write_all(&meta)?;
        out.write_all(&self.step.to_le_bytes())?;
        out.write_all(&((3 * self.values.len()) as u32).to_le_bytes())?;
        for k in 0..self.values.len() {
            let name = &self.names[k];
            write_tensor(&mut out, name, &self.values[k])?;
            write_tensor(&mut out, &format!("{name}#m"), &self.first_moment[k])?;
            write_tensor(&mut out, &format!("{name}#v"), &self.second_moment[k])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let mut input = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = read_u32(&mut input)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let meta_len = read_u64(&mut input)? as usize;
        let mut meta = vec![0u8; meta_len];
        input.read_exact(&mut meta)?;
        let metadata: serde_json::Value = serde_json::from_slice(&meta)?;
        let step = read_u64(&mut input)?;
        let count = read_u32(&mut input)? as usize;
        let mut store = ParameterStore::new();
        let mut moments: Vec<(String, Tensor)> = Vec::new();
        for _ in 0..count {
            let (name, tensor) = read_tensor(&mut input)?;
            if name.ends_with("#m") || name.ends_with("#v") {
                moments.push((name, tensor));
            } else {
                store.add(&name, tensor)?;
            }
        }
        for (name, tensor) in moments {
            let (base, which) = name.split_at(name.len() - 2);
            let id = store
                .id(base)
                .ok_or_else(|| Error::Format(format!("moment without parameter: {name}")))?;
            if tensor.shape() != store.value(id).shape() {
                return Err(Error::Format(format!("moment shape mismatch for {name}")));
            }
            let (m, v) = store.moments_mut(id);
            if which == "#m" {
                *m = tensor;
            } else {
                *v = tensor;
            }
        }
        store.step = step;
        Ok((store, metadata))
    }

    /// Overwrites values, moments and step from `other`, matching by name.
    pub fn restore_from(&mut self, other: &ParameterStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, model expects {}",
                other.len(),
                self.len()
            )));
        }
        for k in 0..self.values.len() {
            let id = other
                .id(&self.names[k])
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {}", self.names[k])))?;
            if other.value(id).shape() != self.values[k].shape() {
                return Err(Error::Format(format!(
                    "shape mismatch for {}",
                    self.names[k]
                )));
            }
            self.values[k] = other.values[id.0].clone();
            self.first_moment[k] = other.first_moment[id.0].clone();
            self.second_moment[k] = other.second_moment[id.0].clone();
        }
        self.step = other.step;
        self.zero_grad();
        Ok(())
    }
}

fn write_tensor<W: Write>(out: &mut W, name: &str, t: &Tensor) -> Result<()> {
    out.write_all(&(name.len() as u32).to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for d in t.shape() {
        out.write_all(&(*d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_tensor<R: Read>(input: &mut R) -> Result<(String, Tensor)> {
    let name_len = read_u32(input)? as usize;
    let mut name = vec![0u8; name_len];
    input.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
    let rank = read_u32(input)? as usize;
    if rank > 3 {
        return Err(Error::Format(format!("tensor {name} has rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(input)? as usize);
    }
    let size: usize = shape.iter().product();
    let mut data = Vec::with_capacity(size);
    for _ in 0..size {
        let mut buf = [0u8; 8];
        input.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Ok((name, Tensor::new(shape, data)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(p: f64, g: f64) -> (ParameterStore, ParamId) {
        let mut store = ParameterStore::new();
        let id = store.add("w", Tensor::vector(vec![p])).unwrap();
        store.grads[0] = Tensor::vector(vec![g]);
        (store, id)
    }

    #[test]
    fn zero_gradient_without_decay_leaves_parameters() {
        let (mut store, id) = scalar_store(0.7, 0.0);
        let opts = AdamOptions {
            weight_decay: 0.0,
            ..Default::default()
        };
        adam_step(&mut store, 0.1, &opts);
        assert_eq!(store.value(id).data(), &[0.7]);
    }

    #[test]
    fn one_step_from_known_moments() {
        let (mut store, id) = scalar_store(1.0, 0.5);
        {
            let (m, v) = store.moments_mut(id);
            m.data_mut()[0] = 0.2;
            v.data_mut()[0] = 0.04;
        }
        store.set_step(1);
        let opts = AdamOptions {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: 0.0,
        };
        adam_step(&mut store, 0.1, &opts);
        // hand evaluation at t = 2
        let m: f64 = 0.9 * 0.2 + 0.1 * 0.5;
        let v: f64 = 0.99 * 0.04 + 0.01 * 0.25;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.9801);
        let expected = 1.0 - 0.1 * (m_hat / (v_hat.sqrt() + 1e-8) + 0.01 * 1.0);
        assert!((store.value(id).data()[0] - expected).abs() < 1e-15);
        assert_eq!(store.grad(id).data(), &[0.0]);
    }

    #[test]
    fn clipping_scales_the_gradient() {
        // norm 100 → effective gradient 10·(0.6, 0.8); compare first moments
        let mut store = ParameterStore::new();
        let id = store.add("w", Tensor::vector(vec![0.0, 0.0])).unwrap();
        store.grads[0] = Tensor::vector(vec![60.0, 80.0]);
        adam_step(&mut store, 0.0, &AdamOptions::default());
        let (m, _) = store.moments(id);
        assert!((m.data()[0] - 0.1 * 6.0).abs() < 1e-12);
        assert!((m.data()[1] - 0.1 * 8.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let mut store = ParameterStore::new();
        let a = store
            .add(
                "a",
                Tensor::matrix(2, 2, vec![1.0, -2.5, 1e-300, 3.0]).unwrap(),
            )
            .unwrap();
        store.add("b", Tensor::vector(vec![0.1])).unwrap();
        store.moments_mut(a).0.data_mut()[1] = 0.25;
        store.set_step(42);
        let meta = serde_json::json!({"hello": [1, 2]});
        store.save(&path, &meta).unwrap();
        let (back, meta_back) = ParameterStore::load(&path).unwrap();
        assert_eq!(meta_back, meta);
        assert_eq!(back.step(), 42);
        assert_eq!(back.value(a), store.value(a));
        assert_eq!(back.moments(a).0, store.moments(a).0);
        assert_eq!(back.name(ParamId(1)), "b");
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParameterStore::new();
        store.add("x", Tensor::scalar(1.0)).unwrap();
        assert!(store.add("x", Tensor::scalar(1.0)).is_err());
    }
}
