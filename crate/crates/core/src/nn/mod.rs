//! Small layer toolkit over candle: a seeded parameter store, checkpoint
//! I/O and ndarray <-> tensor conversion.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Module, Tensor, Var};
use ndarray::{Array2, Array3, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, IoContext, Result};

mod im2col;

pub use im2col::Conv;

pub const WEIGHTS_FILE: &str = "weights.safetensors";
pub const SPEC_FILE: &str = "spec.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    He,
    Zero,
}

/// Owns every trainable tensor of a model. Initial values come from a
/// ChaCha stream so identical seeds give identical models.
pub struct ParamStore {
    vars: Vec<(String, Var)>,
    rng: ChaCha8Rng,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            vars: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            device: Device::Cpu,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn add(&mut self, name: String, t: Tensor) -> Result<Tensor> {
        if self.vars.iter().any(|(n, _)| *n == name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.vars.push((name, var));
        Ok(handle)
    }

    fn normal(&mut self, len: usize, std: f64) -> Vec<f32> {
        let dist = Normal::new(0.0, std).expect("finite std");
        (0..len).map(|_| dist.sample(&mut self.rng) as f32).collect()
    }

    /// Square "same"-padded convolution with bias.
    pub fn conv2d(&mut self, name: &str, c_in: usize, c_out: usize, kernel: usize, init: Init) -> Result<Conv> {
        let len = c_out * c_in * kernel * kernel;
        let data = match init {
            Init::He => self.normal(len, (2.0 / (c_in * kernel * kernel) as f64).sqrt()),
            Init::Zero => vec![0.0; len],
        };
        let w = Tensor::from_vec(data, (c_out, c_in, kernel, kernel), &self.device)?;
        let w = self.add(format!("{name}.weight"), w)?;
        let b = self.add(format!("{name}.bias"), Tensor::zeros(c_out, DType::F32, &self.device)?)?;
        Ok(Conv::new(w, b)?)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.vars.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Deep copy of current values.
    pub fn snapshot(&self) -> Result<Vec<Tensor>> {
        Ok(self
            .vars
            .iter()
            .map(|(_, v)| v.as_tensor().copy())
            .collect::<candle_core::Result<_>>()?)
    }

    pub fn restore(&self, snapshot: &[Tensor]) -> Result<()> {
        for ((_, v), t) in self.vars.iter().zip(snapshot) {
            v.set(t)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let map: HashMap<String, Tensor> = self
            .vars
            .iter()
            .map(|(n, v)| (n.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    pub fn load(&self, path: &Path) -> Result<()> {
        let map = candle_core::safetensors::load(path, &self.device)?;
        for (name, var) in &self.vars {
            let t = map
                .get(name)
                .ok_or_else(|| Error::ShapeMismatch(format!("checkpoint lacks {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: checkpoint {:?} vs model {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(DType::F32)?)?;
        }
        Ok(())
    }
}

/// Writes `spec.json` and the weight blob into `dir`.
pub fn save_checkpoint<S: Serialize>(dir: &Path, spec: &S, store: &ParamStore) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let spec_path = dir.join(SPEC_FILE);
    fs::write(&spec_path, serde_json::to_string_pretty(spec)?).at(&spec_path)?;
    store.save(&dir.join(WEIGHTS_FILE))
}

pub fn read_spec<S: DeserializeOwned>(dir: &Path) -> Result<S> {
    let path = dir.join(SPEC_FILE);
    let text = fs::read_to_string(&path).at(&path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn relu_conv(conv: &Conv, x: &Tensor) -> Result<Tensor> {
    Ok(conv.forward(x)?.relu()?)
}

/// Stacks equally shaped frames into `(n, 1, h, w)`.
pub fn frames_to_tensor(frames: &[ArrayView2<'_, f32>]) -> Result<Tensor> {
    let (h, w) = frames.first().ok_or(Error::EmptyDataset)?.dim();
    let mut data = Vec::with_capacity(frames.len() * h * w);
    for f in frames {
        if f.dim() != (h, w) {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", f.dim(), (h, w))));
        }
        data.extend(f.iter().copied());
    }
    Ok(Tensor::from_vec(data, (frames.len(), 1, h, w), &Device::Cpu)?)
}

/// Stacks equally shaped `(c, h, w)` arrays into `(n, c, h, w)`.
pub fn stack3_to_tensor(items: &[&Array3<f32>]) -> Result<Tensor> {
    let (c, h, w) = items.first().ok_or(Error::EmptyDataset)?.dim();
    let mut data = Vec::with_capacity(items.len() * c * h * w);
    for a in items {
        if a.dim() != (c, h, w) {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.dim(), (c, h, w))));
        }
        data.extend(a.iter().copied());
    }
    Ok(Tensor::from_vec(data, (items.len(), c, h, w), &Device::Cpu)?)
}

/// Splits an `(n, 1, h, w)` tensor into `n` frames.
pub fn tensor_to_frames(t: &Tensor) -> Result<Vec<Array2<f32>>> {
    let (n, c, h, w) = t.dims4()?;
    if c != 1 {
        return Err(Error::ShapeMismatch(format!("expected one channel, got {c}")));
    }
    let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(flat
        .chunks_exact(h * w)
        .take(n)
        .map(|c| Array2::from_shape_vec((h, w), c.to_vec()).expect("chunk size"))
        .collect())
}

pub fn ensure_finite(loss: f64, epoch: usize, batch: usize, what: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            epoch,
            batch,
            detail: format!("{what} = {loss}"),
        })
    }
}
