//! Residual despeckling network: a convolutional stack estimates the
//! speckle component, which is subtracted from the input through a skip
//! connection.

pub mod loss;

use std::path::Path;

use candle_core::{Module, Tensor};
use candle_nn::Optimizer;
use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Conv, Init, ParamStore};
pub use loss::{speckle_loss, ssim, tv_penalty, SpeckleLossTerms, SpeckleLossWeights, SsimParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DespeckleModelSpec {
    /// Residual blocks between the input and output convolutions.
    pub depth: usize,
    pub channels: usize,
    pub kernel: usize,
    /// Always true: the network output is `input - predicted_speckle`.
    pub subtract_head: bool,
    /// Multiplier applied to inputs before the feature stack (and divided
    /// out of the speckle estimate). Set by the trainer from the data.
    pub input_scale: f32,
}

impl Default for DespeckleModelSpec {
    fn default() -> Self {
        DespeckleModelSpec {
            depth: 6,
            channels: 32,
            kernel: 3,
            subtract_head: true,
            input_scale: 1.0,
        }
    }
}

impl DespeckleModelSpec {
    fn validate(&self) -> Result<()> {
        if !self.subtract_head {
            return Err(Error::InvalidArgument("despeckler must use the subtraction head".into()));
        }
        if self.channels == 0 || self.kernel.is_multiple_of(2) || !(self.input_scale > 0.0) {
            return Err(Error::InvalidArgument(format!("despeckler spec {self:?}")));
        }
        Ok(())
    }
}

pub struct Despeckler {
    pub spec: DespeckleModelSpec,
    store: ParamStore,
    input: Conv,
    blocks: Vec<(Conv, Conv)>,
    head: Conv,
}

impl Despeckler {
    /// Builds a model whose output head starts at zero, so it begins as the
    /// identity map.
    pub fn new(spec: DespeckleModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new(seed);
        let (c, k) = (spec.channels, spec.kernel);
        let input = store.conv2d("input", 1, c, k, Init::He)?;
        let blocks = (0..spec.depth)
            .map(|i| {
                Ok((
                    store.conv2d(&format!("block{i}.a"), c, c, k, Init::He)?,
                    store.conv2d(&format!("block{i}.b"), c, c, k, Init::He)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let head = store.conv2d("head", c, 1, k, Init::Zero)?;
        Ok(Despeckler {
            spec,
            store,
            input,
            blocks,
            head,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    /// `(n, 1, h, w)` -> same shape.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let scale = self.spec.input_scale as f64;
        let mut f = nn::relu_conv(&self.input, &x.affine(scale, 0.0)?)?;
        for (a, b) in &self.blocks {
            let r = b.forward(&nn::relu_conv(a, &f)?)?;
            f = (f + r)?.relu()?;
        }
        let speckle = self.head.forward(&f)?.affine(1.0 / scale, 0.0)?;
        Ok(x.sub(&speckle)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        nn::save_checkpoint(dir, &self.spec, &self.store)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let spec: DespeckleModelSpec = nn::read_spec(dir)?;
        let model = Despeckler::new(spec, 0)?;
        model.store.load(&dir.join(nn::WEIGHTS_FILE))?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DespeckleTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub weights: SpeckleLossWeights,
    pub ssim: SsimParams,
}

impl Default for DespeckleTrainConfig {
    fn default() -> Self {
        DespeckleTrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            weights: SpeckleLossWeights::default(),
            ssim: SsimParams::default(),
        }
    }
}

/// One row of the training log; epoch 0 is the untrained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DespeckleEpochLog {
    pub epoch: usize,
    pub mse: f64,
    pub ssim: f64,
    pub tv: f64,
    pub total: f64,
}

/// A speckled observation and its clean reference.
#[derive(Debug, Clone)]
pub struct SpecklePair {
    pub noisy: Array2<f32>,
    pub clean: Array2<f32>,
}

const TV_SMOOTHING: f64 = 1e-12;

fn evaluate(
    model: &Despeckler,
    pairs: &[SpecklePair],
    order: &[usize],
    config: &DespeckleTrainConfig,
) -> Result<DespeckleEpochLog> {
    let mut acc = [0.0; 4];
    let mut seen = 0usize;
    for chunk in order.chunks(config.batch_size) {
        let (x, y) = batch(pairs, chunk)?;
        let l = loss::tensor::speckle_loss(&model.forward(&x)?, &y, &config.weights, &config.ssim, TV_SMOOTHING)?;
        let n = chunk.len() as f64;
        for (a, t) in acc.iter_mut().zip([&l.mse, &l.ssim, &l.tv, &l.total]) {
            *a += loss::tensor::scalar(t)? * n;
        }
        seen += chunk.len();
    }
    let n = seen as f64;
    Ok(DespeckleEpochLog {
        epoch: 0,
        mse: acc[0] / n,
        ssim: acc[1] / n,
        tv: acc[2] / n,
        total: acc[3] / n,
    })
}

fn batch(pairs: &[SpecklePair], idx: &[usize]) -> Result<(Tensor, Tensor)> {
    let noisy: Vec<ArrayView2<'_, f32>> = idx.iter().map(|&i| pairs[i].noisy.view()).collect();
    let clean: Vec<ArrayView2<'_, f32>> = idx.iter().map(|&i| pairs[i].clean.view()).collect();
    Ok((nn::frames_to_tensor(&noisy)?, nn::frames_to_tensor(&clean)?))
}

/// Trains a despeckler on equally sized single-band pairs with Adam.
pub fn train_despeckler(
    pairs: &[SpecklePair],
    spec: DespeckleModelSpec,
    config: &DespeckleTrainConfig,
) -> Result<(Despeckler, Vec<DespeckleEpochLog>)> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size 0".into()));
    }
    config.weights.validate()?;
    let dim = pairs[0].noisy.dim();
    if pairs.iter().any(|p| p.noisy.dim() != dim || p.clean.dim() != dim) {
        return Err(Error::ShapeMismatch("training pairs must share one shape".into()));
    }
    let mean: f64 = pairs
        .iter()
        .map(|p| p.noisy.iter().map(|&v| v as f64).sum::<f64>())
        .sum::<f64>()
        / (pairs.len() * dim.0 * dim.1) as f64;
    let spec = DespeckleModelSpec {
        input_scale: if mean > 0.0 { (1.0 / mean) as f32 } else { 1.0 },
        ..spec
    };
    let model = Despeckler::new(spec, config.seed)?;
    let mut opt = candle_nn::AdamW::new(
        model.store.vars(),
        candle_nn::ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = vec![evaluate(&model, pairs, &order, config)?];
    ensure_finite_row(&log[0], 0)?;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut acc = [0.0; 4];
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = batch(pairs, chunk)?;
            let l = loss::tensor::speckle_loss(&model.forward(&x)?, &y, &config.weights, &config.ssim, TV_SMOOTHING)?;
            let total = loss::tensor::scalar(&l.total)?;
            nn::ensure_finite(total, epoch, b, "speckle loss")?;
            opt.backward_step(&l.total)?;
            let n = chunk.len() as f64;
            for (a, t) in acc.iter_mut().zip([&l.mse, &l.ssim, &l.tv]) {
                *a += loss::tensor::scalar(t)? * n;
            }
            acc[3] += total * n;
        }
        let n = pairs.len() as f64;
        let row = DespeckleEpochLog {
            epoch,
            mse: acc[0] / n,
            ssim: acc[1] / n,
            tv: acc[2] / n,
            total: acc[3] / n,
        };
        log::debug!("despeckle epoch {epoch}: loss {:.6}", row.total);
        log.push(row);
    }
    if config.epochs > 0 {
        let final_row = evaluate(&model, pairs, &(0..pairs.len()).collect::<Vec<_>>(), config)?;
        if final_row.total >= log[0].total {
            log::warn!(
                "despeckler did not improve: initial {:.6}, final {:.6}",
                log[0].total,
                final_row.total
            );
        }
    }
    Ok((model, log))
}

fn ensure_finite_row(row: &DespeckleEpochLog, epoch: usize) -> Result<()> {
    nn::ensure_finite(row.total, epoch, 0, "speckle loss")
}

/// Filters one frame.
pub fn despeckle(model: &Despeckler, sar: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
    if sar.is_empty() {
        return Err(Error::ShapeMismatch("empty frame".into()));
    }
    let x = nn::frames_to_tensor(&[sar])?;
    Ok(nn::tensor_to_frames(&model.forward(&x)?)?.remove(0))
}

/// Filters a `(t, h, w)` stack frame by frame, preserving order.
pub fn despeckle_stack(model: &Despeckler, stack: &Array3<f32>) -> Result<Array3<f32>> {
    let mut out = stack.clone();
    for (t, frame) in stack.axis_iter(Axis(0)).enumerate() {
        out.index_axis_mut(Axis(0), t).assign(&despeckle(model, frame)?);
    }
    Ok(out)
}

/// Writes the loss log as CSV `epoch,mse,ssim,tv,total`.
pub fn write_loss_log(path: &Path, log: &[DespeckleEpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "mse", "ssim", "tv", "total"])?;
    for r in log {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.9}", r.mse),
            format!("{:.9}", r.ssim),
            format!("{:.9}", r.tv),
            format!("{:.9}", r.total),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn small_spec() -> DespeckleModelSpec {
        DespeckleModelSpec {
            depth: 1,
            channels: 4,
            ..Default::default()
        }
    }

    #[test]
    fn untrained_model_is_identity() {
        let m = Despeckler::new(small_spec(), 1).unwrap();
        let x = Array2::from_shape_fn((9, 7), |(i, j)| (i * 7 + j) as f32 * 0.01);
        assert_eq!(despeckle(&m, x.view()).unwrap(), x);
        let z = Array2::<f32>::zeros((5, 5));
        assert_eq!(despeckle(&m, z.view()).unwrap(), z);
    }

    #[test]
    fn stack_is_filtered_per_frame_in_order() {
        let m = Despeckler::new(small_spec(), 1).unwrap();
        let s = Array3::from_shape_fn((3, 6, 6), |(t, i, j)| (t * 100 + i * 6 + j) as f32);
        let out = despeckle_stack(&m, &s).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            train_despeckler(&[], small_spec(), &DespeckleTrainConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn identity_pairs_stay_near_identity() {
        let pairs: Vec<SpecklePair> = (0..4)
            .map(|k| {
                let a = Array2::from_shape_fn((16, 16), |(i, j)| 0.2 + 0.1 * (((i + j + k) % 5) as f32));
                SpecklePair { noisy: a.clone(), clean: a }
            })
            .collect();
        let cfg = DespeckleTrainConfig {
            epochs: 3,
            batch_size: 2,
            ..Default::default()
        };
        let (m, log) = train_despeckler(&pairs, small_spec(), &cfg).unwrap();
        assert!(log.iter().all(|r| r.total.is_finite()));
        let out = despeckle(&m, pairs[0].noisy.view()).unwrap();
        let err = crate::metrics::mse(out.view(), pairs[0].clean.view()).unwrap();
        assert!(err < 1e-3, "mse {err}");
    }
}
