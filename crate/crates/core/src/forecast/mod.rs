//! Next-frame water-map forecasting from a fixed-length history, with a
//! persistence control and a family comparison table.

pub mod loss;
mod model;

use std::path::Path;

use candle_core::{Device, Tensor};
use candle_nn::Optimizer;
use chrono::NaiveDate;
use ndarray::{s, Array2, Array3, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datacube::{tile_origins, Located};
use crate::despeckle::loss::SsimParams;
use crate::error::{Error, IoContext, Result};
use crate::metrics::{mse, psnr_from_mse, ssim};
use crate::raster::ProbabilityMap;

pub use loss::{forecast_loss, tsl, ForecastLossTerms, ForecastLossWeights};
pub use model::{ForecastFamily, ForecastModel, ForecastModelSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    /// `(history_len, h, w)`, oldest first.
    pub history: Array3<f32>,
    pub target: Array2<f32>,
    pub location: String,
    pub target_date: NaiveDate,
}

impl Located for SequenceSample {
    fn location_key(&self) -> String {
        self.location.clone()
    }
}

/// Sliding windows over a dated `(t, h, w)` stack of maps, cut into square
/// patches of `patch` px with `stride`.
pub fn sequence_samples(
    maps: &Array3<f32>,
    dates: &[NaiveDate],
    location: &str,
    history_len: usize,
    patch: usize,
    stride: usize,
) -> Result<Vec<SequenceSample>> {
    let (t_len, h, w) = maps.dim();
    if dates.len() != t_len {
        return Err(Error::ShapeMismatch(format!("{} dates for {t_len} maps", dates.len())));
    }
    if history_len == 0 {
        return Err(Error::InvalidArgument("history length 0".into()));
    }
    let origins = tile_origins(h, w, patch, stride)?;
    let mut out = Vec::new();
    for (t, &date) in dates.iter().enumerate().skip(history_len) {
        for &(r, c) in &origins {
            out.push(SequenceSample {
                history: maps.slice(s![t - history_len..t, r..r + patch, c..c + patch]).to_owned(),
                target: maps.slice(s![t, r..r + patch, c..c + patch]).to_owned(),
                location: location.to_string(),
                target_date: date,
            });
        }
    }
    Ok(out)
}

/// Returns the last history frame unchanged.
pub fn persistence_baseline(history: &Array3<f32>) -> Result<ProbabilityMap> {
    let t = history.dim().0;
    if t == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(ProbabilityMap(history.slice(s![t - 1, .., ..]).to_owned()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub weights: ForecastLossWeights,
    pub ssim: SsimParams,
    /// Fraction of locations used for training.
    pub train_ratio: f64,
}

impl Default for ForecastTrainConfig {
    fn default() -> Self {
        ForecastTrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
            weights: ForecastLossWeights::default(),
            ssim: SsimParams::default(),
            train_ratio: 0.8,
        }
    }
}

/// Averages over samples; `psnr` is computed from the pooled MSE with a
/// peak of 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastScores {
    pub mse: f64,
    pub ssim: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastEpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: ForecastScores,
}

#[derive(Debug, Clone)]
pub struct ForecastTraining {
    pub log: Vec<ForecastEpochLog>,
    pub best_epoch: usize,
    pub best: ForecastScores,
    pub persistence: ForecastScores,
}

/// Scores predictions against targets with the metrics module.
pub fn score(preds: &[Array2<f32>], targets: &[ArrayView2<'_, f32>], params: &SsimParams) -> Result<ForecastScores> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::EmptyDataset);
    }
    let mut m = 0.0;
    let mut s = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        m += mse(p.view(), *t)?;
        s += ssim(p.view(), *t, params)?;
    }
    let n = preds.len() as f64;
    Ok(ForecastScores {
        mse: m / n,
        ssim: s / n,
        psnr: psnr_from_mse(m / n, 1.0),
    })
}

fn batch(samples: &[&SequenceSample]) -> Result<(Tensor, Tensor, Tensor)> {
    let (t, h, w) = samples[0].history.dim();
    let n = samples.len();
    let mut x = Vec::with_capacity(n * t * h * w);
    let mut y = Vec::with_capacity(n * h * w);
    let mut c = Vec::with_capacity(n * h * w);
    for s in samples {
        x.extend(s.history.iter().copied());
        y.extend(s.target.iter().copied());
        c.extend(s.history.slice(s![t - 1, .., ..]).iter().copied());
    }
    Ok((
        Tensor::from_vec(x, (n, t, h, w), &Device::Cpu)?,
        Tensor::from_vec(y, (n, 1, h, w), &Device::Cpu)?,
        Tensor::from_vec(c, (n, 1, h, w), &Device::Cpu)?,
    ))
}

fn predict_batch(model: &ForecastModel, samples: &[&SequenceSample], batch_size: usize) -> Result<Vec<Array2<f32>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let (x, _, _) = batch(chunk)?;
        out.extend(crate::nn::tensor_to_frames(&model.forward(&x)?)?);
    }
    Ok(out)
}

fn validate_samples(samples: &[SequenceSample], history_len: usize) -> Result<()> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let dim = first.history.dim();
    if dim.0 != history_len {
        return Err(Error::ShapeMismatch(format!(
            "history of {} frames, spec expects {history_len}",
            dim.0
        )));
    }
    if samples.iter().any(|s| s.history.dim() != dim || s.target.dim() != (dim.1, dim.2)) {
        return Err(Error::ShapeMismatch("sequence samples must share one shape".into()));
    }
    Ok(())
}

/// Splits by location and trains; keeps the epoch with the lowest
/// validation MSE.
pub fn train_forecaster(
    samples: &[SequenceSample],
    spec: ForecastModelSpec,
    config: &ForecastTrainConfig,
) -> Result<(ForecastModel, ForecastTraining)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (train, val) = crate::datacube::temporal_split(samples, config.train_ratio, config.seed)?;
    train_forecaster_on(&train, &val, spec, config)
}

pub fn train_forecaster_on(
    train: &[SequenceSample],
    val: &[SequenceSample],
    spec: ForecastModelSpec,
    config: &ForecastTrainConfig,
) -> Result<(ForecastModel, ForecastTraining)> {
    validate_samples(train, spec.history_len)?;
    validate_samples(val, spec.history_len)?;
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size 0".into()));
    }
    config.weights.validate()?;
    let model = ForecastModel::new(spec, config.seed)?;
    let mut opt = candle_nn::AdamW::new(
        model.store.vars(),
        candle_nn::ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let val_refs: Vec<&SequenceSample> = val.iter().collect();
    let targets: Vec<ArrayView2<'_, f32>> = val.iter().map(|s| s.target.view()).collect();
    let persistence_preds = val
        .iter()
        .map(|s| Ok(persistence_baseline(&s.history)?.0))
        .collect::<Result<Vec<_>>>()?;
    let persistence = score(&persistence_preds, &targets, &config.ssim)?;

    let initial = score(&predict_batch(&model, &val_refs, config.batch_size)?, &targets, &config.ssim)?;
    let mut log = vec![ForecastEpochLog {
        epoch: 0,
        train_loss: f64::NAN,
        val: initial,
    }];
    let mut best = (0usize, initial, model.store.snapshot()?);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xf0c);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let refs: Vec<&SequenceSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (x, y, c) = batch(&refs)?;
            let l = loss::tensor::forecast_loss(&model.forward(&x)?, &y, &c, &config.weights, &config.ssim)?;
            let v = crate::despeckle::loss::tensor::scalar(&l.total)?;
            crate::nn::ensure_finite(v, epoch, b, "forecast loss")?;
            opt.backward_step(&l.total)?;
            total += v * chunk.len() as f64;
        }
        let val_scores = score(&predict_batch(&model, &val_refs, config.batch_size)?, &targets, &config.ssim)?;
        log::debug!(
            "{} epoch {epoch}: val mse {:.5} (persistence {:.5})",
            model.spec.family,
            val_scores.mse,
            persistence.mse
        );
        if val_scores.mse < best.1.mse {
            best = (epoch, val_scores, model.store.snapshot()?);
        }
        log.push(ForecastEpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            val: val_scores,
        });
    }
    model.store.restore(&best.2)?;
    Ok((
        model,
        ForecastTraining {
            log,
            best_epoch: best.0,
            best: best.1,
            persistence,
        },
    ))
}

/// Predicts the frame following `history` `(history_len, h, w)`.
pub fn predict_next(model: &ForecastModel, history: &Array3<f32>) -> Result<ProbabilityMap> {
    let (t, h, w) = history.dim();
    if t != model.spec.history_len {
        return Err(Error::ShapeMismatch(format!(
            "history of {t} frames, model expects {}",
            model.spec.history_len
        )));
    }
    let x = Tensor::from_vec(history.iter().copied().collect::<Vec<f32>>(), (1, t, h, w), &Device::Cpu)?;
    Ok(ProbabilityMap(crate::nn::tensor_to_frames(&model.forward(&x)?)?.remove(0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub family: String,
    pub mse: f64,
    pub ssim: f64,
    pub psnr: f64,
}

/// Rows ranked by ascending MSE (ties by name).
pub fn rank_families(mut rows: Vec<ComparisonRow>) -> Vec<ComparisonRow> {
    rows.sort_by(|a, b| a.mse.total_cmp(&b.mse).then_with(|| a.family.cmp(&b.family)));
    rows
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("family,mse,ssim,psnr\n");
    for r in rows {
        out.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.family, r.mse, r.ssim, r.psnr));
    }
    out
}

pub fn write_epoch_log(path: &Path, log: &[ForecastEpochLog]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_mse,val_ssim,val_psnr\n");
    for r in log {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            r.epoch, r.train_loss, r.val.mse, r.val.ssim, r.val.psnr
        ));
    }
    std::fs::write(path, out).at(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datacube::bimonthly_dates;

    fn stack(t: usize) -> Array3<f32> {
        Array3::from_shape_fn((t, 8, 8), |(k, i, j)| ((k + i + j) % 3) as f32 / 2.0)
    }

    #[test]
    fn windows_and_patches() {
        let dates = bimonthly_dates(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), 10);
        let s = sequence_samples(&stack(10), &dates, "a", 7, 4, 4).unwrap();
        assert_eq!(s.len(), 3 * 4);
        assert_eq!(s[0].history.dim(), (7, 4, 4));
        assert_eq!(s[0].target_date, dates[7]);
        assert_eq!(s[0].target, stack(10).slice(s![7, 0..4, 0..4]));
        assert!(sequence_samples(&stack(10), &dates[..9], "a", 7, 4, 4).is_err());
    }

    #[test]
    fn persistence_returns_last_frame() {
        let h = stack(7);
        assert_eq!(persistence_baseline(&h).unwrap().0, h.slice(s![6, .., ..]));
        assert!(persistence_baseline(&Array3::zeros((0, 2, 2))).is_err());
    }

    #[test]
    fn ranking_and_csv() {
        let row = |f: &str, m: f64| ComparisonRow {
            family: f.into(),
            mse: m,
            ssim: 0.5,
            psnr: 20.0,
        };
        let ranked = rank_families(vec![row("ConvLSTM", 0.02), row("TD-CNN", 0.01), row("Bi-ConvLSTM", 0.03)]);
        let csv = comparison_csv(&ranked);
        assert!(csv.starts_with("family,mse,ssim,psnr\nTD-CNN,0.010000,"));
        assert_eq!(csv.lines().count(), 4);
    }
}
