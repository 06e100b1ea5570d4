//! Water-body segmentation: a U-Net over a chosen band combination trained
//! with cross-entropy plus the gap ratio, tiled inference with overlap
//! averaging, thresholding, an NDWI baseline and the band ablation harness.

pub mod loss;
mod unet;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use candle_core::{Device, Tensor};
use candle_nn::Optimizer;
use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datacube::{tile_origins, Band, DataCube, Located};
use crate::error::{Error, IoContext, Result};
use crate::metrics::{ConfusionCounts, WeightedReport};
use crate::raster::{ProbabilityMap, WaterMask};

pub use loss::{bce, gap_term, seg_loss, SegLossTerms, SegLossWeights};
pub use unet::{UNet, UNetSpec};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BandCombo {
    #[serde(rename = "S1")]
    S1,
    #[serde(rename = "S2")]
    S2,
    #[serde(rename = "S1+Slo+El")]
    S1SloEl,
    #[serde(rename = "S2+Slo+El")]
    S2SloEl,
    #[serde(rename = "S1+S2+Slo+El", alias = "Full")]
    Full,
}

impl BandCombo {
    pub const ALL: [BandCombo; 5] = [
        BandCombo::S1,
        BandCombo::S2,
        BandCombo::S1SloEl,
        BandCombo::S2SloEl,
        BandCombo::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BandCombo::S1 => "S1",
            BandCombo::S2 => "S2",
            BandCombo::S1SloEl => "S1+Slo+El",
            BandCombo::S2SloEl => "S2+Slo+El",
            BandCombo::Full => "S1+S2+Slo+El",
        }
    }

    /// File-system friendly name.
    pub fn slug(self) -> String {
        self.name().to_lowercase().replace('+', "_")
    }

    pub fn bands(self) -> Vec<Band> {
        let mut out = Vec::new();
        if matches!(self, BandCombo::S1 | BandCombo::S1SloEl | BandCombo::Full) {
            out.extend(Band::SAR);
        }
        if matches!(self, BandCombo::S2 | BandCombo::S2SloEl | BandCombo::Full) {
            out.extend(Band::OPTICAL);
        }
        if matches!(self, BandCombo::S1SloEl | BandCombo::S2SloEl | BandCombo::Full) {
            out.extend(Band::STATIC);
        }
        out
    }
}

impl fmt::Display for BandCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BandCombo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BandCombo::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s) || c.slug() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown band combination `{s}`")))
    }
}

/// One square training patch: all dataset bands channel-first plus target.
#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    pub location: String,
    pub t: usize,
    pub input: Array3<f32>,
    pub target: WaterMask,
}

impl Located for SegSample {
    fn location_key(&self) -> String {
        self.location.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegDataset {
    pub bands: Vec<Band>,
    pub samples: Vec<SegSample>,
}

impl SegDataset {
    pub fn new(bands: Vec<Band>, samples: Vec<SegSample>) -> Result<Self> {
        for s in &samples {
            let (c, h, w) = s.input.dim();
            if c != bands.len() || s.target.dim() != (h, w) || h != w {
                return Err(Error::ShapeMismatch(format!(
                    "sample {}@{} has input {:?} and target {:?} for {} bands",
                    s.location,
                    s.t,
                    s.input.dim(),
                    s.target.dim(),
                    bands.len()
                )));
            }
        }
        if let Some(first) = samples.first() {
            if samples.iter().any(|s| s.input.dim() != first.input.dim()) {
                return Err(Error::ShapeMismatch("samples must share one patch size".into()));
            }
        }
        Ok(SegDataset { bands, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Channel indices of `bands` within this dataset.
    pub fn channels(&self, bands: &[Band], label: &str) -> Result<Vec<usize>> {
        channel_indices(&self.bands, bands, label)
    }
}

fn channel_indices(available: &[Band], wanted: &[Band], label: &str) -> Result<Vec<usize>> {
    let missing: Vec<&str> = wanted
        .iter()
        .filter(|b| !available.contains(b))
        .map(|b| b.name())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingBands {
            combo: label.to_string(),
            missing: missing.join(","),
        });
    }
    Ok(wanted
        .iter()
        .map(|b| available.iter().position(|a| a == b).expect("checked"))
        .collect())
}

/// Cuts every timestep of `cube` into square patches paired with the
/// matching window of `masks` `(t, h, w)`.
pub fn samples_from_cube(cube: &DataCube, masks: &Array3<u8>, patch: usize, stride: usize) -> Result<Vec<SegSample>> {
    let (t_len, h, w, b) = cube.shape();
    if masks.dim() != (t_len, h, w) {
        return Err(Error::ShapeMismatch(format!(
            "masks {:?} vs cube {:?}",
            masks.dim(),
            (t_len, h, w)
        )));
    }
    let origins = tile_origins(h, w, patch, stride)?;
    let values = cube.values();
    let location = cube.location_key();
    let mut out = Vec::with_capacity(t_len * origins.len());
    for t in 0..t_len {
        for &(r, c) in &origins {
            let window = values.slice(s![t, r..r + patch, c..c + patch, ..]);
            let input = Array3::from_shape_fn((b, patch, patch), |(k, i, j)| window[[i, j, k]]);
            let target = WaterMask::new(masks.slice(s![t, r..r + patch, c..c + patch]).to_owned())?;
            out.push(SegSample {
                location: location.clone(),
                t,
                input,
                target,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub weights: SegLossWeights,
    /// Fraction of locations used for training.
    pub train_ratio: f64,
    pub threshold: f64,
    pub depth: usize,
    pub base_channels: usize,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        SegTrainConfig {
            epochs: 20,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
            weights: SegLossWeights::default(),
            train_ratio: 0.8,
            threshold: DEFAULT_THRESHOLD,
            depth: 4,
            base_channels: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegEpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Support-weighted over the water and background classes.
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    pub water_iou: f64,
}

#[derive(Debug, Clone)]
pub struct SegTraining {
    pub log: Vec<SegEpochLog>,
    /// Epoch of the retained checkpoint (0 = untrained).
    pub best_epoch: usize,
    pub best: WeightedReport,
}

fn batch_tensors(samples: &[&SegSample], channels: &[usize]) -> Result<(Tensor, Tensor)> {
    let (_, h, w) = samples[0].input.dim();
    let mut x = Vec::with_capacity(samples.len() * channels.len() * h * w);
    let mut y = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        for &c in channels {
            x.extend(s.input.slice(s![c, .., ..]).iter().copied());
        }
        y.extend(s.target.view().iter().map(|&v| v as f32));
    }
    let n = samples.len();
    Ok((
        Tensor::from_vec(x, (n, channels.len(), h, w), &Device::Cpu)?,
        Tensor::from_vec(y, (n, 1, h, w), &Device::Cpu)?,
    ))
}

fn evaluate(
    model: &UNet,
    samples: &[&SegSample],
    channels: &[usize],
    config: &SegTrainConfig,
) -> Result<(f64, ConfusionCounts)> {
    let mut loss = 0.0;
    let mut counts = ConfusionCounts::default();
    for chunk in samples.chunks(config.batch_size) {
        let (x, y) = batch_tensors(chunk, channels)?;
        let p = model.forward(&x)?;
        let l = loss::tensor::seg_loss(&p, &y, &config.weights)?;
        loss += crate::despeckle::loss::tensor::scalar(&l.total)? * chunk.len() as f64;
        for (prob, s) in crate::nn::tensor_to_frames(&p)?.into_iter().zip(chunk) {
            let mask = binarize(&ProbabilityMap(prob), config.threshold)?;
            counts = counts + crate::metrics::confusion(mask.view(), s.target.view())?;
        }
    }
    Ok((loss / samples.len() as f64, counts))
}

/// Splits `dataset` by location (`train_ratio`, `seed`) and trains one
/// model for `combo`, keeping the epoch with the best weighted IoU.
pub fn train_segmenter(dataset: &SegDataset, combo: BandCombo, config: &SegTrainConfig) -> Result<(UNet, SegTraining)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (train, val) = crate::datacube::temporal_split(&dataset.samples, config.train_ratio, config.seed)?;
    train_segmenter_on(dataset, &train, &val, combo, config)
}

/// Trains on an explicit partition. `train` and `val` are samples of
/// `dataset` (they only need to share its band layout).
pub fn train_segmenter_on(
    dataset: &SegDataset,
    train: &[SegSample],
    val: &[SegSample],
    combo: BandCombo,
    config: &SegTrainConfig,
) -> Result<(UNet, SegTraining)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.batch_size == 0 || !(config.threshold > 0.0 && config.threshold < 1.0) {
        return Err(Error::InvalidArgument("batch size must be positive and threshold in (0, 1)".into()));
    }
    config.weights.validate()?;
    let bands = combo.bands();
    let channels = dataset.channels(&bands, combo.name())?;
    let side = train[0].input.dim().1;
    let model = UNet::new(
        UNetSpec {
            depth: config.depth,
            base_channels: config.base_channels,
            bands,
            patch_size: side,
        },
        config.seed,
    )?;
    let mut opt = candle_nn::AdamW::new(
        model.store.vars(),
        candle_nn::ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let train_refs: Vec<&SegSample> = train.iter().collect();
    let val_refs: Vec<&SegSample> = val.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e9);

    let (val_loss, counts) = evaluate(&model, &val_refs, &channels, config)?;
    let (train_loss, _) = evaluate(&model, &train_refs, &channels, config)?;
    let report = WeightedReport::from_counts(&counts);
    let mut log = vec![epoch_row(0, train_loss, val_loss, &report)];
    let mut best = (0usize, report, model.store.snapshot()?);

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&SegSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (x, y) = batch_tensors(&batch, &channels)?;
            let l = loss::tensor::seg_loss(&model.forward(&x)?, &y, &config.weights)?;
            let total = crate::despeckle::loss::tensor::scalar(&l.total)?;
            crate::nn::ensure_finite(total, epoch, b, "segmentation loss")?;
            opt.backward_step(&l.total)?;
            train_loss += total * chunk.len() as f64;
        }
        let (val_loss, counts) = evaluate(&model, &val_refs, &channels, config)?;
        let report = WeightedReport::from_counts(&counts);
        let row = epoch_row(epoch, train_loss / train.len() as f64, val_loss, &report);
        log::debug!("{combo} epoch {epoch}: loss {:.4}, val IoU {:.4}", row.train_loss, row.iou);
        if report.weighted.iou > best.1.weighted.iou {
            best = (epoch, report, model.store.snapshot()?);
        }
        log.push(row);
    }
    model.store.restore(&best.2)?;
    Ok((
        model,
        SegTraining {
            log,
            best_epoch: best.0,
            best: best.1,
        },
    ))
}

fn epoch_row(epoch: usize, train_loss: f64, val_loss: f64, r: &WeightedReport) -> SegEpochLog {
    SegEpochLog {
        epoch,
        train_loss,
        val_loss,
        precision: r.weighted.precision,
        recall: r.weighted.recall,
        iou: r.weighted.iou,
        water_iou: r.water.scores.iou,
    }
}

pub fn write_epoch_log(path: &Path, log: &[SegEpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss", "precision", "recall", "iou", "water_iou"])?;
    for r in log {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.6}", r.train_loss),
            format!("{:.6}", r.val_loss),
            format!("{:.6}", r.precision),
            format!("{:.6}", r.recall),
            format!("{:.6}", r.iou),
            format!("{:.6}", r.water_iou),
        ])?;
    }
    w.flush().at(path)
}

/// Spread between overlapping tile predictions (max minus min per pixel),
/// over pixels covered by more than one tile.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SeamStats {
    pub max: f64,
    pub mean: f64,
    pub overlap_pixels: usize,
}

const INFERENCE_BATCH: usize = 8;

/// Probability map for a `(bands, h, w)` frame in the model's band order.
/// Frames larger than the training patch are tiled with half-tile stride
/// and overlapping predictions averaged.
pub fn predict_mask(model: &UNet, frame: ArrayView3<'_, f32>) -> Result<ProbabilityMap> {
    Ok(predict_with_seams(model, frame)?.0)
}

pub fn predict_with_seams(model: &UNet, frame: ArrayView3<'_, f32>) -> Result<(ProbabilityMap, SeamStats)> {
    let (c, h, w) = frame.dim();
    if c != model.spec.bands.len() {
        return Err(Error::MissingBands {
            combo: format!("{:?}", model.spec.bands),
            missing: format!("frame has {c} bands, model expects {}", model.spec.bands.len()),
        });
    }
    let tile = model.spec.patch_size;
    if h < tile || w < tile {
        let x = Tensor::from_vec(frame.iter().copied().collect::<Vec<f32>>(), (1, c, h, w), &Device::Cpu)?;
        let p = crate::nn::tensor_to_frames(&model.forward(&x)?)?.remove(0);
        return Ok((ProbabilityMap(p), SeamStats::default()));
    }
    let origins = tile_origins(h, w, tile, (tile / 2).max(1))?;
    let mut sum = Array2::<f64>::zeros((h, w));
    let mut count = Array2::<u32>::zeros((h, w));
    let mut lo = Array2::<f32>::from_elem((h, w), f32::INFINITY);
    let mut hi = Array2::<f32>::from_elem((h, w), f32::NEG_INFINITY);
    for chunk in origins.chunks(INFERENCE_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * c * tile * tile);
        for &(r, col) in chunk {
            data.extend(frame.slice(s![.., r..r + tile, col..col + tile]).iter().copied());
        }
        let x = Tensor::from_vec(data, (chunk.len(), c, tile, tile), &Device::Cpu)?;
        for (p, &(r, col)) in crate::nn::tensor_to_frames(&model.forward(&x)?)?.iter().zip(chunk) {
            for ((i, j), &v) in p.indexed_iter() {
                let (i, j) = (r + i, col + j);
                sum[[i, j]] += v as f64;
                count[[i, j]] += 1;
                lo[[i, j]] = lo[[i, j]].min(v);
                hi[[i, j]] = hi[[i, j]].max(v);
            }
        }
    }
    let mut stats = SeamStats::default();
    let mut spread_sum = 0.0;
    for ((idx, &n), (&l, &u)) in count.indexed_iter().zip(lo.iter().zip(hi.iter())) {
        if n > 1 {
            let spread = (u - l) as f64;
            stats.max = stats.max.max(spread);
            spread_sum += spread;
            stats.overlap_pixels += 1;
        }
        let _ = idx;
    }
    if stats.overlap_pixels > 0 {
        stats.mean = spread_sum / stats.overlap_pixels as f64;
    }
    let prob = Array2::from_shape_fn((h, w), |(i, j)| (sum[[i, j]] / count[[i, j]] as f64) as f32);
    Ok((ProbabilityMap(prob), stats))
}

/// Pulls the model's bands for timestep `t` out of `cube` channel-first.
pub fn frame_from_cube(cube: &DataCube, t: usize, bands: &[Band]) -> Result<Array3<f32>> {
    let (_, h, w, _) = cube.shape();
    let idx = channel_indices(&cube.manifest.bands, bands, "model input")?;
    if t >= cube.timesteps() {
        return Err(Error::OutOfBounds(format!("timestep {t} of {}", cube.timesteps())));
    }
    let v = cube.values();
    Ok(Array3::from_shape_fn((bands.len(), h, w), |(k, i, j)| v[[t, i, j, idx[k]]]))
}

/// `1` where `prob >= threshold`.
pub fn binarize(prob: &ProbabilityMap, threshold: f64) -> Result<WaterMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} not in (0, 1)")));
    }
    Ok(WaterMask::from_fn(prob.dim(), |i, j| prob.0[[i, j]] as f64 >= threshold))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdwiMask {
    pub mask: WaterMask,
    /// Pixels where `G + NIR == 0`; always classified as non-water.
    pub invalid_pixels: usize,
}

/// `(G - NIR) / (G + NIR) > threshold`.
pub fn ndwi_baseline(green: ArrayView2<'_, f32>, nir: ArrayView2<'_, f32>, threshold: f64) -> Result<NdwiMask> {
    crate::raster::check_same_dim(green, nir)?;
    let invalid = green.iter().zip(nir.iter()).filter(|(&g, &n)| g as f64 + n as f64 == 0.0).count();
    let mask = WaterMask::from_fn(green.dim(), |i, j| {
        let (g, n) = (green[[i, j]] as f64, nir[[i, j]] as f64);
        g + n != 0.0 && (g - n) / (g + n) > threshold
    });
    if invalid > 0 {
        log::debug!("ndwi: {invalid} pixels with zero denominator");
    }
    Ok(NdwiMask {
        mask,
        invalid_pixels: invalid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub combo: String,
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
}

/// Trains one model per combination on the same location split and
/// reports each model's best validation scores.
pub fn run_ablation(
    dataset: &SegDataset,
    combos: &[BandCombo],
    config: &SegTrainConfig,
    mut on_model: impl FnMut(BandCombo, &UNet, &SegTraining) -> Result<()>,
) -> Result<Vec<AblationRow>> {
    let (train, val) = crate::datacube::temporal_split(&dataset.samples, config.train_ratio, config.seed)?;
    combos
        .iter()
        .map(|&combo| {
            let (model, training) = train_segmenter_on(dataset, &train, &val, combo, config)?;
            on_model(combo, &model, &training)?;
            Ok(AblationRow {
                combo: combo.name().to_string(),
                precision: training.best.weighted.precision,
                recall: training.best.weighted.recall,
                iou: training.best.weighted.iou,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("combo,precision,recall,iou\n");
    for r in rows {
        out.push_str(&format!("{},{:.4},{:.4},{:.4}\n", r.combo, r.precision, r.recall, r.iou));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn combos_map_to_bands() {
        assert_eq!(BandCombo::S1.bands(), vec![Band::Vv, Band::Vh]);
        assert_eq!(BandCombo::S2.bands().len(), 4);
        assert_eq!(BandCombo::Full.bands().len(), 8);
        assert_eq!(BandCombo::S2SloEl.bands()[4..], [Band::Slope, Band::Elevation]);
        for c in BandCombo::ALL {
            assert_eq!(c.name().parse::<BandCombo>().unwrap(), c);
            assert_eq!(c.slug().parse::<BandCombo>().unwrap(), c);
        }
    }

    #[test]
    fn binarize_tie_and_monotonicity() {
        let p = ProbabilityMap(array![[0.5f32, 0.49], [0.7, 0.0]]);
        assert_eq!(binarize(&p, 0.5).unwrap().view(), array![[1u8, 0], [1, 0]]);
        assert_eq!(binarize(&ProbabilityMap(Array2::from_elem((3, 3), 0.7)), 0.5).unwrap().water_pixels(), 9);
        assert!(binarize(&p, 1.0).is_err());
        let grid = Array2::from_shape_fn((10, 10), |(i, j)| ((i * 10 + j) as f32) / 100.0);
        let pm = ProbabilityMap(grid);
        let counts: Vec<usize> = (1..20).map(|k| binarize(&pm, k as f64 / 20.0).unwrap().water_pixels()).collect();
        assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        let once = binarize(&pm, 0.3).unwrap();
        let again = binarize(&ProbabilityMap(once.view().mapv(|v| v as f32)), 0.3).unwrap();
        assert_eq!(once, again);
    }

    #[test]
    fn ndwi_cases() {
        let g = array![[0.8f32, 0.3], [0.0, 0.5]];
        let n = array![[0.2f32, 0.3], [0.0, 0.6]];
        let r = ndwi_baseline(g.view(), n.view(), 0.0).unwrap();
        assert_eq!(r.mask.view(), array![[1u8, 0], [0, 0]]);
        assert_eq!(r.invalid_pixels, 1);
        let same = Array2::from_elem((4, 4), 0.4f32);
        assert_eq!(ndwi_baseline(same.view(), same.view(), 0.0).unwrap().mask.water_pixels(), 0);
    }

    #[test]
    fn missing_bands_reported() {
        let ds = SegDataset::new(vec![Band::Vv, Band::Vh], vec![]).unwrap();
        match ds.channels(&BandCombo::Full.bands(), "S1+S2+Slo+El") {
            Err(Error::MissingBands { missing, .. }) => assert!(missing.contains("NIR")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ablation_csv_schema() {
        let rows = vec![AblationRow {
            combo: "S1".into(),
            precision: 0.91,
            recall: 0.9,
            iou: 0.85,
        }];
        assert_eq!(ablation_csv(&rows), "combo,precision,recall,iou\nS1,0.9100,0.9000,0.8500\n");
    }
}
