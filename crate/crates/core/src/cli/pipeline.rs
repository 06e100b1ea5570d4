use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::{s, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{sub_seed, RunConfig};
use crate::datacube::{normalize, Band, DataCube, NormalizationSpec};
use crate::despeckle::{self, DespeckleModelSpec, DespeckleTrainConfig, Despeckler, SpecklePair};
use crate::error::{Error, IoContext, Result};
use crate::forecast::{
    self, ComparisonRow, ForecastModelSpec, ForecastTrainConfig, SequenceSample,
};
use crate::hydro::{self, GroundTruthRow};
use crate::metrics::psnr_from_mse;
use crate::nn::WEIGHTS_FILE;
use crate::raster::ProbabilityMap;
use crate::segmentation::{self, BandCombo, SegDataset, SegTrainConfig, UNet};
use crate::synthgen::{self, SceneParams, SyntheticScene};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "run_manifest.json";
const SUMMARY_FILE: &str = "summary.json";
const PROB_DIR: &str = "probability_maps";
const PROB_INDEX: &str = "index.json";
const MIN_BACKSCATTER: f32 = 1e-6;
const FLOAT_DECIMALS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum Stage {
    Datacube,
    Despeckle,
    Segment,
    Forecast,
    Hydro,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Datacube, Stage::Despeckle, Stage::Segment, Stage::Forecast, Stage::Hydro];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Datacube => "datacube",
            Stage::Despeckle => "despeckle",
            Stage::Segment => "segment",
            Stage::Forecast => "forecast",
            Stage::Hydro => "hydro",
        }
    }
}

/// A failure inside a named stage. Outputs written before the failure are
/// left in place.
#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

pub(crate) fn in_stage<T>(stage: &'static str, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|source| StageError { stage, source })
}

pub fn scene_name(i: usize) -> String {
    format!("scene_{i:03}")
}

/// Per-scene parameters drawn from the run seed.
pub fn scene_params(config: &RunConfig) -> Vec<SceneParams> {
    let s = &config.synth;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, "synth"));
    (0..s.scenes)
        .map(|i| {
            let r0 = if s.r0_range[1] > s.r0_range[0] {
                rng.random_range(s.r0_range[0]..s.r0_range[1])
            } else {
                s.r0_range[0]
            };
            let jitter: (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            SceneParams {
                height: s.height,
                width: s.width,
                timesteps: s.timesteps,
                pixel_size_m: s.pixel_size_m,
                start: s.start,
                lat: 38.0 + 0.25 * i as f64,
                lon: -1.0 + 0.25 * i as f64,
                center: (s.height as f64 / 2.0 + jitter.0, s.width as f64 / 2.0 + jitter.1),
                r0,
                amplitude: s.amplitude,
                period: s.period,
                trend: s.trend,
                depth_m: s.depth_m,
                looks: s.looks,
                cloud_prob: s.cloud_prob,
                lookalikes: s.lookalikes,
                mudflat_px: s.mudflat_px,
                seed: sub_seed(config.seed, &scene_name(i)),
            }
        })
        .collect()
}

/// Writes `scene_NNN/` containers under `config.scenes_dir`.
pub fn generate_scenes(config: &RunConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&config.scenes_dir).at(&config.scenes_dir)?;
    scene_params(config)
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let dir = config.scenes_dir.join(scene_name(i));
            synthgen::write_scene(&synthgen::generate_scene(p)?, &dir)?;
            Ok(dir)
        })
        .collect()
}

pub struct LoadedScene {
    pub name: String,
    pub scene: SyntheticScene,
}

/// Loads every scene container directly under `dir`, sorted by name.
pub fn load_scenes(dir: &Path) -> Result<Vec<LoadedScene>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .map(|e| e.map(|e| e.path()).at(dir))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::MissingInputs(vec![dir.join("scene_*")]));
    }
    dirs.into_iter()
        .map(|d| {
            let scene = synthgen::read_scene(&d)?;
            if let Some((t, band)) = scene.cube.find_non_finite() {
                return Err(Error::NonFinite { t, band: band.name().to_string() });
            }
            let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(LoadedScene { name, scene })
        })
        .collect()
}

/// Rounds every float in `v` to a fixed number of decimals so that
/// serialized reports compare byte for byte.
pub fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            let r: f64 = format!("{x:.FLOAT_DECIMALS$}").parse().expect("formatted float");
            *v = json!(r);
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut v = serde_json::to_value(value)?;
    round_floats(&mut v);
    fs::write(path, serde_json::to_string_pretty(&v)? + "\n").at(path)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path).at(path)?)?)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).at(path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DespeckleSummary {
    pub train_pairs: usize,
    pub heldout_pairs: usize,
    pub parameters: usize,
    pub psnr_noisy_db: f64,
    pub psnr_despeckled_db: f64,
    pub gain_db: f64,
}

fn stage_despeckle(config: &RunConfig, out: &Path, scenes: &[LoadedScene]) -> Result<DespeckleSummary> {
    let c = &config.despeckle;
    let seed = sub_seed(config.seed, "despeckle");
    let mut frames: Vec<(usize, usize, usize)> = Vec::new();
    for (k, s) in scenes.iter().enumerate() {
        let (t_len, _, _, bands) = s.scene.clean_sar.dim();
        for t in 0..t_len {
            frames.extend((0..bands).map(|b| (k, t, b)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    frames.shuffle(&mut rng);
    frames.truncate(c.pairs);
    if frames.len() < 2 {
        return Err(Error::EmptyDataset);
    }
    let pairs = frames
        .iter()
        .enumerate()
        .map(|(i, &(k, t, b))| {
            let scene = &scenes[k].scene;
            let clean = scene.clean_sar.slice(s![t, .., .., b]).to_owned();
            let (noisy, clean) = synthgen::speckle_pair(&clean, scene.params.looks, seed.wrapping_add(i as u64 + 1))?;
            Ok(SpecklePair { noisy, clean })
        })
        .collect::<Result<Vec<_>>>()?;
    let held = ((pairs.len() as f64 * c.holdout_fraction).round() as usize).clamp(1, pairs.len() - 1);
    let (heldout, train) = pairs.split_at(held);
    let spec = DespeckleModelSpec {
        depth: c.depth,
        channels: c.channels,
        kernel: c.kernel,
        subtract_head: true,
        input_scale: 1.0,
    };
    let train_config = DespeckleTrainConfig {
        epochs: c.epochs,
        batch_size: c.batch_size,
        learning_rate: c.learning_rate,
        seed,
        weights: c.weights,
        ssim: c.ssim,
    };
    let (model, log) = despeckle::train_despeckler(train, spec, &train_config)?;
    let dir = out.join("despeckler");
    create_dir(&dir)?;
    model.save(&dir)?;
    despeckle::write_loss_log(&dir.join("loss_log.csv"), &log)?;

    let (mut before, mut after) = (0.0, 0.0);
    for p in heldout {
        before += crate::metrics::mse(p.noisy.view(), p.clean.view())?;
        after += crate::metrics::mse(despeckle::despeckle(&model, p.noisy.view())?.view(), p.clean.view())?;
    }
    let n = heldout.len() as f64;
    let (noisy_db, out_db) = (psnr_from_mse(before / n, 1.0), psnr_from_mse(after / n, 1.0));
    let summary = DespeckleSummary {
        train_pairs: train.len(),
        heldout_pairs: heldout.len(),
        parameters: model.num_params(),
        psnr_noisy_db: noisy_db,
        psnr_despeckled_db: out_db,
        gain_db: out_db - noisy_db,
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Filters the SAR bands of `cube` with `model`.
pub fn despeckle_cube(model: &Despeckler, cube: &DataCube) -> Result<DataCube> {
    let mut out = cube.clone();
    for t in 0..cube.timesteps() {
        for band in [Band::Vv, Band::Vh] {
            let filtered = despeckle::despeckle(model, cube.frame(t, band)?)?.mapv(|v| v.max(MIN_BACKSCATTER));
            out.set_frame(t, band, &filtered)?;
        }
    }
    Ok(out)
}

/// Normalized model inputs, despeckled when a trained despeckler exists
/// in the run directory.
fn model_inputs(out: &Path, scenes: &[LoadedScene]) -> Result<Vec<DataCube>> {
    let dir = out.join("despeckler");
    let model = if dir.join(WEIGHTS_FILE).exists() {
        Some(Despeckler::load(&dir)?)
    } else {
        None
    };
    let spec = NormalizationSpec::default();
    scenes
        .iter()
        .map(|s| {
            let cube = match &model {
                Some(m) => despeckle_cube(m, &s.scene.cube)?,
                None => s.scene.cube.clone(),
            };
            normalize(&cube, &spec)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub despeckled_inputs: bool,
    pub samples: usize,
    pub ablation: Vec<segmentation::AblationRow>,
    pub selected_combo: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProbIndex {
    combo: String,
    scenes: Vec<ProbIndexEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProbIndexEntry {
    name: String,
    file: String,
    shape: [usize; 3],
    dates: Vec<NaiveDate>,
}

fn stage_segment(config: &RunConfig, out: &Path, scenes: &[LoadedScene]) -> Result<SegmentSummary> {
    let c = &config.segment;
    let cubes = model_inputs(out, scenes)?;
    let mut samples = Vec::new();
    for (cube, s) in cubes.iter().zip(scenes) {
        samples.extend(segmentation::samples_from_cube(cube, &s.scene.truth_masks, c.patch_size, c.stride)?);
    }
    let dataset = SegDataset::new(cubes[0].manifest.bands.clone(), samples)?;
    let train_config = SegTrainConfig {
        epochs: c.epochs,
        batch_size: c.batch_size,
        learning_rate: c.learning_rate,
        seed: sub_seed(config.seed, "segment"),
        weights: c.weights,
        train_ratio: c.train_ratio,
        threshold: c.threshold,
        depth: c.depth,
        base_channels: c.base_channels,
    };
    let root = out.join("segmenter");
    let rows = segmentation::run_ablation(&dataset, &c.combos, &train_config, |combo, model, training| {
        let dir = root.join(combo.slug());
        create_dir(&dir)?;
        model.save(&dir)?;
        segmentation::write_epoch_log(&dir.join("epoch_log.csv"), &training.log)
    })?;
    let path = out.join("ablation.csv");
    fs::write(&path, segmentation::ablation_csv(&rows)).at(&path)?;

    let (best, _) = c
        .combos
        .iter()
        .zip(&rows)
        .fold(None::<(BandCombo, f64)>, |acc, (&combo, row)| match acc {
            Some((_, iou)) if iou >= row.iou => acc,
            _ => Some((combo, row.iou)),
        })
        .expect("at least one combination");
    let model = UNet::load(&root.join(best.slug()))?;
    let prob_dir = out.join(PROB_DIR);
    create_dir(&prob_dir)?;
    let mut index = ProbIndex {
        combo: best.name().to_string(),
        scenes: Vec::new(),
    };
    for (cube, s) in cubes.iter().zip(scenes) {
        let (t_len, h, w, _) = cube.shape();
        let mut bytes = Vec::with_capacity(t_len * h * w * 4);
        for t in 0..t_len {
            let frame = segmentation::frame_from_cube(cube, t, &best.bands())?;
            let (prob, _) = segmentation::predict_with_seams(&model, frame.view())?;
            bytes.extend(prob.0.iter().flat_map(|v| v.to_le_bytes()));
        }
        let file = format!("{}.f32", s.name);
        let path = prob_dir.join(&file);
        fs::write(&path, bytes).at(&path)?;
        index.scenes.push(ProbIndexEntry {
            name: s.name.clone(),
            file,
            shape: [t_len, h, w],
            dates: cube.manifest.timestamps.clone(),
        });
    }
    write_json(&prob_dir.join(PROB_INDEX), &index)?;
    let summary = SegmentSummary {
        despeckled_inputs: out.join("despeckler").join(WEIGHTS_FILE).exists(),
        samples: dataset.len(),
        ablation: rows,
        selected_combo: best.name().to_string(),
    };
    write_json(&root.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

struct ProbStack {
    name: String,
    maps: Array3<f32>,
    dates: Vec<NaiveDate>,
}

fn read_probability_maps(out: &Path) -> Result<Vec<ProbStack>> {
    let dir = out.join(PROB_DIR);
    let index_path = dir.join(PROB_INDEX);
    if !index_path.exists() {
        return Err(Error::MissingInputs(vec![index_path]));
    }
    let index: ProbIndex = read_json(&index_path)?;
    index
        .scenes
        .into_iter()
        .map(|e| {
            let path = dir.join(&e.file);
            let bytes = fs::read(&path).at(&path)?;
            let [t, h, w] = e.shape;
            if bytes.len() != t * h * w * 4 || e.dates.len() != t {
                return Err(Error::PayloadMismatch(format!("{} does not match its index entry", path.display())));
            }
            let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            Ok(ProbStack {
                name: e.name,
                maps: Array3::from_shape_vec((t, h, w), values).expect("length checked"),
                dates: e.dates,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastSummary {
    pub train_samples: usize,
    pub val_samples: usize,
    pub persistence: forecast::ForecastScores,
    /// Ranked by ascending validation MSE.
    pub families: Vec<ComparisonRow>,
}

fn stage_forecast(config: &RunConfig, out: &Path) -> Result<ForecastSummary> {
    let c = &config.forecast;
    let stacks = read_probability_maps(out)?;
    let mut samples: Vec<SequenceSample> = Vec::new();
    for s in &stacks {
        samples.extend(forecast::sequence_samples(
            &s.maps,
            &s.dates,
            &s.name,
            c.history_len,
            c.patch_size,
            c.patch_size,
        )?);
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let seed = sub_seed(config.seed, "forecast");
    let (train, val) = crate::datacube::temporal_split(&samples, c.train_ratio, seed)?;
    let train_config = ForecastTrainConfig {
        epochs: c.epochs,
        batch_size: c.batch_size,
        learning_rate: c.learning_rate,
        seed,
        weights: c.weights,
        ssim: c.ssim,
        train_ratio: c.train_ratio,
    };
    let root = out.join("forecaster");
    let mut rows = Vec::new();
    let mut persistence = None;
    for &family in &c.families {
        let spec = ForecastModelSpec {
            family,
            hidden: c.hidden,
            kernel: c.kernel,
            depth: c.depth,
            history_len: c.history_len,
        };
        let (model, training) = forecast::train_forecaster_on(&train, &val, spec, &train_config)?;
        let dir = root.join(family.slug());
        create_dir(&dir)?;
        model.save(&dir)?;
        forecast::write_epoch_log(&dir.join("epoch_log.csv"), &training.log)?;
        persistence = Some(training.persistence);
        rows.push(ComparisonRow {
            family: family.name().to_string(),
            mse: training.best.mse,
            ssim: training.best.ssim,
            psnr: training.best.psnr,
        });
    }
    let rows = forecast::rank_families(rows);
    let path = out.join("forecast_comparison.csv");
    fs::write(&path, forecast::comparison_csv(&rows)).at(&path)?;
    let summary = ForecastSummary {
        train_samples: train.len(),
        val_samples: val.len(),
        persistence: persistence.expect("at least one family"),
        families: rows,
    };
    write_json(&root.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneHydro {
    pub scene: String,
    pub slope_m3_per_step: f64,
    pub records: Vec<hydro::HydroRecord>,
    pub validation: Vec<hydro::ValidationRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HydroSummary {
    pub threshold: f64,
    pub scenes: Vec<SceneHydro>,
    /// Present when a reference table is configured.
    pub reference_validation: Option<Vec<hydro::ValidationRow>>,
}

fn stage_hydro(config: &RunConfig, out: &Path, scenes: &[LoadedScene]) -> Result<HydroSummary> {
    let c = &config.hydro;
    let threshold = config.segment.threshold;
    let stacks = read_probability_maps(out)?;
    let dir = out.join("hydro");
    create_dir(&dir)?;
    let mut results = Vec::new();
    for stack in &stacks {
        let scene = &scenes
            .iter()
            .find(|s| s.name == stack.name)
            .ok_or_else(|| Error::MissingInputs(vec![config.scenes_dir.join(&stack.name)]))?
            .scene;
        let masks = stack
            .maps
            .axis_iter(Axis(0))
            .zip(&stack.dates)
            .map(|(p, &d)| Ok((d, segmentation::binarize(&ProbabilityMap(p.to_owned()), threshold)?)))
            .collect::<Result<Vec<_>>>()?;
        let series = hydro::build_series(&masks, &scene.dem)?;
        series.write_csv(&dir.join(format!("{}_series.csv", stack.name)))?;
        let decomposition = hydro::trend(&series.volumes(), c.seasonal_period)?;
        let pixel_area = scene.dem.pixel_area_m2();
        let ground: Vec<GroundTruthRow> = (0..scene.truth_masks.dim().0)
            .map(|t| GroundTruthRow {
                date: stack.dates[t],
                area_m2: hydro::surface_area(&scene.truth_mask(t), pixel_area).expect("binary truth"),
                printed_difference_m2: None,
            })
            .collect();
        let validation = hydro::validate_against_ground(&series, &ground, c.date_tolerance_days)?;
        hydro::write_validation_csv(&validation, &dir.join(format!("{}_validation.csv", stack.name)))?;
        results.push(SceneHydro {
            scene: stack.name.clone(),
            slope_m3_per_step: decomposition.slope,
            records: series.records().to_vec(),
            validation,
        });
    }
    let reference_validation = match &c.reference_table {
        Some(path) => {
            let (ground, measured) = hydro::read_ground_truth(path)?;
            let measured = measured.ok_or_else(|| {
                Error::Config(format!("{} has no measured_area_m2 column", path.display()))
            })?;
            let rows = hydro::validate_against_ground(&measured, &ground, c.date_tolerance_days)?;
            hydro::write_validation_csv(&rows, &dir.join("reference_validation.csv"))?;
            Some(rows)
        }
        None => None,
    };
    let summary = HydroSummary {
        threshold,
        scenes: results,
        reference_validation,
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Combines the stage summaries into `report.json`.
pub fn assemble_report(config: &RunConfig, out: &Path) -> Result<PathBuf> {
    let parts = [
        ("despeckle", out.join("despeckler").join(SUMMARY_FILE)),
        ("segmentation", out.join("segmenter").join(SUMMARY_FILE)),
        ("forecast", out.join("forecaster").join(SUMMARY_FILE)),
        ("hydro", out.join("hydro").join(SUMMARY_FILE)),
    ];
    let missing: Vec<PathBuf> = parts.iter().filter(|(_, p)| !p.exists()).map(|(_, p)| p.clone()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing));
    }
    let mut report = serde_json::Map::new();
    report.insert("schema_version".into(), json!(REPORT_SCHEMA_VERSION));
    report.insert("seed".into(), json!(config.seed));
    for (key, path) in &parts {
        report.insert((*key).into(), read_json::<Value>(path)?);
    }
    let path = out.join(REPORT_FILE);
    write_json(&path, &Value::Object(report))?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
}

/// Lists every file under `out` (except the manifest itself).
pub fn write_manifest(out: &Path) -> Result<PathBuf> {
    fn walk(root: &Path, dir: &Path, acc: &mut Vec<ManifestEntry>) -> Result<()> {
        for entry in fs::read_dir(dir).at(dir)? {
            let path = entry.at(dir)?.path();
            if path.is_dir() {
                walk(root, &path, acc)?;
            } else {
                let rel = path.strip_prefix(root).expect("under root");
                let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                if rel != MANIFEST_FILE {
                    acc.push(ManifestEntry {
                        bytes: fs::metadata(&path).at(&path)?.len(),
                        path: rel,
                    });
                }
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(out, out, &mut files)?;
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let path = out.join(MANIFEST_FILE);
    write_json(&path, &json!({ "schema_version": REPORT_SCHEMA_VERSION, "files": files }))?;
    Ok(path)
}

#[derive(Debug, Default)]
pub struct PipelineOutcome {
    pub stages: Vec<Stage>,
    pub despeckle: Option<DespeckleSummary>,
    pub segment: Option<SegmentSummary>,
    pub forecast: Option<ForecastSummary>,
    pub hydro: Option<HydroSummary>,
    pub report: Option<PathBuf>,
}

/// Runs the stages in order, or only `only` when given. `report.json` is
/// written after a full run.
pub fn run_pipeline(config: &RunConfig, only: Option<Stage>) -> std::result::Result<PipelineOutcome, StageError> {
    let out = config.output_dir.as_path();
    let scenes = in_stage("datacube", create_dir(out).and_then(|_| load_scenes(&config.scenes_dir)))?;
    let stages: Vec<Stage> = match only {
        Some(s) => vec![s],
        None => Stage::ALL.to_vec(),
    };
    let mut outcome = PipelineOutcome {
        stages: stages.clone(),
        ..Default::default()
    };
    for stage in stages {
        log::info!("stage {}", stage.name());
        match stage {
            Stage::Datacube => {}
            Stage::Despeckle => outcome.despeckle = Some(in_stage("despeckle", stage_despeckle(config, out, &scenes))?),
            Stage::Segment => outcome.segment = Some(in_stage("segment", stage_segment(config, out, &scenes))?),
            Stage::Forecast => outcome.forecast = Some(in_stage("forecast", stage_forecast(config, out))?),
            Stage::Hydro => outcome.hydro = Some(in_stage("hydro", stage_hydro(config, out, &scenes))?),
        }
    }
    if only.is_none() {
        outcome.report = Some(in_stage("report", assemble_report(config, out))?);
    }
    in_stage("report", write_manifest(out))?;
    Ok(outcome)
}

/// Mean absolute `ground_truth - measured` over validation rows.
pub fn mean_abs_difference(rows: &[hydro::ValidationRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|r| r.difference_m2.abs()).sum::<f64>() / rows.len() as f64
}
