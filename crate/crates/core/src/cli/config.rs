use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::despeckle::{SpeckleLossWeights, SsimParams};
use crate::error::{Error, IoContext, Result};
use crate::forecast::{ForecastFamily, ForecastLossWeights};
use crate::segmentation::{BandCombo, SegLossWeights};

/// Everything a run needs. Relative paths resolve against the directory
/// holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scenes_dir: PathBuf,
    pub output_dir: PathBuf,
    pub synth: SynthConfig,
    pub despeckle: DespeckleStageConfig,
    pub segment: SegmentStageConfig,
    pub forecast: ForecastStageConfig,
    pub hydro: HydroStageConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            scenes_dir: "scenes".into(),
            output_dir: "run".into(),
            synth: SynthConfig::default(),
            despeckle: DespeckleStageConfig::default(),
            segment: SegmentStageConfig::default(),
            forecast: ForecastStageConfig::default(),
            hydro: HydroStageConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scenes: usize,
    pub height: usize,
    pub width: usize,
    pub timesteps: usize,
    pub pixel_size_m: f64,
    pub start: NaiveDate,
    /// Basin radius at t = 0 is drawn uniformly from this range (px).
    pub r0_range: [f64; 2],
    pub amplitude: f64,
    pub period: f64,
    pub trend: f64,
    pub depth_m: f64,
    pub looks: u32,
    pub cloud_prob: f64,
    pub lookalikes: usize,
    pub mudflat_px: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scenes: 6,
            height: 64,
            width: 64,
            timesteps: 24,
            pixel_size_m: 10.0,
            start: NaiveDate::from_ymd_opt(2016, 7, 1).expect("valid date"),
            r0_range: [14.0, 18.0],
            amplitude: 3.0,
            period: 6.0,
            trend: -0.2,
            depth_m: 15.0,
            looks: 4,
            cloud_prob: 0.2,
            lookalikes: 2,
            mudflat_px: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DespeckleStageConfig {
    pub depth: usize,
    pub channels: usize,
    pub kernel: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Upper bound on clean/noisy training pairs drawn from the scenes.
    pub pairs: usize,
    pub holdout_fraction: f64,
    pub weights: SpeckleLossWeights,
    pub ssim: SsimParams,
}

impl Default for DespeckleStageConfig {
    fn default() -> Self {
        DespeckleStageConfig {
            depth: 2,
            channels: 16,
            kernel: 3,
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e-3,
            pairs: 200,
            holdout_fraction: 0.1,
            weights: SpeckleLossWeights::default(),
            ssim: SsimParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentStageConfig {
    pub combos: Vec<BandCombo>,
    pub patch_size: usize,
    pub stride: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_ratio: f64,
    pub threshold: f64,
    pub weights: SegLossWeights,
}

impl Default for SegmentStageConfig {
    fn default() -> Self {
        SegmentStageConfig {
            combos: BandCombo::ALL.to_vec(),
            patch_size: 64,
            stride: 64,
            depth: 3,
            base_channels: 8,
            epochs: 6,
            batch_size: 8,
            learning_rate: 3e-3,
            train_ratio: 0.8,
            threshold: 0.5,
            weights: SegLossWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastStageConfig {
    pub families: Vec<ForecastFamily>,
    pub history_len: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub depth: usize,
    pub patch_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_ratio: f64,
    pub weights: ForecastLossWeights,
    pub ssim: SsimParams,
}

impl Default for ForecastStageConfig {
    fn default() -> Self {
        ForecastStageConfig {
            families: ForecastFamily::ALL.to_vec(),
            history_len: 7,
            hidden: 16,
            kernel: 3,
            depth: 2,
            patch_size: 32,
            epochs: 5,
            batch_size: 8,
            learning_rate: 3e-3,
            train_ratio: 0.8,
            weights: ForecastLossWeights::default(),
            ssim: SsimParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HydroStageConfig {
    /// Seasonal period (timesteps) for the trend decomposition.
    pub seasonal_period: usize,
    pub date_tolerance_days: i64,
    /// Optional external table `date,gt_area_m2,measured_area_m2[,...]`
    /// validated alongside the synthetic scenes.
    pub reference_table: Option<PathBuf>,
}

impl Default for HydroStageConfig {
    fn default() -> Self {
        HydroStageConfig {
            seasonal_period: 6,
            date_tolerance_days: crate::hydro::DEFAULT_DATE_TOLERANCE_DAYS,
            reference_table: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config and resolves its relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let mut config = RunConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        self.scenes_dir = resolve(&self.scenes_dir);
        self.output_dir = resolve(&self.output_dir);
        if let Some(p) = &self.hydro.reference_table {
            self.hydro.reference_table = Some(resolve(p));
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let unit = |v: f64| v > 0.0 && v < 1.0;
        let s = &self.synth;
        if s.r0_range[0] > s.r0_range[1] || !(s.r0_range[0] > 0.0) {
            return bad("synth.r0_range must be an increasing pair of positive radii");
        }
        if !(0.0..=1.0).contains(&s.cloud_prob) {
            return bad("synth.cloud_prob must lie in [0, 1]");
        }
        let d = &self.despeckle;
        if d.epochs == 0 || d.batch_size == 0 || d.pairs < 2 || !unit(d.holdout_fraction) {
            return bad("despeckle: epochs, batch_size > 0, pairs >= 2, holdout_fraction in (0, 1)");
        }
        let g = &self.segment;
        if g.combos.is_empty() || g.batch_size == 0 || g.stride == 0 || !unit(g.train_ratio) {
            return bad("segment: combos non-empty, batch_size and stride > 0, train_ratio in (0, 1)");
        }
        if !(g.threshold > 0.0 && g.threshold < 1.0) {
            return bad("segment.threshold must lie in (0, 1)");
        }
        let f = &self.forecast;
        if f.families.is_empty() || f.batch_size == 0 || f.history_len == 0 || !unit(f.train_ratio) {
            return bad("forecast: families non-empty, batch_size and history_len > 0, train_ratio in (0, 1)");
        }
        if self.hydro.seasonal_period < 2 || self.hydro.date_tolerance_days < 0 {
            return bad("hydro: seasonal_period >= 2, date_tolerance_days >= 0");
        }
        Ok(())
    }
}

/// Stage-specific seed derived from the top-level seed and a stage name.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    // splitmix64 finalizer
    let mut z = (seed ^ h).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig {
            seed: 9,
            ..Default::default()
        };
        c.segment.combos = vec![BandCombo::S1, BandCombo::Full];
        c.hydro.reference_table = Some("gt.csv".into());
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn partial_sections_and_errors() {
        let c = RunConfig::from_toml("seed = 3\n[segment]\nepochs = 2\ncombos = [\"S1\", \"Full\"]\n").unwrap();
        assert_eq!((c.seed, c.segment.epochs, c.segment.depth), (3, 2, 3));
        assert!(matches!(RunConfig::from_toml("sed = 3"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[segment]\ncombos = []"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[forecast]\nfamilies = [\"GRU\"]"), Err(Error::Config(_))));
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut c = RunConfig {
            output_dir: "/abs/out".into(),
            ..Default::default()
        };
        c.resolve_paths(Path::new("/cfg"));
        assert_eq!(c.scenes_dir, PathBuf::from("/cfg/scenes"));
        assert_eq!(c.output_dir, PathBuf::from("/abs/out"));
    }

    #[test]
    fn sub_seeds_are_stable_and_distinct() {
        assert_eq!(sub_seed(1, "segment"), sub_seed(1, "segment"));
        assert_ne!(sub_seed(1, "segment"), sub_seed(1, "forecast"));
        assert_ne!(sub_seed(1, "segment"), sub_seed(2, "segment"));
    }
}
