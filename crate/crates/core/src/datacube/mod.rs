//! Spatiotemporal datacubes: one geolocation's stack of co-registered
//! SAR, optical and terrain layers over time, plus its on-disk container.

mod band;
mod container;
mod normalize;
mod patch;
mod radiometry;
mod split;

use chrono::NaiveDate;
use ndarray::{s, Array2, Array4, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use band::{validate_band_table, Band};
pub use container::{load_cube, save_cube, RASTER_DTYPE};
pub use normalize::{normalize, percentile, BandNormalization, NormalizationRecord, NormalizationSpec, Scheme};
pub use patch::{extract_patch_series, extract_tiles, tile_origins, PatchSeries, MIN_PATCH_SIZE};
pub use radiometry::{downsample_stride, harmonize_dn, resample_band, ProcessingBaseline, Resampling};
pub use split::{temporal_split, Located};

/// Default frame side in pixels (3 km at 10 m).
pub const DEFAULT_FRAME_SIZE: usize = 300;
/// Default patch side in pixels.
pub const DEFAULT_PATCH_SIZE: usize = 64;
pub const DEFAULT_PIXEL_SIZE_M: f64 = 10.0;
/// Nominal acquisition cadence.
pub const NOMINAL_CADENCE_DAYS: i64 = 61;
pub const DEFAULT_CADENCE_TOLERANCE_DAYS: i64 = 15;

/// Metadata describing a cube: where, when, and how its payload is laid out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeManifest {
    pub lat: f64,
    pub lon: f64,
    pub timestamps: Vec<NaiveDate>,
    pub pixel_size_m: f64,
    pub width: usize,
    pub height: usize,
    pub bands: Vec<Band>,
    pub dtype: String,
    pub processing_baseline: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footprint_m: Option<[f64; 2]>,
    #[serde(default)]
    pub normalization: Option<NormalizationRecord>,
    /// Indices `i` for which the interval `timestamps[i-1] -> timestamps[i]`
    /// exceeds the nominal cadence. Gaps are recorded, never filled.
    #[serde(default)]
    pub gaps: Vec<usize>,
}

impl CubeManifest {
    /// Builds a manifest in canonical band order with gaps detected at the
    /// default cadence tolerance.
    pub fn new(
        lat: f64,
        lon: f64,
        timestamps: Vec<NaiveDate>,
        height: usize,
        width: usize,
        pixel_size_m: f64,
    ) -> Self {
        let gaps = cadence_gaps(&timestamps, DEFAULT_CADENCE_TOLERANCE_DAYS);
        CubeManifest {
            lat,
            lon,
            timestamps,
            pixel_size_m,
            width,
            height,
            bands: Band::ALL.to_vec(),
            dtype: RASTER_DTYPE.to_string(),
            processing_baseline: "04.00".to_string(),
            footprint_m: Some([width as f64 * pixel_size_m, height as f64 * pixel_size_m]),
            normalization: None,
            gaps,
        }
    }

    pub fn timesteps(&self) -> usize {
        self.timestamps.len()
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.timestamps.len(), self.height, self.width, self.bands.len())
    }

    pub fn band_position(&self, band: Band) -> Option<usize> {
        self.bands.iter().position(|b| *b == band)
    }

    /// Key identifying the geographic location; used to keep splits disjoint.
    pub fn location_key(&self) -> String {
        format!("{:.6},{:.6}", self.lat, self.lon)
    }

    pub fn validate(&self) -> Result<()> {
        if self.timestamps.is_empty() {
            return Err(Error::EmptyTimeAxis);
        }
        for i in 1..self.timestamps.len() {
            if self.timestamps[i] <= self.timestamps[i - 1] {
                return Err(Error::NonMonotonicTimestamps(i));
            }
        }
        validate_band_table(&self.bands)?;
        if self.dtype != RASTER_DTYPE {
            return Err(Error::PayloadMismatch(format!(
                "unsupported dtype `{}`",
                self.dtype
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::PayloadMismatch("zero-sized frame".into()));
        }
        if !(self.pixel_size_m > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "pixel size {} m",
                self.pixel_size_m
            )));
        }
        if let Some([fw, fh]) = self.footprint_m {
            let (w, h) = (
                self.width as f64 * self.pixel_size_m,
                self.height as f64 * self.pixel_size_m,
            );
            if (fw - w).abs() > 1e-6 || (fh - h).abs() > 1e-6 {
                return Err(Error::PayloadMismatch(format!(
                    "footprint {fw}x{fh} m does not match {w}x{h} m"
                )));
            }
        }
        self.processing_baseline.parse::<ProcessingBaseline>()?;
        Ok(())
    }
}

/// Indices whose preceding interval is longer than the nominal cadence plus
/// `tolerance_days`.
pub fn cadence_gaps(timestamps: &[NaiveDate], tolerance_days: i64) -> Vec<usize> {
    (1..timestamps.len())
        .filter(|&i| {
            (timestamps[i] - timestamps[i - 1]).num_days() > NOMINAL_CADENCE_DAYS + tolerance_days
        })
        .collect()
}

/// Dates at a two-month cadence starting at `start`.
pub fn bimonthly_dates(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    (0..count)
        .map(|t| {
            start
                .checked_add_months(chrono::Months::new(2 * t as u32))
                .expect("date overflow")
        })
        .collect()
}

/// A full temporal stack for one location, axes `(time, height, width, band)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCube {
    pub manifest: CubeManifest,
    values: Array4<f32>,
}

impl DataCube {
    pub fn new(manifest: CubeManifest, values: Array4<f32>) -> Result<Self> {
        manifest.validate()?;
        if values.dim() != manifest.shape() {
            return Err(Error::ShapeMismatch(format!(
                "values {:?} vs manifest {:?}",
                values.dim(),
                manifest.shape()
            )));
        }
        Ok(DataCube { manifest, values })
    }

    pub fn values(&self) -> &Array4<f32> {
        &self.values
    }

    pub fn into_values(self) -> Array4<f32> {
        self.values
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        self.values.dim()
    }

    pub fn timesteps(&self) -> usize {
        self.values.dim().0
    }

    pub fn band_position(&self, band: Band) -> Result<usize> {
        self.manifest
            .band_position(band)
            .ok_or_else(|| Error::UnknownBand(band.name().to_string()))
    }

    /// One band of one timestep.
    pub fn frame(&self, t: usize, band: Band) -> Result<ArrayView2<'_, f32>> {
        let b = self.band_position(band)?;
        if t >= self.timesteps() {
            return Err(Error::OutOfBounds(format!("timestep {t}")));
        }
        Ok(self.values.slice(s![t, .., .., b]))
    }

    /// Replaces one band of one timestep. The cube stays owned by the caller;
    /// used by pipeline stages that derive a new cube from an old one.
    pub fn set_frame(&mut self, t: usize, band: Band, frame: &Array2<f32>) -> Result<()> {
        let b = self.band_position(band)?;
        let (_, h, w, _) = self.shape();
        if frame.dim() != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "frame {:?} vs cube {:?}",
                frame.dim(),
                (h, w)
            )));
        }
        self.values.slice_mut(s![t, .., .., b]).assign(frame);
        Ok(())
    }

    /// First non-finite value, if any.
    pub fn find_non_finite(&self) -> Option<(usize, Band)> {
        for ((t, _, _, b), v) in self.values.indexed_iter() {
            if !v.is_finite() {
                return Some((t, self.manifest.bands[b]));
            }
        }
        None
    }

    /// Whether every static band is identical across all timesteps.
    pub fn static_bands_time_invariant(&self) -> bool {
        Band::STATIC.iter().all(|&band| {
            let Ok(b) = self.band_position(band) else {
                return false;
            };
            let first = self.values.slice(s![0, .., .., b]);
            (1..self.timesteps()).all(|t| self.values.slice(s![t, .., .., b]) == first)
        })
    }
}
