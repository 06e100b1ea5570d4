//! Surface area and volume from water masks and a depth raster, dated
//! series, additive trend decomposition and ground-truth comparison.
//!
//! The DEM holds water-column depth at full basin extent, so the volume at a
//! partial extent is the depth summed over the currently wet pixels times
//! the pixel area.

use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::raster::{check_same_dim, WaterMask};

pub const DEFAULT_PIXEL_AREA_M2: f64 = 100.0;
pub const DEFAULT_DATE_TOLERANCE_DAYS: i64 = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct DemRaster {
    heights: Array2<f64>,
    pixel_area_m2: f64,
}

impl DemRaster {
    pub fn new(heights: Array2<f64>, pixel_area_m2: f64) -> Result<Self> {
        if !(pixel_area_m2 > 0.0) || !pixel_area_m2.is_finite() {
            return Err(Error::InvalidArgument(format!("pixel area {pixel_area_m2}")));
        }
        if heights.iter().any(|h| !(*h >= 0.0) || !h.is_finite()) {
            return Err(Error::InvalidArgument("DEM heights must be finite and non-negative".into()));
        }
        Ok(DemRaster { heights, pixel_area_m2 })
    }

    pub fn heights(&self) -> &Array2<f64> {
        &self.heights
    }

    pub fn pixel_area_m2(&self) -> f64 {
        self.pixel_area_m2
    }

    pub fn dim(&self) -> (usize, usize) {
        self.heights.dim()
    }
}

pub fn surface_area(mask: &WaterMask, pixel_area_m2: f64) -> Result<f64> {
    if !(pixel_area_m2 > 0.0) {
        return Err(Error::InvalidArgument(format!("pixel area {pixel_area_m2}")));
    }
    Ok(mask.water_pixels() as f64 * pixel_area_m2)
}

/// `sum_ij h_ij * w_ij * A`, accumulated in row-major order.
pub fn water_volume(mask: &WaterMask, dem: &DemRaster) -> Result<f64> {
    check_same_dim(mask.view(), dem.heights.view())?;
    let a = dem.pixel_area_m2;
    Ok(mask
        .view()
        .iter()
        .zip(dem.heights.iter())
        .filter(|(w, _)| **w == 1)
        .fold(0.0, |acc, (_, h)| acc + h * a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydroRecord {
    pub date: NaiveDate,
    pub area_m2: f64,
    pub volume_m3: f64,
    pub pixels: usize,
}

/// Dated records with strictly increasing dates. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct HydroSeries {
    records: Vec<HydroRecord>,
}

impl HydroSeries {
    pub fn from_records(records: Vec<HydroRecord>) -> Result<Self> {
        if let Some(w) = records.windows(2).find(|w| w[1].date <= w[0].date) {
            return Err(Error::Series(format!(
                "dates must be strictly increasing: {} then {}",
                w[0].date, w[1].date
            )));
        }
        if records.iter().any(|r| !(r.volume_m3 >= 0.0) || !(r.area_m2 >= 0.0)) {
            return Err(Error::Series("negative area or volume".into()));
        }
        Ok(HydroSeries { records })
    }

    pub fn records(&self) -> &[HydroRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn volumes(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.volume_m3).collect()
    }

    pub fn areas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.area_m2).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("date,area_m2,volume_m3,pixels\n");
        for r in &self.records {
            out.push_str(&format!("{},{:.3},{:.3},{}\n", r.date, r.area_m2, r.volume_m3, r.pixels));
        }
        fs::write(path, out).at(path)
    }
}

pub fn build_series(masks: &[(NaiveDate, WaterMask)], dem: &DemRaster) -> Result<HydroSeries> {
    let records = masks
        .iter()
        .map(|(date, mask)| {
            Ok(HydroRecord {
                date: *date,
                area_m2: surface_area(mask, dem.pixel_area_m2)?,
                volume_m3: water_volume(mask, dem)?,
                pixels: mask.water_pixels(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    HydroSeries::from_records(records)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendDecomposition {
    /// Least-squares slope of the moving-average trend, per timestep.
    pub slope: f64,
    /// Centred moving average; `None` where the window runs off the ends.
    pub trend: Vec<Option<f64>>,
    /// Zero-mean seasonal component, one value per timestep.
    pub seasonal: Vec<f64>,
    /// `y - trend - seasonal` where the trend is defined.
    pub residual: Vec<Option<f64>>,
}

/// Centred moving average with window `period` (a 2 x period average for
/// even periods so the window stays centred).
fn centered_moving_average(y: &[f64], period: usize) -> Vec<Option<f64>> {
    let n = y.len();
    let half = period / 2;
    let weights: Vec<f64> = if period % 2 == 1 {
        vec![1.0 / period as f64; period]
    } else {
        let mut w = vec![1.0 / period as f64; period + 1];
        w[0] /= 2.0;
        w[period] /= 2.0;
        w
    };
    (0..n)
        .map(|i| {
            if i < half || i + half >= n {
                return None;
            }
            Some(weights.iter().enumerate().map(|(k, w)| w * y[i - half + k]).sum())
        })
        .collect()
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Classical additive decomposition of `values` with the given seasonal
/// period. Works on deviations from the first value, so constant input
/// decomposes to exact zeros.
pub fn trend(values: &[f64], seasonal_period: usize) -> Result<TrendDecomposition> {
    if seasonal_period < 2 {
        return Err(Error::InvalidArgument(format!("seasonal period {seasonal_period} < 2")));
    }
    if values.len() < 2 * seasonal_period {
        return Err(Error::Series(format!(
            "series of length {} shorter than two seasonal periods ({})",
            values.len(),
            2 * seasonal_period
        )));
    }
    let base = values[0];
    let y: Vec<f64> = values.iter().map(|v| v - base).collect();
    let ma = centered_moving_average(&y, seasonal_period);
    let points: Vec<(f64, f64)> = ma.iter().enumerate().filter_map(|(i, m)| m.map(|m| (i as f64, m))).collect();
    let slope = least_squares_slope(&points);

    let mut sums = vec![0.0; seasonal_period];
    let mut counts = vec![0usize; seasonal_period];
    for (i, m) in ma.iter().enumerate() {
        if let Some(m) = m {
            sums[i % seasonal_period] += y[i] - m;
            counts[i % seasonal_period] += 1;
        }
    }
    let phase: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    let centre = phase.iter().sum::<f64>() / seasonal_period as f64;
    let phase: Vec<f64> = phase.iter().map(|p| p - centre).collect();
    let seasonal: Vec<f64> = (0..y.len()).map(|i| phase[i % seasonal_period]).collect();
    let residual = ma
        .iter()
        .enumerate()
        .map(|(i, m)| m.map(|m| y[i] - m - seasonal[i]))
        .collect();
    Ok(TrendDecomposition {
        slope,
        trend: ma.into_iter().map(|m| m.map(|m| m + base)).collect(),
        seasonal,
        residual,
    })
}

/// Sample autocorrelation at lags `1..=max_lag`.
pub fn autocorrelation(values: &[f64], max_lag: usize) -> Vec<f64> {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let denom: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (1..=max_lag.min(n.saturating_sub(1)))
        .map(|lag| {
            if denom == 0.0 {
                return 0.0;
            }
            (0..n - lag).map(|i| (values[i] - mean) * (values[i + lag] - mean)).sum::<f64>() / denom
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub date: NaiveDate,
    pub area_m2: f64,
    /// Difference as printed alongside the source table, when present.
    pub printed_difference_m2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub date: NaiveDate,
    pub ground_truth_m2: f64,
    pub measured_m2: f64,
    /// `ground_truth - measured`.
    pub difference_m2: f64,
}

/// Pairs every ground-truth row with the nearest-dated record within
/// `tolerance_days` (earlier record wins ties).
pub fn validate_against_ground(
    series: &HydroSeries,
    ground: &[GroundTruthRow],
    tolerance_days: i64,
) -> Result<Vec<ValidationRow>> {
    ground
        .iter()
        .map(|g| {
            let best = series
                .records
                .iter()
                .map(|r| ((r.date - g.date).num_days().abs(), r))
                .filter(|(d, _)| *d <= tolerance_days)
                .min_by_key(|(d, _)| *d)
                .ok_or(Error::UnmatchedDate(g.date))?
                .1;
            Ok(ValidationRow {
                date: g.date,
                ground_truth_m2: g.area_m2,
                measured_m2: best.area_m2,
                difference_m2: g.area_m2 - best.area_m2,
            })
        })
        .collect()
}

#[derive(Deserialize)]
struct GroundCsvRow {
    date: NaiveDate,
    gt_area_m2: f64,
    measured_area_m2: Option<f64>,
    printed_difference_m2: Option<f64>,
}

/// Reads `date,gt_area_m2[,measured_area_m2][,printed_difference_m2]`.
/// Returns the ground-truth rows and, when every row carries a measured
/// area, the measured series (pixel area 1 m^2, volume unknown so 0).
pub fn read_ground_truth(path: &Path) -> Result<(Vec<GroundTruthRow>, Option<HydroSeries>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::PathIo {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Config(format!("{}: {other:?}", path.display())),
    })?;
    let mut rows = Vec::new();
    let mut measured = Vec::new();
    for row in reader.deserialize::<GroundCsvRow>() {
        let row = row?;
        rows.push(GroundTruthRow {
            date: row.date,
            area_m2: row.gt_area_m2,
            printed_difference_m2: row.printed_difference_m2,
        });
        measured.push(row.measured_area_m2.map(|a| HydroRecord {
            date: row.date,
            area_m2: a,
            volume_m3: 0.0,
            pixels: a.round() as usize,
        }));
    }
    let series = if !measured.is_empty() && measured.iter().all(Option::is_some) {
        Some(HydroSeries::from_records(measured.into_iter().flatten().collect())?)
    } else {
        None
    };
    Ok((rows, series))
}

fn format_quantity(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

pub fn validation_csv(rows: &[ValidationRow]) -> String {
    let mut out = String::from("date,gt_area_m2,measured_area_m2,difference_m2\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.date,
            format_quantity(r.ground_truth_m2),
            format_quantity(r.measured_m2),
            format_quantity(r.difference_m2)
        ));
    }
    out
}

pub fn write_validation_csv(rows: &[ValidationRow], path: &Path) -> Result<()> {
    let mut file = fs::File::create(path).at(path)?;
    file.write_all(validation_csv(rows).as_bytes()).at(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn mask(v: Array2<u8>) -> WaterMask {
        WaterMask::new(v).unwrap()
    }

    #[test]
    fn hand_cases_are_exact() {
        let m = mask(array![[1, 0, 1], [0, 1, 0]]);
        assert_eq!(surface_area(&m, 100.0).unwrap(), 300.0);
        assert_eq!(surface_area(&WaterMask::zeros((3, 3)), 100.0).unwrap(), 0.0);
        let dem = DemRaster::new(Array2::from_elem((2, 3), 2.0), 100.0).unwrap();
        assert_eq!(water_volume(&m, &dem).unwrap(), 600.0);
        assert_eq!(water_volume(&WaterMask::zeros((2, 3)), &dem).unwrap(), 0.0);
        assert!(water_volume(&WaterMask::zeros((3, 3)), &dem).is_err());
        assert!(surface_area(&m, 0.0).is_err());
        assert!(DemRaster::new(array![[-1.0]], 100.0).is_err());
    }

    #[test]
    fn series_rejects_duplicate_dates() {
        let dem = DemRaster::new(Array2::ones((2, 2)), 100.0).unwrap();
        let m = WaterMask::zeros((2, 2));
        let masks = vec![(d(2020, 1, 1), m.clone()), (d(2020, 1, 1), m)];
        assert!(matches!(build_series(&masks, &dem), Err(Error::Series(_))));
    }

    #[test]
    fn constant_masks_constant_series() {
        let dem = DemRaster::new(Array2::from_elem((4, 4), 3.0), 100.0).unwrap();
        let m = mask(Array2::from_shape_fn((4, 4), |(i, j)| ((i + j) % 2) as u8));
        let masks: Vec<_> = (0..5).map(|k| (d(2020, 1, 1) + chrono::Days::new(61 * k), m.clone())).collect();
        let s = build_series(&masks, &dem).unwrap();
        assert!(s.records().windows(2).all(|w| w[0].volume_m3 == w[1].volume_m3 && w[0].area_m2 == w[1].area_m2));
    }

    #[test]
    fn linear_slope_recovered() {
        for period in [3, 4, 6] {
            let y: Vec<f64> = (0..24).map(|t| 5.0 + 2.5 * t as f64).collect();
            let dec = trend(&y, period).unwrap();
            assert!((dec.slope - 2.5).abs() / 2.5 < 1e-9, "{}", dec.slope);
            assert!(dec.seasonal.iter().all(|s| s.abs() < 1e-9));
        }
    }

    #[test]
    fn sinusoid_has_no_slope() {
        let (amp, period) = (7.0, 6usize);
        let y: Vec<f64> = (0..36)
            .map(|t| amp * (2.0 * std::f64::consts::PI * t as f64 / period as f64).sin())
            .collect();
        let dec = trend(&y, period).unwrap();
        assert!(dec.slope.abs() < 0.01 * amp / period as f64, "{}", dec.slope);
        for (t, s) in dec.seasonal.iter().enumerate() {
            assert!((s - y[t]).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_series_decomposes_to_zero() {
        let y = vec![123.456; 14];
        let dec = trend(&y, 6).unwrap();
        assert_eq!(dec.slope, 0.0);
        assert!(dec.seasonal.iter().all(|&s| s == 0.0));
        assert!(dec.residual.iter().flatten().all(|&r| r == 0.0));
        assert!(trend(&y[..11], 6).is_err());
    }

    #[test]
    fn validation_sign_and_matching() {
        let rec = |date, area: f64| HydroRecord {
            date,
            area_m2: area,
            volume_m3: 0.0,
            pixels: area as usize,
        };
        let s = HydroSeries::from_records(vec![rec(d(2016, 4, 10), 445214.0), rec(d(2016, 6, 1), 1.0)]).unwrap();
        let gt = [GroundTruthRow {
            date: d(2016, 4, 13),
            area_m2: 512700.0,
            printed_difference_m2: None,
        }];
        let rows = validate_against_ground(&s, &gt, 7).unwrap();
        assert_eq!(rows[0].difference_m2, 67486.0);
        let same = [GroundTruthRow { area_m2: 445214.0, ..gt[0].clone() }];
        assert_eq!(validate_against_ground(&s, &same, 7).unwrap()[0].difference_m2, 0.0);
        let far = [GroundTruthRow { date: d(2016, 5, 1), ..gt[0].clone() }];
        assert!(matches!(validate_against_ground(&s, &far, 7), Err(Error::UnmatchedDate(_))));
    }

    proptest! {
        #[test]
        fn monotone_additive_and_scaling(
            a in proptest::collection::vec(0u8..2, 36),
            b in proptest::collection::vec(0u8..2, 36),
            h in proptest::collection::vec(0u32..64, 36),
        ) {
            // Depths are multiples of 1/8 so every partial sum is exact.
            let heights = Array2::from_shape_vec((6, 6), h.iter().map(|&v| v as f64 / 8.0).collect()).unwrap();
            let dem = DemRaster::new(heights.clone(), 100.0).unwrap();
            let ma = mask(Array2::from_shape_vec((6, 6), a.clone()).unwrap());
            let mb = mask(Array2::from_shape_vec((6, 6), b.clone()).unwrap());
            let union = mask(Array2::from_shape_fn((6, 6), |(i, j)| a[i * 6 + j] | b[i * 6 + j]));
            let inter = mask(Array2::from_shape_fn((6, 6), |(i, j)| a[i * 6 + j] & b[i * 6 + j]));
            let v = |m: &WaterMask| water_volume(m, &dem).unwrap();
            prop_assert_eq!(v(&union) + v(&inter), v(&ma) + v(&mb));
            prop_assert!(v(&inter) <= v(&ma) && v(&ma) <= v(&union));
            prop_assert!(surface_area(&inter, 100.0).unwrap() <= surface_area(&union, 100.0).unwrap());
            let doubled = DemRaster::new(heights * 2.0, 100.0).unwrap();
            prop_assert_eq!(water_volume(&ma, &doubled).unwrap(), 2.0 * v(&ma));
        }
    }
}
