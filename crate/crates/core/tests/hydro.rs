use chrono::NaiveDate;
use ndarray::Array2;
use proptest::prelude::*;

use hydrocube::datacube::bimonthly_dates;
use hydrocube::hydro::{self, DemRaster};
use hydrocube::WaterMask;

/// Conical basin: depth falls off linearly from `depth` at the centre.
fn cone(side: usize, depth: f64, radius: f64) -> Array2<f64> {
    let c = side as f64 / 2.0;
    Array2::from_shape_fn((side, side), |(i, j)| {
        let r = ((i as f64 + 0.5 - c).powi(2) + (j as f64 + 0.5 - c).powi(2)).sqrt();
        (depth * (1.0 - r / radius)).max(0.0)
    })
}

fn disk(side: usize, radius: f64) -> WaterMask {
    let c = side as f64 / 2.0;
    WaterMask::from_fn((side, side), |i, j| {
        (i as f64 + 0.5 - c).powi(2) + (j as f64 + 0.5 - c).powi(2) < radius * radius
    })
}

#[test]
fn shrinking_basin_has_negative_volume_trend() {
    let side = 64;
    let dem = DemRaster::new(cone(side, 12.0, 30.0), 100.0).unwrap();
    let dates = bimonthly_dates(NaiveDate::from_ymd_opt(2017, 3, 1).unwrap(), 30);
    let masks: Vec<_> = dates
        .iter()
        .enumerate()
        .map(|(t, &d)| {
            let seasonal = 2.0 * (2.0 * std::f64::consts::PI * t as f64 / 6.0).sin();
            (d, disk(side, 24.0 - 0.3 * t as f64 + seasonal))
        })
        .collect();
    let series = hydro::build_series(&masks, &dem).unwrap();
    assert_eq!(series.len(), 30);
    let trend = hydro::trend(&series.volumes(), 6).unwrap();
    assert!(trend.slope < 0.0, "slope {}", trend.slope);
    let areas = series.areas();
    assert!(areas[0] > areas[29]);
    for (r, (_, m)) in series.records().iter().zip(&masks) {
        assert_eq!(r.pixels, m.water_pixels());
        assert_eq!(r.area_m2, 100.0 * m.water_pixels() as f64);
    }
}

#[test]
fn series_rejects_unordered_dates() {
    let dem = DemRaster::new(Array2::from_elem((4, 4), 1.0), 1.0).unwrap();
    let d = |m| NaiveDate::from_ymd_opt(2020, m, 1).unwrap();
    let masks = vec![(d(3), WaterMask::zeros((4, 4))), (d(1), WaterMask::zeros((4, 4)))];
    assert!(hydro::build_series(&masks, &dem).is_err());
    let wrong = vec![(d(1), WaterMask::zeros((3, 4)))];
    assert!(hydro::build_series(&wrong, &dem).is_err());
}

#[test]
fn series_csv_has_one_row_per_date() {
    let dir = tempfile::tempdir().unwrap();
    let dem = DemRaster::new(Array2::from_elem((8, 8), 2.5), 4.0).unwrap();
    let dates = bimonthly_dates(NaiveDate::from_ymd_opt(2019, 1, 1).unwrap(), 5);
    let masks: Vec<_> = dates.iter().enumerate().map(|(t, &d)| (d, disk(8, 1.0 + t as f64 * 0.6))).collect();
    let series = hydro::build_series(&masks, &dem).unwrap();
    let path = dir.path().join("s.csv");
    series.write_csv(&path).unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert!(headers.iter().any(|h| h == "date") && headers.iter().any(|h| h == "volume_m3"));
    assert_eq!(reader.records().count(), 5);
}

proptest! {
    #[test]
    fn volume_is_additive_over_disjoint_masks(
        heights in proptest::collection::vec(0.0f64..20.0, 36),
        bits in proptest::collection::vec(0u8..3, 36),
        area in 0.5f64..400.0,
    ) {
        let dem = DemRaster::new(Array2::from_shape_vec((6, 6), heights.clone()).unwrap(), area).unwrap();
        let pick = |k: u8| WaterMask::new(Array2::from_shape_vec((6, 6), bits.iter().map(|&b| (b == k) as u8).collect()).unwrap()).unwrap();
        let (a, b) = (pick(1), pick(2));
        let union = WaterMask::new(Array2::from_shape_vec((6, 6), bits.iter().map(|&b| (b > 0) as u8).collect()).unwrap()).unwrap();
        let va = hydro::water_volume(&a, &dem).unwrap();
        let vb = hydro::water_volume(&b, &dem).unwrap();
        let vu = hydro::water_volume(&union, &dem).unwrap();
        prop_assert!((va + vb - vu).abs() <= 1e-9 * vu.max(1.0));
        let brute: f64 = heights.iter().zip(&bits).filter(|(_, &b)| b > 0).map(|(h, _)| h * area).sum();
        prop_assert!((vu - brute).abs() <= 1e-9 * brute.max(1.0));
    }
}
