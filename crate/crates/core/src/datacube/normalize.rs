use ndarray::s;
use serde::{Deserialize, Serialize};

use super::{Band, DataCube};
use crate::error::{Error, Result};

/// How one band is mapped onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Scheme {
    FixedRange { min: f64, max: f64 },
    /// Linear intensity converted to dB, then mapped from `[min_db, max_db]`.
    DecibelRange { min_db: f64, max_db: f64 },
    /// Bounds taken from the cube's own band percentiles.
    Percentile { low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandNormalization {
    pub band: Band,
    #[serde(flatten)]
    pub scheme: Scheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub bands: Vec<BandNormalization>,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        let scheme = |band: Band| match band {
            Band::Vv | Band::Vh => Scheme::DecibelRange {
                min_db: -30.0,
                max_db: 0.0,
            },
            Band::Red | Band::Green | Band::Blue | Band::Nir => Scheme::FixedRange {
                min: 0.0,
                max: 10000.0,
            },
            Band::Slope => Scheme::FixedRange { min: 0.0, max: 90.0 },
            Band::Elevation => Scheme::Percentile {
                low: 2.0,
                high: 98.0,
            },
        };
        NormalizationSpec {
            bands: Band::ALL
                .into_iter()
                .map(|band| BandNormalization {
                    band,
                    scheme: scheme(band),
                })
                .collect(),
        }
    }
}

impl NormalizationSpec {
    pub fn scheme_for(&self, band: Band) -> Option<Scheme> {
        self.bands.iter().find(|b| b.band == band).map(|b| b.scheme)
    }
}

/// Resolved per-band bounds, stored in the manifest so the mapping can be
/// reversed: `raw = lo + v * (hi - lo)` (in dB for decibel schemes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub bands: Vec<ResolvedBand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedBand {
    pub band: Band,
    #[serde(flatten)]
    pub scheme: Scheme,
    pub lo: f64,
    pub hi: f64,
}

/// Percentile with linear interpolation between closest ranks.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn to_db(v: f64) -> f64 {
    10.0 * v.max(1e-10).log10()
}

pub fn normalize(cube: &DataCube, spec: &NormalizationSpec) -> Result<DataCube> {
    let mut values = cube.values().clone();
    let mut resolved = Vec::with_capacity(cube.manifest.bands.len());
    for (b, &band) in cube.manifest.bands.iter().enumerate() {
        let scheme = spec
            .scheme_for(band)
            .ok_or_else(|| Error::Normalization(format!("no scheme for band {band}")))?;
        let mut lane = values.slice_mut(s![.., .., .., b]);
        let (lo, hi, db) = match scheme {
            Scheme::FixedRange { min, max } => {
                if max <= min {
                    return Err(Error::Normalization(format!(
                        "band {band}: max {max} <= min {min}"
                    )));
                }
                (min, max, false)
            }
            Scheme::DecibelRange { min_db, max_db } => {
                if max_db <= min_db {
                    return Err(Error::Normalization(format!(
                        "band {band}: max {max_db} dB <= min {min_db} dB"
                    )));
                }
                (min_db, max_db, true)
            }
            Scheme::Percentile { low, high } => {
                if !(0.0..=100.0).contains(&low) || !(0.0..=100.0).contains(&high) || high <= low {
                    return Err(Error::Normalization(format!(
                        "band {band}: percentiles ({low}, {high})"
                    )));
                }
                let mut sorted: Vec<f64> = lane.iter().map(|&v| v as f64).collect();
                sorted.sort_by(f64::total_cmp);
                (percentile(&sorted, low), percentile(&sorted, high), false)
            }
        };
        let span = hi - lo;
        lane.mapv_inplace(|v| {
            let x = if db { to_db(v as f64) } else { v as f64 };
            if span > 0.0 {
                ((x - lo) / span).clamp(0.0, 1.0) as f32
            } else {
                0.0
            }
        });
        resolved.push(ResolvedBand {
            band,
            scheme,
            lo,
            hi,
        });
    }
    let mut manifest = cube.manifest.clone();
    manifest.normalization = Some(NormalizationRecord { bands: resolved });
    DataCube::new(manifest, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datacube::{bimonthly_dates, CubeManifest};
    use chrono::NaiveDate;
    use ndarray::Array4;

    fn cube_with(f: impl Fn(usize, usize, usize, usize) -> f32, t: usize, h: usize, w: usize) -> DataCube {
        let dates = bimonthly_dates(NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(), t);
        let m = CubeManifest::new(0.0, 0.0, dates, h, w, 10.0);
        DataCube::new(m, Array4::from_shape_fn((t, h, w, 8), |(a, b, c, d)| f(a, b, c, d))).unwrap()
    }

    fn all_fixed(min: f64, max: f64) -> NormalizationSpec {
        NormalizationSpec {
            bands: Band::ALL
                .into_iter()
                .map(|band| BandNormalization {
                    band,
                    scheme: Scheme::FixedRange { min, max },
                })
                .collect(),
        }
    }

    #[test]
    fn constant_at_lower_bound_maps_to_zero() {
        let c = cube_with(|_, _, _, _| 7.5, 2, 4, 4);
        let n = normalize(&c, &all_fixed(7.5, 8.5)).unwrap();
        assert!(n.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_range_is_identity() {
        let c = cube_with(|t, i, j, b| ((t * 7 + i * 3 + j + b) % 11) as f32 / 10.0, 2, 5, 5);
        let n = normalize(&c, &all_fixed(0.0, 1.0)).unwrap();
        assert_eq!(n.values(), c.values());
        assert!(n.manifest.normalization.is_some());
    }

    #[test]
    fn inverted_range_rejected() {
        let c = cube_with(|_, _, _, _| 0.0, 1, 2, 2);
        assert!(matches!(normalize(&c, &all_fixed(1.0, 1.0)), Err(Error::Normalization(_))));
    }

    #[test]
    fn percentile_ramp_matches_hand_values() {
        // 101 pixels holding 0..=100: p2 = 2, p98 = 98.
        let c = cube_with(|_, _, j, _| j as f32, 1, 1, 101);
        let mut spec = all_fixed(0.0, 100.0);
        for b in &mut spec.bands {
            b.scheme = Scheme::Percentile { low: 2.0, high: 98.0 };
        }
        let n = normalize(&c, &spec).unwrap();
        let v = |j: usize| n.values()[[0, 0, j, 0]];
        assert_eq!(v(2), 0.0);
        assert_eq!(v(98), 1.0);
        assert_eq!(v(50), 0.5); // (50 - 2) / 96
        assert_eq!(v(26), 0.25); // (26 - 2) / 96
        assert_eq!(v(0), 0.0);
        assert_eq!(v(100), 1.0);
    }

    #[test]
    fn default_spec_yields_unit_interval_and_keeps_static_bands_static() {
        let c = cube_with(
            |t, i, j, b| match Band::ALL[b] {
                Band::Vv | Band::Vh => 0.001 + 0.05 * ((t + i + j) % 5) as f32,
                Band::Slope => (i * 3 + j) as f32,
                Band::Elevation => 200.0 + (i * 5 + j) as f32,
                _ => 1000.0 * ((t + i * j) % 9) as f32,
            },
            3,
            6,
            6,
        );
        let n = normalize(&c, &NormalizationSpec::default()).unwrap();
        assert!(n.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(n.static_bands_time_invariant());
    }
}
