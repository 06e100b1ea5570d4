//! Synthetic scenes with analytically known water extent and volume.
//!
//! Each scene holds one circular basin whose radius follows
//! `r(t) = r0 + a * sin(2 pi t / period) + b * t` over a paraboloid bowl
//! that is 0 m deep at the largest shoreline and `depth_m` deep at the
//! centre. Water pixels get low SAR backscatter and a high green/NIR
//! contrast; land gets the opposite. SAR is corrupted by gamma speckle and
//! optical frames may be occluded by bright cloud blobs.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::{s, Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::datacube::{bimonthly_dates, Band, CubeManifest, DataCube};
use crate::error::{Error, IoContext, Result};
use crate::hydro::DemRaster;
use crate::raster::WaterMask;

/// Reflectance written into every optical band under a cloud.
pub const CLOUD_REFLECTANCE: f32 = 0.9;
/// Optical bands are stored as reflectance digital numbers.
pub const REFLECTANCE_SCALE: f32 = 10000.0;
/// Surface elevation of the basin rim in metres.
pub const RIM_ELEVATION_M: f64 = 400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    pub timesteps: usize,
    pub pixel_size_m: f64,
    pub start: NaiveDate,
    pub lat: f64,
    pub lon: f64,
    /// Basin centre `(row, col)` in continuous pixel coordinates.
    pub center: (f64, f64),
    pub r0: f64,
    pub amplitude: f64,
    /// Seasonal period in timesteps.
    pub period: f64,
    /// Linear radius change in pixels per timestep.
    pub trend: f64,
    pub depth_m: f64,
    pub looks: u32,
    pub cloud_prob: f64,
    /// Land blobs with water-like (low) SAR backscatter but land optics.
    pub lookalikes: usize,
    /// Width of the exposed, radar-dark mud ring just outside the
    /// shoreline (only where the bowl was flooded at some timestep).
    pub mudflat_px: f64,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            height: 64,
            width: 64,
            timesteps: 12,
            pixel_size_m: 10.0,
            start: NaiveDate::from_ymd_opt(2016, 7, 1).unwrap(),
            lat: 42.0,
            lon: 12.0,
            center: (32.0, 32.0),
            r0: 18.0,
            amplitude: 3.0,
            period: 6.0,
            trend: -0.2,
            depth_m: 15.0,
            looks: 4,
            cloud_prob: 0.2,
            lookalikes: 2,
            mudflat_px: 3.0,
            seed: 0,
        }
    }
}

impl SceneParams {
    pub fn radius(&self, t: f64) -> f64 {
        self.r0 + self.amplitude * (2.0 * PI * t / self.period).sin() + self.trend * t
    }

    /// Largest radius over the scene's timesteps: the shoreline of the bowl.
    pub fn max_radius(&self) -> f64 {
        (0..self.timesteps)
            .map(|t| self.radius(t as f64))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.timesteps == 0 || self.height == 0 || self.width == 0 {
            return bad("empty scene".into());
        }
        if self.looks < 1 {
            return bad(format!("looks {} < 1", self.looks));
        }
        if !(0.0..=1.0).contains(&self.cloud_prob) {
            return bad(format!("cloud probability {}", self.cloud_prob));
        }
        if !(self.mudflat_px >= 0.0) {
            return bad(format!("mudflat width {}", self.mudflat_px));
        }
        if !(self.period > 0.0) || !(self.pixel_size_m > 0.0) || !(self.depth_m >= 0.0) {
            return bad("period, pixel size and depth must be positive".into());
        }
        let t_max = (self.timesteps - 1) as f64;
        let r_min = self.r0 - self.amplitude.abs() - (-self.trend).max(0.0) * t_max;
        if r_min <= 2.0 {
            return bad(format!("water may vanish: minimum radius bound {r_min:.2} <= 2"));
        }
        let r_max = self.r0 + self.amplitude.abs() + self.trend.max(0.0) * t_max;
        let (cr, cc) = self.center;
        if cr - r_max < 0.0 || cc - r_max < 0.0 || cr + r_max > self.height as f64 || cc + r_max > self.width as f64 {
            return bad(format!("basin of radius up to {r_max:.2} leaves the frame"));
        }
        Ok(())
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        let (cr, cc) = self.center;
        ((i as f64 + 0.5 - cr).powi(2) + (j as f64 + 0.5 - cc).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub cube: DataCube,
    /// `(t, h, w)`, 1 = water.
    pub truth_masks: Array3<u8>,
    pub dem: DemRaster,
    /// Speckle-free backscatter `(t, h, w, 2)` for VV and VH.
    pub clean_sar: Array4<f32>,
    pub params: SceneParams,
    /// Optical frames occluded by cloud.
    pub cloudy: Vec<bool>,
}

impl SyntheticScene {
    pub fn truth_mask(&self, t: usize) -> WaterMask {
        WaterMask::new(self.truth_masks.slice(s![t, .., ..]).to_owned()).expect("binary by construction")
    }
}

/// Smooth deterministic texture in roughly `[-1, 1]`.
fn texture(i: usize, j: usize, phase: f64) -> f64 {
    let (x, y) = (i as f64, j as f64);
    0.5 * (0.21 * x + phase).sin() * (0.17 * y - phase).cos() + 0.5 * (0.09 * (x + y) + 2.0 * phase).sin()
}

/// Multiplies `clean` by unit-mean gamma noise with shape `looks`.
pub fn speckle_pair(clean: &Array2<f32>, looks: u32, seed: u64) -> Result<(Array2<f32>, Array2<f32>)> {
    if looks < 1 {
        return Err(Error::InvalidParams(format!("looks {looks} < 1")));
    }
    if clean.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidArgument("clean backscatter must be non-negative".into()));
    }
    let gamma = Gamma::new(looks as f64, 1.0 / looks as f64).expect("valid gamma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy = clean.mapv(|v| (v as f64 * gamma.sample(&mut rng)) as f32);
    Ok((noisy, clean.clone()))
}

/// Closed-form `(area m^2, volume m^3)` of the basin at timestep `t`.
pub fn analytic_truth(params: &SceneParams, t: usize) -> Result<(f64, f64)> {
    if t >= params.timesteps {
        return Err(Error::OutOfBounds(format!("timestep {t} of {}", params.timesteps)));
    }
    let px = params.pixel_size_m;
    let r = params.radius(t as f64).max(0.0) * px;
    let r_max = params.max_radius() * px;
    let area = PI * r * r;
    let volume = paraboloid_volume(params.depth_m, r, r_max);
    Ok((area, volume))
}

/// Volume of water filling a paraboloid bowl `d (1 - rho^2 / R_max^2)` out
/// to radius `r <= R_max`: `pi d (r^2 - r^4 / (2 R_max^2))`.
pub fn paraboloid_volume(depth: f64, r: f64, r_max: f64) -> f64 {
    if r <= 0.0 || r_max <= 0.0 {
        return 0.0;
    }
    let r = r.min(r_max);
    PI * depth * (r * r - r.powi(4) / (2.0 * r_max * r_max))
}

fn slope_degrees(elevation: &Array2<f64>, pixel: f64) -> Array2<f64> {
    let (h, w) = elevation.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let (i0, i1) = (i.saturating_sub(1), (i + 1).min(h - 1));
        let (j0, j1) = (j.saturating_sub(1), (j + 1).min(w - 1));
        let dz_dy = if i1 > i0 { (elevation[[i1, j]] - elevation[[i0, j]]) / ((i1 - i0) as f64 * pixel) } else { 0.0 };
        let dz_dx = if j1 > j0 { (elevation[[i, j1]] - elevation[[i, j0]]) / ((j1 - j0) as f64 * pixel) } else { 0.0 };
        dz_dx.hypot(dz_dy).atan().to_degrees()
    })
}

/// Static disks outside the largest shoreline that will look like water to
/// the radar only.
fn lookalike_mask(params: &SceneParams, r_max: f64, rng: &mut ChaCha8Rng) -> Array2<bool> {
    let (h, w) = (params.height, params.width);
    let mut mask = Array2::from_elem((h, w), false);
    let side = h.min(w) as f64;
    for _ in 0..params.lookalikes {
        let rad = rng.random_range(side / 14.0..=side / 8.0);
        for _ in 0..64 {
            let cr = rng.random_range(rad..h as f64 - rad);
            let cc = rng.random_range(rad..w as f64 - rad);
            let gap = (cr - params.center.0).hypot(cc - params.center.1) - r_max - rad;
            if gap > 2.0 {
                for i in 0..h {
                    for j in 0..w {
                        if (i as f64 + 0.5 - cr).hypot(j as f64 + 0.5 - cc) < rad {
                            mask[[i, j]] = true;
                        }
                    }
                }
                break;
            }
        }
    }
    mask
}

pub fn generate_scene(params: &SceneParams) -> Result<SyntheticScene> {
    params.validate()?;
    let (t_len, h, w) = (params.timesteps, params.height, params.width);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let phase = rng.random::<f64>() * 2.0 * PI;

    let r_max = params.max_radius();
    let dark_land = lookalike_mask(params, r_max, &mut rng);
    let depth = Array2::from_shape_fn((h, w), |(i, j)| {
        let rho = params.distance(i, j);
        if rho < r_max {
            params.depth_m * (1.0 - (rho / r_max).powi(2))
        } else {
            0.0
        }
    });
    let elevation = depth.mapv(|d| RIM_ELEVATION_M - d);
    let slope = slope_degrees(&elevation, params.pixel_size_m);

    let mut truth = Array3::<u8>::zeros((t_len, h, w));
    for t in 0..t_len {
        let r = params.radius(t as f64);
        for i in 0..h {
            for j in 0..w {
                truth[[t, i, j]] = (params.distance(i, j) < r) as u8;
            }
        }
    }

    let mudflat = |t: usize, i: usize, j: usize| {
        let d = params.distance(i, j);
        let r = params.radius(t as f64);
        truth[[t, i, j]] == 0 && d < r_max && d < r + params.mudflat_px
    };

    let mut clean_sar = Array4::<f32>::zeros((t_len, h, w, 2));
    for t in 0..t_len {
        for i in 0..h {
            for j in 0..w {
                let tex = texture(i, j, phase);
                if mudflat(t, i, j) {
                    clean_sar[[t, i, j, 0]] = (0.025 * (1.0 + 0.1 * tex)) as f32;
                    clean_sar[[t, i, j, 1]] = (0.006 * (1.0 + 0.1 * tex)) as f32;
                    continue;
                }
                let (vv, vh) = if truth[[t, i, j]] == 1 || dark_land[[i, j]] {
                    (0.015 * (1.0 + 0.1 * tex), 0.004 * (1.0 + 0.1 * tex))
                } else {
                    (0.18 * (1.0 + 0.3 * tex), 0.045 * (1.0 + 0.3 * tex))
                };
                clean_sar[[t, i, j, 0]] = vv as f32;
                clean_sar[[t, i, j, 1]] = vh as f32;
            }
        }
    }

    let dates = bimonthly_dates(params.start, t_len);
    let manifest = CubeManifest::new(params.lat, params.lon, dates, h, w, params.pixel_size_m);
    let bands = &manifest.bands;
    let pos = |b: Band| bands.iter().position(|x| *x == b).unwrap();
    let mut values = Array4::<f32>::zeros((t_len, h, w, bands.len()));
    let optical_noise = Normal::new(0.0, 0.005).expect("finite");
    let mut cloudy = Vec::with_capacity(t_len);

    for t in 0..t_len {
        for (k, band) in [Band::Vv, Band::Vh].into_iter().enumerate() {
            let clean = clean_sar.slice(s![t, .., .., k]).to_owned();
            let (noisy, _) = speckle_pair(&clean, params.looks, rng.random())?;
            values.slice_mut(s![t, .., .., pos(band)]).assign(&noisy);
        }

        for i in 0..h {
            for j in 0..w {
                let f = 1.0 + 0.2 * texture(j, i, phase + 1.0);
                let refl = if truth[[t, i, j]] == 1 {
                    [0.04, 0.06, 0.05, 0.02]
                } else if mudflat(t, i, j) {
                    [0.07, 0.08, 0.06, 0.16]
                } else {
                    [0.09 * f, 0.11 * f, 0.07 * f, 0.30 * f]
                };
                for (band, r) in Band::OPTICAL.into_iter().zip(refl) {
                    let v = (r + optical_noise.sample(&mut rng)).max(0.0);
                    values[[t, i, j, pos(band)]] = v as f32 * REFLECTANCE_SCALE;
                }
            }
        }

        let is_cloudy = rng.random::<f64>() < params.cloud_prob;
        if is_cloudy {
            let blobs = rng.random_range(1..=3);
            for _ in 0..blobs {
                let cr = rng.random_range(0.0..h as f64);
                let cc = rng.random_range(0.0..w as f64);
                let rad = rng.random_range(h.min(w) as f64 / 8.0..=h.min(w) as f64 / 4.0);
                for i in 0..h {
                    for j in 0..w {
                        if (i as f64 + 0.5 - cr).hypot(j as f64 + 0.5 - cc) < rad {
                            for band in Band::OPTICAL {
                                values[[t, i, j, pos(band)]] = CLOUD_REFLECTANCE * REFLECTANCE_SCALE;
                            }
                        }
                    }
                }
            }
        }
        cloudy.push(is_cloudy);

        values.slice_mut(s![t, .., .., pos(Band::Slope)]).assign(&slope.mapv(|v| v as f32));
        values
            .slice_mut(s![t, .., .., pos(Band::Elevation)])
            .assign(&elevation.mapv(|v| v as f32));
    }

    let cube = DataCube::new(manifest, values)?;
    Ok(SyntheticScene {
        cube,
        truth_masks: truth,
        dem: DemRaster::new(depth, params.pixel_size_m * params.pixel_size_m)?,
        clean_sar,
        params: params.clone(),
        cloudy,
    })
}

pub const TRUTH_FILE: &str = "truth_masks.raw";
pub const DEM_FILE: &str = "dem.raw";
pub const CLEAN_SAR_FILE: &str = "clean_sar.raw";
pub const PARAMS_FILE: &str = "params.json";

#[derive(Serialize, Deserialize)]
struct ParamsSidecar {
    params: SceneParams,
    cloudy: Vec<bool>,
}

fn f32_bytes<'a>(values: impl Iterator<Item = &'a f32>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}

fn read_f32(path: &Path, len: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).at(path)?;
    if bytes.len() != len * 4 {
        return Err(Error::PayloadMismatch(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            len * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Writes the cube container plus sidecars: `truth_masks.raw` (u8, t*h*w),
/// `dem.raw` (f32le depth in metres, h*w), `clean_sar.raw` (f32le,
/// t*h*w*2) and `params.json`.
pub fn write_scene(scene: &SyntheticScene, dir: &Path) -> Result<()> {
    crate::datacube::save_cube(&scene.cube, dir)?;
    let path = dir.join(TRUTH_FILE);
    fs::write(&path, scene.truth_masks.iter().copied().collect::<Vec<u8>>()).at(&path)?;
    let path = dir.join(DEM_FILE);
    let dem: Vec<f32> = scene.dem.heights().iter().map(|&v| v as f32).collect();
    fs::write(&path, f32_bytes(dem.iter())).at(&path)?;
    let path = dir.join(CLEAN_SAR_FILE);
    fs::write(&path, f32_bytes(scene.clean_sar.iter())).at(&path)?;
    let path = dir.join(PARAMS_FILE);
    let sidecar = ParamsSidecar {
        params: scene.params.clone(),
        cloudy: scene.cloudy.clone(),
    };
    fs::write(&path, serde_json::to_string_pretty(&sidecar)?).at(&path)?;
    Ok(())
}

pub fn read_scene(dir: &Path) -> Result<SyntheticScene> {
    let cube = crate::datacube::load_cube(dir)?;
    let (t, h, w, _) = cube.shape();
    let path = dir.join(PARAMS_FILE);
    let sidecar: ParamsSidecar = serde_json::from_str(&fs::read_to_string(&path).at(&path)?)?;
    let path = dir.join(TRUTH_FILE);
    let truth = fs::read(&path).at(&path)?;
    let truth = Array3::from_shape_vec((t, h, w), truth).map_err(|e| Error::PayloadMismatch(e.to_string()))?;
    crate::raster::check_binary(truth.view().into_shape_with_order((t * h, w)).expect("contiguous"))?;
    let dem = read_f32(&dir.join(DEM_FILE), h * w)?;
    let dem = Array2::from_shape_vec((h, w), dem.into_iter().map(f64::from).collect()).expect("length checked");
    let clean = read_f32(&dir.join(CLEAN_SAR_FILE), t * h * w * 2)?;
    let clean_sar = Array4::from_shape_vec((t, h, w, 2), clean).expect("length checked");
    let pixel_area = cube.manifest.pixel_size_m * cube.manifest.pixel_size_m;
    Ok(SyntheticScene {
        cube,
        truth_masks: truth,
        dem: DemRaster::new(dem, pixel_area)?,
        clean_sar,
        params: sidecar.params,
        cloudy: sidecar.cloudy,
    })
}
