//! C ABI for hydrocube.
//!
//! Every function returns an [`HcStatus`]; on failure a message is kept per
//! thread and can be read with [`hc_last_error`]. Objects crossing the
//! boundary are opaque handles released by their `*_free` function.
//! Rasters are row-major and passed as pointer plus `height`, `width`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use chrono::{Days, NaiveDate};
use hydrocube::datacube::{self, Band, DataCube};
use hydrocube::despeckle::{SpeckleLossWeights, SsimParams};
use hydrocube::forecast::ForecastLossWeights;
use hydrocube::hydro::{self, DemRaster, HydroSeries};
use hydrocube::metrics;
use hydrocube::segmentation::SegLossWeights;
use hydrocube::{Error, WaterMask};
use ndarray::{Array2, ArrayView2};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NonBinary = 4,
    Io = 5,
    Format = 6,
    Numeric = 7,
    Panic = 8,
}

impl From<&Error> for HcStatus {
    fn from(e: &Error) -> Self {
        use Error::*;
        match e {
            NonBinary(_) => HcStatus::NonBinary,
            ShapeMismatch(_) | OutOfBounds(_) => HcStatus::ShapeMismatch,
            MissingManifest(_) | MissingInputs(_) | PathIo { .. } | Io(_) => HcStatus::Io,
            PayloadMismatch(_) | BandTable(_) | NonMonotonicTimestamps(_) | EmptyTimeAxis | Baseline(_) | Json(_)
            | Csv(_) | Png(_) => HcStatus::Format,
            NonFinite { .. } | NonFiniteLoss { .. } | Normalization(_) | Tensor(_) => HcStatus::Numeric,
            UnknownBand(_) | Resolution { .. } | InvalidArgument(_) | InvalidParams(_) | EmptyDataset
            | MissingBands { .. } | Series(_) | UnmatchedDate(_) | Config(_) => HcStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(HcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(HcStatus::from(&e), e.to_string())
    }
}

type FfiResult = Result<(), Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> HcStatus {
    set_last_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            HcStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(HcStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: String) -> Failure {
    Failure(HcStatus::InvalidArgument, msg)
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn out<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| null(what))
}

fn area(height: usize, width: usize) -> Result<usize, Failure> {
    height
        .checked_mul(width)
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure(HcStatus::ShapeMismatch, format!("invalid raster size {height}x{width}")))
}

unsafe fn raster<'a, T>(ptr: *const T, height: usize, width: usize, what: &str) -> Result<ArrayView2<'a, T>, Failure> {
    let data = slice(ptr, area(height, width)?, what)?;
    Ok(ArrayView2::from_shape((height, width), data).expect("length matches shape"))
}

unsafe fn c_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not valid UTF-8")))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next hydrocube call on the thread.
#[no_mangle]
pub extern "C" fn hc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a NUL-terminated string with static lifetime.
#[no_mangle]
pub extern "C" fn hc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HcConfusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HcScores {
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
}

impl From<metrics::Scores> for HcScores {
    fn from(s: metrics::Scores) -> Self {
        HcScores {
            precision: s.precision,
            recall: s.recall,
            iou: s.iou,
        }
    }
}

/// Confusion counts of binary masks (water = 1).
///
/// # Safety
/// `pred` and `target` must point to `height * width` bytes; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn hc_confusion(
    pred: *const u8,
    target: *const u8,
    height: usize,
    width: usize,
    out_counts: *mut HcConfusion,
) -> HcStatus {
    guard(|| {
        let c = metrics::confusion(raster(pred, height, width, "pred")?, raster(target, height, width, "target")?)?;
        *out(out_counts, "out_counts")? = HcConfusion {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            tn: c.tn,
        };
        Ok(())
    })
}

/// Water-class scores and the support-weighted two-class average.
///
/// # Safety
/// As [`hc_confusion`]; `out_water` and `out_weighted` may each be null to
/// skip that result.
#[no_mangle]
pub unsafe extern "C" fn hc_scores(
    pred: *const u8,
    target: *const u8,
    height: usize,
    width: usize,
    out_water: *mut HcScores,
    out_weighted: *mut HcScores,
) -> HcStatus {
    guard(|| {
        let r = metrics::weighted_report(raster(pred, height, width, "pred")?, raster(target, height, width, "target")?)?;
        if let Some(o) = out_water.as_mut() {
            *o = r.water.scores.into();
        }
        if let Some(o) = out_weighted.as_mut() {
            *o = r.weighted.into();
        }
        Ok(())
    })
}

/// Mean squared error, PSNR (dB, given `peak`) and SSIM (7x7 window,
/// dynamic range `peak`) between two images.
///
/// # Safety
/// `a`, `b` must point to `height * width` floats; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn hc_image_quality(
    a: *const f32,
    b: *const f32,
    height: usize,
    width: usize,
    peak: f64,
    out_mse: *mut f64,
    out_psnr: *mut f64,
    out_ssim: *mut f64,
) -> HcStatus {
    guard(|| {
        if peak.is_nan() || peak <= 0.0 {
            return Err(invalid(format!("peak {peak} must be positive")));
        }
        let (a, b) = (raster(a, height, width, "a")?, raster(b, height, width, "b")?);
        let mse = metrics::mse(a, b)?;
        if let Some(o) = out_mse.as_mut() {
            *o = mse;
        }
        if let Some(o) = out_psnr.as_mut() {
            *o = metrics::psnr_from_mse(mse, peak);
        }
        if let Some(o) = out_ssim.as_mut() {
            let params = SsimParams {
                dynamic_range: peak,
                ..SsimParams::default()
            };
            *o = metrics::ssim(a, b, &params)?;
        }
        Ok(())
    })
}

unsafe fn mask(ptr: *const u8, height: usize, width: usize) -> Result<WaterMask, Failure> {
    Ok(WaterMask::new(raster(ptr, height, width, "mask")?.to_owned())?)
}

/// Water surface area: water pixels times `pixel_area_m2`.
///
/// # Safety
/// `mask` must point to `height * width` bytes of 0/1.
#[no_mangle]
pub unsafe extern "C" fn hc_surface_area(
    mask_ptr: *const u8,
    height: usize,
    width: usize,
    pixel_area_m2: f64,
    out_area_m2: *mut f64,
) -> HcStatus {
    guard(|| {
        *out(out_area_m2, "out_area_m2")? = hydro::surface_area(&mask(mask_ptr, height, width)?, pixel_area_m2)?;
        Ok(())
    })
}

/// Water volume: sum of `depth_m` over water pixels times pixel area.
///
/// # Safety
/// `mask` (bytes) and `depth_m` (doubles) must each hold `height * width`
/// values.
#[no_mangle]
pub unsafe extern "C" fn hc_water_volume(
    mask_ptr: *const u8,
    depth_m: *const f64,
    height: usize,
    width: usize,
    pixel_area_m2: f64,
    out_volume_m3: *mut f64,
) -> HcStatus {
    guard(|| {
        let dem = DemRaster::new(raster(depth_m, height, width, "depth_m")?.to_owned(), pixel_area_m2)?;
        *out(out_volume_m3, "out_volume_m3")? = hydro::water_volume(&mask(mask_ptr, height, width)?, &dem)?;
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HcLossTerms {
    /// Despeckle and forecast: MSE. Segmentation: BCE.
    pub primary: f64,
    /// Despeckle and forecast: SSIM. Segmentation: gap term.
    pub structural: f64,
    /// Despeckle: TV. Forecast: temporal smoothness. Segmentation: 0.
    pub regularizer: f64,
    pub total: f64,
}

/// Despeckling objective `alpha1*MSE + beta1*(1-SSIM) + gamma1*TV`.
///
/// # Safety
/// `pred`, `target` must point to `height * width` floats.
#[no_mangle]
pub unsafe extern "C" fn hc_speckle_loss(
    pred: *const f32,
    target: *const f32,
    height: usize,
    width: usize,
    alpha1: f64,
    beta1: f64,
    gamma1: f64,
    out_terms: *mut HcLossTerms,
) -> HcStatus {
    guard(|| {
        let weights = SpeckleLossWeights { alpha1, beta1, gamma1 };
        let t = hydrocube::despeckle::speckle_loss(
            raster(pred, height, width, "pred")?,
            raster(target, height, width, "target")?,
            &weights,
            &SsimParams::default(),
        )?;
        *out(out_terms, "out_terms")? = HcLossTerms {
            primary: t.mse,
            structural: t.ssim,
            regularizer: t.tv,
            total: t.total,
        };
        Ok(())
    })
}

/// Segmentation objective `alpha2*BCE + beta2*gap`.
///
/// # Safety
/// `prob` (floats) and `target` (0/1 bytes) must hold `height * width`
/// values.
#[no_mangle]
pub unsafe extern "C" fn hc_seg_loss(
    prob: *const f32,
    target: *const u8,
    height: usize,
    width: usize,
    alpha2: f64,
    beta2: f64,
    epsilon: f64,
    out_terms: *mut HcLossTerms,
) -> HcStatus {
    guard(|| {
        let weights = SegLossWeights { alpha2, beta2, epsilon };
        let t = hydrocube::segmentation::seg_loss(
            raster(prob, height, width, "prob")?,
            raster(target, height, width, "target")?,
            &weights,
        )?;
        *out(out_terms, "out_terms")? = HcLossTerms {
            primary: t.bce,
            structural: t.gap,
            regularizer: 0.0,
            total: t.total,
        };
        Ok(())
    })
}

/// Forecast objective `alpha3*MSE + beta3*(1-SSIM) + gamma3*TSL`, with the
/// smoothness term over `[context, pred]`.
///
/// # Safety
/// `pred`, `target`, `context` must point to `height * width` floats.
#[no_mangle]
pub unsafe extern "C" fn hc_forecast_loss(
    pred: *const f32,
    target: *const f32,
    context: *const f32,
    height: usize,
    width: usize,
    alpha3: f64,
    beta3: f64,
    gamma3: f64,
    out_terms: *mut HcLossTerms,
) -> HcStatus {
    guard(|| {
        let weights = ForecastLossWeights { alpha3, beta3, gamma3 };
        let t = hydrocube::forecast::forecast_loss(
            raster(pred, height, width, "pred")?,
            raster(target, height, width, "target")?,
            raster(context, height, width, "context")?,
            &weights,
            &SsimParams::default(),
        )?;
        *out(out_terms, "out_terms")? = HcLossTerms {
            primary: t.mse,
            structural: t.ssim,
            regularizer: t.tsl,
            total: t.total,
        };
        Ok(())
    })
}

/// A loaded datacube.
pub struct HcCube {
    cube: DataCube,
}

/// Loads a datacube container directory.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out_cube` must be
/// writable. Release the handle with [`hc_cube_free`].
#[no_mangle]
pub unsafe extern "C" fn hc_cube_load(path: *const c_char, out_cube: *mut *mut HcCube) -> HcStatus {
    guard(|| {
        let slot = out(out_cube, "out_cube")?;
        *slot = std::ptr::null_mut();
        let cube = datacube::load_cube(PathBuf::from(c_str(path, "path")?))?;
        *slot = Box::into_raw(Box::new(HcCube { cube }));
        Ok(())
    })
}

/// Writes the cube as a container directory.
///
/// # Safety
/// `cube` must come from [`hc_cube_load`]; `path` as in [`hc_cube_load`].
#[no_mangle]
pub unsafe extern "C" fn hc_cube_save(cube: *const HcCube, path: *const c_char) -> HcStatus {
    guard(|| {
        let cube = cube.as_ref().ok_or_else(|| null("cube"))?;
        datacube::save_cube(&cube.cube, PathBuf::from(c_str(path, "path")?))?;
        Ok(())
    })
}

/// Releases a cube. Null is ignored.
///
/// # Safety
/// `cube` must come from [`hc_cube_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hc_cube_free(cube: *mut HcCube) {
    if !cube.is_null() {
        drop(Box::from_raw(cube));
    }
}

/// Cube dimensions `(timesteps, height, width, bands)`.
///
/// # Safety
/// `cube` must be a live handle; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn hc_cube_shape(
    cube: *const HcCube,
    out_timesteps: *mut usize,
    out_height: *mut usize,
    out_width: *mut usize,
    out_bands: *mut usize,
) -> HcStatus {
    guard(|| {
        let (t, h, w, b) = cube.as_ref().ok_or_else(|| null("cube"))?.cube.shape();
        for (ptr, v) in [(out_timesteps, t), (out_height, h), (out_width, w), (out_bands, b)] {
            if let Some(o) = ptr.as_mut() {
                *o = v;
            }
        }
        Ok(())
    })
}

/// Copies one band frame (`height * width` floats) into `out_frame`.
/// `band` is a band name such as `"VV"` or `"NIR"`.
///
/// # Safety
/// `cube` must be a live handle; `out_frame` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn hc_cube_frame(
    cube: *const HcCube,
    timestep: usize,
    band: *const c_char,
    out_frame: *mut f32,
    len: usize,
) -> HcStatus {
    guard(|| {
        let cube = &cube.as_ref().ok_or_else(|| null("cube"))?.cube;
        let band: Band = c_str(band, "band")?.parse()?;
        let frame = cube.frame(timestep, band)?;
        if len != frame.len() {
            return Err(Failure(
                HcStatus::ShapeMismatch,
                format!("buffer holds {len} floats, frame has {}", frame.len()),
            ));
        }
        if out_frame.is_null() {
            return Err(null("out_frame"));
        }
        let dst = std::slice::from_raw_parts_mut(out_frame, len);
        for (d, s) in dst.iter_mut().zip(frame.iter()) {
            *d = *s;
        }
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HcHydroRecord {
    /// Days since 1970-01-01.
    pub days_since_epoch: i64,
    pub area_m2: f64,
    pub volume_m3: f64,
    pub pixels: u64,
}

/// A dated area/volume series.
pub struct HcSeries {
    series: HydroSeries,
}

const EPOCH: NaiveDate = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch");

fn date_from_days(days: i64) -> Result<NaiveDate, Failure> {
    let shifted = if days >= 0 {
        EPOCH.checked_add_days(Days::new(days as u64))
    } else {
        EPOCH.checked_sub_days(Days::new(days.unsigned_abs()))
    };
    shifted.ok_or_else(|| invalid(format!("day offset {days} out of range")))
}

/// Builds a series from `count` stacked masks (`count * height * width`
/// bytes) dated by `days_since_epoch`, with a depth raster in metres.
///
/// # Safety
/// Pointers must hold the stated number of elements; release the handle
/// with [`hc_series_free`].
#[no_mangle]
pub unsafe extern "C" fn hc_series_build(
    masks: *const u8,
    days_since_epoch: *const i64,
    count: usize,
    depth_m: *const f64,
    height: usize,
    width: usize,
    pixel_area_m2: f64,
    out_series: *mut *mut HcSeries,
) -> HcStatus {
    guard(|| {
        let slot = out(out_series, "out_series")?;
        *slot = std::ptr::null_mut();
        let n = area(height, width)?;
        let total = n.checked_mul(count).ok_or_else(|| invalid("mask stack too large".into()))?;
        let all = slice(masks, total, "masks")?;
        let days = slice(days_since_epoch, count, "days_since_epoch")?;
        let dem = DemRaster::new(raster(depth_m, height, width, "depth_m")?.to_owned(), pixel_area_m2)?;
        let dated = days
            .iter()
            .zip(all.chunks_exact(n))
            .map(|(&d, m)| {
                let m = Array2::from_shape_vec((height, width), m.to_vec()).expect("chunk length");
                Ok((date_from_days(d)?, WaterMask::new(m)?))
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        let series = hydro::build_series(&dated, &dem)?;
        *slot = Box::into_raw(Box::new(HcSeries { series }));
        Ok(())
    })
}

/// Releases a series. Null is ignored.
///
/// # Safety
/// `series` must come from [`hc_series_build`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hc_series_free(series: *mut HcSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Number of records in the series.
///
/// # Safety
/// `series` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hc_series_len(series: *const HcSeries, out_len: *mut usize) -> HcStatus {
    guard(|| {
        *out(out_len, "out_len")? = series.as_ref().ok_or_else(|| null("series"))?.series.len();
        Ok(())
    })
}

/// Record `index` of the series.
///
/// # Safety
/// `series` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hc_series_get(series: *const HcSeries, index: usize, out_record: *mut HcHydroRecord) -> HcStatus {
    guard(|| {
        let series = &series.as_ref().ok_or_else(|| null("series"))?.series;
        let r = series.records().get(index).ok_or_else(|| {
            Failure(HcStatus::ShapeMismatch, format!("index {index} of {}", series.len()))
        })?;
        *out(out_record, "out_record")? = HcHydroRecord {
            days_since_epoch: (r.date - EPOCH).num_days(),
            area_m2: r.area_m2,
            volume_m3: r.volume_m3,
            pixels: r.pixels as u64,
        };
        Ok(())
    })
}

/// Slope per timestep of the volume trend (centred moving average of
/// window `seasonal_period`).
///
/// # Safety
/// `series` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hc_series_volume_slope(
    series: *const HcSeries,
    seasonal_period: usize,
    out_slope: *mut f64,
) -> HcStatus {
    guard(|| {
        let series = &series.as_ref().ok_or_else(|| null("series"))?.series;
        *out(out_slope, "out_slope")? = hydro::trend(&series.volumes(), seasonal_period)?.slope;
        Ok(())
    })
}

/// Writes `date,area_m2,volume_m3,pixels` to `path`.
///
/// # Safety
/// `series` must be a live handle; `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn hc_series_write_csv(series: *const HcSeries, path: *const c_char) -> HcStatus {
    guard(|| {
        let series = &series.as_ref().ok_or_else(|| null("series"))?.series;
        series.write_csv(&PathBuf::from(c_str(path, "path")?))?;
        Ok(())
    })
}
