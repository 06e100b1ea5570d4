use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Offset added to optical digital numbers from processing baseline 04.00 on.
pub const DN_OFFSET: u16 = 1000;
const HARMONIZED_SINCE: ProcessingBaseline = ProcessingBaseline { major: 4, minor: 0 };

/// Optical product version, written `MM.mm` (e.g. `04.00`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ProcessingBaseline {
    pub major: u32,
    pub minor: u32,
}

impl FromStr for ProcessingBaseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Baseline(s.to_string());
        let (major, minor) = s.trim().split_once('.').ok_or_else(bad)?;
        let digits = |p: &str| !p.is_empty() && p.bytes().all(|c| c.is_ascii_digit());
        if !digits(major) || !digits(minor) {
            return Err(bad());
        }
        Ok(ProcessingBaseline {
            major: major.parse().map_err(|_| bad())?,
            minor: minor.parse().map_err(|_| bad())?,
        })
    }
}

/// Removes the 1000-DN offset from rasters produced at baseline 04.00 or
/// later, flooring at zero. Older baselines pass through unchanged.
pub fn harmonize_dn(raster: &Array2<u16>, baseline: &str) -> Result<Array2<u16>> {
    let baseline: ProcessingBaseline = baseline.parse()?;
    if baseline >= HARMONIZED_SINCE {
        Ok(raster.mapv(|dn| dn.saturating_sub(DN_OFFSET)))
    } else {
        Ok(raster.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resampling {
    Nearest,
    #[default]
    Bilinear,
}

/// Upsamples a 20 m or 60 m band (or copies a 10 m band) onto the 10 m grid.
///
/// Pixel centres are aligned (half-pixel convention); bilinear samples are
/// clamped to the source edge.
pub fn resample_band(
    raster: &Array2<f32>,
    src_res: f64,
    dst_res: f64,
    method: Resampling,
) -> Result<Array2<f32>> {
    let supported = [10.0, 20.0, 60.0];
    if dst_res != 10.0 || !supported.contains(&src_res) {
        return Err(Error::Resolution {
            src: src_res,
            dst: dst_res,
        });
    }
    let factor = (src_res / dst_res) as usize;
    let (h, w) = raster.dim();
    let out = match method {
        Resampling::Nearest => {
            Array2::from_shape_fn((h * factor, w * factor), |(i, j)| raster[[i / factor, j / factor]])
        }
        Resampling::Bilinear => {
            let f = factor as f64;
            let coord = |o: usize, n: usize| -> (usize, usize, f64) {
                let x = ((o as f64 + 0.5) / f - 0.5).clamp(0.0, (n - 1) as f64);
                let x0 = x.floor() as usize;
                let x1 = (x0 + 1).min(n - 1);
                (x0, x1, x - x0 as f64)
            };
            Array2::from_shape_fn((h * factor, w * factor), |(i, j)| {
                let (r0, r1, fr) = coord(i, h);
                let (c0, c1, fc) = coord(j, w);
                let v = |r: usize, c: usize| raster[[r, c]] as f64;
                let top = v(r0, c0) * (1.0 - fc) + v(r0, c1) * fc;
                let bottom = v(r1, c0) * (1.0 - fc) + v(r1, c1) * fc;
                (top * (1.0 - fr) + bottom * fr) as f32
            })
        }
    };
    Ok(out)
}

/// Keeps every `factor`-th pixel, starting at the origin.
pub fn downsample_stride(raster: &Array2<f32>, factor: usize) -> Array2<f32> {
    let (h, w) = raster.dim();
    Array2::from_shape_fn((h.div_ceil(factor), w.div_ceil(factor)), |(i, j)| {
        raster[[i * factor, j * factor]]
    })
}
