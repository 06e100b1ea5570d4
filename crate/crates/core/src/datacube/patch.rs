use ndarray::{s, Array4};

use super::{CubeManifest, DataCube};
use crate::error::{Error, Result};

pub const MIN_PATCH_SIZE: usize = 16;

/// A square spatial window cut from every timestep of a cube.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSeries {
    pub parent: CubeManifest,
    /// `(row, col)` of the top-left pixel in the parent frame.
    pub origin: (usize, usize),
    pub size: usize,
    pub values: Array4<f32>,
}

pub fn extract_patch_series(cube: &DataCube, origin: (usize, usize), size: usize) -> Result<PatchSeries> {
    if size < MIN_PATCH_SIZE {
        return Err(Error::InvalidArgument(format!(
            "patch size {size} below minimum {MIN_PATCH_SIZE}"
        )));
    }
    let (_, h, w, _) = cube.shape();
    let (r, c) = origin;
    if r + size > h || c + size > w {
        return Err(Error::OutOfBounds(format!(
            "patch at ({r}, {c}) of size {size} exceeds {h}x{w} frame"
        )));
    }
    Ok(PatchSeries {
        parent: cube.manifest.clone(),
        origin,
        size,
        values: cube.values().slice(s![.., r..r + size, c..c + size, ..]).to_owned(),
    })
}

/// Tile origins along one axis: every `stride` pixels, plus a final tile
/// flush with the far edge so the whole extent is covered.
fn axis_origins(extent: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=extent - size).step_by(stride).collect();
    if *out.last().unwrap() != extent - size {
        out.push(extent - size);
    }
    out
}

/// Row-major tile origins covering a `height x width` frame.
pub fn tile_origins(height: usize, width: usize, size: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if stride == 0 || size == 0 {
        return Err(Error::InvalidArgument("tile size and stride must be positive".into()));
    }
    if size > height || size > width {
        return Err(Error::OutOfBounds(format!(
            "tile {size} larger than {height}x{width} frame"
        )));
    }
    let rows = axis_origins(height, size, stride);
    let cols = axis_origins(width, size, stride);
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect())
}

pub fn extract_tiles(cube: &DataCube, size: usize, stride: usize) -> Result<Vec<PatchSeries>> {
    let (_, h, w, _) = cube.shape();
    tile_origins(h, w, size, stride)?
        .into_iter()
        .map(|o| extract_patch_series(cube, o, size))
        .collect()
}
