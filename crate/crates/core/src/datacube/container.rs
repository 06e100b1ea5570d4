//! Directory container: `manifest.json` plus one `t_<index>.raw` per
//! timestep holding `height * width * bands` little-endian f32 values,
//! row-major with bands interleaved per pixel.

use std::fs;
use std::path::Path;

use ndarray::{s, Array4};

use super::{Band, CubeManifest, DataCube};
use crate::error::{Error, IoContext, Result};

pub const RASTER_DTYPE: &str = "f32le";
pub const MANIFEST_FILE: &str = "manifest.json";

fn raster_name(t: usize) -> String {
    format!("t_{t}.raw")
}

pub fn save_cube(cube: &DataCube, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    cube.manifest.validate()?;
    if cube.timesteps() == 0 {
        return Err(Error::EmptyTimeAxis);
    }
    if let Some((t, band)) = cube.find_non_finite() {
        return Err(Error::NonFinite {
            t,
            band: band.name().to_string(),
        });
    }
    fs::create_dir_all(dir).at(dir)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&cube.manifest)?;
    fs::write(&manifest_path, json).at(&manifest_path)?;

    let values = cube.values();
    let (_, h, w, b) = cube.shape();
    let mut buf = Vec::with_capacity(h * w * b * 4);
    for t in 0..cube.timesteps() {
        buf.clear();
        for v in values.slice(s![t, .., .., ..]).iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let path = dir.join(raster_name(t));
        fs::write(&path, &buf).at(&path)?;
    }
    Ok(())
}

fn read_manifest(dir: &Path) -> Result<CubeManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::MissingManifest(path));
    }
    let text = fs::read_to_string(&path).at(&path)?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    // Surface unknown band names as such rather than as a generic decode error.
    if let Some(bands) = raw.get("bands").and_then(|b| b.as_array()) {
        for name in bands {
            if let Some(name) = name.as_str() {
                name.parse::<Band>()?;
            }
        }
    }
    Ok(serde_json::from_value(raw)?)
}

pub fn load_cube(dir: impl AsRef<Path>) -> Result<DataCube> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    manifest.validate()?;
    let (t_len, h, w, b) = manifest.shape();

    let on_disk = fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| {
            let name = e.file_name();
            let name = name.to_string_lossy();
            name.starts_with("t_") && name.ends_with(".raw")
        })
        .count();
    if on_disk != t_len {
        return Err(Error::PayloadMismatch(format!(
            "manifest declares {t_len} timesteps, found {on_disk} rasters"
        )));
    }

    let frame_len = h * w * b;
    let mut values = Vec::with_capacity(t_len * frame_len);
    for t in 0..t_len {
        let path = dir.join(raster_name(t));
        if !path.is_file() {
            return Err(Error::PayloadMismatch(format!("missing raster {}", path.display())));
        }
        let bytes = fs::read(&path).at(&path)?;
        if bytes.len() != frame_len * 4 {
            return Err(Error::PayloadMismatch(format!(
                "{} holds {} bytes, expected {}",
                path.display(),
                bytes.len(),
                frame_len * 4
            )));
        }
        values.extend(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
    }
    let values = Array4::from_shape_vec((t_len, h, w, b), values)
        .map_err(|e| Error::PayloadMismatch(e.to_string()))?;
    DataCube::new(manifest, values)
}
