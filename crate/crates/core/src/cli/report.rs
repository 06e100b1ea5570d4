use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::pipeline::{HydroSummary, MANIFEST_FILE, REPORT_FILE};
use crate::error::{Error, IoContext, Result};

pub const REPORT_DIR: &str = "report";
/// PNG text keyword carrying the plotted volumes exactly as read from the
/// series CSV.
pub const VOLUME_KEYWORD: &str = "volume_m3";
pub const DATE_KEYWORD: &str = "date";

const WIDTH: u32 = 640;
const HEIGHT: u32 = 360;
const MARGIN: i64 = 40;

#[derive(Debug, Clone, Default)]
pub struct ReportOutputs {
    pub figures: Vec<PathBuf>,
    pub tables: Vec<PathBuf>,
    pub summary: PathBuf,
}

struct SeriesColumns {
    dates: Vec<String>,
    volumes: Vec<String>,
}

fn read_series(path: &Path) -> Result<SeriesColumns> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Series(format!("{} lacks a `{name}` column", path.display())))
    };
    let (di, vi) = (col("date")?, col("volume_m3")?);
    let mut out = SeriesColumns {
        dates: Vec::new(),
        volumes: Vec::new(),
    };
    for rec in reader.records() {
        let rec = rec?;
        out.dates.push(rec[di].to_string());
        out.volumes.push(rec[vi].to_string());
    }
    Ok(out)
}

/// Reads the two text chunks written by [`plot_volume_curve`].
pub fn read_plot_text(path: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let file = fs::File::open(path).at(path)?;
    let reader = png::Decoder::new(std::io::BufReader::new(file))
        .read_info()
        .map_err(|e| Error::Png(e.to_string()))?;
    let mut dates = Vec::new();
    let mut volumes = Vec::new();
    for chunk in &reader.info().uncompressed_latin1_text {
        let split = |t: &str| t.split(',').map(str::to_string).collect::<Vec<_>>();
        match chunk.keyword.as_str() {
            DATE_KEYWORD => dates = split(&chunk.text),
            VOLUME_KEYWORD => volumes = split(&chunk.text),
            _ => {}
        }
    }
    Ok((dates, volumes))
}

struct Canvas {
    px: Vec<u8>,
}

impl Canvas {
    fn new() -> Self {
        Canvas {
            px: vec![255; (WIDTH * HEIGHT * 3) as usize],
        }
    }

    fn set(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if (0..WIDTH as i64).contains(&x) && (0..HEIGHT as i64).contains(&y) {
            let i = ((y as u32 * WIDTH + x as u32) * 3) as usize;
            self.px[i..i + 3].copy_from_slice(&rgb);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), rgb: [u8; 3]) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for k in 0..=steps {
            let x = x0 + (x1 - x0) * k / steps;
            let y = y0 + (y1 - y0) * k / steps;
            self.set(x, y, rgb);
            self.set(x, y + 1, rgb);
        }
    }

    fn dot(&mut self, (x, y): (i64, i64), rgb: [u8; 3]) {
        for dy in -2..=2 {
            for dx in -2..=2 {
                self.set(x + dx, y + dy, rgb);
            }
        }
    }
}

/// Volume-vs-time line chart. The exact date and volume strings are stored
/// in tEXt chunks so the figure can be checked against its source table.
pub fn plot_volume_curve(path: &Path, title: &str, dates: &[String], volumes: &[String]) -> Result<()> {
    let values = volumes
        .iter()
        .map(|v| v.parse::<f64>().map_err(|e| Error::Series(format!("volume `{v}`: {e}"))))
        .collect::<Result<Vec<f64>>>()?;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (w, h) = (WIDTH as i64, HEIGHT as i64);
    let n = values.len().max(2) as i64 - 1;
    let point = |i: usize, v: f64| {
        let x = MARGIN + (w - 2 * MARGIN) * i as i64 / n;
        let y = h - MARGIN - ((v - lo) / span * (h - 2 * MARGIN) as f64).round() as i64;
        (x, y)
    };
    let mut canvas = Canvas::new();
    let axis = [60, 60, 60];
    canvas.line((MARGIN, h - MARGIN), (w - MARGIN, h - MARGIN), axis);
    canvas.line((MARGIN, MARGIN), (MARGIN, h - MARGIN), axis);
    let blue = [31, 90, 180];
    for (i, pair) in values.windows(2).enumerate() {
        canvas.line(point(i, pair[0]), point(i + 1, pair[1]), blue);
    }
    for (i, &v) in values.iter().enumerate() {
        canvas.dot(point(i, v), blue);
    }

    let file = fs::File::create(path).at(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), WIDTH, HEIGHT);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::Png(e.to_string());
    encoder.add_text_chunk("Title".into(), title.into()).map_err(png_err)?;
    encoder.add_text_chunk(DATE_KEYWORD.into(), dates.join(",")).map_err(png_err)?;
    encoder.add_text_chunk(VOLUME_KEYWORD.into(), volumes.join(",")).map_err(png_err)?;
    let mut writer = encoder.write_header().map_err(png_err)?;
    writer.write_image_data(&canvas.px).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).at(path)
}

/// Renders figures, a per-basin summary table and `summary.txt` from a
/// completed run directory. Re-running overwrites the same files with the
/// same bytes.
pub fn build_report(out: &Path) -> Result<ReportOutputs> {
    let report_path = out.join(REPORT_FILE);
    let ablation = out.join("ablation.csv");
    let comparison = out.join("forecast_comparison.csv");
    let mut missing: Vec<PathBuf> = [&report_path, &ablation, &comparison]
        .into_iter()
        .filter(|p| !p.exists())
        .cloned()
        .collect();
    if !report_path.exists() {
        return Err(Error::MissingInputs(missing));
    }
    let report: Value = serde_json::from_str(&read_text(&report_path)?)?;
    let hydro: HydroSummary = serde_json::from_value(report["hydro"].clone())?;
    let series_paths: Vec<(String, PathBuf)> = hydro
        .scenes
        .iter()
        .map(|s| (s.scene.clone(), out.join("hydro").join(format!("{}_series.csv", s.scene))))
        .collect();
    missing.extend(series_paths.iter().filter(|(_, p)| !p.exists()).map(|(_, p)| p.clone()));
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing));
    }

    let dir = out.join(REPORT_DIR);
    fs::create_dir_all(&dir).at(&dir)?;
    let mut outputs = ReportOutputs::default();
    let mut table = String::from("scene,records,min_volume_m3,max_volume_m3,slope_m3_per_step,mean_abs_area_difference_m2\n");
    for ((name, series_path), scene) in series_paths.iter().zip(&hydro.scenes) {
        let cols = read_series(series_path)?;
        let figure = dir.join(format!("{name}_volume.png"));
        plot_volume_curve(&figure, &format!("{name} water volume (m3)"), &cols.dates, &cols.volumes)?;
        outputs.figures.push(figure);
        let volumes: Vec<f64> = scene.records.iter().map(|r| r.volume_m3).collect();
        table.push_str(&format!(
            "{name},{},{:.3},{:.3},{:.3},{:.3}\n",
            volumes.len(),
            volumes.iter().copied().fold(f64::INFINITY, f64::min),
            volumes.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            scene.slope_m3_per_step,
            super::pipeline::mean_abs_difference(&scene.validation),
        ));
    }
    let table_path = dir.join("hydro_summary.csv");
    fs::write(&table_path, table).at(&table_path)?;
    outputs.tables = vec![ablation.clone(), comparison.clone(), table_path];
    outputs.tables.extend(series_paths.into_iter().map(|(_, p)| p));

    let mut text = String::new();
    let despeckle = &report["despeckle"];
    text.push_str(&format!(
        "Despeckling: held-out PSNR {} dB -> {} dB (gain {} dB)\n\n",
        despeckle["psnr_noisy_db"], despeckle["psnr_despeckled_db"], despeckle["gain_db"]
    ));
    text.push_str(&format!(
        "Segmentation ablation (selected: {})\n{}\n",
        report["segmentation"]["selected_combo"].as_str().unwrap_or("?"),
        read_text(&ablation)?
    ));
    text.push_str(&format!(
        "Forecast comparison (persistence MSE {})\n{}\n",
        report["forecast"]["persistence"]["mse"],
        read_text(&comparison)?
    ));
    text.push_str("Basins\n");
    for s in &hydro.scenes {
        text.push_str(&format!(
            "{}: {} dates, volume slope {:.3} m3/step, mean |area difference| {:.1} m2\n",
            s.scene,
            s.records.len(),
            s.slope_m3_per_step,
            super::pipeline::mean_abs_difference(&s.validation)
        ));
    }
    if let Some(rows) = &hydro.reference_validation {
        text.push_str(&format!(
            "Reference table: {} rows, mean |difference| {:.1} m2\n",
            rows.len(),
            super::pipeline::mean_abs_difference(rows)
        ));
    }
    outputs.summary = dir.join("summary.txt");
    fs::write(&outputs.summary, text).at(&outputs.summary)?;
    super::pipeline::write_manifest(out)?;
    debug_assert!(out.join(MANIFEST_FILE).exists());
    Ok(outputs)
}
