use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

use super::MagSpectrogram;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("png encoding failed for {path}: {reason}")]
    Png { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io { path: path.to_path_buf(), source }
}

/// Writes a bins × frames grid as CSV: one row per bin from 0 Hz upward.
pub fn write_csv(grid: &Array2<f64>, path: impl AsRef<Path>) -> Result<(), ExportError> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for row in grid.rows() {
        let line = row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// 80 dB display range mapped onto 0..=255.
pub fn magnitude_to_pixel(magnitude: f64) -> u8 {
    let db = 20.0 * (magnitude + 1e-10).log10();
    (255.0 * (db + 80.0) / 80.0).round().clamp(0.0, 255.0) as u8
}

/// Writes an 8-bit grayscale PNG with the Nyquist bin on row 0.
pub fn write_png(mag: &MagSpectrogram, path: impl AsRef<Path>) -> Result<(), ExportError> {
    let path = path.as_ref();
    let (bins, frames) = mag.data().dim();
    let mut pixels = Vec::with_capacity(bins * frames);
    for row in mag.data().rows().into_iter().rev() {
        pixels.extend(row.iter().map(|&m| magnitude_to_pixel(m)));
    }
    let png_err = |e: png::EncodingError| ExportError::Png { path: path.to_path_buf(), reason: e.to_string() };
    let file = File::create(path).map_err(io_err(path))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), frames as u32, bins as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(png_err)?;
    writer.write_image_data(&pixels).map_err(png_err)?;
    writer.finish().map_err(png_err)
}
