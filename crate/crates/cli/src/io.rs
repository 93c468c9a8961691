//! File formats: PNG images, JSON documents, CSV outcome records.

use std::fs;
use std::path::Path;

use image::{ExtendedColorType, ImageFormat, RgbImage};
use perc_core::eval::OutcomeRecord;
use perc_core::ImageTensor;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{io_err, CliError, Result};

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(io_err(path))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// 8-bit RGB PNG of the (already quantized) image.
pub fn encode_png(x: &ImageTensor) -> Result<Vec<u8>> {
    let (h, w) = x.dims();
    let mut buf = std::io::Cursor::new(Vec::new());
    image::write_buffer_with_format(&mut buf, &x.to_u8(), w as u32, h as u32, ExtendedColorType::Rgb8, ImageFormat::Png)
        .map_err(|e| CliError::Parse {
            path: "<png>".into(),
            message: e.to_string(),
        })?;
    Ok(buf.into_inner())
}

pub fn write_png(path: &Path, x: &ImageTensor) -> Result<()> {
    write_bytes(path, &encode_png(x)?)
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_bytes(path, buf.get_ref())
}

pub fn read_image(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| CliError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(ImageTensor::from_u8(h as usize, w as usize, rgb.as_raw())?)
}

pub fn write_records(path: &Path, records: &[OutcomeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_bytes(path, &bytes)
}

pub fn read_records(path: &Path) -> Result<Vec<OutcomeRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}
