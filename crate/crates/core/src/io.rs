//! GridStack files: a JSON header `<stem>.json` next to a raw `<stem>.bin`
//! of little-endian `f32`, ordered time, latitude, longitude. No padding and
//! no fill values; NaN is rejected in both directions.
//!
//! Time axes are expected to be contiguous days starting at
//! `time_start_index`. A non-contiguous axis is written as an extra `times`
//! array, which readers of the basic format may ignore.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{FieldStack, GridSpec, Units};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridStackHeader {
    pub version: u32,
    pub n_time: usize,
    pub n_lat: usize,
    pub n_lon: usize,
    pub lat_start: f64,
    pub d_lat: f64,
    pub lon_start: f64,
    pub d_lon: f64,
    pub units: Units,
    pub variable: String,
    pub time_start_index: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<i64>>,
}

impl GridStackHeader {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(
            self.n_lat,
            self.n_lon,
            self.lat_start,
            self.d_lat,
            self.lon_start,
            self.d_lon,
        )
    }

    fn time_axis(&self) -> Result<Vec<i64>> {
        match &self.times {
            Some(t) if t.len() != self.n_time => Err(Error::InvalidData(format!(
                "header lists {} times but n_time is {}",
                t.len(),
                self.n_time
            ))),
            Some(t) => Ok(t.clone()),
            None => Ok((0..self.n_time as i64)
                .map(|k| self.time_start_index + k)
                .collect()),
        }
    }
}

/// `<stem>.json` and `<stem>.bin` for a stem path (any extension on the stem is replaced).
pub fn stack_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

pub fn header_for(f: &FieldStack) -> GridStackHeader {
    let g = f.grid();
    let times = f.times();
    let t0 = times.first().copied().unwrap_or(0);
    let contiguous = times.iter().enumerate().all(|(k, &t)| t == t0 + k as i64);
    GridStackHeader {
        version: FORMAT_VERSION,
        n_time: f.n_time(),
        n_lat: g.n_lat,
        n_lon: g.n_lon,
        lat_start: g.lat_start,
        d_lat: g.d_lat,
        lon_start: g.lon_start,
        d_lon: g.d_lon,
        units: f.units(),
        variable: f.variable().to_string(),
        time_start_index: t0,
        times: (!contiguous).then(|| times.to_vec()),
    }
}

pub fn write_stack(stem: &Path, f: &FieldStack) -> Result<()> {
    let (json_path, bin_path) = stack_paths(stem);
    if let Some(dir) = json_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let header = header_for(f);
    let text = serde_json::to_string_pretty(&header).map_err(|e| Error::json(&json_path, e))?;
    fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))?;

    let file = fs::File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut w = BufWriter::new(file);
    for &v in f.values() {
        let x = v as f32;
        if !x.is_finite() {
            return Err(Error::InvalidData(format!(
                "value {v} is not representable as a finite f32"
            )));
        }
        w.write_all(&x.to_le_bytes())
            .map_err(|e| Error::io(&bin_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&bin_path, e))
}

pub fn read_header(stem: &Path) -> Result<GridStackHeader> {
    let (json_path, _) = stack_paths(stem);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: GridStackHeader =
        serde_json::from_str(&text).map_err(|e| Error::json(&json_path, e))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::InvalidData(format!(
            "{}: unsupported GridStack version {}",
            json_path.display(),
            header.version
        )));
    }
    Ok(header)
}

pub fn read_stack(stem: &Path) -> Result<FieldStack> {
    let header = read_header(stem)?;
    let grid = header.grid()?;
    let (_, bin_path) = stack_paths(stem);
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let expected = header.n_time * grid.len() * 4;
    if bytes.len() != expected {
        return Err(Error::Shape(format!(
            "{}: {} bytes, header implies {expected}",
            bin_path.display(),
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidData(format!(
            "{}: NaN values are not allowed",
            bin_path.display()
        )));
    }
    FieldStack::with_variable(
        grid,
        header.time_axis()?,
        values,
        header.units,
        header.variable,
    )
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
