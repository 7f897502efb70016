//! On-disk formats: binary depth maps and feature maps, JSON grid dumps,
//! camera rigs, and label files.
//!
//! Binary layouts are little-endian with a 5-byte ASCII magic:
//!
//! * depth map — `DPTH1`, then `u32` width and height, then `width*height`
//!   `f32` depths in row-major order, `0.0` marking holes;
//! * feature map — `FMAP1`, then `u32` height, width and channels, then
//!   `h*w*c` `f32` values in row-major, channel-interleaved order.
//!
//! Values are stored as `f32`, so a round trip keeps roughly seven
//! significant digits. Everything else is JSON or whitespace-separated text
//! and round-trips exactly at f64 print precision.

use crate::fusion::{FeatureMap, FusionError};
use crate::geom::{CameraRig, GeomError};
use crate::grid::{
    format_labels, parse_labels, DetectionGrid, GridDump, GridError, LabelParseError,
    StairLineLabel,
};
use crate::pipeline::{DepthMap, MeasureError};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("expected magic {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: String },
    #[error("file ends mid-record: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("{0} is implausibly large ({1} values)")]
    TooLarge(&'static str, u64),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Labels(#[from] LabelParseError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Depth(#[from] MeasureError),
    #[error(transparent)]
    Feature(#[from] FusionError),
    #[error(transparent)]
    Rig(#[from] GeomError),
}

/// Hard cap on element counts read from binary headers, so a corrupt header
/// cannot request an absurd allocation.
const MAX_ELEMENTS: u64 = 1 << 28;

const DEPTH_MAGIC: &str = "DPTH1";
const FEATURE_MAGIC: &str = "FMAP1";

fn write_magic(w: &mut impl Write, magic: &str) -> Result<(), IoError> {
    w.write_all(magic.as_bytes())?;
    Ok(())
}

fn read_magic(r: &mut impl Read, expected: &'static str) -> Result<(), IoError> {
    let mut buf = [0u8; 5];
    read_exact(r, &mut buf)?;
    if buf != expected.as_bytes() {
        return Err(IoError::BadMagic {
            expected,
            found: String::from_utf8_lossy(&buf).into_owned(),
        });
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), IoError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            IoError::Truncated { needed: buf.len() }
        } else {
            IoError::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, IoError> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f32_values(r: &mut impl Read, count: usize) -> Result<Vec<f64>, IoError> {
    let mut bytes = vec![0u8; count * 4];
    read_exact(r, &mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect())
}

fn write_f32_values(w: &mut impl Write, values: &[f64]) -> Result<(), IoError> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn write_depth(path: impl AsRef<Path>, map: &DepthMap) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_magic(&mut w, DEPTH_MAGIC)?;
    w.write_all(&map.width().to_le_bytes())?;
    w.write_all(&map.height().to_le_bytes())?;
    write_f32_values(&mut w, map.data())?;
    w.flush()?;
    Ok(())
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, DEPTH_MAGIC)?;
    let width = read_u32(&mut r)?;
    let height = read_u32(&mut r)?;
    let count = u64::from(width) * u64::from(height);
    if count > MAX_ELEMENTS {
        return Err(IoError::TooLarge("depth map", count));
    }
    let data = read_f32_values(&mut r, count as usize)?;
    Ok(DepthMap::from_data(width, height, data)?)
}

pub fn write_feature_map(path: impl AsRef<Path>, map: &FeatureMap) -> Result<(), IoError> {
    let (h, w, c) = map.dims();
    let mut out = BufWriter::new(File::create(path)?);
    write_magic(&mut out, FEATURE_MAGIC)?;
    out.write_all(&(h as u32).to_le_bytes())?;
    out.write_all(&(w as u32).to_le_bytes())?;
    out.write_all(&(c as u32).to_le_bytes())?;
    write_f32_values(&mut out, map.data())?;
    out.flush()?;
    Ok(())
}

pub fn read_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, FEATURE_MAGIC)?;
    let h = read_u32(&mut r)?;
    let w = read_u32(&mut r)?;
    let c = read_u32(&mut r)?;
    let count = u64::from(h) * u64::from(w) * u64::from(c);
    if count > MAX_ELEMENTS {
        return Err(IoError::TooLarge("feature map", count));
    }
    let data = read_f32_values(&mut r, count as usize)?;
    Ok(FeatureMap::new(h as usize, w as usize, c as usize, data)?)
}

/// Writes a detection grid as its JSON dump (positive cells only).
pub fn write_grid_dump(path: impl AsRef<Path>, grid: &DetectionGrid) -> Result<(), IoError> {
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(file, &grid.to_dump())?;
    Ok(())
}

pub fn read_grid_dump(path: impl AsRef<Path>) -> Result<DetectionGrid, IoError> {
    let file = BufReader::new(File::open(path)?);
    let dump: GridDump = serde_json::from_reader(file)?;
    Ok(dump.into_grid()?)
}

pub fn write_rig(path: impl AsRef<Path>, rig: &CameraRig) -> Result<(), IoError> {
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(file, rig)?;
    Ok(())
}

pub fn read_rig(path: impl AsRef<Path>) -> Result<CameraRig, IoError> {
    let file = BufReader::new(File::open(path)?);
    let rig: CameraRig = serde_json::from_reader(file)?;
    rig.validate()?;
    Ok(rig)
}

/// Reads a label file: one stair line per non-blank row, five
/// whitespace-separated fields (`class x1 y1 x2 y2`).
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<StairLineLabel>, IoError> {
    let mut text = String::new();
    BufReader::new(File::open(path)?).read_to_string(&mut text)?;
    Ok(parse_labels(&text)?)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[StairLineLabel]) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(format_labels(labels).as_bytes())?;
    w.flush()?;
    Ok(())
}
