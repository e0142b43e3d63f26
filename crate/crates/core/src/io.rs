//! File helpers: atomic writes, PNG rasters and binary depth grids.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::SparseDepthMap;
use crate::grid::Grid;
use crate::scalar::Scalar;

const DEPTH_MAGIC: &[u8; 4] = b"PTDM";

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    tmp.set_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads a color image as a 3-channel grid with values in `[0, 1]`.
pub fn load_rgb<S: Scalar>(path: &Path) -> Result<Grid<S>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut g = Grid::zeros(3, h, w);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            g.set(c, y as usize, x as usize, S::lit(px[c] as f64 / 255.0));
        }
    }
    Ok(g)
}

/// Encodes a 3-channel `[0, 1]` grid as 8-bit PNG bytes.
pub fn encode_rgb_png<S: Scalar>(img: &Grid<S>) -> Result<Vec<u8>> {
    let (_, h, w) = img.shape();
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = img.get(c, y as usize, x as usize).f64().clamp(0.0, 1.0);
            px[c] = (v * 255.0).round() as u8;
        }
    }
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Binary depth grid: magic `PTDM`, rows u32, cols u32, scale u32, then
/// `rows·cols` little-endian f64 values (0 marks an invalid cell).
pub fn encode_depth_map<S: Scalar>(map: &SparseDepthMap<S>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * map.rows() * map.cols());
    out.extend_from_slice(DEPTH_MAGIC);
    for v in [map.rows(), map.cols(), map.scale] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (v, &ok) in map.values.data().iter().zip(map.valid.data()) {
        let x = if ok { v.f64() } else { 0.0 };
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_depth_map<S: Scalar>(bytes: &[u8]) -> Result<SparseDepthMap<S>> {
    if bytes.len() < 16 || &bytes[..4] != DEPTH_MAGIC {
        return Err(Error::Parse("not a depth grid file".into()));
    }
    let u = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (rows, cols, scale) = (u(4), u(8), u(12));
    if bytes.len() != 16 + 8 * rows * cols {
        return Err(Error::Parse(format!(
            "depth grid {rows}x{cols} has {} payload bytes",
            bytes.len() - 16
        )));
    }
    let mut map = SparseDepthMap::with_grid_shape(rows, cols, scale);
    for (i, chunk) in bytes[16..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if v > 0.0 && v.is_finite() {
            map.set(i / cols, i % cols, S::lit(v));
        }
    }
    Ok(map)
}
