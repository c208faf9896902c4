//! Flux images: raw hit counts, max-normalized grids, and the `FLUX` binary
//! record format.
//!
//! Record layout (little-endian): magic `FLUX`, `u32` width, `u32` height,
//! `u64` ray count, `width * height` `f32` raw values in row-major order (row 0
//! at the top), then the UTF-8 JSON target geometry up to the end of the
//! record.

use std::fs;
use std::path::Path;

use crate::error::{HelioError, Result};
use crate::optics::target::TargetGeometry;

pub const FLUX_MAGIC: &[u8; 4] = b"FLUX";
const HEADER_BYTES: usize = 4 + 4 + 4 + 8;

/// Row-major 2-D grid of doubles, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(width: usize, height: usize) -> Self {
        Grid {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(HelioError::Shape(format!(
                "{} values do not fill a {width}x{height} grid",
                data.len()
            )));
        }
        Ok(Grid { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Grid { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Divides by the maximum so the peak becomes 1. All-zero grids stay zero.
    pub fn normalize_max(&mut self) {
        let m = self.max();
        if m > 0.0 {
            for v in self.data.iter_mut() {
                *v /= m;
            }
        }
    }

    /// Nonnegative, finite, and peak exactly 1 (or all zero).
    pub fn is_valid_normalized(&self) -> bool {
        if self.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return false;
        }
        let m = self.max();
        m == 0.0 || m == 1.0
    }

    /// Bilinear sample at continuous pixel-centre coordinates; zero outside.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let at = |c: i64, r: i64| -> f64 {
            if c < 0 || r < 0 || c >= self.width as i64 || r >= self.height as i64 {
                0.0
            } else {
                self.data[r as usize * self.width + c as usize]
            }
        };
        let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
        let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Intensity-weighted centroid `(col, row)` in pixel units.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let total = self.sum();
        if total <= 0.0 {
            return None;
        }
        let (mut cx, mut cy) = (0.0, 0.0);
        for row in 0..self.height {
            for col in 0..self.width {
                let v = self.get(col, row);
                cx += v * col as f64;
                cy += v * row as f64;
            }
        }
        Some((cx / total, cy / total))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluxStatus {
    Ok,
    /// No ray reached the target; the normalized grid is all zero.
    NoHits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluxImage {
    ray_count: u64,
    raw: Vec<f32>,
    normalized: Grid,
    geometry: TargetGeometry,
}

impl FluxImage {
    pub fn from_raw(
        width: usize,
        height: usize,
        ray_count: u64,
        raw: Vec<f32>,
        geometry: TargetGeometry,
    ) -> Result<Self> {
        if raw.len() != width * height {
            return Err(HelioError::Shape(format!(
                "{} raw values do not fill a {width}x{height} image",
                raw.len()
            )));
        }
        if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(HelioError::invalid("raw flux must be finite and nonnegative"));
        }
        let mut normalized = Grid::from_vec(width, height, raw.iter().map(|&v| v as f64).collect())?;
        normalized.normalize_max();
        Ok(FluxImage {
            ray_count,
            raw,
            normalized,
            geometry,
        })
    }

    pub fn width(&self) -> usize {
        self.normalized.width
    }

    pub fn height(&self) -> usize {
        self.normalized.height
    }

    pub fn ray_count(&self) -> u64 {
        self.ray_count
    }

    pub fn raw(&self) -> &[f32] {
        &self.raw
    }

    pub fn normalized(&self) -> &Grid {
        &self.normalized
    }

    /// Replaces the model-facing grid (used by image randomizations). Raw
    /// counts and geometry are left untouched.
    pub fn set_normalized(&mut self, grid: Grid) -> Result<()> {
        if grid.width != self.width() || grid.height != self.height() {
            return Err(HelioError::Shape("replacement grid changes image size".into()));
        }
        self.normalized = grid;
        Ok(())
    }

    pub fn geometry(&self) -> &TargetGeometry {
        &self.geometry
    }

    pub fn hit_count(&self) -> f64 {
        self.raw.iter().map(|&v| v as f64).sum()
    }

    pub fn status(&self) -> FluxStatus {
        if self.raw.iter().any(|&v| v > 0.0) {
            FluxStatus::Ok
        } else {
            FluxStatus::NoHits
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let geometry = serde_json::to_vec(&self.geometry).expect("target geometry serializes");
        let mut out = Vec::with_capacity(HEADER_BYTES + 4 * self.raw.len() + geometry.len());
        out.extend_from_slice(FLUX_MAGIC);
        out.extend_from_slice(&(self.width() as u32).to_le_bytes());
        out.extend_from_slice(&(self.height() as u32).to_le_bytes());
        out.extend_from_slice(&self.ray_count.to_le_bytes());
        for v in &self.raw {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&geometry);
        out
    }

    /// Parses one complete record; the geometry blob runs to the end of `bytes`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_BYTES || &bytes[..4] != FLUX_MAGIC {
            return Err(HelioError::Format("missing FLUX magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (width, height) = (u32_at(4), u32_at(8));
        let ray_count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let n = width
            .checked_mul(height)
            .ok_or_else(|| HelioError::Format("image size overflows".into()))?;
        let raw_end = HEADER_BYTES + 4 * n;
        if bytes.len() < raw_end {
            return Err(HelioError::Format(format!(
                "record truncated: {} bytes for a {width}x{height} image",
                bytes.len()
            )));
        }
        let raw = bytes[HEADER_BYTES..raw_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let geometry: TargetGeometry = serde_json::from_slice(&bytes[raw_end..])
            .map_err(|e| HelioError::json("flux geometry blob", e))?;
        FluxImage::from_raw(width, height, ray_count, raw, geometry)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| HelioError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| HelioError::io(path, e))?;
        FluxImage::from_bytes(&bytes)
    }
}

/// Sums raw grids element-wise and re-normalizes from the sum.
pub fn superpose(images: &[FluxImage]) -> Result<FluxImage> {
    let first = images
        .first()
        .ok_or_else(|| HelioError::invalid("nothing to superpose"))?;
    let mut raw = vec![0.0f32; first.raw.len()];
    let mut rays = 0u64;
    for img in images {
        if img.geometry != first.geometry || img.width() != first.width() || img.height() != first.height() {
            return Err(HelioError::Shape("superposed images must share geometry and resolution".into()));
        }
        for (acc, v) in raw.iter_mut().zip(&img.raw) {
            *acc += v;
        }
        rays += img.ray_count;
    }
    FluxImage::from_raw(first.width(), first.height(), rays, raw, first.geometry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::target::TargetPlane;

    fn geometry() -> TargetGeometry {
        TargetGeometry::Plane(TargetPlane::lambertian(36.0))
    }

    fn image(vals: &[f32]) -> FluxImage {
        FluxImage::from_raw(4, 4, 100, vals.to_vec(), geometry()).unwrap()
    }

    fn ramp(scale: f32) -> Vec<f32> {
        (0..16).map(|i| i as f32 * scale).collect()
    }

    #[test]
    fn normalized_peak_is_one() {
        let img = image(&ramp(2.0));
        assert_eq!(img.normalized().max(), 1.0);
        assert!(img.normalized().is_valid_normalized());
        let zero = image(&[0.0; 16]);
        assert_eq!(zero.status(), FluxStatus::NoHits);
        assert_eq!(zero.normalized().max(), 0.0);
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let img = image(&ramp(0.37));
        let bytes = img.to_bytes();
        assert_eq!(&bytes[..4], b"FLUX");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 100);
        assert_eq!(FluxImage::from_bytes(&bytes).unwrap(), img);
    }

    #[test]
    fn truncated_record_rejected() {
        let bytes = image(&ramp(1.0)).to_bytes();
        assert!(FluxImage::from_bytes(&bytes[..30]).is_err());
        assert!(FluxImage::from_bytes(b"FLUZ0000000000000000").is_err());
    }

    #[test]
    fn superpose_identities() {
        let a = image(&ramp(1.0));
        let b = image(&ramp(3.0).into_iter().rev().collect::<Vec<_>>());
        assert_eq!(superpose(&[a.clone()]).unwrap(), a);
        let zeros = FluxImage::from_raw(4, 4, 0, vec![0.0; 16], geometry()).unwrap();
        let s = superpose(&[a.clone(), zeros]).unwrap();
        assert_eq!(s.raw(), a.raw());
        assert_eq!(s.normalized(), a.normalized());
        let ab = superpose(&[a.clone(), b.clone()]).unwrap();
        for i in 0..16 {
            assert_eq!(ab.raw()[i], a.raw()[i] + b.raw()[i]);
        }
        assert_eq!(ab.ray_count(), 200);
    }

    #[test]
    fn superpose_rejects_mismatch() {
        let a = image(&ramp(1.0));
        let other = FluxImage::from_raw(
            4,
            4,
            1,
            ramp(1.0),
            TargetGeometry::Plane(TargetPlane::lambertian(43.0)),
        )
        .unwrap();
        assert!(superpose(&[a, other]).is_err());
        assert!(superpose(&[]).is_err());
    }

    #[test]
    fn bilinear_preserves_constants_inside() {
        let g = Grid::from_fn(8, 8, |_, _| 0.5);
        assert!((g.sample_bilinear(3.3, 4.7) - 0.5).abs() < 1e-15);
        assert_eq!(g.sample_bilinear(-2.0, 3.0), 0.0);
    }
}
