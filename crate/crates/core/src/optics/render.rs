//! 8-bit grayscale PGM and false-color PNG output of normalized grids.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{HelioError, Result};
use crate::optics::flux::Grid;

#[inline]
fn to_byte(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Binary PGM (P5), one byte per pixel, `round(255 * v)`.
pub fn to_pgm(grid: &Grid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend(grid.data().iter().map(|&v| to_byte(v)));
    out
}

/// Parses a binary PGM written by [`to_pgm`]: `(width, height, pixels)`.
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(HelioError::Format("truncated PGM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(HelioError::Format("only 8-bit binary PGM is supported".into()));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| HelioError::Format(format!("bad PGM size {s}")));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let pixels = bytes.get(pos..pos + w * h).ok_or_else(|| HelioError::Format("truncated PGM data".into()))?;
    Ok((w, h, pixels.to_vec()))
}

pub fn write_pgm(grid: &Grid, path: &Path) -> Result<()> {
    std::fs::write(path, to_pgm(grid)).map_err(|e| HelioError::io(path, e))
}

// black -> purple -> red -> orange -> pale yellow
const STOPS: [(f64, [f64; 3]); 5] = [
    (0.0, [0.0, 0.0, 4.0]),
    (0.25, [87.0, 16.0, 110.0]),
    (0.5, [188.0, 55.0, 84.0]),
    (0.75, [249.0, 142.0, 9.0]),
    (1.0, [252.0, 255.0, 164.0]),
];

pub fn false_color(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let k = STOPS.iter().position(|s| s.0 >= v).unwrap_or(STOPS.len() - 1).max(1);
    let (t0, c0) = STOPS[k - 1];
    let (t1, c1) = STOPS[k];
    let f = (v - t0) / (t1 - t0);
    [0, 1, 2].map(|i| (c0[i] + f * (c1[i] - c0[i])).round() as u8)
}

pub fn write_png(grid: &Grid, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| HelioError::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), grid.width() as u32, grid.height() as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let data: Vec<u8> = grid.data().iter().flat_map(|&v| false_color(v)).collect();
    let mut writer = encoder
        .write_header()
        .map_err(|e| HelioError::Format(format!("png header: {e}")))?;
    writer
        .write_image_data(&data)
        .map_err(|e| HelioError::Format(format!("png data: {e}")))?;
    writer.finish().map_err(|e| HelioError::Format(format!("png finish: {e}")))
}
