//! Binary 8-bit PGM import/export for grayscale images and depth previews.

use super::camera::Image;
use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

/// Write intensities in [0, 1] as binary PGM (P5, maxval 255).
pub fn write_pgm(img: &Image, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", img.width, img.height)?;
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    f.write_all(&bytes)?;
    Ok(())
}

/// Normalize an arbitrary scalar grid to [0, 1] and write it as PGM.
pub fn write_pgm_normalized(width: usize, height: usize, data: &[f64], path: &Path) -> Result<()> {
    assert_eq!(data.len(), width * height);
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let img = Image {
        width,
        height,
        data: data.iter().map(|v| (v - lo) / span).collect(),
    };
    write_pgm(&img, path)
}

/// Read a binary PGM (P5, maxval 255) into intensities in [0, 1].
pub fn read_pgm(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |msg: &str| Error::CorruptFile(format!("{}: {msg}", path.display()));
    // Header: magic, width, height, maxval separated by whitespace (no
    // comment support; these files are only produced by this crate).
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| bad("non-utf8 header"))?
                .to_string(),
        );
    }
    if fields.len() < 4 || fields[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let width: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    if fields[3] != "255" {
        return Err(bad("unsupported maxval"));
    }
    pos += 1; // single whitespace byte after maxval
    if bytes.len() < pos + width * height {
        return Err(bad("truncated pixel data"));
    }
    let data = bytes[pos..pos + width * height]
        .iter()
        .map(|b| *b as f64 / 255.0)
        .collect();
    Ok(Image {
        width,
        height,
        data,
    })
}
