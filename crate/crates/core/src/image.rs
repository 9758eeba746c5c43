//! Binary PGM (P5) export of image grids.

use std::path::Path;

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Gray level of the separator lines.
pub const SEPARATOR: u8 = 128;

/// Grayscale image with 8-bit pixels, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gray {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl Gray {
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    /// Parse a P5 file written by [`Gray::to_pgm`].
    pub fn from_pgm(bytes: &[u8]) -> Option<Self> {
        let mut fields = Vec::new();
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
                return None;
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?.to_string());
        }
        if fields[0] != "P5" || fields[3] != "255" {
            return None;
        }
        let width: usize = fields[1].parse().ok()?;
        let height: usize = fields[2].parse().ok()?;
        let pixels = bytes.get(pos + 1..)?.to_vec();
        (pixels.len() == width * height).then_some(Self {
            height,
            width,
            pixels,
        })
    }
}

/// Size of a grid of `rows × cols` cells of `h × w` pixels with one-pixel
/// separators between neighbouring cells.
pub fn grid_size(rows: usize, cols: usize, h: usize, w: usize) -> (usize, usize) {
    (
        rows * h + rows.saturating_sub(1),
        cols * w + cols.saturating_sub(1),
    )
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Lay out `columns` (each `[rows × h·w]`, values in `[0, 1]`) side by
/// side: one grid row per instance, one grid column per matrix.
pub fn grid(columns: &[&Matrix], h: usize, w: usize) -> Result<Gray> {
    let rows = columns.first().map_or(0, |m| m.nrows());
    for m in columns {
        if m.nrows() != rows || m.ncols() != h * w {
            return Err(Error::Shape {
                op: "image grid",
                lhs: m.dim(),
                rhs: (rows, h * w),
            });
        }
    }
    let (height, width) = grid_size(rows, columns.len(), h, w);
    let mut pixels = vec![SEPARATOR; height * width];
    for r in 0..rows {
        for (c, m) in columns.iter().enumerate() {
            let top = r * (h + 1);
            let left = c * (w + 1);
            for y in 0..h {
                for x in 0..w {
                    pixels[(top + y) * width + left + x] = to_byte(m[[r, y * w + x]]);
                }
            }
        }
    }
    Ok(Gray {
        height,
        width,
        pixels,
    })
}
