//! Flat matrix datasets: little-endian f64 binary or CSV, one image per row.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use super::{CleanDataset, DatasetKind, PixelKind, Split};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Sidecar description written next to a matrix file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixManifest {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub pixel_kind: PixelKind,
}

fn is_text(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("csv") | Some("txt")
    )
}

fn parse_csv(text: &str, path: &Path) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let mut col = offset;
        for field in line.trim_end_matches(['\n', '\r']).split(',') {
            let f = field.trim();
            if !f.is_empty() {
                let v: f64 = f.parse().map_err(|_| Error::Format {
                    path: path.to_path_buf(),
                    offset: col as u64,
                    msg: format!("not a number: `{f}`"),
                })?;
                values.push(v);
            }
            col += field.len() + 1;
        }
        offset += line.len();
    }
    Ok(values)
}

/// Raw values of a matrix file, in file order.
pub fn read_values(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_text(path) {
        let text = String::from_utf8(bytes).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            offset: e.utf8_error().valid_up_to() as u64,
            msg: "invalid UTF-8".into(),
        })?;
        parse_csv(&text, path)
    } else {
        if bytes.len() % 8 != 0 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: (bytes.len() - bytes.len() % 8) as u64,
                msg: "binary length is not a multiple of 8 bytes".into(),
            });
        }
        let mut values = vec![0.0; bytes.len() / 8];
        LittleEndian::read_f64_into(&bytes, &mut values);
        Ok(values)
    }
}

/// `N × (height·width)` images with `N` inferred from the value count.
///
/// Values above 1 are taken as 8-bit intensities and divided by
/// `max(255, max value)`; otherwise they are used as given.
pub fn load_matrix(path: &Path, height: usize, width: usize) -> Result<CleanDataset> {
    let values = read_values(path)?;
    let d = height * width;
    if d == 0 || values.len() % d != 0 {
        let per = if is_text(path) { 0 } else { 8 };
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: ((values.len() - values.len() % d.max(1)) * per) as u64,
            msg: format!("{} values do not divide into rows of {d}", values.len()),
        });
    }
    if let Some(bad) = values.iter().position(|v| !v.is_finite() || *v < 0.0 || *v > 256.0) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: if is_text(path) { 0 } else { bad as u64 * 8 },
            msg: format!("value {} outside [0, 256]", values[bad]),
        });
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    let scale = if max > 1.0 { max.max(255.0) } else { 1.0 };
    let n = values.len() / d;
    let images = Matrix::from_shape_vec((n, d), values)
        .expect("length checked")
        .mapv(|v| v / scale);
    Ok(CleanDataset {
        kind: DatasetKind::Frey,
        height,
        width,
        pixel_kind: PixelKind::Continuous,
        images,
        class_id: vec![0; n],
        num_classes: 1,
        split: vec![Split::Train; n],
    })
}

/// Write rows as little-endian f64.
pub fn write_binary(path: &Path, images: &Matrix) -> Result<()> {
    let values: Vec<f64> = images.iter().copied().collect();
    let mut bytes = vec![0u8; values.len() * 8];
    LittleEndian::write_f64_into(&values, &mut bytes);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
