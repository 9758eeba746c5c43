//! IDX container reader/writer (unsigned-byte images and labels).

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder};

use super::{assign_splits, CleanDataset, DatasetKind, PixelKind, Split};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// `count · rows · cols` bytes, image-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }
}

fn format_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn header(bytes: &[u8], path: &Path, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let need = 4 + 4 * dims;
    if bytes.len() < need {
        return Err(format_err(path, bytes.len(), format!("header needs {need} bytes")));
    }
    let found = BigEndian::read_u32(&bytes[0..4]);
    if found != magic {
        return Err(format_err(
            path,
            0,
            format!("bad magic 0x{found:08x}, expected 0x{magic:08x}"),
        ));
    }
    Ok((0..dims)
        .map(|d| BigEndian::read_u32(&bytes[4 + 4 * d..8 + 4 * d]) as usize)
        .collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn parse_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let d = header(bytes, path, IMAGES_MAGIC, 3)?;
    let (n, rows, cols) = (d[0], d[1], d[2]);
    let body = n * rows * cols;
    if bytes.len() < 16 + body {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated: {n} images of {rows}x{cols} need {} bytes", 16 + body),
        ));
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: bytes[16..16 + body].to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let d = header(bytes, path, LABELS_MAGIC, 1)?;
    let n = d[0];
    if bytes.len() < 8 + n {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated: {n} labels need {} bytes", 8 + n),
        ));
    }
    Ok(bytes[8..8 + n].to_vec())
}

pub fn read_images(path: &Path) -> Result<IdxImages> {
    parse_images(&read(path)?, path)
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    parse_labels(&read(path)?, path)
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = vec![0u8; 16];
    BigEndian::write_u32(&mut out[0..4], IMAGES_MAGIC);
    BigEndian::write_u32(&mut out[4..8], images.count() as u32);
    BigEndian::write_u32(&mut out[8..12], images.rows as u32);
    BigEndian::write_u32(&mut out[12..16], images.cols as u32);
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; 8];
    BigEndian::write_u32(&mut out[0..4], LABELS_MAGIC);
    BigEndian::write_u32(&mut out[4..8], labels.len() as u32);
    out.extend_from_slice(labels);
    out
}

pub fn write_images(path: &Path, images: &IdxImages) -> Result<()> {
    fs::write(path, encode_images(images)).map_err(|e| Error::io(path, e))
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<()> {
    fs::write(path, encode_labels(labels)).map_err(|e| Error::io(path, e))
}

fn to_matrix(images: &IdxImages) -> Matrix {
    let d = images.rows * images.cols;
    Matrix::from_shape_fn((images.count(), d), |(i, j)| {
        images.pixels[i * d + j] as f64 / 255.0
    })
}

/// Images scaled to `[0, 1]`, with labels when given. Every row is tagged
/// with `split`.
pub fn load_idx(images: &Path, labels: Option<&Path>, split: Split) -> Result<CleanDataset> {
    let img = read_images(images)?;
    let n = img.count();
    let (class_id, num_classes) = match labels {
        Some(p) => {
            let l = read_labels(p)?;
            if l.len() != n {
                return Err(format_err(
                    p,
                    4,
                    format!("{} labels for {n} images", l.len()),
                ));
            }
            let k = l.iter().copied().max().map_or(1, |m| m as usize + 1);
            (l.into_iter().map(usize::from).collect(), k)
        }
        None => (vec![0; n], 1),
    };
    Ok(CleanDataset {
        kind: DatasetKind::Fashion,
        height: img.rows,
        width: img.cols,
        pixel_kind: PixelKind::Continuous,
        images: to_matrix(&img),
        class_id,
        num_classes,
        split: vec![split; n],
    })
}

/// The 60k training file split 90/10 into train/validation, plus the 10k
/// test file.
pub fn load_fashion(
    train_images: &Path,
    train_labels: &Path,
    test_images: &Path,
    test_labels: &Path,
    seed: u64,
) -> Result<CleanDataset> {
    let mut train = load_idx(train_images, Some(train_labels), Split::Train)?;
    let test = load_idx(test_images, Some(test_labels), Split::Test)?;
    if (train.height, train.width) != (test.height, test.width) {
        return Err(Error::Shape {
            op: "load_fashion",
            lhs: (train.height, train.width),
            rhs: (test.height, test.width),
        });
    }
    train.split = assign_splits(train.len(), 0.9, 0.1, seed);
    for s in train.split.iter_mut() {
        if *s == Split::Test {
            *s = Split::Val;
        }
    }
    let images = ndarray::concatenate(
        ndarray::Axis(0),
        &[train.images.view(), test.images.view()],
    )
    .expect("equal widths");
    train.images = images;
    train.class_id.extend(test.class_id);
    train.split.extend(test.split);
    train.num_classes = train.num_classes.max(test.num_classes).max(10);
    Ok(train)
}
