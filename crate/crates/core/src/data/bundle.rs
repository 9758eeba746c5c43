//! On-disk dataset bundle: `images.bin`, `clean.bin` (little-endian f64),
//! `y_true.csv`, `masks.bin` (one byte per pixel) and `manifest.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::{read_values, write_binary};
use super::{CleanDataset, CorruptedDataset, DatasetKind, ErrorClass, PixelKind, Split, TrustedSet};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleManifest {
    pub kind: DatasetKind,
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub pixel_kind: PixelKind,
    pub num_classes: usize,
    pub noise_level: f64,
    pub error_classes: Vec<ErrorClass>,
    #[serde(default)]
    pub trusted: Option<TrustedSet>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_bundle(
    dir: &Path,
    data: &CorruptedDataset,
    trusted: Option<&TrustedSet>,
    seed: Option<u64>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_binary(&dir.join("images.bin"), &data.images)?;
    write_binary(&dir.join("clean.bin"), data.clean_truth())?;

    let mut csv = String::from("index,y_true,class_id,error_class,split\n");
    for i in 0..data.len() {
        let ec = data.error_class[i].map(|k| k.to_string()).unwrap_or_default();
        writeln!(
            csv,
            "{i},{},{},{ec},{}",
            data.y_true[i], data.clean.class_id[i], data.clean.split[i]
        )
        .expect("string write");
    }
    write(&dir.join("y_true.csv"), csv)?;

    let mut masks = vec![0u8; data.len() * data.dim()];
    for i in 0..data.len() {
        for &p in data.dirty_pixels(i) {
            masks[i * data.dim() + p] = 1;
        }
    }
    write(&dir.join("masks.bin"), masks)?;

    let manifest = BundleManifest {
        kind: data.clean.kind,
        n: data.len(),
        height: data.clean.height,
        width: data.clean.width,
        pixel_kind: data.clean.pixel_kind,
        num_classes: data.clean.num_classes,
        noise_level: data.noise_level,
        error_classes: data.error_classes.clone(),
        trusted: trusted.cloned(),
        seed,
    };
    write(&dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)
}

fn read_images(path: &Path, n: usize, d: usize) -> Result<Matrix> {
    let values = read_values(path)?;
    if values.len() != n * d {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: (values.len() * 8) as u64,
            msg: format!("expected {} values, found {}", n * d, values.len()),
        });
    }
    Ok(Matrix::from_shape_vec((n, d), values).expect("length checked"))
}

pub fn load_bundle(dir: &Path) -> Result<(CorruptedDataset, BundleManifest)> {
    let mpath = dir.join("manifest.json");
    let bytes = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: BundleManifest = serde_json::from_slice(&bytes)?;
    let (n, d) = (manifest.n, manifest.height * manifest.width);
    let images = read_images(&dir.join("images.bin"), n, d)?;
    let clean_images = read_images(&dir.join("clean.bin"), n, d)?;

    let cpath = dir.join("y_true.csv");
    let text = fs::read_to_string(&cpath).map_err(|e| Error::io(&cpath, e))?;
    let mut class_id = Vec::with_capacity(n);
    let mut split = Vec::with_capacity(n);
    let mut error_class = Vec::with_capacity(n);
    let mut y_true = Vec::with_capacity(n);
    let mut offset = 0u64;
    for (lineno, line) in text.lines().enumerate() {
        let here = offset;
        offset += line.len() as u64 + 1;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Format {
            path: cpath.clone(),
            offset: here,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        y_true.push(f[1].parse::<u8>().map_err(|_| bad("bad y_true"))?);
        class_id.push(f[2].parse::<usize>().map_err(|_| bad("bad class_id"))?);
        error_class.push(if f[3].is_empty() {
            None
        } else {
            Some(f[3].parse::<usize>().map_err(|_| bad("bad error_class"))?)
        });
        split.push(Split::parse(f[4]).map_err(|_| bad("bad split"))?);
    }
    if y_true.len() != n {
        return Err(Error::Format {
            path: cpath,
            offset,
            msg: format!("expected {n} rows, found {}", y_true.len()),
        });
    }

    let clean = CleanDataset {
        kind: manifest.kind,
        height: manifest.height,
        width: manifest.width,
        pixel_kind: manifest.pixel_kind,
        images: clean_images,
        class_id,
        num_classes: manifest.num_classes,
        split,
    };
    let data = CorruptedDataset::from_parts(
        clean,
        images,
        error_class,
        manifest.error_classes.clone(),
        manifest.noise_level,
    )?;
    if data.y_true != y_true {
        return Err(Error::Format {
            path: dir.join("y_true.csv"),
            offset: 0,
            msg: "y_true disagrees with error_class column".into(),
        });
    }
    let mpath = dir.join("masks.bin");
    let masks = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    if masks.len() != n * d {
        return Err(Error::Format {
            path: mpath,
            offset: masks.len() as u64,
            msg: format!("expected {} mask bytes", n * d),
        });
    }
    for i in 0..n {
        let expected = data.dirty_mask(i);
        for (p, e) in expected.iter().enumerate() {
            if (masks[i * d + p] != 0) != *e {
                return Err(Error::Format {
                    path: mpath,
                    offset: (i * d + p) as u64,
                    msg: "mask disagrees with error-class footprint".into(),
                });
            }
        }
    }
    Ok((data, manifest))
}
