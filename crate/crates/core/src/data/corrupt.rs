//! Masked-overwrite corruption of a clean dataset.

use rand::seq::SliceRandom;

use super::{split_indices, CleanDataset, ErrorClass, Split};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug)]
pub struct CorruptedDataset {
    /// Pre-corruption images, class ids and splits.
    pub clean: CleanDataset,
    /// Observed (possibly corrupted) images.
    pub images: Matrix,
    /// 1 for inliers, 0 for outliers.
    pub y_true: Vec<u8>,
    /// Index into `error_classes` for each outlier.
    pub error_class: Vec<Option<usize>>,
    pub error_classes: Vec<ErrorClass>,
    pub noise_level: f64,
    footprints: Vec<Vec<usize>>,
}

impl CorruptedDataset {
    pub(crate) fn from_parts(
        clean: CleanDataset,
        images: Matrix,
        error_class: Vec<Option<usize>>,
        error_classes: Vec<ErrorClass>,
        noise_level: f64,
    ) -> Result<Self> {
        let n = clean.len();
        if images.dim() != clean.images.dim() || error_class.len() != n {
            return Err(Error::Contract("corrupted dataset parts disagree in size".into()));
        }
        if error_class.iter().flatten().any(|&k| k >= error_classes.len()) {
            return Err(Error::Contract("error class id out of range".into()));
        }
        let footprints = error_classes
            .iter()
            .map(|e| e.footprint(clean.height, clean.width))
            .collect();
        let y_true = error_class.iter().map(|e| e.is_none() as u8).collect();
        Ok(Self {
            clean,
            images,
            y_true,
            error_class,
            error_classes,
            noise_level,
            footprints,
        })
    }

    pub fn len(&self) -> usize {
        self.images.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.images.ncols()
    }

    pub fn clean_truth(&self) -> &Matrix {
        &self.clean.images
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        split_indices(&self.clean.split, split)
    }

    pub fn num_outliers(&self) -> usize {
        self.y_true.iter().filter(|&&y| y == 0).count()
    }

    /// Sorted dirty pixel indices of row `i`; empty for inliers.
    pub fn dirty_pixels(&self, i: usize) -> &[usize] {
        match self.error_class[i] {
            Some(k) => &self.footprints[k],
            None => &[],
        }
    }

    /// Boolean dirty mask of row `i`.
    pub fn dirty_mask(&self, i: usize) -> Vec<bool> {
        let mut m = vec![false; self.dim()];
        for &p in self.dirty_pixels(i) {
            m[p] = true;
        }
        m
    }

    pub fn footprint(&self, class: usize) -> &[usize] {
        &self.footprints[class]
    }
}

/// Pick `⌊noise·N⌋` rows uniformly without replacement, give each one error
/// class (round-robin over the shuffled selection) and overwrite the class
/// footprint with its colour.
pub fn corrupt(
    clean: &CleanDataset,
    noise_level: f64,
    classes: &[ErrorClass],
    seed: u64,
) -> Result<CorruptedDataset> {
    if !(0.0..1.0).contains(&noise_level) {
        return Err(Error::config(format!(
            "noise level must be in [0, 1), got {noise_level}"
        )));
    }
    let n = clean.len();
    let count = (noise_level * n as f64 + 1e-9).floor() as usize;
    if count > 0 && classes.is_empty() {
        return Err(Error::config("corruption requested with no error classes"));
    }
    for c in classes {
        if c.footprint(clean.height, clean.width)
            .iter()
            .any(|&p| p >= clean.dim())
        {
            return Err(Error::config(format!(
                "error class `{}` does not fit a {}x{} image",
                c.describe(),
                clean.height,
                clean.width
            )));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0));

    let mut images = clean.images.clone();
    let mut error_class = vec![None; n];
    for (rank, &i) in order.iter().take(count).enumerate() {
        let k = rank % classes.len();
        error_class[i] = Some(k);
        let class = &classes[k];
        let mut row = images.row_mut(i);
        for p in class.footprint(clean.height, clean.width) {
            row[p] = class.color;
        }
    }
    CorruptedDataset::from_parts(
        clean.clone(),
        images,
        error_class,
        classes.to_vec(),
        noise_level,
    )
}
