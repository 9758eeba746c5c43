//! Datasets, systematic-error injection and trusted-set sampling.

pub mod bundle;
pub mod corrupt;
pub mod errors;
pub mod idx;
pub mod matrix;
pub mod shapes;
pub mod trusted;

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub use corrupt::{corrupt, CorruptedDataset};
pub use errors::{build_error_classes, ErrorClass, ErrorKind, LineOrientation};
pub use shapes::generate_shapes;
pub use trusted::{sample_trusted_set, TrustedSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelKind {
    Binary,
    Continuous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Shapes,
    Frey,
    Fashion,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Shapes => "shapes",
            DatasetKind::Frey => "frey",
            DatasetKind::Fashion => "fashion",
        }
    }

    /// Image `(height, width)`.
    pub fn image_size(self) -> (usize, usize) {
        match self {
            DatasetKind::Frey => (28, 20),
            _ => (28, 28),
        }
    }

    pub fn num_data_classes(self) -> usize {
        match self {
            DatasetKind::Shapes => 4,
            DatasetKind::Frey => 1,
            DatasetKind::Fashion => 10,
        }
    }

    pub fn pixel_kind(self) -> PixelKind {
        match self {
            DatasetKind::Shapes => PixelKind::Binary,
            _ => PixelKind::Continuous,
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Uncorrupted images with class ids and a train/val/test tag per row.
#[derive(Clone, Debug)]
pub struct CleanDataset {
    pub kind: DatasetKind,
    pub height: usize,
    pub width: usize,
    pub pixel_kind: PixelKind,
    /// `[N × (height·width)]`, row-major pixels.
    pub images: Matrix,
    pub class_id: Vec<usize>,
    pub num_classes: usize,
    pub split: Vec<Split>,
}

impl CleanDataset {
    pub fn len(&self) -> usize {
        self.images.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.height * self.width
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        split_indices(&self.split, split)
    }

    /// Check pixel ranges and per-row bookkeeping.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.images.ncols() != self.dim() {
            return Err(Error::Shape {
                op: "CleanDataset",
                lhs: self.images.dim(),
                rhs: (n, self.dim()),
            });
        }
        if self.class_id.len() != n || self.split.len() != n {
            return Err(Error::Contract("class/split tags do not match row count".into()));
        }
        if self.class_id.iter().any(|&c| c >= self.num_classes) {
            return Err(Error::Contract("class id out of range".into()));
        }
        let ok = match self.pixel_kind {
            PixelKind::Binary => self.images.iter().all(|&v| v == 0.0 || v == 1.0),
            PixelKind::Continuous => self.images.iter().all(|&v| (0.0..=1.0).contains(&v)),
        };
        if !ok {
            return Err(Error::Contract(format!(
                "pixel values outside the {:?} range",
                self.pixel_kind
            )));
        }
        Ok(())
    }
}

pub(crate) fn split_indices(tags: &[Split], split: Split) -> Vec<usize> {
    tags.iter()
        .enumerate()
        .filter(|(_, s)| **s == split)
        .map(|(i, _)| i)
        .collect()
}

/// Seeded split tags with `round(n·train)` train rows, `round(n·val)`
/// validation rows and the rest test.
pub fn assign_splits(n: usize, train: f64, val: f64, seed: u64) -> Vec<Split> {
    let n_train = (n as f64 * train).round() as usize;
    let n_val = ((n as f64 * val).round() as usize).min(n - n_train.min(n));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::rng::stream(seed, 0));
    let mut tags = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        tags[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    tags
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts() {
        let tags = assign_splits(5000, 0.8, 0.1, 3);
        assert_eq!(split_indices(&tags, Split::Train).len(), 4000);
        assert_eq!(split_indices(&tags, Split::Val).len(), 500);
        assert_eq!(split_indices(&tags, Split::Test).len(), 500);
        assert_eq!(tags, assign_splits(5000, 0.8, 0.1, 3));
    }
}
