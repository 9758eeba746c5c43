//! Systematic error classes: one-pixel lines and 6×6 squares with a fixed
//! footprint and colour.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DatasetKind;
use crate::rng;

pub const SQUARE_SIZE: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineOrientation {
    Horizontal,
    Vertical,
    DiagMain,
    DiagAnti,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorKind {
    /// `index` is the row of a horizontal line or the column of a vertical
    /// one; unused for diagonals.
    Line {
        orientation: LineOrientation,
        index: usize,
    },
    Square {
        top: usize,
        left: usize,
        size: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorClass {
    #[serde(flatten)]
    pub kind: ErrorKind,
    /// Pixel value written over the footprint.
    pub color: f64,
}

impl ErrorClass {
    /// Sorted flat pixel indices touched by this error on an
    /// `height × width` image.
    pub fn footprint(&self, height: usize, width: usize) -> Vec<usize> {
        let mut px = Vec::new();
        match self.kind {
            ErrorKind::Line { orientation, index } => match orientation {
                LineOrientation::Horizontal => px.extend((0..width).map(|c| index * width + c)),
                LineOrientation::Vertical => px.extend((0..height).map(|r| r * width + index)),
                LineOrientation::DiagMain | LineOrientation::DiagAnti => {
                    for r in 0..height {
                        let c = if height > 1 {
                            (r as f64 * (width - 1) as f64 / (height - 1) as f64).round() as usize
                        } else {
                            0
                        };
                        let c = if orientation == LineOrientation::DiagAnti {
                            width - 1 - c
                        } else {
                            c
                        };
                        px.push(r * width + c);
                    }
                }
            },
            ErrorKind::Square { top, left, size } => {
                for r in top..top + size {
                    px.extend((left..left + size).map(|c| r * width + c));
                }
            }
        }
        px.sort_unstable();
        px.dedup();
        px
    }

    pub fn describe(&self) -> String {
        let color = if self.color >= 0.5 { "white" } else { "black" };
        match self.kind {
            ErrorKind::Line { orientation, index } => match orientation {
                LineOrientation::Horizontal => format!("{color} horizontal line at row {index}"),
                LineOrientation::Vertical => format!("{color} vertical line at column {index}"),
                LineOrientation::DiagMain => format!("{color} main diagonal"),
                LineOrientation::DiagAnti => format!("{color} anti-diagonal"),
            },
            ErrorKind::Square { top, left, size } => {
                format!("{color} {size}x{size} square at ({top}, {left})")
            }
        }
    }
}

/// Error classes for a dataset kind. Lines come first (horizontal, vertical,
/// main diagonal, anti-diagonal), then squares.
///
/// Synthetic shapes get four white lines, Fashion four lines and four squares
/// with seeded colours, Frey four squares with seeded colours.
pub fn build_error_classes(kind: DatasetKind, seed: u64) -> Vec<ErrorClass> {
    let (height, width) = kind.image_size();
    let mut rng = rng::stream(seed, 0);
    let mut classes = Vec::new();
    let with_lines = matches!(kind, DatasetKind::Shapes | DatasetKind::Fashion);
    let with_squares = matches!(kind, DatasetKind::Frey | DatasetKind::Fashion);
    if with_lines {
        // straight lines land in the central half so they cross the content
        let row = rng.random_range(height / 4..3 * height / 4);
        let col = rng.random_range(width / 4..3 * width / 4);
        for (orientation, index) in [
            (LineOrientation::Horizontal, row),
            (LineOrientation::Vertical, col),
            (LineOrientation::DiagMain, 0),
            (LineOrientation::DiagAnti, 0),
        ] {
            let color = if kind == DatasetKind::Shapes {
                1.0
            } else {
                rng.random_range(0..2u8) as f64
            };
            classes.push(ErrorClass {
                kind: ErrorKind::Line { orientation, index },
                color,
            });
        }
    }
    if with_squares {
        for _ in 0..4 {
            let top = rng.random_range(0..=height - SQUARE_SIZE);
            let left = rng.random_range(0..=width - SQUARE_SIZE);
            let color = rng.random_range(0..2u8) as f64;
            classes.push(ErrorClass {
                kind: ErrorKind::Square {
                    top,
                    left,
                    size: SQUARE_SIZE,
                },
                color,
            });
        }
    }
    classes
}
