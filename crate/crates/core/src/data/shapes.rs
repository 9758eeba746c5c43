//! Synthetic binary shapes: circle, rectangle, ellipse and triangle, white on
//! black, one per image.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{assign_splits, CleanDataset, DatasetKind, PixelKind};
use crate::autodiff::Matrix;
use crate::rng;

pub const SIDE: usize = 28;
pub const CLASS_NAMES: [&str; 4] = ["circle", "rectangle", "ellipse", "triangle"];
pub const MIN_PIXELS: usize = 20;

/// `n` images, classes balanced to within one, split 80/10/10.
pub fn generate_shapes(n: usize, seed: u64) -> CleanDataset {
    let mut classes: Vec<usize> = (0..n).map(|i| i % 4).collect();
    classes.shuffle(&mut rng::stream(seed, 0));
    let mut images = Matrix::zeros((n, SIDE * SIDE));
    let mut draw = rng::stream(seed, 1);
    for (i, &class) in classes.iter().enumerate() {
        let img = render_valid(class, &mut draw);
        images.row_mut(i).assign(&ndarray::ArrayView1::from(&img));
    }
    CleanDataset {
        kind: DatasetKind::Shapes,
        height: SIDE,
        width: SIDE,
        pixel_kind: PixelKind::Binary,
        images,
        class_id: classes,
        num_classes: 4,
        split: assign_splits(n, 0.8, 0.1, rng::derive(seed, "split")),
    }
}

fn render_valid(class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let img = render(class, rng);
        let on = img.iter().filter(|&&v| v > 0.5).count();
        if on >= MIN_PIXELS && components(&img, SIDE, SIDE) == 1 {
            return img;
        }
    }
}

fn render(class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let last = (SIDE - 1) as f64;
    let mut img = vec![0.0; SIDE * SIDE];
    let mut fill = |inside: &dyn Fn(f64, f64) -> bool| {
        for r in 0..SIDE {
            for c in 0..SIDE {
                if inside(r as f64, c as f64) {
                    img[r * SIDE + c] = 1.0;
                }
            }
        }
    };
    match class {
        0 => {
            let rad = rng.random_range(4.0..=10.0);
            let cy = rng.random_range(rad..=last - rad);
            let cx = rng.random_range(rad..=last - rad);
            fill(&|r, c| (r - cy).powi(2) + (c - cx).powi(2) <= rad * rad);
        }
        1 => {
            let h = rng.random_range(8..=20usize);
            let w = rng.random_range(8..=20usize);
            let top = rng.random_range(0..=SIDE - h) as f64;
            let left = rng.random_range(0..=SIDE - w) as f64;
            let (h, w) = (h as f64, w as f64);
            fill(&|r, c| r >= top && r < top + h && c >= left && c < left + w);
        }
        2 => {
            let major = rng.random_range(7.0..=13.0);
            let minor = rng.random_range(4.0..=0.65 * major);
            let (ay, ax) = if rng.random_bool(0.5) {
                (minor, major)
            } else {
                (major, minor)
            };
            let cy = rng.random_range(ay..=last - ay);
            let cx = rng.random_range(ax..=last - ax);
            fill(&|r, c| ((r - cy) / ay).powi(2) + ((c - cx) / ax).powi(2) <= 1.0);
        }
        _ => {
            let h = rng.random_range(8..=20usize);
            let w = rng.random_range(10..=22usize);
            let top = rng.random_range(0..=SIDE - h) as f64;
            let left = rng.random_range(0..=SIDE - w) as f64;
            let (h, w) = ((h - 1) as f64, (w - 1) as f64);
            let apex = (top, left + w / 2.0);
            let bl = (top + h, left);
            let br = (top + h, left + w);
            fill(&|r, c| {
                let p = (r, c);
                edge(apex, bl, p) >= -1e-9 && edge(bl, br, p) >= -1e-9 && edge(br, apex, p) >= -1e-9
                    || edge(apex, bl, p) <= 1e-9 && edge(bl, br, p) <= 1e-9 && edge(br, apex, p) <= 1e-9
            });
        }
    }
    img
}

/// Signed area test: which side of `a → b` the point `p` lies on.
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Number of 8-connected components of pixels above 0.5.
pub fn components(img: &[f64], height: usize, width: usize) -> usize {
    let mut seen = vec![false; img.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..img.len() {
        if seen[start] || img[start] <= 0.5 {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = ((i / width) as isize, (i % width) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= height as isize || cc >= width as isize {
                        continue;
                    }
                    let j = rr as usize * width + cc as usize;
                    if !seen[j] && img[j] > 0.5 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    count
}
