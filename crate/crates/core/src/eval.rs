//! Detection and repair metrics, thresholding and the importance-weighted
//! log-likelihood bound.

use std::io::Write;

use ndarray::Axis;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::data::{CorruptedDataset, PixelKind, Split};
use crate::error::{Error, Result};
use crate::model::baselines::VaeL2;
use crate::model::Model;

/// Average precision with outliers as the positive class. Scores are ranked
/// in descending order; equal scores keep index order.
pub fn avpr(scores: &[f64], is_outlier: &[bool]) -> Result<f64> {
    if scores.len() != is_outlier.len() {
        return Err(Error::Shape {
            op: "avpr",
            lhs: (scores.len(), 1),
            rhs: (is_outlier.len(), 1),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("NaN score".into()));
    }
    let positives = is_outlier.iter().filter(|&&o| o).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric("average precision needs at least one outlier"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if is_outlier[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Indices whose score is at least `gamma`.
pub fn detect(scores: &[f64], gamma: f64) -> Vec<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= gamma)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelSelector {
    Dirty,
    Clean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Smse {
    pub value: f64,
    /// False when the reference variance was zero and plain MSE is reported.
    pub standardized: bool,
    pub pixels: usize,
}

/// Squared error between `repairs` and `truth` over the pixels picked by
/// `selector` from `masks` (true = dirty). Continuous data is divided by the
/// variance of the selected truth pixels; binary data is plain MSE.
pub fn smse(
    repairs: &Matrix,
    truth: &Matrix,
    masks: &[Vec<bool>],
    pixel_kind: PixelKind,
    selector: PixelSelector,
) -> Result<Smse> {
    if repairs.dim() != truth.dim() || masks.len() != truth.nrows() {
        return Err(Error::Shape {
            op: "smse",
            lhs: repairs.dim(),
            rhs: truth.dim(),
        });
    }
    let want = selector == PixelSelector::Dirty;
    let mut sse = 0.0;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut n = 0usize;
    for (i, mask) in masks.iter().enumerate() {
        if mask.len() != truth.ncols() {
            return Err(Error::Shape {
                op: "smse mask",
                lhs: (1, mask.len()),
                rhs: (1, truth.ncols()),
            });
        }
        for (j, &dirty) in mask.iter().enumerate() {
            if dirty == want {
                let t = truth[[i, j]];
                let d = repairs[[i, j]] - t;
                sse += d * d;
                sum += t;
                sum_sq += t * t;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("no pixels selected"));
    }
    let mse = sse / n as f64;
    match pixel_kind {
        PixelKind::Binary => Ok(Smse {
            value: mse,
            standardized: true,
            pixels: n,
        }),
        PixelKind::Continuous => {
            let mean = sum / n as f64;
            let var = (sum_sq / n as f64 - mean * mean).max(0.0);
            if var > 0.0 {
                Ok(Smse {
                    value: mse / var,
                    standardized: true,
                    pixels: n,
                })
            } else {
                Ok(Smse {
                    value: mse,
                    standardized: false,
                    pixels: n,
                })
            }
        }
    }
}

/// `log(1/K Σ_k exp(w_k))` per row of a `[n × K]` log-weight matrix.
pub fn log_mean_exp_rows(log_w: &Matrix) -> Vec<f64> {
    let k = log_w.ncols() as f64;
    log_w
        .axis_iter(Axis(0))
        .map(|row| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !m.is_finite() {
                return m;
            }
            m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - k.ln()
        })
        .collect()
}

/// A model that can draw importance log-weights `log p(x, z) − log q(z | x)`.
pub trait ImportanceSampler {
    fn log_weights(&self, x: &Matrix, k: usize, rng: &mut dyn rand::RngCore) -> Result<Matrix>;
}

impl ImportanceSampler for VaeL2 {
    fn log_weights(&self, x: &Matrix, k: usize, rng: &mut dyn rand::RngCore) -> Result<Matrix> {
        self.iwae_log_weights(x, k, rng)
    }
}

/// Rows per block when drawing importance weights.
const IWAE_BLOCK: usize = 256;

/// Mean over rows of the K-sample importance-weighted bound on `log p(x)`.
/// The entropy estimate is its negative.
pub fn iwae_bound<M: ImportanceSampler + ?Sized, R: Rng>(
    model: &M,
    x: &Matrix,
    k: usize,
    rng: &mut R,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::config("IWAE needs at least one sample"));
    }
    if x.nrows() == 0 {
        return Err(Error::UndefinedMetric("IWAE bound of an empty set"));
    }
    let mut total = 0.0;
    let mut start = 0;
    while start < x.nrows() {
        let end = (start + IWAE_BLOCK).min(x.nrows());
        let block = x.slice(ndarray::s![start..end, ..]).to_owned();
        let lw = model.log_weights(&block, k, rng)?;
        total += log_mean_exp_rows(&lw).iter().sum::<f64>();
        start = end;
    }
    Ok(total / x.nrows() as f64)
}

/// Identifies one experiment cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub dataset: String,
    pub model: String,
    pub noise: f64,
    pub per_class: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub model: String,
    pub noise: f64,
    pub per_class: usize,
    pub seed: u64,
    pub split: Split,
    pub avpr: f64,
    pub smse_dirty: f64,
    pub smse_clean: f64,
    pub gamma: f64,
    /// Instances with score ≥ γ.
    pub detected: usize,
    /// True outliers in the evaluated split.
    pub outliers: usize,
    pub instances: usize,
    /// False when a continuous SMSE fell back to plain MSE.
    pub smse_standardized: bool,
}

pub const CSV_HEADER: [&str; 9] = [
    "dataset", "model", "noise", "per_class", "seed", "avpr", "smse_dirty", "smse_clean", "gamma",
];

impl EvalReport {
    pub fn csv_row(&self) -> [String; 9] {
        [
            self.dataset.clone(),
            self.model.clone(),
            self.noise.to_string(),
            self.per_class.to_string(),
            self.seed.to_string(),
            self.avpr.to_string(),
            self.smse_dirty.to_string(),
            self.smse_clean.to_string(),
            self.gamma.to_string(),
        ]
    }

    pub fn write_csv<W: Write>(reports: &[EvalReport], w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Serde(e.to_string());
        wr.write_record(CSV_HEADER).map_err(err)?;
        for r in reports {
            wr.write_record(r.csv_row()).map_err(err)?;
        }
        wr.flush().map_err(|e| Error::Serde(e.to_string()))
    }
}

/// Scores, detections and repairs of one split.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    /// Dataset indices of the evaluated rows.
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
    /// Dataset indices of the true outliers, aligned with `repairs`.
    pub outlier_indices: Vec<usize>,
    pub repairs: Matrix,
}

/// Score every row of `split`, repair its true outliers and compute the
/// metrics.
pub fn evaluate(
    model: &dyn Model,
    data: &CorruptedDataset,
    split: Split,
    gamma: f64,
    meta: &RunMeta,
) -> Result<Evaluation> {
    if !(gamma >= 0.0) {
        return Err(Error::config(format!("gamma must be >= 0, got {gamma}")));
    }
    if model.spec().shape().input_dim != data.dim() {
        return Err(Error::Shape {
            op: "evaluate",
            lhs: (data.len(), data.dim()),
            rhs: (data.len(), model.spec().shape().input_dim),
        });
    }
    let indices = data.indices(split);
    if indices.is_empty() {
        return Err(Error::UndefinedMetric("evaluation split is empty"));
    }
    let x = data.images.select(Axis(0), &indices);
    let scores = model.score(&x)?;
    let is_outlier: Vec<bool> = indices.iter().map(|&i| data.y_true[i] == 0).collect();
    let avpr_value = avpr(&scores, &is_outlier)?;
    let detected = detect(&scores, gamma).len();

    let outlier_indices: Vec<usize> = indices.iter().copied().filter(|&i| data.y_true[i] == 0).collect();
    let xo = data.images.select(Axis(0), &outlier_indices);
    let repairs = model.repair(&xo)?;
    let truth = data.clean_truth().select(Axis(0), &outlier_indices);
    let masks: Vec<Vec<bool>> = outlier_indices.iter().map(|&i| data.dirty_mask(i)).collect();
    let kind = data.clean.pixel_kind;
    let dirty = smse(&repairs, &truth, &masks, kind, PixelSelector::Dirty)?;
    let clean = smse(&repairs, &truth, &masks, kind, PixelSelector::Clean)?;

    Ok(Evaluation {
        report: EvalReport {
            dataset: meta.dataset.clone(),
            model: meta.model.clone(),
            noise: meta.noise,
            per_class: meta.per_class,
            seed: meta.seed,
            split,
            avpr: avpr_value,
            smse_dirty: dirty.value,
            smse_clean: clean.value,
            gamma,
            detected,
            outliers: outlier_indices.len(),
            instances: indices.len(),
            smse_standardized: dirty.standardized && clean.standardized,
        },
        indices,
        scores,
        outlier_indices,
        repairs,
    })
}

/// Mean and standard error of the mean; the error is 0 for a single value.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
