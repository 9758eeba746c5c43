//! Models: the clean-subspace VAE and its baselines behind one trait.

pub mod baselines;
pub mod clsvae;
pub mod nets;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Matrix, ParamSet, Tape, Var};
use crate::error::{Error, Result};

pub use baselines::{CvaeConfig, VaeL2Config, VaegmmConfig};
pub use clsvae::ClsvaeConfig;
pub use nets::NetShape;

/// Default detection threshold, `−log 0.5`.
pub const DEFAULT_GAMMA: f64 = std::f64::consts::LN_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Clsvae,
    VaeL2,
    Cvae,
    Vaegmm,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Clsvae => "clsvae",
            ModelKind::VaeL2 => "vae_l2",
            ModelKind::Cvae => "cvae",
            ModelKind::Vaegmm => "vaegmm",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One optimisation step's worth of data.
///
/// `weight_u` and `weight_l` are the dataset-level fractions `N_u/N` and
/// `N_l/N`; the loss multiplies them with the per-part batch means so the
/// mini-batch objective is an unbiased estimate of the full-data loss.
#[derive(Clone, Debug)]
pub struct Batch {
    pub unlabelled: Matrix,
    pub labelled: Matrix,
    /// 1 inlier, 0 outlier; one per labelled row.
    pub labels: Vec<f64>,
    pub weight_u: f64,
    pub weight_l: f64,
}

impl Batch {
    pub fn n_unlabelled(&self) -> usize {
        self.unlabelled.nrows()
    }

    pub fn n_labelled(&self) -> usize {
        self.labelled.nrows()
    }
}

/// Per-step coefficients set by the training schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossContext {
    pub kl_weight: f64,
    pub lambda_t: f64,
    pub omega: f64,
    /// Training-set size; scales dataset-level penalties down to one
    /// instance.
    pub dataset_size: f64,
}

impl Default for LossContext {
    fn default() -> Self {
        Self {
            kl_weight: 1.0,
            lambda_t: 0.0,
            omega: 1.0,
            dataset_size: 1.0,
        }
    }
}

/// The differentiable total plus batch means of each component for logging.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub recon: f64,
    pub kl_c: f64,
    pub kl_d: f64,
    pub kl_y: f64,
    pub wce: f64,
    pub dc: f64,
    /// The distance-correlation batch was degenerate and contributed 0.
    pub dc_degenerate: bool,
}

impl LossTerms {
    pub(crate) fn new(total: Var) -> Self {
        Self {
            total,
            recon: 0.0,
            kl_c: 0.0,
            kl_d: 0.0,
            kl_y: 0.0,
            wce: 0.0,
            dc: 0.0,
            dc_degenerate: false,
        }
    }
}

/// Annealing ramps a model wants from the trainer.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Ramps {
    /// Ramp ratio of the Gaussian-KL weight; `None` keeps the weight at 1.
    pub kl_ratio: Option<f64>,
    /// `(λ_T, ratio)` of the distance-correlation penalty.
    pub lambda: Option<(f64, f64)>,
}

pub trait Model: Send + Sync {
    fn kind(&self) -> ModelKind;

    fn spec(&self) -> ModelSpec;

    fn params(&self) -> &ParamSet;

    fn params_mut(&mut self) -> &mut ParamSet;

    /// Whether every training row must carry a ground-truth label.
    fn fully_supervised(&self) -> bool {
        false
    }

    fn ramps(&self) -> Ramps;

    /// Build the mini-batch loss on `tape`. All sampling noise is drawn from
    /// `rng`, so a fixed `rng` state gives a deterministic loss.
    fn loss(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &Batch,
        ctx: &LossContext,
        rng: &mut ChaCha8Rng,
    ) -> Result<LossTerms>;

    /// Outlier score per row; higher means more likely an outlier.
    fn score(&self, x: &Matrix) -> Result<Vec<f64>>;

    /// Repaired image per row.
    fn repair(&self, x: &Matrix) -> Result<Matrix>;
}

/// Serializable description of a model, enough to rebuild it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    Clsvae(ClsvaeConfig),
    VaeL2(VaeL2Config),
    Cvae(CvaeConfig),
    Vaegmm(VaegmmConfig),
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Clsvae(_) => ModelKind::Clsvae,
            ModelSpec::VaeL2(_) => ModelKind::VaeL2,
            ModelSpec::Cvae(_) => ModelKind::Cvae,
            ModelSpec::Vaegmm(_) => ModelKind::Vaegmm,
        }
    }

    pub fn shape_mut(&mut self) -> &mut NetShape {
        match self {
            ModelSpec::Clsvae(c) => &mut c.shape,
            ModelSpec::VaeL2(c) => &mut c.shape,
            ModelSpec::Cvae(c) => &mut c.shape,
            ModelSpec::Vaegmm(c) => &mut c.shape,
        }
    }

    pub fn shape(&self) -> &NetShape {
        match self {
            ModelSpec::Clsvae(c) => &c.shape,
            ModelSpec::VaeL2(c) => &c.shape,
            ModelSpec::Cvae(c) => &c.shape,
            ModelSpec::Vaegmm(c) => &c.shape,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.shape();
        if s.input_dim == 0 {
            return Err(Error::config("input_dim must be positive"));
        }
        if s.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        match self {
            ModelSpec::Clsvae(c) => c.validate(),
            ModelSpec::VaeL2(c) => c.validate(),
            ModelSpec::Cvae(c) => c.validate(),
            ModelSpec::Vaegmm(c) => c.validate(),
        }
    }

    /// Fresh model with seeded initial weights.
    pub fn build(&self, rng: &mut ChaCha8Rng) -> Result<Box<dyn Model>> {
        self.validate()?;
        Ok(match self {
            ModelSpec::Clsvae(c) => Box::new(clsvae::Clsvae::new(c.clone(), rng)),
            ModelSpec::VaeL2(c) => Box::new(baselines::VaeL2::new(c.clone(), rng)),
            ModelSpec::Cvae(c) => Box::new(baselines::Cvae::new(c.clone(), rng)),
            ModelSpec::Vaegmm(c) => Box::new(baselines::Vaegmm::new(c.clone(), rng)),
        })
    }
}

/// `max{1, N_l1 / N_l0}`, and 1 when there are no labelled outliers.
pub fn imbalance_weight(labels: &[f64]) -> f64 {
    let n1 = labels.iter().filter(|&&y| y >= 0.5).count();
    let n0 = labels.len() - n1;
    if n0 == 0 {
        1.0
    } else {
        (n1 as f64 / n0 as f64).max(1.0)
    }
}

/// `[rows × cols]` of independent `N(0, σ²)` draws.
pub fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, sigma: f64) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |_| {
        let e: f64 = StandardNormal.sample(rng);
        sigma * e
    })
}

/// Column vector `[n × 1]` from a slice.
pub(crate) fn column(values: &[f64]) -> Matrix {
    Matrix::from_shape_vec((values.len(), 1), values.to_vec()).expect("length matches")
}

/// Mean of a `[n × 1]` value, for logging.
pub(crate) fn mean_value(tape: &Tape, v: Var) -> f64 {
    tape.value(v).mean().unwrap_or(0.0)
}

/// Add `b` to an optional accumulator.
pub(crate) fn accumulate(tape: &mut Tape, acc: Option<Var>, b: Var) -> Result<Var> {
    match acc {
        Some(a) => tape.add(a, b),
        None => Ok(b),
    }
}
