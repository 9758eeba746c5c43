//! Mini-batch training with annealing ramps, per-epoch history and
//! divergence handling.

use std::io::{Read, Write};
use std::path::Path;

use log::{info, warn};
use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Matrix, Tape};
use crate::data::{CorruptedDataset, Split, TrustedSet};
use crate::error::{Error, Result};
use crate::model::{imbalance_weight, Batch, LossContext, Model, ModelSpec};
use crate::rng;

/// Linear warm-up `max_value · min(1, epoch / (ramp_ratio · total_epochs))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub max_value: f64,
    pub ramp_ratio: f64,
    pub total_epochs: usize,
}

impl Schedule {
    pub fn new(max_value: f64, ramp_ratio: f64, total_epochs: usize) -> Result<Self> {
        if !(ramp_ratio > 0.0 && ramp_ratio <= 1.0) {
            return Err(Error::config(format!("ramp ratio must be in (0, 1], got {ramp_ratio}")));
        }
        if !(max_value >= 0.0 && max_value.is_finite()) {
            return Err(Error::config(format!("ramp maximum must be >= 0, got {max_value}")));
        }
        Ok(Self {
            max_value,
            ramp_ratio,
            total_epochs,
        })
    }

    pub fn value(&self, epoch: usize) -> f64 {
        let ramp = self.ramp_ratio * self.total_epochs as f64;
        if ramp <= 0.0 {
            return self.max_value;
        }
        self.max_value * (epoch as f64 / ramp).min(1.0)
    }
}

pub const DEFAULT_BATCH_SIZE: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    pub seed: u64,
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

fn default_learning_rate() -> f64 {
    1e-3
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: default_learning_rate(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Training rows split into the unlabelled pool and the labelled pool.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub unlabelled: Matrix,
    pub labelled: Matrix,
    /// 1 inlier, 0 outlier.
    pub labels: Vec<f64>,
}

impl TrainData {
    pub fn new(unlabelled: Matrix, labelled: Matrix, labels: Vec<f64>) -> Result<Self> {
        if labelled.nrows() != labels.len() {
            return Err(Error::Contract(format!(
                "{} labelled rows but {} labels",
                labelled.nrows(),
                labels.len()
            )));
        }
        if unlabelled.nrows() > 0 && labelled.nrows() > 0 && unlabelled.ncols() != labelled.ncols() {
            return Err(Error::Shape {
                op: "train data",
                lhs: unlabelled.dim(),
                rhs: labelled.dim(),
            });
        }
        if unlabelled.nrows() + labelled.nrows() == 0 {
            return Err(Error::Contract("no training rows".into()));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Contract("labels must be 0 or 1".into()));
        }
        Ok(Self {
            unlabelled,
            labelled,
            labels,
        })
    }

    /// Train-split rows of `data`. Trusted rows form the labelled pool and
    /// are excluded from the unlabelled pool; with `fully_supervised` every
    /// train row is labelled with its ground truth.
    pub fn from_dataset(
        data: &CorruptedDataset,
        trusted: Option<&TrustedSet>,
        fully_supervised: bool,
    ) -> Result<Self> {
        let train = data.indices(Split::Train);
        if fully_supervised {
            let labels = train.iter().map(|&i| f64::from(data.y_true[i])).collect();
            let x = data.images.select(Axis(0), &train);
            return Self::new(Matrix::zeros((0, data.dim())), x, labels);
        }
        let (lab_idx, labels): (Vec<usize>, Vec<f64>) = match trusted {
            Some(t) => t
                .indices
                .iter()
                .zip(&t.labels)
                .map(|(&i, &y)| (i, f64::from(y)))
                .unzip(),
            None => (Vec::new(), Vec::new()),
        };
        let mut is_trusted = vec![false; data.len()];
        for &i in &lab_idx {
            if i >= data.len() {
                return Err(Error::Contract(format!("trusted index {i} out of range")));
            }
            is_trusted[i] = true;
        }
        let unl: Vec<usize> = train.into_iter().filter(|&i| !is_trusted[i]).collect();
        Self::new(
            data.images.select(Axis(0), &unl),
            data.images.select(Axis(0), &lab_idx),
            labels,
        )
    }

    pub fn len(&self) -> usize {
        self.unlabelled.nrows() + self.labelled.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        if self.unlabelled.nrows() > 0 {
            self.unlabelled.ncols()
        } else {
            self.labelled.ncols()
        }
    }
}

/// Per-epoch means of the loss components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub recon: f64,
    pub kl_c: f64,
    pub kl_d: f64,
    pub kl_y: f64,
    pub wce: f64,
    pub dc: f64,
    pub lambda_t: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        if self.records.is_empty() {
            wr.write_record([
                "epoch", "loss", "recon", "kl_c", "kl_d", "kl_y", "wce", "dc", "lambda_t",
            ])
            .map_err(csv_err)?;
        }
        for r in &self.records {
            wr.serialize(r).map_err(csv_err)?;
        }
        wr.flush().map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let records = rd
            .deserialize()
            .collect::<std::result::Result<Vec<EpochRecord>, _>>()
            .map_err(csv_err)?;
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serde(e.to_string())
}

/// Where a run stopped because of a non-finite value.
#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    /// 1-based epoch in which the failure happened.
    pub epoch: usize,
    pub step: usize,
    pub message: String,
}

/// Model, optimizer and progress; everything needed to resume.
pub struct TrainState {
    pub model: Box<dyn Model>,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub history: History,
}

impl std::fmt::Debug for TrainState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainState")
            .field("model", &self.model.kind())
            .field("epoch", &self.epoch)
            .finish()
    }
}

impl TrainState {
    /// Fresh model with weights drawn from the seed's init stream.
    pub fn new(spec: &ModelSpec, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init = rng::stream(rng::derive(config.seed, "init"), 0);
        let model = spec.build(&mut init)?;
        let adam = AdamState::new(model.params(), config.adam());
        Ok(Self {
            model,
            adam,
            epoch: 0,
            history: History::default(),
        })
    }

    /// Run one epoch. On divergence the parameters and optimizer state are
    /// rolled back to the start of the epoch; other failures are returned as
    /// errors.
    pub fn run_epoch(
        &mut self,
        data: &TrainData,
        config: &TrainConfig,
    ) -> Result<std::result::Result<EpochRecord, Divergence>> {
        let epoch = self.epoch;
        let saved_params = self.model.params().clone();
        let saved_adam = self.adam.clone();
        match self.epoch_inner(data, config) {
            Ok(r) => {
                self.epoch += 1;
                self.history.records.push(r.clone());
                Ok(Ok(r))
            }
            Err((step, e @ Error::Diverged { .. })) => {
                *self.model.params_mut() = saved_params;
                self.adam = saved_adam;
                Ok(Err(Divergence {
                    epoch: epoch + 1,
                    step,
                    message: e.to_string(),
                }))
            }
            Err((_, e)) => {
                *self.model.params_mut() = saved_params;
                self.adam = saved_adam;
                Err(e)
            }
        }
    }

    fn epoch_inner(&mut self, data: &TrainData, config: &TrainConfig) -> std::result::Result<EpochRecord, (usize, Error)> {
        let epoch = self.epoch;
        let mut rng = rng::stream(rng::derive(config.seed, "train"), epoch as u64);
        let ramps = self.model.ramps();
        let kl_weight = match ramps.kl_ratio {
            Some(r) => Schedule::new(1.0, r, config.epochs).map_err(|e| (0, e))?.value(epoch),
            None => 1.0,
        };
        let lambda_t = match ramps.lambda {
            Some((max, r)) => Schedule::new(max, r, config.epochs).map_err(|e| (0, e))?.value(epoch),
            None => 0.0,
        };
        let ctx = LossContext {
            kl_weight,
            lambda_t,
            omega: imbalance_weight(&data.labels),
            dataset_size: data.len() as f64,
        };
        let n_u = data.unlabelled.nrows();
        let n_l = data.labelled.nrows();
        let n = (n_u + n_l) as f64;

        let mut sums = [0.0f64; 7];
        let mut steps = 0usize;
        let supervised_only = n_u == 0;
        let pool = if supervised_only { n_l } else { n_u };
        let mut order: Vec<usize> = (0..pool).collect();
        order.shuffle(&mut rng);

        for chunk in order.chunks(config.batch_size) {
            let batch = if supervised_only {
                Batch {
                    unlabelled: Matrix::zeros((0, data.dim())),
                    labelled: data.labelled.select(Axis(0), chunk),
                    labels: chunk.iter().map(|&i| data.labels[i]).collect(),
                    weight_u: 0.0,
                    weight_l: 1.0,
                }
            } else {
                let k = if n_l == 0 {
                    0
                } else {
                    ((chunk.len() as f64 * n_l as f64 / n_u as f64).round() as usize).max(1)
                };
                let lab: Vec<usize> = (0..k).map(|_| rng.random_range(0..n_l)).collect();
                Batch {
                    unlabelled: data.unlabelled.select(Axis(0), chunk),
                    labelled: data.labelled.select(Axis(0), &lab),
                    labels: lab.iter().map(|&i| data.labels[i]).collect(),
                    weight_u: n_u as f64 / n,
                    weight_l: n_l as f64 / n,
                }
            };

            let mut tape = Tape::new();
            let bound = self.model.params().bind(&mut tape);
            let terms = self
                .model
                .loss(&mut tape, &bound, &batch, &ctx, &mut rng)
                .map_err(|e| (steps, e))?;
            let total = tape.scalar(terms.total);
            if !total.is_finite() {
                return Err((
                    steps,
                    Error::Diverged {
                        name: "loss".into(),
                    },
                ));
            }
            let grads = tape.backward(terms.total).map_err(|e| (steps, e))?;
            let g: Vec<_> = bound.vars().iter().map(|&v| grads.get(v).cloned()).collect();
            drop(tape);
            self.adam
                .step(self.model.params_mut(), &g)
                .map_err(|e| (steps, e))?;

            for (s, v) in sums.iter_mut().zip([
                total,
                terms.recon,
                terms.kl_c,
                terms.kl_d,
                terms.kl_y,
                terms.wce,
                terms.dc,
            ]) {
                *s += v;
            }
            steps += 1;
        }
        let m = |i: usize| sums[i] / steps.max(1) as f64;
        Ok(EpochRecord {
            epoch: epoch + 1,
            loss: m(0),
            recon: m(1),
            kl_c: m(2),
            kl_d: m(3),
            kl_y: m(4),
            wce: m(5),
            dc: m(6),
            lambda_t,
        })
    }

    /// Train until `config.epochs` epochs are complete, calling `on_epoch`
    /// after each one. Returns the divergence, if any.
    pub fn train(
        &mut self,
        data: &TrainData,
        config: &TrainConfig,
        mut on_epoch: impl FnMut(&TrainState, &EpochRecord) -> Result<()>,
    ) -> Result<Option<Divergence>> {
        config.validate()?;
        if data.dim() != self.model.spec().shape().input_dim {
            return Err(Error::Shape {
                op: "train",
                lhs: (data.len(), data.dim()),
                rhs: (data.len(), self.model.spec().shape().input_dim),
            });
        }
        if self.model.fully_supervised() && data.unlabelled.nrows() > 0 {
            return Err(Error::Contract(format!(
                "{} needs every training row labelled",
                self.model.kind()
            )));
        }
        while self.epoch < config.epochs {
            match self.run_epoch(data, config)? {
                Ok(r) => {
                    info!(
                        "epoch {}/{} loss {:.4} recon {:.4} kl_c {:.4} kl_d {:.4} kl_y {:.4} wce {:.4} dc {:.4} lambda {:.3}",
                        r.epoch, config.epochs, r.loss, r.recon, r.kl_c, r.kl_d, r.kl_y, r.wce, r.dc, r.lambda_t
                    );
                    on_epoch(self, &r)?;
                }
                Err(d) => {
                    warn!("diverged in epoch {} step {}: {}", d.epoch, d.step, d.message);
                    return Ok(Some(d));
                }
            }
        }
        Ok(None)
    }
}
