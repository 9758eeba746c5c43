//! Experiment configuration, named presets, dataset construction and
//! parameter sweeps.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    build_error_classes, corrupt, generate_shapes, idx, matrix, sample_trusted_set, CorruptedDataset, DatasetKind,
    TrustedSet,
};
use crate::error::{Error, Result};
use crate::eval::{self, mean_and_se, EvalReport, Evaluation, RunMeta};
use crate::model::baselines::{CvaeConfig, VaeL2Config, VaegmmConfig};
use crate::model::clsvae::ClsvaeConfig;
use crate::model::nets::NetShape;
use crate::model::{ModelKind, ModelSpec, DEFAULT_GAMMA};
use crate::rng;
use crate::train::{Divergence, TrainConfig, TrainData, TrainState};
use crate::data::Split;

pub const DEFAULT_SHAPES_N: usize = 5000;

/// Names of the shipped presets.
pub const PRESETS: [&str; 3] = ["shapes-35", "frey-35", "fashion-35"];

/// Standard IDX file names inside a Fashion-MNIST directory.
pub const FASHION_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub kind: DatasetKind,
    /// Number of generated images (shapes only).
    #[serde(default)]
    pub n: Option<usize>,
    pub seed: u64,
    pub noise: f64,
    pub per_class: usize,
    /// Flat matrix file (frey) or IDX directory (fashion).
    #[serde(default)]
    pub path: Option<PathBuf>,
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::config(format!(
                "data.noise must be in [0, 1), got {}",
                self.noise
            )));
        }
        match self.kind {
            DatasetKind::Shapes => {
                if self.n == Some(0) {
                    return Err(Error::config("data.n must be positive"));
                }
            }
            kind => {
                if self.n.is_some() {
                    return Err(Error::config("data.n applies to shapes only"));
                }
                if self.path.is_none() {
                    return Err(Error::config(format!("data.path is required for {kind}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_split")]
    pub split: Split,
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

fn default_split() -> Split {
    Split::Test
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            split: Split::Test,
        }
    }
}

/// Grid of sweep cells. Empty lists fall back to the single value in
/// `data` / `train`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default)]
    pub noise: Vec<f64>,
    #[serde(default)]
    pub per_class: Vec<usize>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub preset: Option<String>,
    pub data: DataConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn model_for(kind: DatasetKind, model: ModelKind) -> ModelSpec {
    let shape = NetShape {
        input_dim: {
            let (h, w) = kind.image_size();
            h * w
        },
        pixel_kind: kind.pixel_kind(),
        ..NetShape::default()
    };
    // (sigma_eps, sigma_c, lambda_T, beta, l2, cvae sigma, vaegmm sigma_y1)
    let (sigma_eps, sigma_c, lambda, beta, l2, cvae_sigma, sigma_y1) = match kind {
        DatasetKind::Shapes => (0.5, 0.5, 100.0, 1000.0, 35.0, 0.5, 0.9),
        DatasetKind::Frey => (0.6, 0.2, 1000.0, 1000.0, 100.0, 0.2, 0.6),
        DatasetKind::Fashion => (0.1, 0.2, 1000.0, 100.0, 100.0, 0.5, 0.5),
    };
    match model {
        ModelKind::Clsvae => ModelSpec::Clsvae(ClsvaeConfig {
            sigma_eps,
            sigma_c,
            lambda_max: lambda,
            beta,
            ..ClsvaeConfig::new(shape)
        }),
        ModelKind::VaeL2 => ModelSpec::VaeL2(VaeL2Config {
            l2,
            ..VaeL2Config::new(shape)
        }),
        ModelKind::Cvae => ModelSpec::Cvae(CvaeConfig {
            sigma: cvae_sigma,
            ..CvaeConfig::new(shape)
        }),
        ModelKind::Vaegmm => ModelSpec::Vaegmm(VaegmmConfig {
            sigma_y1,
            beta,
            ..VaegmmConfig::new(shape)
        }),
    }
}

/// A named preset for `model`: 35% noise, 10 labels per class, the dataset's
/// epoch budget and hyperparameters.
pub fn preset(name: &str, model: ModelKind) -> Result<ExperimentConfig> {
    let (kind, epochs) = match name {
        "shapes-35" => (DatasetKind::Shapes, 200),
        "frey-35" => (DatasetKind::Frey, 300),
        "fashion-35" => (DatasetKind::Fashion, 100),
        other => {
            return Err(Error::config(format!(
                "unknown preset `{other}`, expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(ExperimentConfig {
        preset: Some(name.to_string()),
        data: DataConfig {
            kind,
            n: (kind == DatasetKind::Shapes).then_some(DEFAULT_SHAPES_N),
            seed: 1,
            noise: 0.35,
            per_class: 10,
            path: None,
        },
        model: model_for(kind, model),
        train: TrainConfig::new(epochs, 1),
        eval: EvalConfig::default(),
        sweep: SweepConfig::default(),
        out: None,
    })
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn toml_err(e: impl std::fmt::Display) -> Error {
    Error::config(e.to_string())
}

impl ExperimentConfig {
    /// Parse a TOML document. With a preset (from `preset_override` or the
    /// document's `preset` key) the document is merged over the preset for
    /// the model named in `model.model` (default `clsvae`).
    pub fn from_toml_str(text: &str, preset_override: Option<&str>) -> Result<Self> {
        let doc: toml::Table = text.parse().map_err(toml_err)?;
        let doc = toml::Value::Table(doc);
        let name = preset_override
            .map(str::to_string)
            .or_else(|| doc.get("preset").and_then(|v| v.as_str()).map(str::to_string));
        let merged = match name {
            Some(name) => {
                let kind = match doc.get("model").and_then(|m| m.get("model")) {
                    Some(v) => {
                        let s = v.as_str().ok_or_else(|| Error::config("model.model must be a string"))?;
                        parse_model_kind(s)?
                    }
                    None => ModelKind::Clsvae,
                };
                let mut base = toml::Value::try_from(preset(&name, kind)?).map_err(toml_err)?;
                merge(&mut base, doc);
                if let toml::Value::Table(t) = &mut base {
                    t.insert("preset".into(), toml::Value::String(name));
                }
                base
            }
            None => doc,
        };
        let mut cfg: ExperimentConfig = merged.try_into().map_err(toml_err)?;
        cfg.resolve()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset_override: Option<&str>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, preset_override)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Fill the network input width and pixel kind from the dataset.
    pub fn resolve(&mut self) -> Result<()> {
        let (h, w) = self.data.kind.image_size();
        let kind = self.data.kind.pixel_kind();
        let shape = self.model.shape_mut();
        if shape.input_dim != 0 && shape.input_dim != h * w {
            return Err(Error::config(format!(
                "model input_dim {} does not match {} images of {h}x{w}",
                shape.input_dim, self.data.kind
            )));
        }
        shape.input_dim = h * w;
        shape.pixel_kind = kind;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if !(self.eval.gamma >= 0.0) {
            return Err(Error::config(format!("eval.gamma must be >= 0, got {}", self.eval.gamma)));
        }
        if self.data.per_class == 0 && self.model.kind() != ModelKind::Cvae {
            return Err(Error::config("data.per_class must be positive"));
        }
        for &n in &self.sweep.noise {
            if !(0.0..1.0).contains(&n) {
                return Err(Error::config(format!("sweep.noise must be in [0, 1), got {n}")));
            }
        }
        if self.sweep.per_class.contains(&0) {
            return Err(Error::config("sweep.per_class entries must be positive"));
        }
        Ok(())
    }

    /// Use `seed` for data generation and training.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn meta(&self) -> RunMeta {
        RunMeta {
            dataset: self.data.kind.to_string(),
            model: self.model.kind().to_string(),
            noise: self.data.noise,
            per_class: self.data.per_class,
            seed: self.train.seed,
        }
    }

    /// Every (noise, per_class, seed) cell in grid order.
    pub fn cells(&self) -> Vec<ExperimentConfig> {
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let noises = or(&self.sweep.noise, self.data.noise);
        let sizes = if self.sweep.per_class.is_empty() {
            vec![self.data.per_class]
        } else {
            self.sweep.per_class.clone()
        };
        let seeds = if self.sweep.seeds.is_empty() {
            vec![self.train.seed]
        } else {
            self.sweep.seeds.clone()
        };
        let mut out = Vec::new();
        for &noise in &noises {
            for &per_class in &sizes {
                for &seed in &seeds {
                    let mut c = self.clone().with_seed(seed);
                    c.data.noise = noise;
                    c.data.per_class = per_class;
                    c.sweep = SweepConfig::default();
                    out.push(c);
                }
            }
        }
        out
    }
}

pub fn parse_model_kind(s: &str) -> Result<ModelKind> {
    match s {
        "clsvae" => Ok(ModelKind::Clsvae),
        "vae_l2" => Ok(ModelKind::VaeL2),
        "cvae" => Ok(ModelKind::Cvae),
        "vaegmm" => Ok(ModelKind::Vaegmm),
        other => Err(Error::config(format!(
            "unknown model `{other}`, expected clsvae, vae_l2, cvae or vaegmm"
        ))),
    }
}

/// Clean images of the configured dataset.
pub fn load_clean(cfg: &DataConfig) -> Result<crate::data::CleanDataset> {
    cfg.validate()?;
    match cfg.kind {
        DatasetKind::Shapes => Ok(generate_shapes(
            cfg.n.unwrap_or(DEFAULT_SHAPES_N),
            rng::derive(cfg.seed, "shapes"),
        )),
        DatasetKind::Frey => {
            let path = cfg.path.as_deref().expect("validated");
            let (h, w) = DatasetKind::Frey.image_size();
            let mut clean = matrix::load_matrix(path, h, w)?;
            clean.split = crate::data::assign_splits(clean.len(), 0.8, 0.1, rng::derive(cfg.seed, "split"));
            Ok(clean)
        }
        DatasetKind::Fashion => {
            let dir = cfg.path.as_deref().expect("validated");
            let [a, b, c, d] = FASHION_FILES.map(|f| dir.join(f));
            for p in [&a, &b, &c, &d] {
                if !p.exists() {
                    return Err(Error::config(format!("missing Fashion-MNIST file {}", p.display())));
                }
            }
            idx::load_fashion(&a, &b, &c, &d, rng::derive(cfg.seed, "split"))
        }
    }
}

/// Corrupted dataset and trusted set for `cfg`. Pure in `cfg`.
pub fn build_dataset(cfg: &DataConfig) -> Result<(CorruptedDataset, TrustedSet)> {
    let clean = load_clean(cfg)?;
    let classes = build_error_classes(cfg.kind, rng::derive(cfg.seed, "errors"));
    let data = corrupt(&clean, cfg.noise, &classes, rng::derive(cfg.seed, "corrupt"))?;
    let trusted = sample_trusted_set(&data, cfg.per_class, rng::derive(cfg.seed, "trusted"))?;
    Ok((data, trusted))
}

/// Train a fresh model on `data`.
pub fn train_model(
    cfg: &ExperimentConfig,
    data: &CorruptedDataset,
    trusted: &TrustedSet,
    on_epoch: impl FnMut(&TrainState, &crate::train::EpochRecord) -> Result<()>,
) -> Result<(TrainState, Option<Divergence>)> {
    let mut state = TrainState::new(&cfg.model, &cfg.train)?;
    let fully = state.model.fully_supervised();
    let td = TrainData::from_dataset(data, Some(trusted), fully)?;
    let div = state.train(&td, &cfg.train, on_epoch)?;
    Ok((state, div))
}

/// Outcome of one experiment cell.
#[derive(Debug)]
pub struct CellRun {
    pub state: TrainState,
    pub evaluation: Option<Evaluation>,
    pub divergence: Option<Divergence>,
}

/// Build the data, train and evaluate. A diverged run is not evaluated.
pub fn run_cell(cfg: &ExperimentConfig) -> Result<CellRun> {
    cfg.validate()?;
    let (data, trusted) = build_dataset(&cfg.data)?;
    let (state, divergence) = train_model(cfg, &data, &trusted, |_, _| Ok(()))?;
    let evaluation = match divergence {
        Some(_) => None,
        None => Some(eval::evaluate(
            state.model.as_ref(),
            &data,
            cfg.eval.split,
            cfg.eval.gamma,
            &cfg.meta(),
        )?),
    };
    Ok(CellRun {
        state,
        evaluation,
        divergence,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub noise: f64,
    pub per_class: usize,
    pub seed: u64,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

/// Run every cell of the sweep in parallel. Failures are recorded per cell.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    let cells = cfg.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.sweep.threads)
        .build()
        .map_err(|e| Error::config(e.to_string()))?;
    let results = pool.install(|| {
        cells
            .par_iter()
            .map(|c| {
                info!(
                    "cell noise {} per_class {} seed {}",
                    c.data.noise, c.data.per_class, c.train.seed
                );
                let (report, error) = match run_cell(c) {
                    Ok(CellRun {
                        evaluation: Some(e), ..
                    }) => (Some(e.report), None),
                    Ok(CellRun {
                        divergence: Some(d), ..
                    }) => (None, Some(format!("diverged in epoch {}: {}", d.epoch, d.message))),
                    Ok(_) => (None, Some("no evaluation".to_string())),
                    Err(e) => (None, Some(e.to_string())),
                };
                if let Some(e) = &error {
                    warn!("cell seed {} failed: {e}", c.train.seed);
                }
                CellResult {
                    noise: c.data.noise,
                    per_class: c.data.per_class,
                    seed: c.train.seed,
                    report,
                    error,
                }
            })
            .collect()
    });
    Ok(results)
}

/// Mean and standard error over the successful seeds of one (noise,
/// per_class) group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dataset: String,
    pub model: String,
    pub noise: f64,
    pub per_class: usize,
    pub seeds: usize,
    pub failed: usize,
    pub avpr: (f64, f64),
    pub smse_dirty: (f64, f64),
    pub smse_clean: (f64, f64),
    /// Set when some cells of the group failed.
    pub flagged: bool,
}

/// Group cells by (noise, per_class) in first-seen order.
pub fn aggregate(cells: &[CellResult]) -> Vec<Aggregate> {
    let mut keys: Vec<(f64, usize)> = Vec::new();
    for c in cells {
        if !keys.iter().any(|&(n, p)| n == c.noise && p == c.per_class) {
            keys.push((c.noise, c.per_class));
        }
    }
    keys.into_iter()
        .map(|(noise, per_class)| {
            let group: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.noise == noise && c.per_class == per_class)
                .collect();
            let ok: Vec<&EvalReport> = group.iter().filter_map(|c| c.report.as_ref()).collect();
            let col = |f: fn(&EvalReport) -> f64| mean_and_se(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            let first = ok.first();
            Aggregate {
                dataset: first.map_or_else(String::new, |r| r.dataset.clone()),
                model: first.map_or_else(String::new, |r| r.model.clone()),
                noise,
                per_class,
                seeds: ok.len(),
                failed: group.len() - ok.len(),
                avpr: col(|r| r.avpr),
                smse_dirty: col(|r| r.smse_dirty),
                smse_clean: col(|r| r.smse_clean),
                flagged: ok.len() < group.len(),
            }
        })
        .collect()
}

fn cell(v: (f64, f64)) -> String {
    format!("{:.3} ({:.3})", v.0, v.1)
}

/// Plain-text table with mean (standard error) per metric.
pub fn format_table(rows: &[Aggregate]) -> String {
    let mut out = format!(
        "{:<8} {:<7} {:>6} {:>9} {:>16} {:>16} {:>16} {:>6}\n",
        "dataset", "model", "noise", "per_class", "avpr", "smse_dirty", "smse_clean", "seeds"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<8} {:<7} {:>6.2} {:>9} {:>16} {:>16} {:>16} {:>6}{}\n",
            r.dataset,
            r.model,
            r.noise,
            r.per_class,
            cell(r.avpr),
            cell(r.smse_dirty),
            cell(r.smse_clean),
            r.seeds,
            if r.flagged {
                format!("  [{} failed]", r.failed)
            } else {
                String::new()
            }
        ));
    }
    out
}

/// CSV of aggregate rows.
pub fn write_aggregates_csv<W: std::io::Write>(rows: &[Aggregate], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Serde(e.to_string());
    wr.write_record([
        "dataset", "model", "noise", "per_class", "seeds", "failed", "avpr", "avpr_se", "smse_dirty",
        "smse_dirty_se", "smse_clean", "smse_clean_se",
    ])
    .map_err(err)?;
    for r in rows {
        wr.write_record([
            r.dataset.clone(),
            r.model.clone(),
            r.noise.to_string(),
            r.per_class.to_string(),
            r.seeds.to_string(),
            r.failed.to_string(),
            r.avpr.0.to_string(),
            r.avpr.1.to_string(),
            r.smse_dirty.0.to_string(),
            r.smse_dirty.1.to_string(),
            r.smse_clean.0.to_string(),
            r.smse_clean.1.to_string(),
        ])
        .map_err(err)?;
    }
    wr.flush().map_err(|e| Error::Serde(e.to_string()))
}
