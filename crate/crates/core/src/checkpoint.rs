//! Checkpoint directories: `manifest.json` with the model description,
//! training settings and a tensor index, `params.bin` and `adam.bin` with
//! little-endian f64 payloads, and `history.csv`.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Matrix, ParamSet};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec};
use crate::rng;
use crate::train::{History, TrainConfig, TrainState};

pub const FORMAT: &str = "clsvae-checkpoint";
pub const VERSION: u32 = 1;

pub const MANIFEST: &str = "manifest.json";
pub const PARAMS: &str = "params.bin";
pub const ADAM: &str = "adam.bin";
pub const HISTORY: &str = "history.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Offset in f64 elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamEntry {
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub model_kind: ModelKind,
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub seed: u64,
    pub epoch: usize,
    pub tensors: Vec<TensorEntry>,
    pub adam: AdamEntry,
}

fn flatten<'a>(mats: impl Iterator<Item = &'a Matrix>) -> Vec<u8> {
    let values: Vec<f64> = mats.flat_map(|m| m.iter().copied()).collect();
    let mut bytes = vec![0u8; values.len() * 8];
    LittleEndian::write_f64_into(&values, &mut bytes);
    bytes
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save(dir: &Path, state: &TrainState, config: &TrainConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let params = state.model.params();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, m) in params.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            rows: m.nrows(),
            cols: m.ncols(),
            offset,
        });
        offset += m.len();
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        version: VERSION,
        model_kind: state.model.kind(),
        spec: state.model.spec(),
        train: config.clone(),
        seed: config.seed,
        epoch: state.epoch,
        tensors,
        adam: AdamEntry {
            config: state.adam.config,
            step: state.adam.step,
        },
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    write(&dir.join(MANIFEST), json.as_bytes())?;
    write(&dir.join(PARAMS), &flatten(params.iter().map(|(_, m)| m)))?;
    let (first, second) = state.adam.moments();
    write(&dir.join(ADAM), &flatten(first.iter().chain(second.iter())))?;
    state.history.save(&dir.join(HISTORY))
}

fn read_f64s(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format {
            path: path.into(),
            offset: bytes.len() as u64,
            msg: "length is not a multiple of 8".into(),
        });
    }
    let mut values = vec![0.0; bytes.len() / 8];
    LittleEndian::read_f64_into(&bytes, &mut values);
    Ok(values)
}

fn take(values: &[f64], entry: &TensorEntry, base: usize, path: &Path) -> Result<Matrix> {
    let start = base + entry.offset;
    let end = start + entry.rows * entry.cols;
    if end > values.len() {
        return Err(Error::Format {
            path: path.into(),
            offset: (values.len() * 8) as u64,
            msg: format!("tensor `{}` runs past the end of the file", entry.name),
        });
    }
    Ok(Matrix::from_shape_vec((entry.rows, entry.cols), values[start..end].to_vec())
        .expect("length checked"))
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: CheckpointManifest = serde_json::from_str(&text)?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(Error::Format {
            path,
            offset: 0,
            msg: format!("unsupported checkpoint {} v{}", m.format, m.version),
        });
    }
    Ok(m)
}

/// Restore a training state and the settings it was trained with.
pub fn load(dir: &Path) -> Result<(TrainState, TrainConfig)> {
    let manifest = read_manifest(dir)?;
    let mut model = manifest.spec.build(&mut rng::stream(0, 0))?;
    let pp = dir.join(PARAMS);
    let values = read_f64s(&pp)?;
    let total: usize = manifest.tensors.iter().map(|t| t.rows * t.cols).sum();
    if total != values.len() || manifest.tensors.len() != model.params().len() {
        return Err(Error::Format {
            path: pp,
            offset: 0,
            msg: format!(
                "{} values in {} tensors, model expects {} tensors",
                values.len(),
                manifest.tensors.len(),
                model.params().len()
            ),
        });
    }
    for t in &manifest.tensors {
        let m = take(&values, t, 0, &pp)?;
        model.params_mut().set(&t.name, m)?;
    }
    let ap = dir.join(ADAM);
    let moments = read_f64s(&ap)?;
    if moments.len() != 2 * total {
        return Err(Error::Format {
            path: ap,
            offset: 0,
            msg: format!("expected {} optimizer values, found {}", 2 * total, moments.len()),
        });
    }
    let params: &ParamSet = model.params();
    let mut first = Vec::new();
    let mut second = Vec::new();
    for id in params.ids() {
        let t = manifest
            .tensors
            .iter()
            .find(|t| t.name == params.name(id))
            .ok_or_else(|| Error::Contract(format!("missing tensor `{}`", params.name(id))))?;
        first.push(take(&moments, t, 0, &ap)?);
        second.push(take(&moments, t, total, &ap)?);
    }
    let adam = AdamState::from_parts(params, manifest.adam.config, manifest.adam.step, first, second)?;
    let hp = dir.join(HISTORY);
    let history = if hp.exists() {
        History::load(&hp)?
    } else {
        History::default()
    };
    Ok((
        TrainState {
            model,
            adam,
            epoch: manifest.epoch,
            history,
        },
        manifest.train,
    ))
}
