//! `clsvae` experiment runner.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use clsvae::checkpoint;
use clsvae::data::bundle::{load_bundle, save_bundle, BundleManifest};
use clsvae::data::{CorruptedDataset, Split};
use clsvae::eval::{self, EvalReport, RunMeta};
use clsvae::experiment::{
    aggregate, build_dataset, format_table, preset, run_sweep, write_aggregates_csv, CellResult, ExperimentConfig,
};
use clsvae::image;
use clsvae::model::{ModelKind, DEFAULT_GAMMA};
use clsvae::train::{TrainData, TrainState};

/// Rows in the exported image grid.
const GRID_ROWS: usize = 16;
/// Save a resumable checkpoint every this many epochs.
const CHECKPOINT_EVERY: usize = 10;

#[derive(Parser)]
#[command(name = "clsvae", version, about = "Detect and repair systematic errors in image datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset: shapes-35, frey-35 or fashion-35.
    #[arg(long)]
    preset: Option<String>,
    /// Model used with a bare preset: clsvae, vae_l2, cvae or vaegmm.
    #[arg(long)]
    model: Option<String>,
    /// Seed for data generation and training.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, corrupt and label a dataset and write it as a bundle.
    BuildData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a bundle and write a checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Bundle directory written by build-data.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Score and repair a bundle split with a trained checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Detection threshold; defaults to ln 2.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run every (noise, per_class, seed) cell of a config and aggregate.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Aggregate reports under a directory into a table.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
struct Diverged(String);

impl std::fmt::Display for Diverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Diverged {}

/// Error carrying its process exit code.
#[derive(Debug)]
struct Exit(u8, anyhow::Error);

fn classify(e: anyhow::Error) -> Exit {
    let diverged = e.chain().any(|c| {
        c.is::<Diverged>() || matches!(c.downcast_ref::<clsvae::Error>(), Some(clsvae::Error::Diverged { .. }))
    });
    Exit(if diverged { 3 } else { 2 }, e)
}

fn load_config(args: &ConfigArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), p) => ExperimentConfig::load(path, p.as_deref())
            .with_context(|| format!("loading {}", path.display()))?,
        (None, Some(p)) => {
            let kind = match &args.model {
                Some(m) => clsvae::experiment::parse_model_kind(m)?,
                None => ModelKind::Clsvae,
            };
            let mut cfg = preset(p, kind)?;
            cfg.resolve()?;
            cfg
        }
        (None, None) => bail!(clsvae::Error::config("pass --config or --preset")),
    };
    if args.config.is_some() && args.model.is_some() {
        bail!(clsvae::Error::config("--model only applies to a bare --preset; set model.model in the file"));
    }
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn build_data(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let (data, trusted) = build_dataset(&cfg.data)?;
    save_bundle(out, &data, Some(&trusted), Some(cfg.data.seed))?;
    write_file(&out.join("config.toml"), cfg.to_toml()?)?;
    info!(
        "wrote {} images ({} outliers, {} trusted) to {}",
        data.len(),
        data.num_outliers(),
        trusted.len(),
        out.display()
    );
    Ok(())
}

fn open_bundle(dir: &Path) -> anyhow::Result<(CorruptedDataset, BundleManifest)> {
    if !dir.join("manifest.json").exists() {
        bail!(clsvae::Error::config(format!(
            "no dataset bundle at {}; run build-data first",
            dir.display()
        )));
    }
    Ok(load_bundle(dir)?)
}

fn train(cfg: &ExperimentConfig, data_dir: &Path, out: &Path, resume: bool) -> anyhow::Result<()> {
    let (data, manifest) = open_bundle(data_dir)?;
    if manifest.kind != cfg.data.kind {
        bail!(clsvae::Error::config(format!(
            "bundle holds {} data but the config is for {}",
            manifest.kind, cfg.data.kind
        )));
    }
    let (mut state, train_cfg) = if resume {
        let (state, train_cfg) = checkpoint::load(out)?;
        if state.model.spec() != cfg.model {
            bail!(clsvae::Error::config("checkpoint model differs from the config"));
        }
        info!("resuming at epoch {}", state.epoch);
        (state, train_cfg)
    } else {
        (TrainState::new(&cfg.model, &cfg.train)?, cfg.train.clone())
    };
    let fully = state.model.fully_supervised();
    let trusted = manifest.trusted.as_ref();
    if trusted.is_none() && !fully {
        bail!(clsvae::Error::config("bundle has no trusted set"));
    }
    let td = TrainData::from_dataset(&data, trusted, fully)?;
    write_file(&out.join("config.toml"), cfg.to_toml()?)?;
    let divergence = state.train(&td, &train_cfg, |st, r| {
        if r.epoch % CHECKPOINT_EVERY == 0 {
            checkpoint::save(out, st, &train_cfg)?;
        }
        Ok(())
    })?;
    checkpoint::save(out, &state, &train_cfg)?;
    if let Some(d) = divergence {
        write_file(&out.join("divergence.json"), serde_json::to_vec_pretty(&serde_json::json!({
            "epoch": d.epoch,
            "step": d.step,
            "message": d.message,
            "last_good_epoch": state.epoch,
        }))?)?;
        bail!(Diverged(format!(
            "{} (epoch {} step {}); last good checkpoint at epoch {} in {}",
            d.message,
            d.epoch,
            d.step,
            state.epoch,
            out.display()
        )));
    }
    info!("checkpoint at epoch {} in {}", state.epoch, out.display());
    Ok(())
}

fn write_reports(out: &Path, reports: &[EvalReport]) -> anyhow::Result<()> {
    let json = if reports.len() == 1 {
        serde_json::to_vec_pretty(&reports[0])?
    } else {
        serde_json::to_vec_pretty(reports)?
    };
    write_file(&out.join("report.json"), json)?;
    let mut csv = Vec::new();
    EvalReport::write_csv(reports, &mut csv)?;
    write_file(&out.join("report.csv"), csv)
}

fn evaluate(ckpt: &Path, data_dir: &Path, out: &Path, gamma: f64, split: Split) -> anyhow::Result<()> {
    let (state, train_cfg) = checkpoint::load(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let (data, manifest) = open_bundle(data_dir)?;
    let per_class = manifest.trusted.as_ref().map_or(0, |t| {
        t.len() / (manifest.kind.num_data_classes() + manifest.error_classes.len()).max(1)
    });
    let meta = RunMeta {
        dataset: manifest.kind.to_string(),
        model: state.model.kind().to_string(),
        noise: manifest.noise_level,
        per_class,
        seed: train_cfg.seed,
    };
    let ev = eval::evaluate(state.model.as_ref(), &data, split, gamma, &meta)
        .map_err(|e| match e {
            clsvae::Error::Shape { .. } => clsvae::Error::config(format!("checkpoint and bundle are incompatible: {e}")),
            e => e,
        })?;
    write_reports(out, std::slice::from_ref(&ev.report))?;

    let rows = ev.outlier_indices.len().min(GRID_ROWS);
    let pick = &ev.outlier_indices[..rows];
    let original = data.images.select(ndarray::Axis(0), pick);
    let truth = data.clean_truth().select(ndarray::Axis(0), pick);
    let repair = ev.repairs.slice(ndarray::s![..rows, ..]).to_owned();
    let grid = image::grid(&[&original, &truth, &repair], manifest.height, manifest.width)?;
    grid.save(&out.join("grids").join("repairs.pgm"))?;
    info!(
        "avpr {:.4} smse dirty {:.4} clean {:.4}; {} of {} flagged at gamma {:.4}",
        ev.report.avpr,
        ev.report.smse_dirty,
        ev.report.smse_clean,
        ev.report.detected,
        ev.report.instances,
        gamma
    );
    println!("{}", serde_json::to_string(&ev.report)?);
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    write_file(&out.join("config.toml"), cfg.to_toml()?)?;
    let cells = run_sweep(cfg)?;
    let failed = cells.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        warn!("{failed} of {} cells failed", cells.len());
    }
    write_file(&out.join("cells.json"), serde_json::to_vec_pretty(&cells)?)?;
    let reports: Vec<EvalReport> = cells.iter().filter_map(|c| c.report.clone()).collect();
    write_reports(out, &reports)?;
    summarize(&cells, out)
}

fn summarize(cells: &[CellResult], out: &Path) -> anyhow::Result<()> {
    let rows = aggregate(cells);
    let mut csv = Vec::new();
    write_aggregates_csv(&rows, &mut csv)?;
    write_file(&out.join("aggregate.csv"), csv)?;
    let table = format_table(&rows);
    write_file(&out.join("table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn collect_reports(dir: &Path, found: &mut Vec<EvalReport>) -> anyhow::Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_reports(&p, found)?;
        } else if p.file_name().is_some_and(|n| n == "report.json") {
            let text = fs::read_to_string(&p)?;
            match serde_json::from_str::<EvalReport>(&text) {
                Ok(r) => found.push(r),
                Err(_) => found.extend(
                    serde_json::from_str::<Vec<EvalReport>>(&text)
                        .with_context(|| format!("parsing {}", p.display()))?,
                ),
            }
        }
    }
    Ok(())
}

fn report(out: &Path) -> anyhow::Result<()> {
    let cells_path = out.join("cells.json");
    let cells: Vec<CellResult> = if cells_path.exists() {
        serde_json::from_str(&fs::read_to_string(&cells_path)?)?
    } else {
        let mut reports = Vec::new();
        collect_reports(out, &mut reports)?;
        if reports.is_empty() {
            bail!(clsvae::Error::config(format!("no reports under {}", out.display())));
        }
        reports
            .into_iter()
            .map(|r| CellResult {
                noise: r.noise,
                per_class: r.per_class,
                seed: r.seed,
                report: Some(r),
                error: None,
            })
            .collect()
    };
    summarize(&cells, out)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::BuildData { cfg, out } => build_data(&load_config(&cfg)?, &out),
        Command::Train {
            cfg,
            data,
            out,
            resume,
        } => train(&load_config(&cfg)?, &data, &out, resume),
        Command::Eval {
            checkpoint,
            data,
            out,
            gamma,
            split,
        } => evaluate(&checkpoint, &data, &out, gamma.unwrap_or(DEFAULT_GAMMA), Split::parse(&split)?),
        Command::Sweep { cfg, out, gamma } => {
            let mut c = load_config(&cfg)?;
            if let Some(g) = gamma {
                c.eval.gamma = g;
                c.validate()?;
            }
            let out = out
                .or_else(|| c.out.clone())
                .ok_or_else(|| clsvae::Error::config("pass --out or set `out` in the config"))?;
            sweep(&c, &out)
        }
        Command::Report { out } => report(&out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli).map_err(classify) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit(code, e)) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
