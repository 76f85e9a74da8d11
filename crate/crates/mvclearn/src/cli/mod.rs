//! `mvclearn` command-line front end.
//!
//! Every invocation creates a timestamped run directory under `--out`
//! (default `./runs`), refreshes a `LATEST` link next to it, and writes the
//! fully resolved configuration snapshot alongside the outputs, so any run
//! can be reproduced from its snapshot. Exit codes: 0 success, 1 usage,
//! 2 data error, 3 numeric error.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    filter_manifest, gen_synthetic_lesion, label_lesions, read_manifest, split_dataset,
    subsample_labels, write_manifest, Annotation, LabeledLesion, ManifestRow, SyntheticClass,
};
use crate::error::{Error, Result};
use crate::eval::{
    embedding_diagnostics, evaluate_head, extract_representations, fine_tune, linear_evaluate,
    pca_projection, project_lesions, write_pca_csv, FineTuneConfig, HeadTrainConfig, MetricReport,
};
use crate::nn::{checkpoint_load, checkpoint_save};
use crate::pipeline::{pretrain, PretrainConfig, ViewStore};
use crate::views::extract_views;
use crate::volume::{load_volume, save_volume};

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "mvclearn", version, about = "Multi-view contrastive learning for lesion volumes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Flat TOML run configuration; flags below override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated plane ids, e.g. 1,2,3.
    #[arg(long, global = true, value_delimiter = ',')]
    pub planes: Option<Vec<u8>>,
    /// Labeled fraction for linear evaluation / fine-tuning.
    #[arg(long, global = true)]
    pub fraction: Option<f64>,
    /// Loss denominator convention: cmc or as-written.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Base output directory (one run directory per invocation).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-class lesion dataset (volumes + manifest).
    GenSynthetic {
        #[arg(long, default_value_t = 100)]
        n_per_class: usize,
        #[arg(long, default_value_t = 32)]
        side: usize,
    },
    /// Window, resample, crop and slice every manifest lesion into a view store.
    ExtractViews {
        #[arg(long)]
        manifest: PathBuf,
        /// Override the configured view size.
        #[arg(long)]
        out_size: Option<usize>,
    },
    /// Contrastive pretraining over an extracted view store.
    Pretrain {
        #[arg(long)]
        views: PathBuf,
    },
    /// Linear evaluation of a checkpoint on frozen representations.
    LinearEval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        views: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Fine-tune a checkpoint on a labeled fraction.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        views: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Aggregate metric files in a run directory into report.csv.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

/// Metrics JSON written by linear-eval and finetune, one file per run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsFile {
    pub protocol: String,
    pub fraction: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub report: MetricReport,
}

pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(planes) = &cli.planes {
        cfg.planes = planes.clone();
    }
    if let Some(mode) = &cli.mode {
        cfg.mode = mode.clone();
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    cfg.planes.sort_unstable();
    cfg.planes.dedup();
    if cfg.threads > 0 {
        // Fails harmlessly if a pool already exists (e.g. under tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }
    let fraction = cli.fraction.unwrap_or(1.0);
    let base_out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs"));

    match &cli.command {
        Command::GenSynthetic { n_per_class, side } => {
            let run_dir = prepare_run_dir(&base_out, "gen-synthetic")?;
            cfg.save(&run_dir.join("config.resolved.toml"))?;
            cmd_gen_synthetic(&cfg, *n_per_class, *side, &run_dir)
        }
        Command::ExtractViews { manifest, out_size } => {
            if let Some(o) = out_size {
                cfg.out_size = *o;
            }
            let run_dir = prepare_run_dir(&base_out, "extract-views")?;
            cfg.save(&run_dir.join("config.resolved.toml"))?;
            cmd_extract_views(&cfg, manifest, &run_dir)
        }
        Command::Pretrain { views } => {
            let run_dir = prepare_run_dir(&base_out, "pretrain")?;
            cfg.save(&run_dir.join("config.resolved.toml"))?;
            cmd_pretrain(&cfg, views, &run_dir)
        }
        Command::LinearEval {
            checkpoint,
            views,
            manifest,
        } => {
            let run_dir = prepare_run_dir(&base_out, "linear-eval")?;
            cfg.save(&run_dir.join("config.resolved.toml"))?;
            cmd_linear_eval(&cfg, checkpoint, views, manifest, fraction, &run_dir)
        }
        Command::Finetune {
            checkpoint,
            views,
            manifest,
        } => {
            let run_dir = prepare_run_dir(&base_out, "finetune")?;
            cfg.save(&run_dir.join("config.resolved.toml"))?;
            cmd_finetune(&cfg, checkpoint, views, manifest, fraction, &run_dir)
        }
        Command::Report { run_dir } => cmd_report(run_dir),
    }
}

fn prepare_run_dir(base: &Path, command: &str) -> Result<PathBuf> {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .expect("clock before epoch");
    let name = format!("run-{}-{:09}-{command}", now.as_secs(), now.subsec_nanos());
    let run_dir = base.join(name);
    fs::create_dir_all(&run_dir)
        .map_err(|e| Error::io(format!("create {}", run_dir.display()), e))?;
    let link = base.join("LATEST");
    let _ = fs::remove_file(&link);
    #[cfg(unix)]
    let _ = std::os::unix::fs::symlink(run_dir.file_name().unwrap(), &link);
    #[cfg(not(unix))]
    let _ = fs::write(&link, run_dir.file_name().unwrap().to_string_lossy().as_bytes());
    Ok(run_dir)
}

fn cmd_gen_synthetic(cfg: &RunConfig, n_per_class: usize, side: usize, run_dir: &Path) -> Result<()> {
    if side < 9 {
        return Err(Error::Usage {
            reason: format!("synthetic side {side} must be >= 9"),
        });
    }
    if n_per_class == 0 {
        return Err(Error::Usage {
            reason: "n_per_class must be positive".into(),
        });
    }
    let volumes_dir = run_dir.join("volumes");
    fs::create_dir_all(&volumes_dir)
        .map_err(|e| Error::io(format!("create {}", volumes_dir.display()), e))?;
    let mut rows = Vec::with_capacity(2 * n_per_class);
    for class in [SyntheticClass::SmoothBlob, SyntheticClass::SpiculatedBlob] {
        for i in 0..n_per_class {
            let cube = gen_synthetic_lesion(class, side, cfg.seed + i as u64)?;
            let id = cube.lesion_id().to_string();
            let volume = cube.to_volume();
            save_volume(&volume, &volumes_dir.join(format!("{id}.raw")))?;
            let c = (side as f64 - 1.0) / 2.0;
            rows.push(ManifestRow {
                volume_path: format!("volumes/{id}.raw"),
                lesion_id: id,
                center_mm: [c, c, c],
                longest_diameter_mm: side as f64 / 3.0,
                slice_thickness_mm: 1.0,
                annotation: Annotation::ClassLabel(class.name().to_string()),
            });
        }
    }
    write_manifest(&run_dir.join("manifest.csv"), &rows)?;
    println!(
        "wrote {} volumes and manifest to {}",
        rows.len(),
        run_dir.display()
    );
    Ok(())
}

fn cmd_extract_views(cfg: &RunConfig, manifest: &Path, run_dir: &Path) -> Result<()> {
    let rows = read_manifest(manifest)?;
    let rows = filter_manifest(rows, cfg.dataset()?);
    if rows.is_empty() {
        return Err(Error::EmptyData {
            context: "no manifest rows survive filtering",
        });
    }
    let policy = cfg.crop()?;
    let planes = cfg.planes.clone();
    let out_size = cfg.out_size;
    let views_dir = run_dir.join("views");
    fs::create_dir_all(&views_dir)
        .map_err(|e| Error::io(format!("create {}", views_dir.display()), e))?;
    let manifest_dir = manifest.parent().unwrap_or(Path::new("."));

    rows.par_iter().try_for_each(|row| -> Result<()> {
        let volume_path = manifest_dir.join(&row.volume_path);
        let volume = load_volume(&volume_path)?;
        let volume = if volume.is_normalized() {
            volume
        } else {
            volume.hu_window_default()?
        };
        let volume = volume.resample_isotropic(1.0)?;
        let side = policy.crop_side_for(row.longest_diameter_mm)?;
        let cube = volume.crop_lesion(row.center_mm, side, &row.lesion_id)?;
        let set = extract_views(&cube, &planes, out_size)?;
        crate::views::save_view_stack(&set, &views_dir.join(format!("{}.views.raw", row.lesion_id)))
    })?;
    println!(
        "extracted {} view stacks ({} planes, {}x{}) into {}",
        rows.len(),
        planes.len(),
        out_size,
        out_size,
        views_dir.display()
    );
    Ok(())
}

fn cmd_pretrain(cfg: &RunConfig, views: &Path, run_dir: &Path) -> Result<()> {
    let store = ViewStore::from_dir(views)?;
    let pcfg = PretrainConfig {
        model: cfg.model_config()?,
        mode: cfg.loss_mode()?,
        tau: cfg.tau,
        seed: cfg.seed,
        log_every: cfg.log_every.max(1),
        checkpoint_every: cfg.checkpoint_every,
        stop_after_epoch: None,
        out_dir: Some(run_dir.to_path_buf()),
    };
    let outcome = pretrain::<f32>(&store, &pcfg, None)?;
    let last = outcome.log.last();
    println!(
        "pretrained {} epochs over {} lesions; final loss {}; checkpoint at {}",
        outcome.state.epoch,
        store.len(),
        last.map(|r| r.loss.to_string()).unwrap_or_else(|| "n/a".into()),
        run_dir.join("model.ckpt").display()
    );
    Ok(())
}

/// Shared data wrangling for the two evaluation protocols.
fn load_split(
    cfg: &RunConfig,
    manifest: &Path,
    fraction: f64,
    run_dir: &Path,
) -> Result<(Vec<LabeledLesion>, Vec<LabeledLesion>, usize)> {
    if !(0.0 < fraction && fraction <= 1.0) {
        return Err(Error::Usage {
            reason: format!("fraction {fraction} must lie in (0, 1]"),
        });
    }
    let mode = cfg.dataset()?;
    let rows = filter_manifest(read_manifest(manifest)?, mode);
    let lesions = label_lesions(&rows, mode)?;
    let split = split_dataset(&lesions, cfg.test_fraction, cfg.seed)?;
    let json = serde_json::to_string_pretty(&split).expect("split serializes");
    fs::write(run_dir.join("split.json"), json)
        .map_err(|e| Error::io("write split.json", e))?;
    let train_all: Vec<LabeledLesion> = lesions
        .iter()
        .filter(|l| split.train.contains(&l.lesion_id))
        .cloned()
        .collect();
    let test: Vec<LabeledLesion> = lesions
        .iter()
        .filter(|l| split.test.contains(&l.lesion_id))
        .cloned()
        .collect();
    let train = subsample_labels(&train_all, fraction, cfg.seed)?;
    Ok((train, test, mode.class_names().len()))
}

fn write_metrics(path: &Path, metrics: &MetricsFile) -> Result<()> {
    let json = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    fs::write(path, json).map_err(|e| Error::io(format!("write {}", path.display()), e))
}

fn cmd_linear_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    views: &Path,
    manifest: &Path,
    fraction: f64,
    run_dir: &Path,
) -> Result<()> {
    let state = checkpoint_load::<f32>(checkpoint)?;
    let store = ViewStore::from_dir(views)?;
    let (train, test, num_classes) = load_split(cfg, manifest, fraction, run_dir)?;
    let head_cfg = HeadTrainConfig {
        epochs: cfg.head_epochs,
        lr: cfg.head_lr,
        seed: cfg.seed,
        ..HeadTrainConfig::default()
    };
    let outcome = linear_evaluate(&state, &store, &train, &test, num_classes, &head_cfg)?;
    let metrics = MetricsFile {
        protocol: "linear".into(),
        fraction,
        seed: cfg.seed,
        report: outcome.report.clone(),
    };
    write_metrics(
        &run_dir.join(format!("metrics-linear-fraction-{fraction}.json")),
        &metrics,
    )?;

    let test_ids: Vec<String> = test.iter().map(|l| l.lesion_id.clone()).collect();
    let groups = project_lesions(&state, &store, &test_ids)?;
    let diag = embedding_diagnostics(&groups)?;
    let diag_json = serde_json::to_string_pretty(&diag).expect("diag serializes");
    fs::write(run_dir.join("diagnostics.json"), diag_json)
        .map_err(|e| Error::io("write diagnostics.json", e))?;
    write_pca_csv(&run_dir.join("pca.csv"), &pca_projection(&groups)?)?;

    println!(
        "linear eval at fraction {fraction}: accuracy {:.4}, auc {:.4} ({} train / {} test); gap {:.4}",
        outcome.report.accuracy,
        outcome.report.auc,
        train.len(),
        test.len(),
        diag.gap
    );
    Ok(())
}

fn cmd_finetune(
    cfg: &RunConfig,
    checkpoint: &Path,
    views: &Path,
    manifest: &Path,
    fraction: f64,
    run_dir: &Path,
) -> Result<()> {
    let mut state = checkpoint_load::<f32>(checkpoint)?;
    let store = ViewStore::from_dir(views)?;
    let (train, test, num_classes) = load_split(cfg, manifest, fraction, run_dir)?;
    let ft_cfg = FineTuneConfig {
        epochs: cfg.finetune_epochs,
        lr: cfg.finetune_lr,
        seed: cfg.seed,
        ..FineTuneConfig::default()
    };
    let head = fine_tune(&mut state, &store, &train, num_classes, &ft_cfg)?;
    let test_records = extract_representations(&state, &store, &test)?;
    let report = evaluate_head(&head, &test_records)?;
    checkpoint_save(&state, &run_dir.join("model-finetuned.ckpt"))?;
    let metrics = MetricsFile {
        protocol: "finetune".into(),
        fraction,
        seed: cfg.seed,
        report: report.clone(),
    };
    write_metrics(
        &run_dir.join(format!("metrics-finetune-fraction-{fraction}.json")),
        &metrics,
    )?;
    println!(
        "finetune at fraction {fraction}: accuracy {:.4}, auc {:.4} ({} train / {} test)",
        report.accuracy,
        report.auc,
        train.len(),
        test.len()
    );
    Ok(())
}

fn collect_metric_files(dir: &Path, out: &mut Vec<MetricsFile>) -> Result<()> {
    let entries =
        fs::read_dir(dir).map_err(|e| Error::io(format!("read {}", dir.display()), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io("read dir entry", e))?;
        let path = entry.path();
        // Skip the LATEST link (and any other symlink) so runs are not
        // counted twice.
        let meta = fs::symlink_metadata(&path)
            .map_err(|e| Error::io(format!("stat {}", path.display()), e))?;
        if meta.file_type().is_symlink() {
            continue;
        }
        if path.is_dir() {
            collect_metric_files(&path, out)?;
        } else if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            if name.starts_with("metrics-") && name.ends_with(".json") {
                let text = fs::read_to_string(&path)
                    .map_err(|e| Error::io(format!("read {}", path.display()), e))?;
                let parsed: MetricsFile =
                    serde_json::from_str(&text).map_err(|e| Error::Format {
                        path: path.clone(),
                        reason: e.to_string(),
                    })?;
                out.push(parsed);
            }
        }
    }
    Ok(())
}

fn cmd_report(run_dir: &Path) -> Result<()> {
    let mut files = Vec::new();
    collect_metric_files(run_dir, &mut files)?;
    if files.is_empty() {
        return Err(Error::EmptyData {
            context: "no metrics-*.json files under the run directory",
        });
    }
    files.sort_by(|a, b| {
        (a.protocol.as_str(), a.fraction, a.seed)
            .partial_cmp(&(b.protocol.as_str(), b.fraction, b.seed))
            .expect("finite fractions")
    });
    let report_path = run_dir.join("report.csv");
    let mut writer = csv::Writer::from_path(&report_path)
        .map_err(|e| Error::Format {
            path: report_path.clone(),
            reason: e.to_string(),
        })?;
    writer
        .write_record([
            "protocol",
            "fraction",
            "seed",
            "auc",
            "sensitivity",
            "specificity",
            "accuracy",
            "precision",
            "n_samples",
        ])
        .map_err(|e| Error::Format {
            path: report_path.clone(),
            reason: e.to_string(),
        })?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for f in &files {
        writer
            .write_record([
                f.protocol.clone(),
                f.fraction.to_string(),
                f.seed.to_string(),
                f.report.auc.to_string(),
                opt(f.report.sensitivity),
                opt(f.report.specificity),
                f.report.accuracy.to_string(),
                opt(f.report.precision),
                f.report.n_samples.to_string(),
            ])
            .map_err(|e| Error::Format {
                path: report_path.clone(),
                reason: e.to_string(),
            })?;
    }
    writer.flush().map_err(|e| Error::io("flush report", e))?;
    println!("wrote {} metric rows to {}", files.len(), report_path.display());
    Ok(())
}
