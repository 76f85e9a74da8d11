//! Pretraining pipeline: batch assembly, multi-view forward, contrastive
//! loss, backward, optimizer step, logging, checkpointing, resume.

pub mod store;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::contrastive::{batch_loss_backward, LossDiagRow, LossMode, PairDiag, ProjectionBatch};
use crate::error::{Error, Result};
use crate::nn::optim::lr_at;
use crate::nn::{checkpoint_save, ModelConfig, ModelState, Scalar, Tensor};
use crate::util::derive_rng;

pub use store::ViewStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub model: ModelConfig,
    pub mode: LossMode,
    pub tau: f64,
    pub seed: u64,
    /// Record every n-th step in the training log (1 = every step).
    pub log_every: usize,
    /// Save a checkpoint every n epochs (0 = only the final one).
    pub checkpoint_every: usize,
    /// Stop after this many completed epochs (for interruption tests); the
    /// schedule still runs to `optimizer.epochs` on resume.
    pub stop_after_epoch: Option<usize>,
    /// Where logs and checkpoints go; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
}

impl PretrainConfig {
    pub fn new(model: ModelConfig, seed: u64) -> Self {
        PretrainConfig {
            model,
            mode: LossMode::default(),
            tau: crate::contrastive::DEFAULT_TAU,
            seed,
            log_every: 1,
            checkpoint_every: 0,
            stop_after_epoch: None,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

/// Per-view image tensors for one batch of lesions, in model plane order.
#[derive(Debug, Clone)]
pub struct AssembledBatch<E> {
    pub tensors: Vec<Tensor<E>>,
    pub lesion_ids: Vec<String>,
}

/// Group views by plane across lesions into `[N, 1, H, W]` tensors.
///
/// Every lesion must provide every configured plane at the configured size;
/// duplicate lesion ids are rejected (a lesion cannot be its own negative).
pub fn assemble_batch<E: Scalar>(
    store: &ViewStore,
    lesion_ids: &[String],
    plane_ids: &[u8],
    out_size: usize,
) -> Result<AssembledBatch<E>> {
    let n = lesion_ids.len();
    if n == 0 {
        return Err(Error::EmptyData {
            context: "assemble_batch got no lesions",
        });
    }
    for (i, id) in lesion_ids.iter().enumerate() {
        if lesion_ids[..i].contains(id) {
            return Err(Error::DuplicateLesion {
                lesion_id: id.clone(),
            });
        }
    }
    let px = out_size * out_size;
    let mut tensors = Vec::with_capacity(plane_ids.len());
    for &plane in plane_ids {
        let mut t = Tensor::<E>::zeros(&[n, 1, out_size, out_size]);
        for (li, id) in lesion_ids.iter().enumerate() {
            let set = store.get(id).ok_or_else(|| Error::MissingView {
                lesion_id: id.clone(),
                plane_id: plane,
            })?;
            let view = set
                .views()
                .iter()
                .find(|v| v.plane_id == plane)
                .ok_or_else(|| Error::MissingView {
                    lesion_id: id.clone(),
                    plane_id: plane,
                })?;
            if view.out_size() != out_size {
                return Err(Error::ShapeMismatch {
                    context: "assemble_batch",
                    expected: format!("views of size {out_size}"),
                    got: format!("{} for lesion {id}", view.out_size()),
                });
            }
            for (k, v) in view.pixels.iter().enumerate() {
                t.data_mut()[li * px + k] = E::of(*v);
            }
        }
        tensors.push(t);
    }
    Ok(AssembledBatch {
        tensors,
        lesion_ids: lesion_ids.to_vec(),
    })
}

/// One optimization step; returns the loss *before* the parameter update,
/// plus per-pair similarity diagnostics.
pub fn pretrain_step<E: Scalar>(
    state: &mut ModelState<E>,
    batch: &AssembledBatch<E>,
    mode: LossMode,
    tau: f64,
    lr: f64,
    dump_dir: Option<&Path>,
) -> Result<(f64, Vec<PairDiag>)> {
    let m = state.views.len();
    if batch.tensors.len() != m {
        return Err(Error::ShapeMismatch {
            context: "pretrain_step",
            expected: format!("{m} view tensors"),
            got: format!("{}", batch.tensors.len()),
        });
    }
    state.zero_grads();

    let mut enc_caches = Vec::with_capacity(m);
    let mut proj_caches = Vec::with_capacity(m);
    let mut all_updates = Vec::with_capacity(m);
    let mut projections = Vec::with_capacity(m);
    for (vi, x) in batch.tensors.iter().enumerate() {
        let vm = &state.views[vi];
        let (y, ec) = vm.encoder.forward(x)?;
        let (z, pc, updates) = vm.projector.forward(&y, crate::nn::Mode::Train)?;
        enc_caches.push(ec);
        proj_caches.push(pc);
        all_updates.push(updates);
        projections.push(z);
    }
    for (vi, updates) in all_updates.iter().enumerate() {
        state.views[vi].projector.apply_updates(updates);
    }

    let pbatch = ProjectionBatch::new(projections, batch.lesion_ids.clone(), tau)?;
    let (out, grads) = batch_loss_backward(&pbatch, mode)?;
    let loss = out.loss.as_f64();
    if !loss.is_finite() {
        let dump = dump_similarity(&pbatch, dump_dir);
        return Err(Error::NonFiniteLoss {
            epoch: state.epoch,
            step: 0,
            dump,
        });
    }

    for vi in 0..m {
        let vm = &mut state.views[vi];
        let dy = vm.projector.backward(&proj_caches[vi], &grads[vi])?;
        vm.encoder.backward(&enc_caches[vi], &dy)?;
    }
    state.sgd_step(lr)?;
    Ok((loss, out.pair_diagnostics))
}

/// Write the pairwise cosine matrices next to the run for post-mortems.
fn dump_similarity<E: Scalar>(batch: &ProjectionBatch<E>, dir: Option<&Path>) -> String {
    let dir = dir.map(Path::to_path_buf).unwrap_or_else(std::env::temp_dir);
    let path = dir.join("similarity_dump.json");
    let m = batch.views();
    let n = batch.lesions();
    let mut matrices = Vec::new();
    for a in 0..m {
        for b in 0..m {
            if a == b {
                continue;
            }
            let mut rows = Vec::with_capacity(n);
            for i in 0..n {
                let mut row = Vec::with_capacity(n);
                for k in 0..n {
                    let s = crate::contrastive::cosine_sim(batch.z()[a].row(i), batch.z()[b].row(k))
                        .map(|v| v.as_f64())
                        .unwrap_or(f64::NAN);
                    row.push(s);
                }
                rows.push(row);
            }
            matrices.push(serde_json::json!({
                "anchor_view": a,
                "target_view": b,
                "cosine": rows,
            }));
        }
    }
    let payload = serde_json::json!({
        "lesion_ids": batch.lesion_ids(),
        "tau": batch.tau(),
        "pairs": matrices,
    });
    match fs::write(&path, serde_json::to_vec_pretty(&payload).unwrap_or_default()) {
        Ok(()) => path.display().to_string(),
        Err(_) => "(similarity dump could not be written)".to_string(),
    }
}

pub struct PretrainOutcome<E> {
    pub state: ModelState<E>,
    pub log: Vec<TrainLogRow>,
    pub diagnostics: Vec<LossDiagRow>,
}

/// Run (or resume) the pretraining schedule over a view store.
///
/// Lesion order reshuffles every epoch with a seed derived from
/// `(seed, epoch)`, the last incomplete batch is dropped, and all state needed
/// to resume bitwise lives in the checkpoint.
pub fn pretrain<E: Scalar>(
    store: &ViewStore,
    config: &PretrainConfig,
    resume: Option<ModelState<E>>,
) -> Result<PretrainOutcome<E>> {
    config.model.validate()?;
    let batch_size = config.model.optimizer.batch_size;
    if store.len() < batch_size {
        return Err(Error::Config {
            reason: format!(
                "batch size {batch_size} exceeds the {} lesions in the store",
                store.len()
            ),
        });
    }
    let mut state = match resume {
        Some(s) => {
            if s.config != config.model {
                return Err(Error::Config {
                    reason: "resume checkpoint config differs from the run config".into(),
                });
            }
            s
        }
        None => ModelState::init(config.model.clone(), config.seed)?,
    };

    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {}", dir.display()), e))?;
    }
    let total_epochs = config.model.optimizer.epochs;
    let stop_at = config.stop_after_epoch.unwrap_or(total_epochs).min(total_epochs);
    let mut log = Vec::new();
    let mut diagnostics = Vec::new();

    while state.epoch < stop_at {
        let epoch = state.epoch;
        let lr = lr_at(&config.model.optimizer, epoch)?;
        let mut ids = store.ids();
        ids.shuffle(&mut derive_rng(config.seed, "epoch-shuffle", epoch as u64));
        let steps = ids.len() / batch_size;
        for step in 0..steps {
            let chunk = &ids[step * batch_size..(step + 1) * batch_size];
            let assembled = assemble_batch::<E>(
                store,
                chunk,
                &config.model.plane_ids,
                config.model.input_size,
            )?;
            let t0 = Instant::now();
            let (loss, _) = pretrain_step(
                &mut state,
                &assembled,
                config.mode,
                config.tau,
                lr,
                config.out_dir.as_deref(),
            )
            .map_err(|e| match e {
                Error::NonFiniteLoss { dump, .. } => Error::NonFiniteLoss { epoch, step, dump },
                other => other,
            })?;
            if step % config.log_every == 0 {
                log.push(TrainLogRow {
                    epoch,
                    step,
                    loss,
                    lr,
                    wall_ms: t0.elapsed().as_secs_f64() * 1e3,
                });
                diagnostics.push(LossDiagRow {
                    epoch,
                    step,
                    loss,
                    mode: config.mode,
                    tau: config.tau,
                });
            }
        }
        state.epoch = epoch + 1;
        if let Some(dir) = &config.out_dir {
            if config.checkpoint_every > 0 && state.epoch % config.checkpoint_every == 0 {
                checkpoint_save(&state, &dir.join(format!("checkpoint-epoch{:04}.ckpt", state.epoch)))?;
            }
        }
    }

    if let Some(dir) = &config.out_dir {
        checkpoint_save(&state, &dir.join("model.ckpt"))?;
        write_jsonl(&dir.join("train_log.jsonl"), &log)?;
        write_jsonl(&dir.join("loss_diag.jsonl"), &diagnostics)?;
    }
    Ok(PretrainOutcome {
        state,
        log,
        diagnostics,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = fs::File::create(path)
        .map_err(|e| Error::io(format!("create {}", path.display()), e))?;
    for row in rows {
        let line = serde_json::to_string(row).expect("log row serializes");
        writeln!(f, "{line}").map_err(|e| Error::io(format!("write {}", path.display()), e))?;
    }
    Ok(())
}
