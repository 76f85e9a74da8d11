//! Embedding-geometry diagnostics: within-lesion compactness versus
//! between-lesion separability, plus a 2D PCA export for plotting.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::contrastive::cosine_sim;
use crate::error::{Error, Result};
use crate::nn::{Mode, ModelState, Scalar};
use crate::pipeline::{assemble_batch, ViewStore};

/// All projections of one lesion, tagged by plane id.
#[derive(Debug, Clone)]
pub struct ProjectionGroup {
    pub lesion_id: String,
    pub views: Vec<(u8, Vec<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmbeddingDiagnostics {
    /// Mean cosine similarity over same-lesion view pairs.
    pub within_mean: f64,
    /// Mean cosine similarity over cross-lesion pairs.
    pub between_mean: f64,
    pub gap: f64,
}

/// Compactness/separability summary. Needs at least two lesions with at
/// least two views each.
pub fn embedding_diagnostics(groups: &[ProjectionGroup]) -> Result<EmbeddingDiagnostics> {
    if groups.len() < 2 || groups.iter().any(|g| g.views.len() < 2) {
        return Err(Error::Config {
            reason: "diagnostics need >= 2 lesions with >= 2 views each".into(),
        });
    }
    let mut within_sum = 0.0;
    let mut within_n = 0usize;
    for g in groups {
        for i in 0..g.views.len() {
            for j in (i + 1)..g.views.len() {
                within_sum += cosine_sim(&g.views[i].1, &g.views[j].1)?;
                within_n += 1;
            }
        }
    }
    let mut between_sum = 0.0;
    let mut between_n = 0usize;
    for a in 0..groups.len() {
        for b in (a + 1)..groups.len() {
            for (_, va) in &groups[a].views {
                for (_, vb) in &groups[b].views {
                    between_sum += cosine_sim(va, vb)?;
                    between_n += 1;
                }
            }
        }
    }
    let within_mean = within_sum / within_n as f64;
    let between_mean = between_sum / between_n as f64;
    Ok(EmbeddingDiagnostics {
        within_mean,
        between_mean,
        gap: within_mean - between_mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaRow {
    pub lesion_id: String,
    pub view_id: u8,
    pub x: f64,
    pub y: f64,
}

/// Project every view vector onto the top two principal components of the
/// pooled set. Eigenvector signs are pinned (largest-magnitude entry is
/// positive) so the export is deterministic.
pub fn pca_projection(groups: &[ProjectionGroup]) -> Result<Vec<PcaRow>> {
    let vectors: Vec<(&str, u8, &Vec<f64>)> = groups
        .iter()
        .flat_map(|g| {
            g.views
                .iter()
                .map(move |(pid, v)| (g.lesion_id.as_str(), *pid, v))
        })
        .collect();
    if vectors.len() < 3 {
        return Err(Error::Config {
            reason: "PCA export needs at least 3 vectors".into(),
        });
    }
    let d = vectors[0].2.len();
    let n = vectors.len();
    let mut mean = DVector::<f64>::zeros(d);
    for (_, _, v) in &vectors {
        if v.len() != d {
            return Err(Error::ShapeMismatch {
                context: "pca",
                expected: format!("{d}-dim projections"),
                got: format!("{}", v.len()),
            });
        }
        mean += DVector::from_column_slice(v);
    }
    mean /= n as f64;
    let mut centered = DMatrix::<f64>::zeros(n, d);
    for (row, (_, _, v)) in vectors.iter().enumerate() {
        for (col, val) in v.iter().enumerate() {
            centered[(row, col)] = val - mean[col];
        }
    }
    let cov = centered.transpose() * &centered / n as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let mut components = Vec::with_capacity(2);
    for &idx in order.iter().take(2) {
        let mut comp: Vec<f64> = eig.eigenvectors.column(idx).iter().cloned().collect();
        let pivot = comp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if comp[pivot] < 0.0 {
            for c in comp.iter_mut() {
                *c = -*c;
            }
        }
        components.push(comp);
    }
    Ok(vectors
        .iter()
        .map(|(id, pid, v)| {
            let proj = |comp: &Vec<f64>| {
                comp.iter()
                    .enumerate()
                    .map(|(k, c)| c * (v[k] - mean[k]))
                    .sum::<f64>()
            };
            PcaRow {
                lesion_id: id.to_string(),
                view_id: *pid,
                x: proj(&components[0]),
                y: proj(&components[1]),
            }
        })
        .collect())
}

/// CSV export `lesion_id,view_id,x,y`.
pub fn write_pca_csv(path: &Path, rows: &[PcaRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    writer
        .write_record(["lesion_id", "view_id", "x", "y"])
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    for r in rows {
        writer
            .write_record([
                r.lesion_id.as_str(),
                &r.view_id.to_string(),
                &r.x.to_string(),
                &r.y.to_string(),
            ])
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })?;
    }
    writer
        .flush()
        .map_err(|e| Error::io("flush pca csv", e))?;
    Ok(())
}

/// Evaluation-mode projections per lesion from a trained model.
pub fn project_lesions<E: Scalar>(
    state: &ModelState<E>,
    store: &ViewStore,
    lesion_ids: &[String],
) -> Result<Vec<ProjectionGroup>> {
    let planes = state.config.plane_ids.clone();
    let dim = state.config.projector.output_dim();
    let mut groups: Vec<ProjectionGroup> = lesion_ids
        .iter()
        .map(|id| ProjectionGroup {
            lesion_id: id.clone(),
            views: Vec::with_capacity(planes.len()),
        })
        .collect();
    for chunk_start in (0..lesion_ids.len()).step_by(64) {
        let chunk = &lesion_ids[chunk_start..(chunk_start + 64).min(lesion_ids.len())];
        let batch = assemble_batch::<E>(store, chunk, &planes, state.config.input_size)?;
        for (vi, x) in batch.tensors.iter().enumerate() {
            let vm = &state.views[vi];
            let (y, _) = vm.encoder.forward(x)?;
            let (z, _, _) = vm.projector.forward(&y, Mode::Eval)?;
            for (bi, _) in chunk.iter().enumerate() {
                let row: Vec<f64> = z.data()[bi * dim..(bi + 1) * dim]
                    .iter()
                    .map(|v| v.as_f64())
                    .collect();
                groups[chunk_start + bi].views.push((vm.plane_id, row));
            }
        }
    }
    Ok(groups)
}
