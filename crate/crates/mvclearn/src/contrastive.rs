//! Multi-view contrastive objective over unit-norm projections.
//!
//! A batch holds `M >= 2` views of `N` lesions. For an anchor view `m`,
//! target view `j` and lesion `i`, the directional pair loss is
//!
//! ```text
//! -log( exp(sim(z_m^i, z_j^i)/tau) / sum_k exp(sim(z_m^i, z_j^k)/tau) )
//! ```
//!
//! with cosine similarity and negatives drawn from the target view. The
//! denominator sum has two conventions, selected by [`LossMode`]:
//! `CmcInclusive` includes the positive `k = i` term (bounded below by 0),
//! `AsWritten` restricts the sum to `k != i`. The batch loss averages every
//! ordered view pair and lesion with the fixed `1/(2N)` factor.
//!
//! All denominators go through max-subtracted log-sum-exp so small
//! temperatures (0.07 by default) stay finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

pub const DEFAULT_TAU: f64 = 0.07;

/// Denominator convention for the directional pair loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Positive pair included in the denominator (multiview-coding recipe).
    #[default]
    CmcInclusive,
    /// Denominator restricted to `k != i`, exactly as the formula prints.
    AsWritten,
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossMode::CmcInclusive => write!(f, "cmc_inclusive"),
            LossMode::AsWritten => write!(f, "as_written"),
        }
    }
}

/// Per-view, per-lesion unit-norm projection vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBatch<E> {
    /// One `[N, D]` tensor per view, in view order.
    z: Vec<Tensor<E>>,
    lesion_ids: Vec<String>,
    tau: f64,
}

impl<E: Scalar> ProjectionBatch<E> {
    pub fn new(z: Vec<Tensor<E>>, lesion_ids: Vec<String>, tau: f64) -> Result<Self> {
        if z.len() < 2 {
            return Err(Error::BadBatch {
                reason: format!("batch needs M >= 2 views, got {}", z.len()),
            });
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::BadBatch {
                reason: format!("temperature {tau} must be positive"),
            });
        }
        let (n, d) = z[0].dim2()?;
        if n == 0 || d == 0 {
            return Err(Error::BadBatch {
                reason: "batch needs N >= 1 lesions and D >= 1 dims".into(),
            });
        }
        if lesion_ids.len() != n {
            return Err(Error::BadBatch {
                reason: format!("{} lesion ids for N = {n}", lesion_ids.len()),
            });
        }
        for (vi, zv) in z.iter().enumerate() {
            let (nv, dv) = zv.dim2()?;
            if nv != n || dv != d {
                return Err(Error::BadBatch {
                    reason: format!("view {vi} has shape [{nv}, {dv}], expected [{n}, {d}]"),
                });
            }
            if !zv.is_finite() {
                return Err(Error::BadBatch {
                    reason: format!("view {vi} has non-finite projections"),
                });
            }
            for i in 0..n {
                let norm = zv.row(i).iter().map(|v| *v * *v).sum::<E>().sqrt().as_f64();
                if (norm - 1.0).abs() > 1e-5 {
                    return Err(Error::BadBatch {
                        reason: format!("view {vi}, lesion {i}: norm {norm} not within 1e-5 of 1"),
                    });
                }
            }
        }
        Ok(ProjectionBatch { z, lesion_ids, tau })
    }

    pub fn views(&self) -> usize {
        self.z.len()
    }

    pub fn lesions(&self) -> usize {
        self.lesion_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.z[0].shape()[1]
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn z(&self) -> &[Tensor<E>] {
        &self.z
    }

    pub fn lesion_ids(&self) -> &[String] {
        &self.lesion_ids
    }
}

/// Cosine similarity `u.v / (|u||v|)`; for unit vectors this is the dot
/// product. Zero vectors have no defined similarity.
pub fn cosine_sim<E: Scalar>(u: &[E], v: &[E]) -> Result<E> {
    let nu = u.iter().map(|x| *x * *x).sum::<E>().sqrt();
    let nv = v.iter().map(|x| *x * *x).sum::<E>().sqrt();
    if nu == E::zero() || nv == E::zero() {
        return Err(Error::UndefinedSimilarity);
    }
    let dot = u.iter().zip(v).map(|(a, b)| *a * *b).sum::<E>();
    Ok(dot / (nu * nv))
}

fn check_view_index<E: Scalar>(batch: &ProjectionBatch<E>, m: usize) -> Result<()> {
    if m >= batch.views() {
        return Err(Error::BadBatch {
            reason: format!("view index {m} out of range for M = {}", batch.views()),
        });
    }
    Ok(())
}

/// Directional loss for anchor view `m`, target view `j`, lesion `i`
/// (0-based indices).
pub fn pair_loss<E: Scalar>(
    batch: &ProjectionBatch<E>,
    anchor_view: usize,
    target_view: usize,
    lesion: usize,
    mode: LossMode,
) -> Result<E> {
    check_view_index(batch, anchor_view)?;
    check_view_index(batch, target_view)?;
    if anchor_view == target_view {
        return Err(Error::BadBatch {
            reason: "anchor and target view must differ".into(),
        });
    }
    let n = batch.lesions();
    if lesion >= n {
        return Err(Error::BadBatch {
            reason: format!("lesion {lesion} out of range for N = {n}"),
        });
    }
    if mode == LossMode::AsWritten && n == 1 {
        return Err(Error::NoNegatives);
    }
    let tau = E::of(batch.tau);
    let anchor = batch.z[anchor_view].row(lesion);
    let mut logits = Vec::with_capacity(n);
    for k in 0..n {
        if mode == LossMode::AsWritten && k == lesion {
            continue;
        }
        let s = cosine_sim(anchor, batch.z[target_view].row(k))?;
        logits.push(s / tau);
    }
    let positive = cosine_sim(anchor, batch.z[target_view].row(lesion))? / tau;
    Ok(log_sum_exp(&logits) - positive)
}

fn log_sum_exp<E: Scalar>(logits: &[E]) -> E {
    let max = logits
        .iter()
        .copied()
        .fold(E::neg_infinity(), |a, b| if b > a { b } else { a });
    let sum = logits.iter().map(|l| (*l - max).exp()).sum::<E>();
    max + sum.ln()
}

/// Two-view symmetric loss for one lesion: both directional terms added up.
/// Defined only for batches with exactly two views.
pub fn two_view_lesion_loss<E: Scalar>(
    batch: &ProjectionBatch<E>,
    lesion: usize,
    mode: LossMode,
) -> Result<E> {
    if batch.views() != 2 {
        return Err(Error::WrongArity {
            expected: 2,
            got: batch.views(),
        });
    }
    Ok(pair_loss(batch, 0, 1, lesion, mode)? + pair_loss(batch, 1, 0, lesion, mode)?)
}

/// Anchor loss: sum of the directional pair losses from view `m` of lesion
/// `i` to every other view of the same lesion.
pub fn anchor_loss<E: Scalar>(
    batch: &ProjectionBatch<E>,
    anchor_view: usize,
    lesion: usize,
    mode: LossMode,
) -> Result<E> {
    check_view_index(batch, anchor_view)?;
    let mut total = E::zero();
    for j in 0..batch.views() {
        if j != anchor_view {
            total = total + pair_loss(batch, anchor_view, j, lesion, mode)?;
        }
    }
    Ok(total)
}

/// Mean similarity diagnostics for one ordered view pair.
#[derive(Debug, Clone, Serialize)]
pub struct PairDiag {
    pub anchor_view: usize,
    pub target_view: usize,
    pub mean_loss: f64,
    pub mean_positive_sim: f64,
    pub mean_negative_sim: f64,
}

#[derive(Debug, Clone)]
pub struct BatchLossOutput<E> {
    pub loss: E,
    pub pair_diagnostics: Vec<PairDiag>,
}

/// Batch objective: every ordered view pair `(m, j)` and lesion contributes a
/// directional term; the total carries the fixed `1/(2N)` factor.
pub fn batch_loss<E: Scalar>(
    batch: &ProjectionBatch<E>,
    mode: LossMode,
) -> Result<BatchLossOutput<E>> {
    let (out, _) = evaluate(batch, mode, false)?;
    Ok(out)
}

/// Batch loss plus the analytic gradient with respect to every projection
/// (one `[N, D]` gradient tensor per view). The gradient differentiates the
/// full cosine, including the normalization Jacobian.
pub fn batch_loss_backward<E: Scalar>(
    batch: &ProjectionBatch<E>,
    mode: LossMode,
) -> Result<(BatchLossOutput<E>, Vec<Tensor<E>>)> {
    let (out, grads) = evaluate(batch, mode, true)?;
    Ok((out, grads.expect("gradients requested")))
}

fn evaluate<E: Scalar>(
    batch: &ProjectionBatch<E>,
    mode: LossMode,
    with_grad: bool,
) -> Result<(BatchLossOutput<E>, Option<Vec<Tensor<E>>>)> {
    let m = batch.views();
    let n = batch.lesions();
    let d = batch.dim();
    if mode == LossMode::AsWritten && n == 1 {
        return Err(Error::NoNegatives);
    }
    let tau = E::of(batch.tau);

    // Unit-normalized copies and norms: cosine becomes a plain dot product.
    let mut units: Vec<Tensor<E>> = Vec::with_capacity(m);
    let mut norms: Vec<Vec<E>> = Vec::with_capacity(m);
    for zv in &batch.z {
        let mut u = zv.clone();
        let mut nv = Vec::with_capacity(n);
        for i in 0..n {
            let norm = zv.row(i).iter().map(|v| *v * *v).sum::<E>().sqrt();
            if norm == E::zero() {
                return Err(Error::UndefinedSimilarity);
            }
            for v in &mut u.data_mut()[i * d..(i + 1) * d] {
                *v = *v / norm;
            }
            nv.push(norm);
        }
        units.push(u);
        norms.push(nv);
    }

    let scale = E::of(1.0 / (2.0 * n as f64));
    let mut total = E::zero();
    let mut diags = Vec::new();
    let mut grads: Option<Vec<Tensor<E>>> =
        with_grad.then(|| batch.z.iter().map(|z| z.zeros_like()).collect());
    // d(loss)/d(sim) accumulated per unit vector, applied through the cosine
    // Jacobian at the end.
    let mut unit_grads: Vec<Tensor<E>> = if with_grad {
        batch.z.iter().map(|z| z.zeros_like()).collect()
    } else {
        Vec::new()
    };

    for mi in 0..m {
        for mj in 0..m {
            if mi == mj {
                continue;
            }
            let mut pair_loss_sum = 0.0;
            let mut pos_sim_sum = 0.0;
            let mut neg_sim_sum = 0.0;
            let mut neg_count = 0usize;
            for i in 0..n {
                let anchor = units[mi].row(i).to_vec();
                // Similarities against every lesion in the target view.
                let mut sims = Vec::with_capacity(n);
                for k in 0..n {
                    let s = anchor
                        .iter()
                        .zip(units[mj].row(k))
                        .map(|(a, b)| *a * *b)
                        .sum::<E>();
                    sims.push(s);
                    if k == i {
                        pos_sim_sum += s.as_f64();
                    } else {
                        neg_sim_sum += s.as_f64();
                        neg_count += 1;
                    }
                }
                // Log-sum-exp over the allowed denominator set.
                let mut max = E::neg_infinity();
                for (k, s) in sims.iter().enumerate() {
                    if mode == LossMode::AsWritten && k == i {
                        continue;
                    }
                    let l = *s / tau;
                    if l > max {
                        max = l;
                    }
                }
                let mut denom = E::zero();
                for (k, s) in sims.iter().enumerate() {
                    if mode == LossMode::AsWritten && k == i {
                        continue;
                    }
                    denom = denom + (*s / tau - max).exp();
                }
                let lse = max + denom.ln();
                let term = lse - sims[i] / tau;
                total = total + scale * term;
                pair_loss_sum += term.as_f64();

                if with_grad {
                    // dL/ds_ik in the scaled objective.
                    for (k, s) in sims.iter().enumerate() {
                        let mut ds = E::zero();
                        let in_denom = !(mode == LossMode::AsWritten && k == i);
                        if in_denom {
                            let p = (*s / tau - max).exp() / denom;
                            ds = ds + p / tau;
                        }
                        if k == i {
                            ds = ds - E::one() / tau;
                        }
                        if ds == E::zero() {
                            continue;
                        }
                        let ds = ds * scale;
                        // s = u_i . w_k for unit vectors; accumulate on both sides.
                        let (ui, wk) = (units[mi].row(i).to_vec(), units[mj].row(k).to_vec());
                        for (ga, wv) in unit_grads[mi].data_mut()[i * d..(i + 1) * d]
                            .iter_mut()
                            .zip(&wk)
                        {
                            *ga = *ga + ds * *wv;
                        }
                        for (gb, uv) in unit_grads[mj].data_mut()[k * d..(k + 1) * d]
                            .iter_mut()
                            .zip(&ui)
                        {
                            *gb = *gb + ds * *uv;
                        }
                    }
                }
            }
            diags.push(PairDiag {
                anchor_view: mi,
                target_view: mj,
                mean_loss: pair_loss_sum / n as f64,
                mean_positive_sim: pos_sim_sum / n as f64,
                mean_negative_sim: if neg_count > 0 {
                    neg_sim_sum / neg_count as f64
                } else {
                    f64::NAN
                },
            });
        }
    }

    // Chain through the normalization: for z with unit direction u and norm r,
    // dL/dz = (dL/du - u (u . dL/du)) / r.
    if let Some(gr) = grads.as_mut() {
        for v in 0..m {
            for i in 0..n {
                let gu = unit_grads[v].row(i).to_vec();
                let u = units[v].row(i).to_vec();
                let udot = u.iter().zip(&gu).map(|(a, b)| *a * *b).sum::<E>();
                let r = norms[v][i];
                for k in 0..d {
                    gr[v].data_mut()[i * d + k] = (gu[k] - u[k] * udot) / r;
                }
            }
        }
    }

    Ok((
        BatchLossOutput {
            loss: total,
            pair_diagnostics: diags,
        },
        grads,
    ))
}

/// One training-diagnostics row, exported as JSON lines by the pipeline.
#[derive(Debug, Clone, Serialize)]
pub struct LossDiagRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub mode: LossMode,
    pub tau: f64,
}
