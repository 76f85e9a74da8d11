//! Frozen-representation linear probing and full fine-tuning.
//!
//! Representations come from the encoders only (the projector is discarded
//! after pretraining); per-view vectors concatenate in plane-id order. The
//! linear head is a single fully connected layer trained from scratch with
//! softmax cross-entropy. Linear evaluation must leave the encoders bitwise
//! untouched — hashes are compared before and after as a hard contract.

use serde::{Deserialize, Serialize};

use crate::data::LabeledLesion;
use crate::error::{Error, Result};
use crate::eval::metrics::{binary_metrics, multiclass_accuracy, one_vs_rest_auc, MetricReport};
use crate::nn::{ModelState, Scalar, Tensor};
use crate::pipeline::{assemble_batch, ViewStore};
use crate::util::derive_rng;
use crate::views::ViewSet;

use rand::seq::SliceRandom;

/// Per-lesion encoder outputs plus their concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationRecord {
    pub lesion_id: String,
    /// One `d`-vector per view, in plane-id order.
    pub per_view: Vec<Vec<f64>>,
    /// Concatenation of `per_view`, length `M * d`.
    pub concatenated: Vec<f64>,
    pub label: Option<usize>,
}

/// Run one lesion's views through its private encoders (evaluation mode) and
/// concatenate in plane order. The projector is not invoked.
pub fn concat_representations<E: Scalar>(
    state: &ModelState<E>,
    set: &ViewSet,
) -> Result<RepresentationRecord> {
    if set.plane_ids() != state.config.plane_ids {
        return Err(Error::PlaneMismatch {
            model: state.config.plane_ids.clone(),
            input: set.plane_ids(),
        });
    }
    let out = set.out_size();
    if out != state.config.input_size {
        return Err(Error::ShapeMismatch {
            context: "concat_representations",
            expected: format!("views of size {}", state.config.input_size),
            got: format!("{out}"),
        });
    }
    let mut per_view = Vec::with_capacity(set.count());
    for (vi, view) in set.views().iter().enumerate() {
        let mut x = Tensor::<E>::zeros(&[1, 1, out, out]);
        for (k, v) in view.pixels.iter().enumerate() {
            x.data_mut()[k] = E::of(*v);
        }
        let (y, _) = state.views[vi].encoder.forward(&x)?;
        per_view.push(y.data().iter().map(|v| v.as_f64()).collect::<Vec<f64>>());
    }
    let concatenated = per_view.concat();
    Ok(RepresentationRecord {
        lesion_id: set.lesion_id().to_string(),
        per_view,
        concatenated,
        label: None,
    })
}

/// Batched representation extraction for labeled lesions.
pub fn extract_representations<E: Scalar>(
    state: &ModelState<E>,
    store: &ViewStore,
    lesions: &[LabeledLesion],
) -> Result<Vec<RepresentationRecord>> {
    let d = state.config.encoder.output_dim();
    let mut records = Vec::with_capacity(lesions.len());
    for chunk in lesions.chunks(64) {
        let ids: Vec<String> = chunk.iter().map(|l| l.lesion_id.clone()).collect();
        let batch = assemble_batch::<E>(
            store,
            &ids,
            &state.config.plane_ids,
            state.config.input_size,
        )?;
        let mut per_view_rows: Vec<Vec<Vec<f64>>> = Vec::with_capacity(state.views.len());
        for (vi, x) in batch.tensors.iter().enumerate() {
            let (y, _) = state.views[vi].encoder.forward(x)?;
            let rows = (0..ids.len())
                .map(|b| y.data()[b * d..(b + 1) * d].iter().map(|v| v.as_f64()).collect())
                .collect();
            per_view_rows.push(rows);
        }
        for (bi, lesion) in chunk.iter().enumerate() {
            let per_view: Vec<Vec<f64>> =
                per_view_rows.iter().map(|rows| rows[bi].clone()).collect();
            let concatenated = per_view.concat();
            records.push(RepresentationRecord {
                lesion_id: lesion.lesion_id.clone(),
                per_view,
                concatenated,
                label: Some(lesion.class),
            });
        }
    }
    Ok(records)
}

/// Single fully connected layer with softmax output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadState {
    pub weight: Vec<f64>, // [num_classes, input_dim]
    pub bias: Vec<f64>,   // [num_classes]
    pub num_classes: usize,
    pub input_dim: usize,
    pub trained_from_scratch: bool,
}

impl HeadState {
    pub fn new(num_classes: usize, input_dim: usize) -> Self {
        HeadState {
            weight: vec![0.0; num_classes * input_dim],
            bias: vec![0.0; num_classes],
            num_classes,
            input_dim,
            trained_from_scratch: true,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.weight[c * self.input_dim..(c + 1) * self.input_dim];
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        out
    }

    /// Stable softmax probabilities; they sum to 1.
    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        let logits = self.logits(x);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let p = self.logits(x);
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        HeadTrainConfig {
            epochs: 100,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
        }
    }
}

fn check_records(records: &[RepresentationRecord], num_classes: usize) -> Result<usize> {
    if records.is_empty() {
        return Err(Error::EmptyData {
            context: "no representation records",
        });
    }
    let dim = records[0].concatenated.len();
    let mut seen = vec![false; num_classes];
    for r in records {
        if r.concatenated.len() != dim {
            return Err(Error::ShapeMismatch {
                context: "head training",
                expected: format!("{dim}-dim records"),
                got: format!("{}", r.concatenated.len()),
            });
        }
        let label = r.label.ok_or(Error::EmptyData {
            context: "record without label",
        })?;
        if label >= num_classes {
            return Err(Error::Config {
                reason: format!("label {label} out of range for {num_classes} classes"),
            });
        }
        seen[label] = true;
    }
    if seen.iter().filter(|s| **s).count() < 2 {
        return Err(Error::Stratification {
            reason: "head training needs at least 2 classes present".into(),
        });
    }
    Ok(dim)
}

/// Per-dimension affine scaler used to condition head optimization. It is a
/// fixed linear map, so after training it folds back into the head weights
/// and the published model stays a single fully connected layer.
pub(crate) struct FeatureScaler {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit<'a>(features: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> Self {
        let mut mean = vec![0.0; dim];
        let mut count = 0usize;
        for x in features.clone() {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
            count += 1;
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
        let mut var = vec![0.0; dim];
        for x in features {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let inv_std = var
            .iter()
            .map(|s| 1.0 / (s / count as f64).sqrt().max(1e-8))
            .collect();
        FeatureScaler { mean, inv_std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    /// Rewrite a head trained on scaled features into one over raw features:
    /// `W'[c][k] = W[c][k] * inv_std[k]`, `b'[c] = b[c] - sum_k W'[c][k] mean[k]`.
    pub fn fold_into(&self, head: &mut HeadState) {
        let dim = head.input_dim;
        for c in 0..head.num_classes {
            let mut shift = 0.0;
            for k in 0..dim {
                let w = head.weight[c * dim + k] * self.inv_std[k];
                head.weight[c * dim + k] = w;
                shift += w * self.mean[k];
            }
            head.bias[c] -= shift;
        }
    }
}

/// Minibatch momentum SGD on the softmax cross-entropy of the single linear
/// layer. Optimization runs on standardized features for conditioning; the
/// scaler folds back into the returned weights, so the result is a plain
/// linear layer over the raw representations, which are left untouched.
pub fn train_linear_head(
    records: &[RepresentationRecord],
    num_classes: usize,
    cfg: &HeadTrainConfig,
) -> Result<HeadState> {
    let dim = check_records(records, num_classes)?;
    let scaler = FeatureScaler::fit(records.iter().map(|r| r.concatenated.as_slice()), dim);
    let scaled: Vec<Vec<f64>> = records
        .iter()
        .map(|r| scaler.apply(&r.concatenated))
        .collect();
    let mut head = HeadState::new(num_classes, dim);
    let mut vel_w = vec![0.0; head.weight.len()];
    let mut vel_b = vec![0.0; head.bias.len()];
    let mut order: Vec<usize> = (0..records.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut derive_rng(cfg.seed, "head-epoch", epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let inv_b = 1.0 / chunk.len() as f64;
            let mut gw = vec![0.0; head.weight.len()];
            let mut gb = vec![0.0; head.bias.len()];
            for &ri in chunk {
                let x = &scaled[ri];
                let p = head.probs(x);
                let label = records[ri].label.expect("validated");
                for c in 0..num_classes {
                    let dl = (p[c] - if c == label { 1.0 } else { 0.0 }) * inv_b;
                    gb[c] += dl;
                    let row = &mut gw[c * dim..(c + 1) * dim];
                    for (g, xv) in row.iter_mut().zip(x) {
                        *g += dl * xv;
                    }
                }
            }
            for ((w, g), v) in head.weight.iter_mut().zip(&gw).zip(vel_w.iter_mut()) {
                *v = cfg.momentum * *v + g;
                *w -= cfg.lr * *v;
            }
            for ((b, g), v) in head.bias.iter_mut().zip(&gb).zip(vel_b.iter_mut()) {
                *v = cfg.momentum * *v + g;
                *b -= cfg.lr * *v;
            }
        }
    }
    scaler.fold_into(&mut head);
    Ok(head)
}

/// Measure a trained head on labeled records: binary reports carry all five
/// threshold metrics; multi-class reports carry accuracy, macro AUC and the
/// per-class AUC list.
pub fn evaluate_head(
    head: &HeadState,
    records: &[RepresentationRecord],
) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::EmptyData {
            context: "no records to evaluate",
        });
    }
    let labels: Vec<usize> = records
        .iter()
        .map(|r| {
            r.label.ok_or(Error::EmptyData {
                context: "record without label",
            })
        })
        .collect::<Result<_>>()?;
    if head.num_classes == 2 {
        let scores: Vec<f64> = records
            .iter()
            .map(|r| head.probs(&r.concatenated)[1])
            .collect();
        let bools: Vec<bool> = labels.iter().map(|l| *l == 1).collect();
        binary_metrics(&scores, &bools)
    } else {
        let scores: Vec<Vec<f64>> = records
            .iter()
            .map(|r| head.probs(&r.concatenated))
            .collect();
        let preds: Vec<usize> = records
            .iter()
            .map(|r| head.predict(&r.concatenated))
            .collect();
        let accuracy = multiclass_accuracy(&preds, &labels)?;
        let per_class = one_vs_rest_auc(&scores, &labels)?;
        let macro_auc = per_class.iter().sum::<f64>() / per_class.len() as f64;
        Ok(MetricReport {
            auc: macro_auc,
            sensitivity: None,
            specificity: None,
            accuracy,
            precision: None,
            per_class_auc: Some(per_class),
            n_samples: records.len(),
        })
    }
}

pub struct LinearEvalOutcome {
    pub head: HeadState,
    pub report: MetricReport,
    pub train_records: Vec<RepresentationRecord>,
    pub test_records: Vec<RepresentationRecord>,
}

/// Full linear-evaluation protocol: extract frozen representations, train the
/// head, score the test set. The encoder hash must not move.
pub fn linear_evaluate<E: Scalar>(
    state: &ModelState<E>,
    store: &ViewStore,
    train: &[LabeledLesion],
    test: &[LabeledLesion],
    num_classes: usize,
    cfg: &HeadTrainConfig,
) -> Result<LinearEvalOutcome> {
    let hash_before = state.encoders_hash();
    let train_records = extract_representations(state, store, train)?;
    let head = train_linear_head(&train_records, num_classes, cfg)?;
    let test_records = extract_representations(state, store, test)?;
    let report = evaluate_head(&head, &test_records)?;
    if state.encoders_hash() != hash_before {
        return Err(Error::FrozenViolation);
    }
    Ok(LinearEvalOutcome {
        head,
        report,
        train_records,
        test_records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            epochs: 30,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Joint training of the encoders and a fresh linear head on a labeled
/// subset. The projector path is untouched; optimizer velocities restart.
///
/// The head trains over features standardized with statistics frozen at the
/// start (a fixed linear map, folded back into the returned head), and the
/// encoder gradient flows through that map.
pub fn fine_tune<E: Scalar>(
    state: &mut ModelState<E>,
    store: &ViewStore,
    subset: &[LabeledLesion],
    num_classes: usize,
    cfg: &FineTuneConfig,
) -> Result<HeadState> {
    if subset.is_empty() {
        return Err(Error::EmptyData {
            context: "fine-tune subset is empty",
        });
    }
    let d = state.config.encoder.output_dim();
    let m = state.views.len();
    let dim = m * d;
    let initial = extract_representations(state, store, subset)?;
    let scaler = FeatureScaler::fit(initial.iter().map(|r| r.concatenated.as_slice()), dim);
    drop(initial);
    let mut head = HeadState::new(num_classes, dim);
    let mut vel_w = vec![0.0; head.weight.len()];
    let mut vel_b = vec![0.0; head.bias.len()];
    for v in state.velocities.iter_mut() {
        v.fill(E::zero());
    }

    let mut order: Vec<usize> = (0..subset.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut derive_rng(cfg.seed, "finetune-epoch", epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let ids: Vec<String> = chunk.iter().map(|i| subset[*i].lesion_id.clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|i| subset[*i].class).collect();
            let batch = assemble_batch::<E>(
                store,
                &ids,
                &state.config.plane_ids,
                state.config.input_size,
            )?;
            let b = ids.len();
            state.zero_grads();

            let mut caches = Vec::with_capacity(m);
            let mut concat = vec![0.0_f64; b * dim];
            for (vi, x) in batch.tensors.iter().enumerate() {
                let (y, cache) = state.views[vi].encoder.forward(x)?;
                for bi in 0..b {
                    for k in 0..d {
                        concat[bi * dim + vi * d + k] = y.data()[bi * d + k].as_f64();
                    }
                }
                caches.push(cache);
            }

            // Softmax cross-entropy over the batch, on standardized features.
            let inv_b = 1.0 / b as f64;
            let mut gw = vec![0.0; head.weight.len()];
            let mut gb = vec![0.0; head.bias.len()];
            let mut dconcat = vec![0.0_f64; b * dim];
            for bi in 0..b {
                let x = scaler.apply(&concat[bi * dim..(bi + 1) * dim]);
                let p = head.probs(&x);
                for c in 0..num_classes {
                    let dl = (p[c] - if c == labels[bi] { 1.0 } else { 0.0 }) * inv_b;
                    gb[c] += dl;
                    let row = &mut gw[c * dim..(c + 1) * dim];
                    for (g, xv) in row.iter_mut().zip(&x) {
                        *g += dl * xv;
                    }
                    let wrow = &head.weight[c * dim..(c + 1) * dim];
                    for ((dc, wv), s) in dconcat[bi * dim..(bi + 1) * dim]
                        .iter_mut()
                        .zip(wrow)
                        .zip(&scaler.inv_std)
                    {
                        *dc += dl * wv * s;
                    }
                }
            }

            for (vi, cache) in caches.iter().enumerate() {
                let mut dy = Tensor::<E>::zeros(&[b, d]);
                for bi in 0..b {
                    for k in 0..d {
                        dy.data_mut()[bi * d + k] = E::of(dconcat[bi * dim + vi * d + k]);
                    }
                }
                state.views[vi].encoder.backward(cache, &dy)?;
            }
            state.sgd_step_where(cfg.lr, cfg.momentum, cfg.weight_decay, |name| {
                name.contains(".encoder.")
            })?;
            for ((w, g), v) in head.weight.iter_mut().zip(&gw).zip(vel_w.iter_mut()) {
                *v = cfg.momentum * *v + g;
                *w -= cfg.lr * *v;
            }
            for ((bv, g), v) in head.bias.iter_mut().zip(&gb).zip(vel_b.iter_mut()) {
                *v = cfg.momentum * *v + g;
                *bv -= cfg.lr * *v;
            }
        }
    }
    scaler.fold_into(&mut head);
    Ok(head)
}
