//! Shared test fixtures: the brute-force loss oracle, finite-difference
//! helpers, and synthetic-data setup. Everything here is deliberately
//! independent of the library's batched implementations.

#![allow(dead_code)]

pub mod gradcheck;

use mvclearn::data::{gen_synthetic_lesion, SyntheticClass};
use mvclearn::nn::{ModelState, Scalar, Tensor};
use mvclearn::pipeline::ViewStore;
use mvclearn::views::extract_views;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Literal transcription of the contrastive objective, computed with plain
/// loops, its own cosine, and direct exponential sums (no log-sum-exp).
pub mod oracle {
    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
        let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        dot / (norm(u) * norm(v))
    }

    /// Directional pair loss for anchor view `m`, target view `j`, lesion `i`.
    /// `z[m][i]` is the projection of view m of lesion i.
    pub fn pair_loss(
        z: &[Vec<Vec<f64>>],
        m: usize,
        j: usize,
        i: usize,
        tau: f64,
        include_positive: bool,
    ) -> f64 {
        let n = z[m].len();
        let numerator = (cosine(&z[m][i], &z[j][i]) / tau).exp();
        let mut denominator = 0.0;
        for k in 0..n {
            if !include_positive && k == i {
                continue;
            }
            denominator += (cosine(&z[m][i], &z[j][k]) / tau).exp();
        }
        -(numerator / denominator).ln()
    }

    /// Sum over every ordered view pair for one lesion.
    pub fn lesion_loss(z: &[Vec<Vec<f64>>], i: usize, tau: f64, include_positive: bool) -> f64 {
        let m_views = z.len();
        let mut total = 0.0;
        for m in 0..m_views {
            for j in 0..m_views {
                if m != j {
                    total += pair_loss(z, m, j, i, tau, include_positive);
                }
            }
        }
        total
    }

    /// Batch objective with the fixed 1/(2N) factor.
    pub fn batch_loss(z: &[Vec<Vec<f64>>], tau: f64, include_positive: bool) -> f64 {
        let n = z[0].len();
        let mut total = 0.0;
        for i in 0..n {
            total += lesion_loss(z, i, tau, include_positive);
        }
        total / (2.0 * n as f64)
    }
}

/// Seeded random unit-norm projections as nested vectors `[M][N][D]`.
pub fn random_unit_projections(m: usize, n: usize, d: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| {
            (0..n)
                .map(|_| loop {
                    let row: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                    let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 1e-3 {
                        break row.iter().map(|v| v / norm).collect();
                    }
                })
                .collect()
        })
        .collect()
}

/// Convert nested projections into per-view `[N, D]` tensors.
pub fn to_tensors(z: &[Vec<Vec<f64>>]) -> Vec<Tensor<f64>> {
    z.iter()
        .map(|view| {
            let n = view.len();
            let d = view[0].len();
            let flat: Vec<f64> = view.iter().flatten().copied().collect();
            Tensor::from_vec(&[n, d], flat).unwrap()
        })
        .collect()
}

pub fn lesion_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("lesion{i}")).collect()
}

/// Relative error with an absolute floor against 0/0.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Flatten every parameter of a model in canonical order.
pub fn flat_params<E: Scalar>(state: &ModelState<E>) -> Vec<f64> {
    let mut out = Vec::new();
    state.visit_params(&mut |_, t| out.extend(t.data().iter().map(|v| v.as_f64())));
    out
}

/// Overwrite one parameter (by flat canonical index).
pub fn set_param<E: Scalar>(state: &mut ModelState<E>, flat_index: usize, value: f64) {
    let mut cursor = 0;
    state.visit_params_mut(&mut |_, p, _| {
        let len = p.len();
        if flat_index >= cursor && flat_index < cursor + len {
            p.data_mut()[flat_index - cursor] = E::of(value);
        }
        cursor += len;
    });
}

/// Flatten every parameter gradient in canonical order.
pub fn flat_grads<E: Scalar>(state: &mut ModelState<E>) -> Vec<f64> {
    let mut out = Vec::new();
    state.visit_params_mut(&mut |_, _, g| out.extend(g.data().iter().map(|v| v.as_f64())));
    out
}

/// Synthetic view store: `n` lesions (alternating classes), cubes of `side`
/// voxels, the given planes, views resized to `out`.
pub fn synthetic_store(n: usize, side: usize, planes: &[u8], out: usize) -> ViewStore {
    let mut store = ViewStore::new();
    for i in 0..n {
        let class = if i % 2 == 0 {
            SyntheticClass::SmoothBlob
        } else {
            SyntheticClass::SpiculatedBlob
        };
        let cube = gen_synthetic_lesion(class, side, i as u64).unwrap();
        store.insert(extract_views(&cube, planes, out).unwrap());
    }
    store
}
