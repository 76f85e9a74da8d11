//! The multi-view contrastive objective on a toy batch: both denominator
//! conventions, per-pair diagnostics, and a finite-difference spot check of
//! the analytic gradient.
//!
//! ```bash
//! cargo run -p mvclearn --example contrastive_loss
//! ```

use mvclearn::contrastive::{
    batch_loss, batch_loss_backward, LossMode, ProjectionBatch,
};
use mvclearn::nn::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn unit_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = Tensor::zeros(&[n, d]);
    for i in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (k, v) in row.iter().enumerate() {
            t.data_mut()[i * d + k] = v / norm;
        }
    }
    t
}

fn main() -> mvclearn::Result<()> {
    let (m, n, d, tau) = (3usize, 4usize, 8usize, 0.07);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let z: Vec<Tensor<f64>> = (0..m).map(|_| unit_rows(n, d, &mut rng)).collect();
    let ids = (0..n).map(|i| format!("lesion{i}")).collect();
    let batch = ProjectionBatch::new(z, ids, tau)?;
    println!("batch: M={m} views, N={n} lesions, D={d}, tau={tau}");

    for mode in [LossMode::CmcInclusive, LossMode::AsWritten] {
        let out = batch_loss(&batch, mode)?;
        println!("\n{mode}: loss {:.6}", out.loss);
        for diag in out.pair_diagnostics.iter().take(3) {
            println!(
                "  pair ({} -> {}): mean loss {:.4}, pos sim {:.4}, neg sim {:.4}",
                diag.anchor_view,
                diag.target_view,
                diag.mean_loss,
                diag.mean_positive_sim,
                diag.mean_negative_sim
            );
        }
    }

    // Spot-check one gradient coordinate against central differences.
    let (_, grads) = batch_loss_backward(&batch, LossMode::CmcInclusive)?;
    let h = 1e-6;
    let (v, i, k) = (1usize, 2usize, 3usize);
    let bump = |delta: f64| -> mvclearn::Result<f64> {
        let mut zs: Vec<Tensor<f64>> = batch.z().to_vec();
        zs[v].data_mut()[i * d + k] += delta;
        let b = ProjectionBatch::new(zs, batch.lesion_ids().to_vec(), tau)?;
        Ok(batch_loss(&b, LossMode::CmcInclusive)?.loss)
    };
    let numeric = (bump(h)? - bump(-h)?) / (2.0 * h);
    let analytic = grads[v].data()[i * d + k];
    println!(
        "\ngradient dL/dz[{v}][{i}][{k}]: analytic {analytic:+.8}, finite difference {numeric:+.8}"
    );
    Ok(())
}
