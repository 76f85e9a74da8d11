//! Three-layer MLP projector with batch norm + ReLU after the first two
//! layers and a final ℓ2 normalization.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{
    l2_normalize_backward, l2_normalize_forward, relu_backward, relu_forward, BatchNorm1d,
    BnCache, BnUpdate, L2Cache, Linear,
};
use crate::nn::tensor::Tensor;
use crate::nn::{Mode, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorConfig {
    pub input_dim: usize,
    pub widths: [usize; 3],
    pub norm_eps: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ProjectorConfig {
    fn default() -> Self {
        ProjectorConfig {
            input_dim: 2048,
            widths: [2048, 2048, 128],
            norm_eps: 1e-12,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl ProjectorConfig {
    pub fn with_dims(input_dim: usize, widths: [usize; 3]) -> Self {
        ProjectorConfig {
            input_dim,
            widths,
            ..Default::default()
        }
    }

    pub fn output_dim(&self) -> usize {
        self.widths[2]
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.widths.iter().any(|w| *w == 0) {
            return Err(Error::Config {
                reason: "projector dims must be positive".into(),
            });
        }
        if !(self.norm_eps > 0.0) || !(self.bn_eps > 0.0) {
            return Err(Error::Config {
                reason: "projector epsilons must be positive".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projector<E> {
    pub config: ProjectorConfig,
    pub fc1: Linear<E>,
    pub bn1: BatchNorm1d<E>,
    pub fc2: Linear<E>,
    pub bn2: BatchNorm1d<E>,
    pub fc3: Linear<E>,
}

pub struct ProjectorCache<E> {
    y: Tensor<E>,
    h1: BnCache<E>,
    b1: Tensor<E>,
    a1: Tensor<E>,
    h2: BnCache<E>,
    b2: Tensor<E>,
    a2: Tensor<E>,
    l2: L2Cache<E>,
}

impl<E: Scalar> ProjectorCache<E> {
    /// Row indices whose pre-normalization magnitude fell below epsilon.
    pub fn degenerate_rows(&self) -> &[usize] {
        &self.l2.flagged
    }
}

impl<E: Scalar> Projector<E> {
    pub fn new(config: ProjectorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let [w1, w2, w3] = config.widths;
        Ok(Projector {
            fc1: Linear::new(config.input_dim, w1, rng),
            bn1: BatchNorm1d::new(w1, config.bn_eps, config.bn_momentum),
            fc2: Linear::new(w1, w2, rng),
            bn2: BatchNorm1d::new(w2, config.bn_eps, config.bn_momentum),
            fc3: Linear::new(w2, w3, rng),
            config,
        })
    }

    /// Map representations `[B, d]` to unit-norm projections `[B, widths(2)]`.
    pub fn forward(
        &self,
        y: &Tensor<E>,
        mode: Mode,
    ) -> Result<(Tensor<E>, ProjectorCache<E>, Vec<BnUpdate<E>>)> {
        if !y.is_finite() {
            return Err(Error::Numeric {
                context: "projector",
                reason: "non-finite input".into(),
            });
        }
        let mut updates = Vec::new();
        let f1 = self.fc1.forward(y)?;
        let (b1, h1, u1) = self.bn1.forward(&f1, mode)?;
        if let Some(u) = u1 {
            updates.push(u);
        }
        let a1 = relu_forward(&b1);
        let f2 = self.fc2.forward(&a1)?;
        let (b2, h2, u2) = self.bn2.forward(&f2, mode)?;
        if let Some(u) = u2 {
            updates.push(u);
        }
        let a2 = relu_forward(&b2);
        let f3 = self.fc3.forward(&a2)?;
        let (z, l2) = l2_normalize_forward(&f3, self.config.norm_eps)?;
        Ok((
            z,
            ProjectorCache {
                y: y.clone(),
                h1,
                b1,
                a1,
                h2,
                b2,
                a2,
                l2,
            },
            updates,
        ))
    }

    /// Apply batch-norm running-statistics updates from a training forward.
    pub fn apply_updates(&mut self, updates: &[BnUpdate<E>]) {
        if let Some(u) = updates.first() {
            self.bn1.apply_update(u);
        }
        if let Some(u) = updates.get(1) {
            self.bn2.apply_update(u);
        }
    }

    pub fn backward(&mut self, cache: &ProjectorCache<E>, grad_z: &Tensor<E>) -> Result<Tensor<E>> {
        let g = l2_normalize_backward(&cache.l2, grad_z);
        let g = self.fc3.backward(&cache.a2, &g)?;
        let g = relu_backward(&cache.b2, &g);
        let g = self.bn2.backward(&cache.h2, &g)?;
        let g = self.fc2.backward(&cache.a1, &g)?;
        let g = relu_backward(&cache.b1, &g);
        let g = self.bn1.backward(&cache.h1, &g)?;
        self.fc1.backward(&cache.y, &g)
    }

    pub fn zero_grad(&mut self) {
        self.fc1.zero_grad();
        self.bn1.zero_grad();
        self.fc2.zero_grad();
        self.bn2.zero_grad();
        self.fc3.zero_grad();
    }

    pub fn param_count(&self) -> usize {
        self.fc1.weight.len()
            + self.fc1.bias.len()
            + self.bn1.gamma.len()
            + self.bn1.beta.len()
            + self.fc2.weight.len()
            + self.fc2.bias.len()
            + self.bn2.gamma.len()
            + self.bn2.beta.len()
            + self.fc3.weight.len()
            + self.fc3.bias.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::derive_rng;

    #[test]
    fn output_rows_are_unit_norm() {
        let cfg = ProjectorConfig::with_dims(8, [8, 8, 4]);
        let mut rng = derive_rng(3, "proj", 0);
        let proj = Projector::<f64>::new(cfg, &mut rng).unwrap();
        let mut y = Tensor::<f64>::zeros(&[3, 8]);
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.71).cos();
        }
        let (z, cache, updates) = proj.forward(&y, Mode::Train).unwrap();
        assert_eq!(z.shape(), &[3, 4]);
        assert_eq!(updates.len(), 2);
        assert!(cache.degenerate_rows().is_empty());
        for b in 0..3 {
            let n: f64 = z.row(b).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6, "row norm {n}");
        }
    }

    #[test]
    fn default_width_contract() {
        let cfg = ProjectorConfig::default();
        assert_eq!(cfg.output_dim(), 128);
        assert_eq!(cfg.widths, [2048, 2048, 128]);
    }

    #[test]
    fn non_finite_input_is_a_numeric_error() {
        let cfg = ProjectorConfig::with_dims(4, [4, 4, 2]);
        let mut rng = derive_rng(3, "proj", 1);
        let proj = Projector::<f64>::new(cfg, &mut rng).unwrap();
        let mut y = Tensor::<f64>::zeros(&[2, 4]);
        y.data_mut()[3] = f64::INFINITY;
        assert!(matches!(
            proj.forward(&y, Mode::Eval),
            Err(Error::Numeric { .. })
        ));
    }
}
