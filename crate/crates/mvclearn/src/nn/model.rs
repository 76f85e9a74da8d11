//! Multi-view model: one private encoder + projector per configured plane,
//! plus optimizer velocity buffers, the epoch counter, and the run seed.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::encoder::{Encoder, EncoderConfig};
use crate::nn::optim::{sgd_update, OptimizerConfig};
use crate::nn::projector::{Projector, ProjectorConfig};
use crate::nn::tensor::Tensor;
use crate::nn::Scalar;
use crate::util::derive_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub plane_ids: Vec<u8>,
    /// Side of the square input views.
    pub input_size: usize,
    pub encoder: EncoderConfig,
    pub projector: ProjectorConfig,
    pub optimizer: OptimizerConfig,
}

impl ModelConfig {
    pub fn new(
        plane_ids: Vec<u8>,
        input_size: usize,
        encoder: EncoderConfig,
        projector: ProjectorConfig,
        optimizer: OptimizerConfig,
    ) -> Result<Self> {
        let cfg = ModelConfig {
            plane_ids,
            input_size,
            encoder,
            projector,
            optimizer,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.plane_ids.len() < 2 {
            return Err(Error::InsufficientViews {
                got: self.plane_ids.len(),
            });
        }
        let mut sorted = self.plane_ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted != self.plane_ids {
            return Err(Error::Config {
                reason: format!("plane ids {:?} must be strictly increasing", self.plane_ids),
            });
        }
        if self.plane_ids.iter().any(|p| !(1..=9).contains(p)) {
            return Err(Error::Config {
                reason: format!("plane ids {:?} must lie in 1..=9", self.plane_ids),
            });
        }
        self.encoder.validate_input(self.input_size)?;
        self.projector.validate()?;
        if self.projector.input_dim != self.encoder.output_dim() {
            return Err(Error::Config {
                reason: format!(
                    "projector input dim {} != encoder output dim {}",
                    self.projector.input_dim,
                    self.encoder.output_dim()
                ),
            });
        }
        self.optimizer.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewModel<E> {
    pub plane_id: u8,
    pub encoder: Encoder<E>,
    pub projector: Projector<E>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<E> {
    pub config: ModelConfig,
    pub views: Vec<ViewModel<E>>,
    /// Momentum buffers aligned with the canonical parameter order.
    pub velocities: Vec<Tensor<E>>,
    /// Number of completed training epochs.
    pub epoch: usize,
    pub seed: u64,
}

impl<E: Scalar> ModelState<E> {
    /// Fresh state with independent seeded initialization per view.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut views = Vec::with_capacity(config.plane_ids.len());
        for &pid in &config.plane_ids {
            let mut enc_rng = derive_rng(seed, "init-encoder", pid as u64);
            let mut proj_rng = derive_rng(seed, "init-projector", pid as u64);
            views.push(ViewModel {
                plane_id: pid,
                encoder: Encoder::new(config.encoder.clone(), &mut enc_rng)?,
                projector: Projector::new(config.projector.clone(), &mut proj_rng)?,
            });
        }
        let mut state = ModelState {
            config,
            views,
            velocities: Vec::new(),
            epoch: 0,
            seed,
        };
        let mut velocities = Vec::new();
        state.visit_params(&mut |_, t| velocities.push(t.zeros_like()));
        state.velocities = velocities;
        Ok(state)
    }

    pub fn view_for_plane(&self, plane_id: u8) -> Result<&ViewModel<E>> {
        self.views
            .iter()
            .find(|v| v.plane_id == plane_id)
            .ok_or(Error::PlaneMismatch {
                model: self.config.plane_ids.clone(),
                input: vec![plane_id],
            })
    }

    /// Visit parameters in canonical order (ascending plane id; encoder convs
    /// then projector layers; weight before bias, gamma before beta).
    pub fn visit_params(&self, f: &mut impl FnMut(&str, &Tensor<E>)) {
        for vm in &self.views {
            let p = format!("view{}", vm.plane_id);
            for (tag, conv) in [
                ("conv1", &vm.encoder.conv1),
                ("conv2", &vm.encoder.conv2),
                ("conv3", &vm.encoder.conv3),
            ] {
                f(&format!("{p}.encoder.{tag}.weight"), &conv.weight);
                f(&format!("{p}.encoder.{tag}.bias"), &conv.bias);
            }
            let pj = &vm.projector;
            f(&format!("{p}.projector.fc1.weight"), &pj.fc1.weight);
            f(&format!("{p}.projector.fc1.bias"), &pj.fc1.bias);
            f(&format!("{p}.projector.bn1.gamma"), &pj.bn1.gamma);
            f(&format!("{p}.projector.bn1.beta"), &pj.bn1.beta);
            f(&format!("{p}.projector.fc2.weight"), &pj.fc2.weight);
            f(&format!("{p}.projector.fc2.bias"), &pj.fc2.bias);
            f(&format!("{p}.projector.bn2.gamma"), &pj.bn2.gamma);
            f(&format!("{p}.projector.bn2.beta"), &pj.bn2.beta);
            f(&format!("{p}.projector.fc3.weight"), &pj.fc3.weight);
            f(&format!("{p}.projector.fc3.bias"), &pj.fc3.bias);
        }
    }

    /// Mutable visit over (name, parameter, gradient) in canonical order.
    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor<E>, &mut Tensor<E>)) {
        for vm in &mut self.views {
            let p = format!("view{}", vm.plane_id);
            for (tag, conv) in [
                ("conv1", &mut vm.encoder.conv1),
                ("conv2", &mut vm.encoder.conv2),
                ("conv3", &mut vm.encoder.conv3),
            ] {
                f(
                    &format!("{p}.encoder.{tag}.weight"),
                    &mut conv.weight,
                    &mut conv.grad_weight,
                );
                f(
                    &format!("{p}.encoder.{tag}.bias"),
                    &mut conv.bias,
                    &mut conv.grad_bias,
                );
            }
            let pj = &mut vm.projector;
            f(&format!("{p}.projector.fc1.weight"), &mut pj.fc1.weight, &mut pj.fc1.grad_weight);
            f(&format!("{p}.projector.fc1.bias"), &mut pj.fc1.bias, &mut pj.fc1.grad_bias);
            f(&format!("{p}.projector.bn1.gamma"), &mut pj.bn1.gamma, &mut pj.bn1.grad_gamma);
            f(&format!("{p}.projector.bn1.beta"), &mut pj.bn1.beta, &mut pj.bn1.grad_beta);
            f(&format!("{p}.projector.fc2.weight"), &mut pj.fc2.weight, &mut pj.fc2.grad_weight);
            f(&format!("{p}.projector.fc2.bias"), &mut pj.fc2.bias, &mut pj.fc2.grad_bias);
            f(&format!("{p}.projector.bn2.gamma"), &mut pj.bn2.gamma, &mut pj.bn2.grad_gamma);
            f(&format!("{p}.projector.bn2.beta"), &mut pj.bn2.beta, &mut pj.bn2.grad_beta);
            f(&format!("{p}.projector.fc3.weight"), &mut pj.fc3.weight, &mut pj.fc3.grad_weight);
            f(&format!("{p}.projector.fc3.bias"), &mut pj.fc3.bias, &mut pj.fc3.grad_bias);
        }
    }

    /// Non-trainable buffers (batch-norm running statistics).
    pub fn visit_buffers(&self, f: &mut impl FnMut(&str, &Tensor<E>)) {
        for vm in &self.views {
            let p = format!("view{}", vm.plane_id);
            f(&format!("{p}.projector.bn1.running_mean"), &vm.projector.bn1.running_mean);
            f(&format!("{p}.projector.bn1.running_var"), &vm.projector.bn1.running_var);
            f(&format!("{p}.projector.bn2.running_mean"), &vm.projector.bn2.running_mean);
            f(&format!("{p}.projector.bn2.running_var"), &vm.projector.bn2.running_var);
        }
    }

    pub fn visit_buffers_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor<E>)) {
        for vm in &mut self.views {
            let p = format!("view{}", vm.plane_id);
            f(&format!("{p}.projector.bn1.running_mean"), &mut vm.projector.bn1.running_mean);
            f(&format!("{p}.projector.bn1.running_var"), &mut vm.projector.bn1.running_var);
            f(&format!("{p}.projector.bn2.running_mean"), &mut vm.projector.bn2.running_mean);
            f(&format!("{p}.projector.bn2.running_var"), &mut vm.projector.bn2.running_var);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.len());
        n
    }

    pub fn zero_grads(&mut self) {
        for vm in &mut self.views {
            vm.encoder.zero_grad();
            vm.projector.zero_grad();
        }
    }

    pub fn grads_finite(&mut self) -> bool {
        let mut ok = true;
        self.visit_params_mut(&mut |_, _, g| ok &= g.is_finite());
        ok
    }

    /// Momentum SGD over every parameter:
    /// `v <- momentum*v + grad + weight_decay*param; param <- param - lr*v`.
    ///
    /// A non-finite gradient aborts before any parameter is touched.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        let momentum = self.config.optimizer.momentum;
        let weight_decay = self.config.optimizer.weight_decay;
        self.sgd_step_where(lr, momentum, weight_decay, |_| true)
    }

    /// SGD restricted to parameters whose name satisfies the predicate
    /// (fine-tuning updates encoders but not the discarded projectors).
    pub fn sgd_step_where(
        &mut self,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
        include: impl Fn(&str) -> bool,
    ) -> Result<()> {
        if !self.grads_finite() {
            return Err(Error::Numeric {
                context: "sgd_step",
                reason: "non-finite gradient".into(),
            });
        }
        let mut velocities = std::mem::take(&mut self.velocities);
        let mut idx = 0;
        self.visit_params_mut(&mut |name, p, g| {
            if include(name) {
                sgd_update(
                    p.data_mut(),
                    g.data(),
                    velocities[idx].data_mut(),
                    lr,
                    momentum,
                    weight_decay,
                );
            }
            idx += 1;
        });
        self.velocities = velocities;
        Ok(())
    }

    /// SHA-256 over every parameter tensor (name, shape, f64-LE payload).
    pub fn params_hash(&self) -> String {
        let mut hasher = Sha256::new();
        self.visit_params(&mut |name, t| hash_tensor(&mut hasher, name, t));
        hex_digest(hasher)
    }

    /// Hash of encoder parameters only — the frozen-encoder contract.
    pub fn encoders_hash(&self) -> String {
        let mut hasher = Sha256::new();
        self.visit_params(&mut |name, t| {
            if name.contains(".encoder.") {
                hash_tensor(&mut hasher, name, t);
            }
        });
        hex_digest(hasher)
    }
}

fn hash_tensor<E: Scalar>(hasher: &mut Sha256, name: &str, t: &Tensor<E>) {
    hasher.update(name.as_bytes());
    for d in t.shape() {
        hasher.update((*d as u64).to_le_bytes());
    }
    for v in t.data() {
        hasher.update(v.as_f64().to_le_bytes());
    }
}

fn hex_digest(hasher: Sha256) -> String {
    let bytes = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Small model configuration used across tests and the desk-scale
/// experiments. The representation stays unconstrained in scale under the
/// normalized loss, so the recipe runs a gentler learning rate and a
/// stronger weight decay than the full-scale defaults.
pub fn tiny_model_config(plane_ids: Vec<u8>, input_size: usize) -> ModelConfig {
    let encoder = EncoderConfig::tiny();
    let d = encoder.output_dim();
    ModelConfig {
        plane_ids,
        input_size,
        encoder,
        projector: ProjectorConfig::with_dims(d, [64, 64, 32]),
        optimizer: OptimizerConfig {
            base_lr: 0.005,
            weight_decay: 1e-3,
            epochs: 30,
            decay_epochs: vec![18, 24],
            batch_size: 32,
            ..OptimizerConfig::default()
        },
    }
}

/// Reduced configuration for gradient checks (few hundred parameters).
pub fn reduced_model_config(plane_ids: Vec<u8>, input_size: usize) -> ModelConfig {
    let encoder = EncoderConfig::reduced();
    let d = encoder.output_dim();
    ModelConfig {
        plane_ids,
        input_size,
        encoder,
        projector: ProjectorConfig::with_dims(d, [6, 6, 4]),
        optimizer: OptimizerConfig {
            base_lr: 0.01,
            epochs: 4,
            decay_epochs: vec![2],
            batch_size: 4,
            ..OptimizerConfig::default()
        },
    }
}
