//! Flat plain-text run configuration (TOML): every key optional with a
//! documented default, unknown keys rejected, command-line flags override.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contrastive::LossMode;
use crate::data::DatasetMode;
use crate::error::{Error, Result};
use crate::nn::{EncoderConfig, ModelConfig, OptimizerConfig, ProjectorConfig};
use crate::volume::CropPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub planes: Vec<u8>,
    pub out_size: usize,
    /// "cmc" (positive included in the denominator) or "as-written".
    pub mode: String,
    pub tau: f64,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub encoder_channels: [usize; 3],
    pub encoder_kernels: [usize; 3],
    pub encoder_strides: [usize; 3],
    pub encoder_paddings: [usize; 3],
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub adaptive_pool: usize,
    pub projector_widths: [usize; 3],
    pub test_fraction: f64,
    pub head_epochs: usize,
    pub head_lr: f64,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    /// "fixed" or "diameter-plus-margin".
    pub crop_policy: String,
    pub crop_fixed_mm: f64,
    pub crop_margin_mm: f64,
    /// "lidc", "lndb", "tianchi" or "synthetic".
    pub dataset_mode: String,
    /// 0 lets the thread pool pick.
    pub threads: usize,
    pub log_every: usize,
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        let enc = EncoderConfig::default();
        RunConfig {
            seed: 0,
            planes: (1..=9).collect(),
            out_size: 224,
            mode: "cmc".into(),
            tau: crate::contrastive::DEFAULT_TAU,
            base_lr: opt.base_lr,
            momentum: opt.momentum,
            weight_decay: opt.weight_decay,
            epochs: opt.epochs,
            decay_epochs: opt.decay_epochs,
            decay_factor: opt.decay_factor,
            batch_size: opt.batch_size,
            encoder_channels: enc.conv_channels,
            encoder_kernels: enc.kernels,
            encoder_strides: enc.strides,
            encoder_paddings: enc.paddings,
            pool_kernel: enc.pool_kernel,
            pool_stride: enc.pool_stride,
            adaptive_pool: enc.adaptive_pool,
            projector_widths: ProjectorConfig::default().widths,
            test_fraction: 0.2,
            head_epochs: 100,
            head_lr: 0.01,
            finetune_epochs: 30,
            finetune_lr: 0.01,
            crop_policy: "fixed".into(),
            crop_fixed_mm: 64.0,
            crop_margin_mm: 20.0,
            dataset_mode: "synthetic".into(),
            threads: 0,
            log_every: 1,
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("read config {}", path.display()), e))?;
        toml::from_str(&text).map_err(|e| Error::Usage {
            reason: format!("config {}: {e}", path.display()),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text)
            .map_err(|e| Error::io(format!("write config {}", path.display()), e))
    }

    pub fn loss_mode(&self) -> Result<LossMode> {
        match self.mode.as_str() {
            "cmc" | "cmc_inclusive" | "cmc-inclusive" => Ok(LossMode::CmcInclusive),
            "as-written" | "as_written" => Ok(LossMode::AsWritten),
            other => Err(Error::Usage {
                reason: format!("mode {other:?} is not cmc or as-written"),
            }),
        }
    }

    pub fn dataset(&self) -> Result<DatasetMode> {
        match self.dataset_mode.as_str() {
            "lidc" => Ok(DatasetMode::Lidc),
            "lndb" => Ok(DatasetMode::Lndb),
            "tianchi" => Ok(DatasetMode::TianChi),
            "synthetic" => Ok(DatasetMode::Synthetic),
            other => Err(Error::Usage {
                reason: format!("dataset_mode {other:?} is not lidc/lndb/tianchi/synthetic"),
            }),
        }
    }

    pub fn crop(&self) -> Result<CropPolicy> {
        match self.crop_policy.as_str() {
            "fixed" => Ok(CropPolicy::FixedNodule {
                fixed_mm: self.crop_fixed_mm,
            }),
            "diameter-plus-margin" | "diameter_plus_margin" => Ok(CropPolicy::DiameterPlusMargin {
                margin_mm: self.crop_margin_mm,
            }),
            other => Err(Error::Usage {
                reason: format!("crop_policy {other:?} is not fixed or diameter-plus-margin"),
            }),
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            in_channels: 1,
            conv_channels: self.encoder_channels,
            kernels: self.encoder_kernels,
            strides: self.encoder_strides,
            paddings: self.encoder_paddings,
            pool_kernel: self.pool_kernel,
            pool_stride: self.pool_stride,
            adaptive_pool: self.adaptive_pool,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            base_lr: self.base_lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            decay_epochs: self.decay_epochs.clone(),
            decay_factor: self.decay_factor,
            batch_size: self.batch_size,
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let encoder = self.encoder_config();
        let projector = ProjectorConfig {
            input_dim: encoder.output_dim(),
            widths: self.projector_widths,
            ..ProjectorConfig::default()
        };
        ModelConfig::new(
            self.planes.clone(),
            self.out_size,
            encoder,
            projector,
            self.optimizer_config(),
        )
    }
}
