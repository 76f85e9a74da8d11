//! Three-stage convolutional encoder ("tiny AlexNet" without the fully
//! connected layers): conv -> relu -> maxpool, conv -> relu -> maxpool,
//! conv -> relu -> adaptive average pool -> flatten.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{relu_backward, relu_forward, AdaptiveAvgPool2d, Conv2d, MaxPool2d};
use crate::nn::tensor::Tensor;
use crate::nn::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub conv_channels: [usize; 3],
    pub kernels: [usize; 3],
    pub strides: [usize; 3],
    pub paddings: [usize; 3],
    pub pool_kernel: usize,
    pub pool_stride: usize,
    /// Output spatial size of the final adaptive average pool.
    pub adaptive_pool: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            in_channels: 1,
            conv_channels: [48, 192, 128],
            kernels: [11, 5, 3],
            strides: [4, 1, 1],
            paddings: [2, 2, 1],
            pool_kernel: 3,
            pool_stride: 2,
            adaptive_pool: 4,
        }
    }
}

impl EncoderConfig {
    /// Reduced configuration for fast gradient checks (8x8 inputs work).
    /// Stride 1 keeps the deepest feature map at 2x2 so activations do not
    /// starve behind the zero padding.
    pub fn reduced() -> Self {
        EncoderConfig {
            in_channels: 1,
            conv_channels: [2, 3, 2],
            kernels: [3, 3, 3],
            strides: [1, 1, 1],
            paddings: [1, 1, 1],
            pool_kernel: 2,
            pool_stride: 2,
            adaptive_pool: 2,
        }
    }

    /// Small configuration for desk-scale experiments on 32x32 views.
    pub fn tiny() -> Self {
        EncoderConfig {
            in_channels: 1,
            conv_channels: [8, 12, 16],
            kernels: [5, 3, 3],
            strides: [2, 1, 1],
            paddings: [2, 1, 1],
            pool_kernel: 2,
            pool_stride: 2,
            adaptive_pool: 2,
        }
    }

    /// Representation width `d`.
    pub fn output_dim(&self) -> usize {
        self.conv_channels[2] * self.adaptive_pool * self.adaptive_pool
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.iter().any(|c| *c == 0)
            || self.in_channels == 0
            || self.kernels.iter().any(|k| *k == 0)
            || self.strides.iter().any(|s| *s == 0)
            || self.pool_kernel == 0
            || self.pool_stride == 0
            || self.adaptive_pool == 0
        {
            return Err(Error::Config {
                reason: "encoder config has a zero field".into(),
            });
        }
        Ok(())
    }

    /// Walk the conv/pool chain and fail if any intermediate size collapses.
    pub fn validate_input(&self, input_size: usize) -> Result<()> {
        self.validate()?;
        let mut s = input_size;
        for (i, ((k, st), p)) in self
            .kernels
            .iter()
            .zip(&self.strides)
            .zip(&self.paddings)
            .enumerate()
        {
            let padded = s + 2 * p;
            if padded < *k {
                return Err(Error::Config {
                    reason: format!("input {input_size} too small for conv layer {}", i + 1),
                });
            }
            s = (padded - k) / st + 1;
            if i < 2 {
                if s < self.pool_kernel {
                    return Err(Error::Config {
                        reason: format!("input {input_size} too small for pool after conv {}", i + 1),
                    });
                }
                s = (s - self.pool_kernel) / self.pool_stride + 1;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<E> {
    pub config: EncoderConfig,
    pub conv1: Conv2d<E>,
    pub conv2: Conv2d<E>,
    pub conv3: Conv2d<E>,
    pool: MaxPool2d,
    adaptive: AdaptiveAvgPool2d,
}

/// Activations retained for the backward pass.
pub struct EncoderCache<E> {
    x: Tensor<E>,
    c1: Tensor<E>,
    r1: Tensor<E>,
    am1: Vec<u32>,
    p1: Tensor<E>,
    c2: Tensor<E>,
    r2: Tensor<E>,
    am2: Vec<u32>,
    p2: Tensor<E>,
    c3: Tensor<E>,
    r3: Tensor<E>,
}

impl<E: Scalar> Encoder<E> {
    pub fn new(config: EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let [c1, c2, c3] = config.conv_channels;
        Ok(Encoder {
            conv1: Conv2d::new(
                config.in_channels,
                c1,
                config.kernels[0],
                config.strides[0],
                config.paddings[0],
                rng,
            ),
            conv2: Conv2d::new(c1, c2, config.kernels[1], config.strides[1], config.paddings[1], rng),
            conv3: Conv2d::new(c2, c3, config.kernels[2], config.strides[2], config.paddings[2], rng),
            pool: MaxPool2d {
                kernel: config.pool_kernel,
                stride: config.pool_stride,
            },
            adaptive: AdaptiveAvgPool2d {
                out: config.adaptive_pool,
            },
            config,
        })
    }

    /// Forward to the flattened representation `[B, d]`.
    pub fn forward(&self, x: &Tensor<E>) -> Result<(Tensor<E>, EncoderCache<E>)> {
        let (b, _, _, _) = x.dim4()?;
        let c1 = self.conv1.forward(x)?;
        let r1 = relu_forward(&c1);
        let (p1, am1) = self.pool.forward(&r1)?;
        let c2 = self.conv2.forward(&p1)?;
        let r2 = relu_forward(&c2);
        let (p2, am2) = self.pool.forward(&r2)?;
        let c3 = self.conv3.forward(&p2)?;
        let r3 = relu_forward(&c3);
        let pooled = self.adaptive.forward(&r3)?;
        let d = self.config.output_dim();
        let y = pooled.reshape(&[b, d])?;
        Ok((
            y,
            EncoderCache {
                x: x.clone(),
                c1,
                r1,
                am1,
                p1,
                c2,
                r2,
                am2,
                p2,
                c3,
                r3,
            },
        ))
    }

    /// Backward from `[B, d]` gradient; accumulates parameter gradients and
    /// returns the input-image gradient.
    pub fn backward(&mut self, cache: &EncoderCache<E>, grad_y: &Tensor<E>) -> Result<Tensor<E>> {
        let (b, _) = grad_y.dim2()?;
        let c3s = cache.r3.shape().to_vec();
        let g = grad_y
            .clone()
            .reshape(&[b, c3s[1], self.config.adaptive_pool, self.config.adaptive_pool])?;
        let g = self.adaptive.backward(&c3s, &g);
        let g = relu_backward(&cache.c3, &g);
        let g = self.conv3.backward(&cache.p2, &g)?;
        let g = self.pool.backward(cache.r2.shape(), &cache.am2, &g);
        let g = relu_backward(&cache.c2, &g);
        let g = self.conv2.backward(&cache.p1, &g)?;
        let g = self.pool.backward(cache.r1.shape(), &cache.am1, &g);
        let g = relu_backward(&cache.c1, &g);
        self.conv1.backward(&cache.x, &g)
    }

    pub fn zero_grad(&mut self) {
        self.conv1.zero_grad();
        self.conv2.zero_grad();
        self.conv3.zero_grad();
    }

    pub fn param_count(&self) -> usize {
        [&self.conv1, &self.conv2, &self.conv3]
            .iter()
            .map(|c| c.weight.len() + c.bias.len())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::derive_rng;

    #[test]
    fn default_config_shape_contract() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.output_dim(), 2048);
        cfg.validate_input(224).unwrap();
        let mut rng = derive_rng(1, "enc", 0);
        let enc = Encoder::<f32>::new(cfg, &mut rng).unwrap();
        let x = Tensor::<f32>::zeros(&[2, 1, 224, 224]);
        let (y, _) = enc.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2048]);
    }

    #[test]
    fn default_encoder_parameter_count_is_pinned() {
        // conv1 48*1*11*11+48, conv2 192*48*5*5+192, conv3 128*192*3*3+128.
        let mut rng = derive_rng(1, "enc", 1);
        let enc = Encoder::<f32>::new(EncoderConfig::default(), &mut rng).unwrap();
        assert_eq!(enc.param_count(), 457_760);
    }

    #[test]
    fn deterministic_forward() {
        let mut rng1 = derive_rng(9, "enc", 0);
        let mut rng2 = derive_rng(9, "enc", 0);
        let enc1 = Encoder::<f32>::new(EncoderConfig::reduced(), &mut rng1).unwrap();
        let enc2 = Encoder::<f32>::new(EncoderConfig::reduced(), &mut rng2).unwrap();
        let mut x = Tensor::<f32>::zeros(&[2, 1, 8, 8]);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = (i as f32 * 0.37).sin().abs();
        }
        let (y1, _) = enc1.forward(&x).unwrap();
        let (y2, _) = enc2.forward(&x).unwrap();
        assert_eq!(y1, y2);
        assert_eq!(y1.shape(), &[2, EncoderConfig::reduced().output_dim()]);
    }

    #[test]
    fn too_small_input_is_rejected() {
        let cfg = EncoderConfig::default();
        assert!(cfg.validate_input(10).is_err());
        assert!(cfg.validate_input(63).is_ok());
    }
}
