//! Momentum SGD and the step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 240,
            decay_epochs: vec![120, 160, 200],
            decay_factor: 0.1,
            batch_size: 64,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(Error::Config {
                reason: format!("base_lr {} must be positive", self.base_lr),
            });
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config {
                reason: format!("momentum {} must lie in [0, 1)", self.momentum),
            });
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config {
                reason: "weight_decay must be non-negative".into(),
            });
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config {
                reason: "epochs and batch_size must be positive".into(),
            });
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config {
                reason: format!("decay_factor {} must lie in (0, 1]", self.decay_factor),
            });
        }
        let increasing = self
            .decay_epochs
            .windows(2)
            .all(|w| w[0] < w[1]);
        if !increasing || self.decay_epochs.iter().any(|e| *e >= self.epochs) {
            return Err(Error::Config {
                reason: format!(
                    "decay_epochs {:?} must be strictly increasing and < epochs {}",
                    self.decay_epochs, self.epochs
                ),
            });
        }
        Ok(())
    }
}

/// Learning rate at an epoch: `base_lr * decay_factor^k` with
/// `k = #{e in decay_epochs : epoch >= e}`.
///
/// Computed as `base_lr / (1/decay_factor)^k`: for decimal factors whose
/// reciprocal is exactly representable (0.1 -> 10.0) this reproduces the
/// decimal literals 0.1, 0.01, 0.001, 1e-4 bit-exactly, which a direct
/// product of f64 factors does not.
pub fn lr_at(config: &OptimizerConfig, epoch: usize) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::EpochOutOfRange {
            epoch,
            epochs: config.epochs,
        });
    }
    let k = config.decay_epochs.iter().filter(|e| epoch >= **e).count();
    Ok(config.base_lr / (1.0 / config.decay_factor).powi(k as i32))
}

/// One momentum-SGD update over a flat parameter slice:
/// `v <- momentum*v + g + weight_decay*p; p <- p - lr*v`.
pub fn sgd_update<E: Scalar>(
    param: &mut [E],
    grad: &[E],
    velocity: &mut [E],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    let lr = E::of(lr);
    let mom = E::of(momentum);
    let wd = E::of(weight_decay);
    for ((p, g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = mom * *v + *g + wd * *p;
        *p = *p - lr * *v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_reproduces_decimal_literals_exactly() {
        let cfg = OptimizerConfig::default();
        assert_eq!(lr_at(&cfg, 0).unwrap(), 0.1);
        assert_eq!(lr_at(&cfg, 119).unwrap(), 0.1);
        assert_eq!(lr_at(&cfg, 120).unwrap(), 0.01);
        assert_eq!(lr_at(&cfg, 130).unwrap(), 0.01);
        assert_eq!(lr_at(&cfg, 170).unwrap(), 0.001);
        assert_eq!(lr_at(&cfg, 210).unwrap(), 1e-4);
        assert_eq!(lr_at(&cfg, 239).unwrap(), 1e-4);
        assert!(matches!(
            lr_at(&cfg, 240),
            Err(Error::EpochOutOfRange { .. })
        ));
    }

    #[test]
    fn vanilla_sgd_is_plain_descent() {
        let mut p = [1.0_f64];
        let mut v = [0.0_f64];
        sgd_update(&mut p, &[0.5], &mut v, 0.1, 0.0, 0.0);
        assert_eq!(p[0], 1.0 - 0.1 * 0.5);
    }

    #[test]
    fn zero_gradient_zero_decay_is_a_fixed_point() {
        let mut p = [2.5_f64];
        let mut v = [0.0_f64];
        sgd_update(&mut p, &[0.0], &mut v, 0.1, 0.9, 0.0);
        assert_eq!(p[0], 2.5);
        assert_eq!(v[0], 0.0);
    }

    #[test]
    fn two_momentum_steps_match_hand_recurrence() {
        // Quadratic f(p) = 0.5*c*p^2, grad = c*p, momentum 0.9, wd 0.
        let c = 0.7_f64;
        let (lr, mom) = (0.1_f64, 0.9_f64);
        let mut p = 1.3_f64;
        let mut v = 0.0_f64;
        // hand recurrence
        let mut hp = p;
        let mut hv = v;
        for _ in 0..2 {
            hv = mom * hv + c * hp;
            hp -= lr * hv;
        }
        // implementation
        let mut ps = [p];
        let mut vs = [v];
        for _ in 0..2 {
            let g = c * ps[0];
            sgd_update(&mut ps, &[g], &mut vs, lr, mom, 0.0);
        }
        p = ps[0];
        v = vs[0];
        assert!((p - hp).abs() < 1e-12, "{p} vs {hp}");
        assert!((v - hv).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_bad_schedules() {
        let mut cfg = OptimizerConfig::default();
        cfg.decay_epochs = vec![160, 120];
        assert!(cfg.validate().is_err());
        cfg.decay_epochs = vec![120, 300];
        assert!(cfg.validate().is_err());
        cfg.decay_epochs = vec![];
        assert!(cfg.validate().is_ok());
    }
}
