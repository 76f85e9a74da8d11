//! Seeded synthetic lesion cubes for desk-scale experiments.
//!
//! Two classes: `SmoothBlob` is an anisotropic Gaussian intensity profile;
//! `SpiculatedBlob` adds 4..=8 radial ridge protrusions to a tighter core.
//! Both get additive Gaussian noise (sigma 0.02) and clamp to [0, 1], and are
//! bitwise-reproducible from `(class, side, seed)`.

use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::util::derive_rng;
use crate::volume::LesionCube;

pub const NOISE_SIGMA: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticClass {
    SmoothBlob,
    SpiculatedBlob,
}

impl SyntheticClass {
    pub fn name(&self) -> &'static str {
        match self {
            SyntheticClass::SmoothBlob => "smooth_blob",
            SyntheticClass::SpiculatedBlob => "spiculated_blob",
        }
    }
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Rotation matrix (rows) from a random unit quaternion.
fn random_rotation(rng: &mut rand_chacha::ChaCha8Rng) -> [[f64; 3]; 3] {
    let q: [f64; 4] = {
        let mut q = [0.0; 4];
        loop {
            for v in &mut q {
                *v = StandardNormal.sample(rng);
            }
            let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                for v in &mut q {
                    *v /= n;
                }
                break;
            }
        }
        q
    };
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

struct Ridge {
    direction: [f64; 3],
    angular_sigma: f64,
    length: f64,
    amplitude: f64,
}

/// Generate one synthetic lesion cube, fully determined by the arguments.
/// `side` must be at least 9 voxels.
pub fn gen_synthetic_lesion(class: SyntheticClass, side: usize, seed: u64) -> Result<LesionCube> {
    assert!(side >= 9, "synthetic lesion side {side} must be >= 9");
    let s = side as f64;
    let mut rng = derive_rng(seed, class.name(), side as u64);

    let center: [f64; 3] = {
        let jitter = s / 16.0;
        let h = (s - 1.0) / 2.0;
        [
            h + rng.random_range(-jitter..jitter),
            h + rng.random_range(-jitter..jitter),
            h + rng.random_range(-jitter..jitter),
        ]
    };
    let amplitude = rng.random_range(0.55..0.85);
    let sigma_range = match class {
        SyntheticClass::SmoothBlob => (s / 8.0, s / 6.0),
        SyntheticClass::SpiculatedBlob => (s / 10.0, s / 8.0),
    };
    let sigmas = [
        rng.random_range(sigma_range.0..sigma_range.1),
        rng.random_range(sigma_range.0..sigma_range.1),
        rng.random_range(sigma_range.0..sigma_range.1),
    ];
    let rot = random_rotation(&mut rng);

    let ridges: Vec<Ridge> = match class {
        SyntheticClass::SmoothBlob => Vec::new(),
        SyntheticClass::SpiculatedBlob => {
            let count = rng.random_range(5..=9);
            (0..count)
                .map(|_| {
                    let dir = loop {
                        let d = [
                            StandardNormal.sample(&mut rng),
                            StandardNormal.sample(&mut rng),
                            StandardNormal.sample(&mut rng),
                        ];
                        let n: f64 = d.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
                        if n > 1e-6 {
                            break normalize3(d);
                        }
                    };
                    Ridge {
                        direction: dir,
                        angular_sigma: rng.random_range(0.15..0.30),
                        length: rng.random_range(0.40 * s..0.60 * s),
                        amplitude: rng.random_range(0.45..0.65),
                    }
                })
                .collect()
        }
    };

    let n = side;
    let mut data = Array3::<f64>::zeros((n, n, n));
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                let p = [
                    x as f64 - center[0],
                    y as f64 - center[1],
                    z as f64 - center[2],
                ];
                // Core: rotate into principal axes, scale by sigmas.
                let mut q = [0.0; 3];
                for (k, qk) in q.iter_mut().enumerate() {
                    *qk = (rot[k][0] * p[0] + rot[k][1] * p[1] + rot[k][2] * p[2]) / sigmas[k];
                }
                let mut value =
                    amplitude * (-0.5 * (q[0] * q[0] + q[1] * q[1] + q[2] * q[2])).exp();

                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                if r > 1e-9 {
                    for ridge in &ridges {
                        let cos_angle = ((p[0] * ridge.direction[0]
                            + p[1] * ridge.direction[1]
                            + p[2] * ridge.direction[2])
                            / r)
                            .clamp(-1.0, 1.0);
                        let angle = cos_angle.acos();
                        let radial = (-0.5 * (r / ridge.length).powi(2)).exp();
                        let angular =
                            (-0.5 * (angle / ridge.angular_sigma).powi(2)).exp();
                        value += ridge.amplitude * angular * radial;
                    }
                }

                let noise: f64 = StandardNormal.sample(&mut rng);
                data[(x, y, z)] = (value + NOISE_SIGMA * noise).clamp(0.0, 1.0);
            }
        }
    }
    LesionCube::new(data, &format!("{}-{seed}", class.name()))
}
