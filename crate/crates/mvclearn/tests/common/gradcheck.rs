//! Reusable finite-difference gradient checks. Each function runs one check
//! in double precision and returns the worst relative error it saw, so both
//! the per-layer suite and the acceptance gate assert against their own
//! tolerances.

use mvclearn::contrastive::{batch_loss, batch_loss_backward, LossMode, ProjectionBatch};
use mvclearn::nn::layers::{
    l2_normalize_backward, l2_normalize_forward, relu_backward, relu_forward, AdaptiveAvgPool2d,
    BatchNorm1d, Conv2d, Linear, MaxPool2d,
};
use mvclearn::nn::model::reduced_model_config;
use mvclearn::nn::{Mode, ModelState, Projector, ProjectorConfig, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{flat_grads, flat_params, lesion_ids, rel_err, set_param, to_tensors};

pub const H: f64 = 1e-5;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn weighted_sum(out: &Tensor<f64>, coeffs: &Tensor<f64>) -> f64 {
    out.data().iter().zip(coeffs.data()).map(|(a, b)| a * b).sum()
}

fn worst(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| rel_err(*a, *n, 1e-6))
        .fold(0.0, f64::max)
}

/// Central difference of `f` over each coordinate of `field`.
macro_rules! fd_vec {
    ($field:expr, $loss:expr, $h:expr) => {{
        let mut numeric = Vec::new();
        for i in 0..$field.len() {
            let orig = $field.data()[i];
            $field.data_mut()[i] = orig + $h;
            let up = $loss;
            $field.data_mut()[i] = orig - $h;
            let down = $loss;
            $field.data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * $h));
        }
        numeric
    }};
}

pub fn check_conv(seed: u64, stride: usize, padding: usize) -> f64 {
    let mut r = rng(seed);
    let mut conv = Conv2d::<f64>::new(2, 3, 3, stride, padding, &mut r);
    let mut x = random_tensor(&[2, 2, 6, 6], &mut r);
    let out = conv.forward(&x).unwrap();
    let coeffs = random_tensor(out.shape(), &mut r);
    conv.zero_grad();
    let dx = conv.backward(&x, &coeffs).unwrap();

    let nw = fd_vec!(conv.weight, weighted_sum(&conv.forward(&x).unwrap(), &coeffs), H);
    let nb = fd_vec!(conv.bias, weighted_sum(&conv.forward(&x).unwrap(), &coeffs), H);
    let nx = fd_vec!(x, weighted_sum(&conv.forward(&x).unwrap(), &coeffs), H);
    worst(conv.grad_weight.data(), &nw)
        .max(worst(conv.grad_bias.data(), &nb))
        .max(worst(dx.data(), &nx))
}

pub fn check_linear(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut lin = Linear::<f64>::new(4, 3, &mut r);
    let mut x = random_tensor(&[3, 4], &mut r);
    let coeffs = random_tensor(&[3, 3], &mut r);
    lin.zero_grad();
    let dx = lin.backward(&x, &coeffs).unwrap();

    let nw = fd_vec!(lin.weight, weighted_sum(&lin.forward(&x).unwrap(), &coeffs), H);
    let nb = fd_vec!(lin.bias, weighted_sum(&lin.forward(&x).unwrap(), &coeffs), H);
    let nx = fd_vec!(x, weighted_sum(&lin.forward(&x).unwrap(), &coeffs), H);
    worst(lin.grad_weight.data(), &nw)
        .max(worst(lin.grad_bias.data(), &nb))
        .max(worst(dx.data(), &nx))
}

pub fn check_maxpool(seed: u64, kernel: usize, stride: usize) -> f64 {
    let mut r = rng(seed);
    let pool = MaxPool2d { kernel, stride };
    let mut x = random_tensor(&[2, 2, 5, 5], &mut r);
    let (out, argmax) = pool.forward(&x).unwrap();
    let coeffs = random_tensor(out.shape(), &mut r);
    let dx = pool.backward(x.shape(), &argmax, &coeffs);
    let nx = fd_vec!(x, weighted_sum(&pool.forward(&x).unwrap().0, &coeffs), H);
    worst(dx.data(), &nx)
}

pub fn check_adaptive_pool(seed: u64, in_hw: usize, out: usize) -> f64 {
    let mut r = rng(seed);
    let pool = AdaptiveAvgPool2d { out };
    let mut x = random_tensor(&[2, 2, in_hw, in_hw], &mut r);
    let y = pool.forward(&x).unwrap();
    let coeffs = random_tensor(y.shape(), &mut r);
    let dx = pool.backward(x.shape(), &coeffs);
    let nx = fd_vec!(x, weighted_sum(&pool.forward(&x).unwrap(), &coeffs), H);
    worst(dx.data(), &nx)
}

pub fn check_relu(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut x = random_tensor(&[2, 8], &mut r);
    for v in x.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1_f64.copysign(*v); // keep clear of the kink
        }
    }
    let coeffs = random_tensor(&[2, 8], &mut r);
    let dx = relu_backward(&x, &coeffs);
    let nx = fd_vec!(x, weighted_sum(&relu_forward(&x), &coeffs), H);
    worst(dx.data(), &nx)
}

pub fn check_batchnorm(seed: u64, mode: Mode) -> f64 {
    let mut r = rng(seed);
    let mut bn = BatchNorm1d::<f64>::new(3, 1e-5, 0.1);
    for (i, g) in bn.gamma.data_mut().iter_mut().enumerate() {
        *g = 0.5 + 0.3 * i as f64;
    }
    for (i, b) in bn.beta.data_mut().iter_mut().enumerate() {
        *b = -0.2 + 0.1 * i as f64;
    }
    for (i, m) in bn.running_mean.data_mut().iter_mut().enumerate() {
        *m = 0.1 * i as f64;
    }
    for (i, v) in bn.running_var.data_mut().iter_mut().enumerate() {
        *v = 0.5 + 0.25 * i as f64;
    }
    let mut x = random_tensor(&[5, 3], &mut r);
    let coeffs = random_tensor(&[5, 3], &mut r);
    let (_, cache, _) = bn.forward(&x, mode).unwrap();
    bn.zero_grad();
    let dx = bn.backward(&cache, &coeffs).unwrap();

    let nx = fd_vec!(x, weighted_sum(&bn.forward(&x, mode).unwrap().0, &coeffs), H);
    let ng = fd_vec!(bn.gamma, weighted_sum(&bn.forward(&x, mode).unwrap().0, &coeffs), H);
    let nb = fd_vec!(bn.beta, weighted_sum(&bn.forward(&x, mode).unwrap().0, &coeffs), H);
    worst(dx.data(), &nx)
        .max(worst(bn.grad_gamma.data(), &ng))
        .max(worst(bn.grad_beta.data(), &nb))
}

pub fn check_l2_normalize(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut x = random_tensor(&[3, 4], &mut r);
    for b in 0..3 {
        x.data_mut()[b * 4] += 1.0;
    }
    let coeffs = random_tensor(&[3, 4], &mut r);
    let (_, cache) = l2_normalize_forward(&x, 1e-12).unwrap();
    let dx = l2_normalize_backward(&cache, &coeffs);
    let nx = fd_vec!(
        x,
        weighted_sum(&l2_normalize_forward(&x, 1e-12).unwrap().0, &coeffs),
        H
    );
    worst(dx.data(), &nx)
}

/// Projector stack (train mode) over all its parameters.
pub fn check_projector(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut init = rng(seed + 1);
    let cfg = ProjectorConfig::with_dims(5, [6, 6, 4]);
    let mut proj = Projector::<f64>::new(cfg, &mut init).unwrap();
    let y = random_tensor(&[4, 5], &mut r);
    let coeffs = random_tensor(&[4, 4], &mut r);
    let (_, cache, _) = proj.forward(&y, Mode::Train).unwrap();
    proj.zero_grad();
    proj.backward(&cache, &coeffs).unwrap();
    let analytic: Vec<f64> = [
        proj.fc1.grad_weight.data(),
        proj.fc1.grad_bias.data(),
        proj.bn1.grad_gamma.data(),
        proj.bn1.grad_beta.data(),
        proj.fc2.grad_weight.data(),
        proj.fc2.grad_bias.data(),
        proj.bn2.grad_gamma.data(),
        proj.bn2.grad_beta.data(),
        proj.fc3.grad_weight.data(),
        proj.fc3.grad_bias.data(),
    ]
    .concat();

    let mut numeric = Vec::new();
    macro_rules! fd_over {
        ($field:expr) => {
            numeric.extend(fd_vec!(
                $field,
                weighted_sum(&proj.forward(&y, Mode::Train).unwrap().0, &coeffs),
                H
            ));
        };
    }
    fd_over!(proj.fc1.weight);
    fd_over!(proj.fc1.bias);
    fd_over!(proj.bn1.gamma);
    fd_over!(proj.bn1.beta);
    fd_over!(proj.fc2.weight);
    fd_over!(proj.fc2.bias);
    fd_over!(proj.bn2.gamma);
    fd_over!(proj.bn2.beta);
    fd_over!(proj.fc3.weight);
    fd_over!(proj.fc3.bias);
    worst(&analytic, &numeric)
}

/// Encoder parameters on the reduced config with scalar loss sum(output),
/// at the pinned step 1e-3.
pub fn check_encoder_params(seed: u64) -> f64 {
    let step = 1e-3;
    let mut r = rng(seed);
    let cfg = reduced_model_config(vec![1, 2], 8);
    let mut state = ModelState::<f64>::init(cfg, seed + 1).unwrap();
    let mut x = random_tensor(&[2, 1, 8, 8], &mut r);
    for v in x.data_mut() {
        *v = v.abs();
    }

    let enc = &mut state.views[0].encoder;
    let (y, cache) = enc.forward(&x).unwrap();
    let ones = Tensor::from_vec(y.shape(), vec![1.0; y.len()]).unwrap();
    enc.zero_grad();
    enc.backward(&cache, &ones).unwrap();
    let analytic: Vec<f64> = [
        enc.conv1.grad_weight.data(),
        enc.conv1.grad_bias.data(),
        enc.conv2.grad_weight.data(),
        enc.conv2.grad_bias.data(),
        enc.conv3.grad_weight.data(),
        enc.conv3.grad_bias.data(),
    ]
    .concat();

    let mut numeric = Vec::new();
    macro_rules! fd_over {
        ($field:expr) => {
            numeric.extend(fd_vec!(
                $field,
                enc.forward(&x).unwrap().0.data().iter().sum::<f64>(),
                step
            ));
        };
    }
    fd_over!(enc.conv1.weight);
    fd_over!(enc.conv1.bias);
    fd_over!(enc.conv2.weight);
    fd_over!(enc.conv2.bias);
    fd_over!(enc.conv3.weight);
    fd_over!(enc.conv3.bias);
    worst(&analytic, &numeric)
}

/// Batch-loss gradient w.r.t. projections, both modes and two temperatures.
pub fn check_contrastive(seed: u64, tau: f64, mode: LossMode) -> f64 {
    let h = 1e-6;
    let z = super::random_unit_projections(3, 3, 5, seed);
    let batch = ProjectionBatch::new(to_tensors(&z), lesion_ids(3), tau).unwrap();
    let (_, grads) = batch_loss_backward(&batch, mode).unwrap();
    let mut worst_err = 0.0_f64;
    for v in 0..3 {
        for i in 0..3 {
            for k in 0..5 {
                let mut pert = z.clone();
                pert[v][i][k] += h;
                let up = batch_loss(
                    &ProjectionBatch::new(to_tensors(&pert), lesion_ids(3), tau).unwrap(),
                    mode,
                )
                .unwrap()
                .loss;
                pert[v][i][k] -= 2.0 * h;
                let down = batch_loss(
                    &ProjectionBatch::new(to_tensors(&pert), lesion_ids(3), tau).unwrap(),
                    mode,
                )
                .unwrap()
                .loss;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads[v].data()[i * 5 + k];
                worst_err = worst_err.max(rel_err(analytic, numeric, 1e-8));
            }
        }
    }
    worst_err
}

/// Full image -> encoders -> projectors -> batch loss gradient on a reduced
/// model. Returns (worst relative error, parameter count).
pub fn check_end_to_end(seed: u64) -> (f64, usize) {
    let mut cfg = reduced_model_config(vec![1, 2], 8);
    cfg.projector = ProjectorConfig::with_dims(cfg.encoder.output_dim(), [4, 4, 3]);
    let mut state = ModelState::<f64>::init(cfg, seed).unwrap();
    let n_params = state.param_count();

    let mut r = rng(seed + 1);
    let n = 3;
    let images: Vec<Tensor<f64>> = (0..2)
        .map(|_| {
            let mut t = random_tensor(&[n, 1, 8, 8], &mut r);
            for v in t.data_mut() {
                *v = v.abs();
            }
            t
        })
        .collect();
    let tau = 0.07;
    let mode = LossMode::CmcInclusive;

    let forward_loss = |state: &ModelState<f64>| -> f64 {
        let mut projections = Vec::new();
        for (vi, x) in images.iter().enumerate() {
            let vm = &state.views[vi];
            let (y, _) = vm.encoder.forward(x).unwrap();
            let (z, _, _) = vm.projector.forward(&y, Mode::Train).unwrap();
            projections.push(z);
        }
        let batch = ProjectionBatch::new(projections, lesion_ids(n), tau).unwrap();
        batch_loss(&batch, mode).unwrap().loss
    };

    state.zero_grads();
    let mut enc_caches = Vec::new();
    let mut proj_caches = Vec::new();
    let mut projections = Vec::new();
    for (vi, x) in images.iter().enumerate() {
        let vm = &state.views[vi];
        let (y, ec) = vm.encoder.forward(x).unwrap();
        let (z, pc, _) = vm.projector.forward(&y, Mode::Train).unwrap();
        enc_caches.push(ec);
        proj_caches.push(pc);
        projections.push(z);
    }
    let batch = ProjectionBatch::new(projections, lesion_ids(n), tau).unwrap();
    let (_, dz) = batch_loss_backward(&batch, mode).unwrap();
    for vi in 0..2 {
        let vm = &mut state.views[vi];
        let dy = vm.projector.backward(&proj_caches[vi], &dz[vi]).unwrap();
        vm.encoder.backward(&enc_caches[vi], &dy).unwrap();
    }
    let analytic = flat_grads(&mut state);

    let base = flat_params(&state);
    let mut worst_err = 0.0_f64;
    for i in 0..base.len() {
        set_param(&mut state, i, base[i] + H);
        let up = forward_loss(&state);
        set_param(&mut state, i, base[i] - H);
        let down = forward_loss(&state);
        set_param(&mut state, i, base[i]);
        let numeric = (up - down) / (2.0 * H);
        worst_err = worst_err.max(rel_err(analytic[i], numeric, 1e-5));
    }
    (worst_err, n_params)
}
