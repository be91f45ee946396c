//! Finite-difference gradient checking shared by the gradient tests and the
//! acceptance suite.
#![allow(dead_code)]

use holobeam::beamnet::{backward, forward, forward_loss, Batch, Mode, NetConfig, NetParams};
use holobeam::rng;
use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;

/// Central-difference step; truncation error scales as `STEP^2`, roundoff as `eps / STEP`.
pub const STEP: f64 = 1e-6;

pub fn small_config(n_antennas: usize, n_users: usize, dropout: f64) -> NetConfig {
    let out = 2 * n_antennas * n_users;
    NetConfig {
        n_antennas,
        n_users,
        hidden_widths: vec![3 * out, 2 * out, out],
        dropout_rate: dropout,
        ..NetConfig::default()
    }
}

pub fn random_batch(config: &NetConfig, m: usize, seed: u64) -> Batch {
    let mut r = rng::seeded(seed);
    let width = config.input_width();
    let inputs = Array2::from_shape_fn((m, width), |_| r.random::<f64>() * 2.0 - 1.0);
    let channels = (0..m)
        .map(|_| {
            (0..config.n_antennas * config.n_users)
                .map(|_| Complex64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5))
                .collect()
        })
        .collect();
    Batch::new(inputs, channels).unwrap()
}

/// Randomizes BN affine and running statistics so every path carries gradient.
pub fn jitter(params: &mut NetParams, seed: u64) {
    let mut r = rng::seeded(seed);
    for b in &mut params.blocks {
        b.dense.bias.mapv_inplace(|_| 0.1 * (r.random::<f64>() - 0.5));
        b.bn.gamma.mapv_inplace(|_| 0.5 + r.random::<f64>());
        b.bn.beta.mapv_inplace(|_| 0.5 * (r.random::<f64>() - 0.5));
        b.bn.running_mean.mapv_inplace(|_| 0.3 * r.random::<f64>());
        b.bn.running_var.mapv_inplace(|_| 0.5 + r.random::<f64>());
    }
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

pub struct Check {
    pub param_err: f64,
    pub input_err: f64,
    pub skipped: usize,
    pub total: usize,
}

/// Central differences over every trainable parameter and every input entry.
/// Coordinates whose perturbation flips a ReLU are excluded (the loss is not
/// differentiable across the kink) and counted.
pub fn check(config: &NetConfig, params: &NetParams, batch: &Batch, mode: Mode, seed: u64) -> Check {
    check_with_step(config, params, batch, mode, seed, STEP)
}

pub fn check_with_step(
    config: &NetConfig,
    params: &NetParams,
    batch: &Batch,
    mode: Mode,
    seed: u64,
    step: f64,
) -> Check {
    let analytic = backward(params, batch, config, mode, seed).unwrap();
    let base_pattern = forward(params, config, &batch.inputs, mode, seed).unwrap().activation_pattern();

    let mut skipped = 0;
    let mut a_p = Vec::new();
    let mut f_p = Vec::new();
    let flat = params.trainable_flat();
    let g_flat = analytic.params.flat();
    let mut p = params.clone();
    for i in 0..flat.len() {
        let mut eval = |delta: f64| {
            let mut v = flat.clone();
            v[i] += delta;
            p.set_trainable_flat(&v).unwrap();
            let (loss, cache) = forward_loss(&p, batch, config, mode, seed).unwrap();
            (loss, cache.activation_pattern() == base_pattern)
        };
        let (lp, okp) = eval(step);
        let (lm, okm) = eval(-step);
        if okp && okm {
            a_p.push(g_flat[i]);
            f_p.push((lp - lm) / (2.0 * step));
        } else {
            skipped += 1;
        }
    }

    let mut a_x = Vec::new();
    let mut f_x = Vec::new();
    for r in 0..batch.len() {
        for c in 0..batch.inputs.ncols() {
            let eval = |delta: f64| {
                let mut b = batch.clone();
                b.inputs[[r, c]] += delta;
                let (loss, cache) = forward_loss(params, &b, config, mode, seed).unwrap();
                (loss, cache.activation_pattern() == base_pattern)
            };
            let (lp, okp) = eval(step);
            let (lm, okm) = eval(-step);
            if okp && okm {
                a_x.push(analytic.input[[r, c]]);
                f_x.push((lp - lm) / (2.0 * step));
            } else {
                skipped += 1;
            }
        }
    }
    Check {
        param_err: rel_err(&a_p, &f_p),
        input_err: rel_err(&a_x, &f_x),
        skipped,
        total: flat.len() + batch.inputs.len(),
    }
}

pub struct SweepOutcome {
    pub configurations: usize,
    pub worst: f64,
    /// Configurations whose parameter or input error reached `1e-5`, or that
    /// crossed ReLU kinks on 1% or more of the coordinates.
    pub failures: Vec<String>,
}

/// 34 random networks at each of `N_t` = 2, 4, 8, mixing train/eval mode,
/// one or two users and dropout.
pub fn random_net_sweep() -> SweepOutcome {
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let mut configurations = 0;
    for (ci, &n_t) in [2usize, 4, 8].iter().enumerate() {
        for trial in 0..34u64 {
            let seed = 1000 * ci as u64 + trial;
            let n_users = if trial % 5 == 4 { 2 } else { 1 };
            let mode = if trial % 2 == 0 { Mode::Train } else { Mode::Eval };
            let config = small_config(n_t, n_users, if trial % 3 == 0 { 0.3 } else { 0.0 });
            let mut params = NetParams::init(&config, seed).unwrap();
            jitter(&mut params, seed + 17);
            let batch = random_batch(&config, 3 + (trial as usize % 3), seed + 31);
            // tiny outputs can be wiped out entirely by dropout; pick a mask that keeps some
            let dropout_seed = (seed + 5..).find(|&d| backward(&params, &batch, &config, mode, d).is_ok()).unwrap();
            let c = check(&config, &params, &batch, mode, dropout_seed);
            if c.param_err >= 1e-5 || c.input_err >= 1e-5 || c.skipped * 100 >= c.total {
                failures.push(format!(
                    "N_t={n_t} trial {trial}: param {:e}, input {:e}, kinks {}/{}",
                    c.param_err, c.input_err, c.skipped, c.total
                ));
            }
            worst = worst.max(c.param_err).max(c.input_err);
            configurations += 1;
        }
    }
    SweepOutcome { configurations, worst, failures }
}
