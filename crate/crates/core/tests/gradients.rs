//! Analytic gradients against central finite differences.

mod common;

use common::{jitter, random_batch, random_net_sweep, rel_err, small_config, STEP};
use holobeam::beamnet::{backward, batch_loss, Batch, Mode, NetConfig, NetParams};
use holobeam::channel::{generate_channel, ArrayGeometry, SceneFamily};
use ndarray::Array2;
use num_complex::Complex64;

#[test]
fn gradients_match_finite_differences_on_random_nets() {
    let outcome = random_net_sweep();
    assert!(outcome.configurations >= 100);
    assert!(outcome.failures.is_empty(), "{:#?}", outcome.failures);
}

#[test]
fn channel_gradient_matches_finite_differences() {
    let config = small_config(4, 2, 0.0);
    let mut params = NetParams::init(&config, 3).unwrap();
    jitter(&mut params, 4);
    let batch = random_batch(&config, 4, 5);
    let analytic = backward(&params, &batch, &config, Mode::Eval, 0).unwrap();
    let mut a = Vec::new();
    let mut f = Vec::new();
    for r in 0..batch.len() {
        for c in 0..batch.channels[r].len() {
            for part in 0..2 {
                let eval = |delta: f64| {
                    let mut b = batch.clone();
                    let d = if part == 0 { Complex64::new(delta, 0.0) } else { Complex64::new(0.0, delta) };
                    b.channels[r][c] += d;
                    batch_loss(&params, &b, &config, Mode::Eval, 0).unwrap()
                };
                f.push((eval(STEP) - eval(-STEP)) / (2.0 * STEP));
                // real layout: per user, N_t real parts then N_t imaginary parts
                let user = c / config.n_antennas;
                let m = c % config.n_antennas;
                let col = 2 * config.n_antennas * user + part * config.n_antennas + m;
                a.push(analytic.channel[[r, col]]);
            }
        }
    }
    assert!(rel_err(&a, &f) < 1e-6, "{:e}", rel_err(&a, &f));
}

#[test]
fn mrt_direction_is_stationary() {
    // A single block whose output equals its input when the input is positive
    // lets us place u exactly at h and probe the loss around it.
    let geometry = ArrayGeometry::ula(4).unwrap();
    let h = generate_channel(&SceneFamily::family_a(), &geometry, 9).unwrap().h;
    let config = NetConfig { n_antennas: 4, hidden_widths: vec![8], dropout_rate: 0.0, ..NetConfig::default() };
    let mut params = NetParams::init(&config, 0).unwrap();
    let b = &mut params.blocks[0];
    b.dense.weight = Array2::eye(8);
    b.dense.bias.fill(10.0);
    b.bn.running_mean.fill(10.0);
    b.bn.running_var.fill(1.0 - config.bn_epsilon);
    let x: Vec<f64> = holobeam::beamnet::encode_csi(&h, 4);
    let batch = Batch::new(Array2::from_shape_vec((1, 8), x).unwrap(), vec![h.clone()]).unwrap();
    let g = backward(&params, &batch, &config, Mode::Eval, 0).unwrap();
    let norm: f64 = g.input.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 1e-8, "gradient at MRT has norm {norm:e}");
    // and the rate there equals the closed form
    let loss = batch_loss(&params, &batch, &config, Mode::Eval, 0).unwrap();
    let power: f64 = h.iter().map(|z| z.norm_sqr()).sum();
    let oracle = (1.0 + config.power_p * power / config.noise_var).log2();
    assert!((-loss - oracle).abs() < 1e-10);
}
