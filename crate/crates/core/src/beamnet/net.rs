//! Forward and reverse passes of the Dense -> ReLU -> BN -> Dropout stack,
//! the power-normalizing output layer and the negative-rate loss.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use num_complex::Complex64;
use rand::Rng as _;

use super::config::NetConfig;
use super::params::{BlockGrad, NetGradients, NetParams};
use super::power::{normalize_power, Beamformer};
use super::rate::sum_rate_with_grad;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, inverted dropout.
    Train,
    /// Running statistics, no dropout.
    Eval,
}

/// Real-valued network input for one sample: per user, the real parts of the
/// `N_t` channel entries followed by the imaginary parts.
pub fn encode_csi(h: &[Complex64], n_antennas: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * h.len());
    for user in h.chunks(n_antennas) {
        out.extend(user.iter().map(|z| z.re));
        out.extend(user.iter().map(|z| z.im));
    }
    out
}

/// Inverse of [`encode_csi`].
pub fn decode_csi(x: &[f64], n_antennas: usize) -> Vec<Complex64> {
    x.chunks(2 * n_antennas)
        .flat_map(|user| {
            let (re, im) = user.split_at(user.len() / 2);
            re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect::<Vec<_>>()
        })
        .collect()
}

/// Network inputs (possibly noisy channel estimates) paired with the true
/// channels the rate is evaluated on. `channels[i]` holds the `N_r` user
/// channels of sample `i` back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub channels: Vec<Vec<Complex64>>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, channels: Vec<Vec<Complex64>>) -> Result<Self> {
        if inputs.nrows() != channels.len() {
            return Err(Error::invalid(format!("{} inputs but {} channels", inputs.nrows(), channels.len())));
        }
        Ok(Self { inputs, channels })
    }

    /// Builds a batch from estimated and true channels of equal shape.
    pub fn from_estimates(estimates: &[Vec<Complex64>], truth: Vec<Vec<Complex64>>, n_antennas: usize) -> Result<Self> {
        if estimates.len() != truth.len() {
            return Err(Error::invalid("estimate and truth counts differ"));
        }
        let width = estimates.first().map_or(0, |e| 2 * e.len());
        let mut inputs = Array2::zeros((estimates.len(), width));
        for (mut row, est) in inputs.rows_mut().into_iter().zip(estimates) {
            if 2 * est.len() != width {
                return Err(Error::invalid("ragged channel estimates"));
            }
            row.assign(&ArrayView1::from(&encode_csi(est, n_antennas)));
        }
        Self::new(inputs, truth)
    }

    /// Noiseless batch: the true channel is also the network input.
    pub fn noiseless(channels: Vec<Vec<Complex64>>, n_antennas: usize) -> Result<Self> {
        let est = channels.clone();
        Self::from_estimates(&est, channels, n_antennas)
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select(Axis(0), idx),
            channels: idx.iter().map(|&i| self.channels[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_stats: Option<(Array1<f64>, Array1<f64>)>,
    mask: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    /// Raw network output, one row per sample.
    pub output: Array2<f64>,
}

impl ForwardCache {
    /// The complex vectors `u_k` of sample `i` (first half of each user's
    /// block holds real parts, second half imaginary parts).
    pub fn users(&self, i: usize, config: &NetConfig) -> Vec<Vec<Complex64>> {
        raw_to_users(self.output.row(i), config.beam_len())
    }

    /// ReLU activation pattern, used to detect kink crossings in finite
    /// difference checks.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.blocks.iter().flat_map(|b| b.pre.iter().map(|&z| z > 0.0)).collect()
    }

    /// Batch mean and biased variance per block, when batch statistics were used.
    pub fn batch_stats(&self) -> Vec<Option<(Array1<f64>, Array1<f64>)>> {
        self.blocks.iter().map(|b| b.batch_stats.clone()).collect()
    }
}

fn raw_to_users(row: ArrayView1<f64>, beam_len: usize) -> Vec<Vec<Complex64>> {
    let row = row.to_vec();
    row.chunks(2 * beam_len)
        .map(|block| (0..beam_len).map(|m| Complex64::new(block[m], block[beam_len + m])).collect())
        .collect()
}

fn check_shapes(params: &NetParams, config: &NetConfig, inputs: &Array2<f64>) -> Result<()> {
    config.validate()?;
    if params.blocks.len() != config.hidden_widths.len()
        || params.input_width() != config.input_width()
        || params.output_width() != config.output_width()
    {
        return Err(Error::invalid("parameters do not match network config"));
    }
    if inputs.ncols() != config.input_width() {
        return Err(Error::InputLength { expected: config.input_width(), found: inputs.ncols() });
    }
    if inputs.nrows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network input".into()));
    }
    Ok(())
}

/// Runs the network on a batch. Train mode normalizes with batch statistics
/// (running statistics when the batch has a single row) and applies inverted
/// dropout drawn from `dropout_seed`; it does not touch the running
/// statistics, see [`NetParams::update_running_stats`]. Eval mode is a pure
/// function of the parameters and inputs.
pub fn forward(
    params: &NetParams,
    config: &NetConfig,
    inputs: &Array2<f64>,
    mode: Mode,
    dropout_seed: u64,
) -> Result<ForwardCache> {
    check_shapes(params, config, inputs)?;
    let m = inputs.nrows();
    let mut rng = rng::seeded(rng::derive(dropout_seed, "dropout"));
    let keep = 1.0 - config.dropout_rate;
    let mut x = inputs.clone();
    let mut caches = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let mut pre = x.dot(&block.dense.weight);
        pre += &block.dense.bias;
        let act = pre.mapv(|z| z.max(0.0));

        let use_batch = mode == Mode::Train && m > 1;
        let (mean, var, batch_stats) = if use_batch {
            let mean = act.mean_axis(Axis(0)).unwrap();
            let centered = &act - &mean;
            let var = (&centered * &centered).mean_axis(Axis(0)).unwrap();
            (mean.clone(), var.clone(), Some((mean, var)))
        } else {
            (block.bn.running_mean.clone(), block.bn.running_var.clone(), None)
        };
        let inv_std = var.mapv(|v| 1.0 / (v + config.bn_epsilon).sqrt());
        let xhat = (&act - &mean) * &inv_std;
        let mut y = &xhat * &block.bn.gamma + &block.bn.beta;

        let mask = if mode == Mode::Train && config.dropout_rate > 0.0 {
            let mask =
                Array2::from_shape_fn(y.raw_dim(), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
            y *= &mask;
            Some(mask)
        } else {
            None
        };
        caches.push(BlockCache { input: x, pre, xhat, inv_std, batch_stats, mask });
        x = y;
    }
    Ok(ForwardCache { blocks: caches, output: x })
}

struct HeadGrad {
    sum_rate: f64,
    d_raw: Vec<f64>,
    d_channel: Vec<f64>,
}

/// Normalization layer plus sum rate for one sample, with gradients of the sum
/// rate with respect to the raw network output and the true channel.
fn head(raw: ArrayView1<f64>, channel: &[Complex64], config: &NetConfig) -> Result<HeadGrad> {
    let beam_len = config.beam_len();
    let n_t = config.n_antennas;
    let u = raw_to_users(raw, beam_len);
    let bf = normalize_power(&u, config.power_p)?;
    let total: f64 = u.iter().flatten().map(|z| z.norm_sqr()).sum();
    let scale = (config.power_p / total).sqrt();

    let h_list: Vec<&[Complex64]> = channel.chunks(n_t).collect();
    if h_list.len() != config.n_users {
        return Err(Error::invalid(format!("channel holds {} users, expected {}", h_list.len(), config.n_users)));
    }
    let g = sum_rate_with_grad(&h_list, &bf.v, config.noise_var);

    // v = c u with c = sqrt(P)/|u|:  du = c (dv - u <u, dv> / |u|^2)
    let radial: f64 =
        u.iter().flatten().zip(g.d_v.iter().flatten()).map(|(a, b)| a.re * b.re + a.im * b.im).sum::<f64>() / total;
    let mut d_raw = vec![0.0; raw.len()];
    for (k, (uk, dvk)) in u.iter().zip(&g.d_v).enumerate() {
        let base = 2 * beam_len * k;
        for (mi, (um, dvm)) in uk.iter().zip(dvk).enumerate() {
            let du = (dvm - um * radial) * scale;
            d_raw[base + mi] = du.re;
            d_raw[base + beam_len + mi] = du.im;
        }
    }
    let d_channel = g.d_h.iter().flat_map(|dh| dh.iter().map(|z| z.re).chain(dh.iter().map(|z| z.im))).collect();
    Ok(HeadGrad { sum_rate: g.sum_rate, d_raw, d_channel })
}

/// Per-sample sum rates for the beamformers produced from `batch.inputs`.
fn head_rates(cache: &ForwardCache, batch: &Batch, config: &NetConfig) -> Result<Vec<f64>> {
    (0..batch.len()).map(|i| head(cache.output.row(i), &batch.channels[i], config).map(|h| h.sum_rate)).collect()
}

/// Negative mean per-user rate: `-(1 / (N_r M)) sum_i sum_k R_{k,i}`.
pub fn batch_loss(params: &NetParams, batch: &Batch, config: &NetConfig, mode: Mode, dropout_seed: u64) -> Result<f64> {
    forward_loss(params, batch, config, mode, dropout_seed).map(|(loss, _)| loss)
}

/// [`batch_loss`] together with the forward cache it was computed from.
pub fn forward_loss(
    params: &NetParams,
    batch: &Batch,
    config: &NetConfig,
    mode: Mode,
    dropout_seed: u64,
) -> Result<(f64, ForwardCache)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let cache = forward(params, config, &batch.inputs, mode, dropout_seed)?;
    let rates = head_rates(&cache, batch, config)?;
    Ok((-rates.iter().sum::<f64>() / (config.n_users * batch.len()) as f64, cache))
}

#[derive(Debug, Clone)]
pub struct Backward {
    pub loss: f64,
    pub params: NetGradients,
    /// d loss / d network input, one row per sample.
    pub input: Array2<f64>,
    /// d loss / d true channel (real layout of [`encode_csi`]), one row per sample.
    pub channel: Array2<f64>,
    pub cache: ForwardCache,
}

/// Exact reverse-mode gradients of [`batch_loss`].
pub fn backward(
    params: &NetParams,
    batch: &Batch,
    config: &NetConfig,
    mode: Mode,
    dropout_seed: u64,
) -> Result<Backward> {
    backward_impl(params, batch, config, mode, dropout_seed, true)
}

pub(crate) fn backward_impl(
    params: &NetParams,
    batch: &Batch,
    config: &NetConfig,
    mode: Mode,
    dropout_seed: u64,
    need_input: bool,
) -> Result<Backward> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let cache = forward(params, config, &batch.inputs, mode, dropout_seed)?;
    let m = batch.len();
    let norm = 1.0 / (config.n_users * m) as f64;
    let mut d_out = Array2::zeros(cache.output.raw_dim());
    let mut d_channel = Array2::zeros((m, 2 * config.n_antennas * config.n_users));
    let mut total_rate = 0.0;
    for i in 0..m {
        let hg = head(cache.output.row(i), &batch.channels[i], config)?;
        total_rate += hg.sum_rate;
        d_out.row_mut(i).assign(&ArrayView1::from(&hg.d_raw).mapv(|v| -v * norm));
        d_channel.row_mut(i).assign(&ArrayView1::from(&hg.d_channel).mapv(|v| -v * norm));
    }
    let loss = -total_rate * norm;

    let mut grads = Vec::with_capacity(params.blocks.len());
    let mut d = d_out;
    let mut d_input = None;
    for (idx, (block, bc)) in params.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        if let Some(mask) = &bc.mask {
            d *= mask;
        }
        let d_gamma = (&d * &bc.xhat).sum_axis(Axis(0));
        let d_beta = d.sum_axis(Axis(0));
        let d_xhat = &d * &block.bn.gamma;
        let d_act = if bc.batch_stats.is_some() {
            let mf = m as f64;
            let sum_dx = d_xhat.sum_axis(Axis(0));
            let sum_dx_xhat = (&d_xhat * &bc.xhat).sum_axis(Axis(0));
            ((&d_xhat * mf - &sum_dx) - &bc.xhat * &sum_dx_xhat) * &(&bc.inv_std / mf)
        } else {
            d_xhat * &bc.inv_std
        };
        let mut d_pre = d_act;
        d_pre.zip_mut_with(&bc.pre, |g, &z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        let d_weight = bc.input.t().dot(&d_pre);
        let d_bias = d_pre.sum_axis(Axis(0));
        if idx > 0 || need_input {
            let dx = d_pre.dot(&block.dense.weight.t());
            if idx == 0 {
                d_input = Some(dx);
            } else {
                d = dx;
            }
        }
        grads.push(BlockGrad { weight: d_weight, bias: d_bias, gamma: d_gamma, beta: d_beta });
    }
    grads.reverse();
    Ok(Backward {
        loss,
        params: NetGradients { blocks: grads },
        input: d_input.unwrap_or_else(|| Array2::zeros((0, 0))),
        channel: d_channel,
        cache,
    })
}

impl NetParams {
    /// Exponential moving average of the batch statistics in `cache`.
    pub fn update_running_stats(&mut self, cache: &ForwardCache, momentum: f64) {
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks) {
            if let Some((mean, var)) = &bc.batch_stats {
                block.bn.running_mean.zip_mut_with(mean, |r, &b| *r = momentum * *r + (1.0 - momentum) * b);
                block.bn.running_var.zip_mut_with(var, |r, &b| *r = momentum * *r + (1.0 - momentum) * b);
            }
        }
    }
}

/// Eval-mode beamformers for each row of `inputs`, with the optional
/// equal-modulus projection applied.
pub fn beamformers(params: &NetParams, config: &NetConfig, inputs: &Array2<f64>) -> Result<Vec<Beamformer>> {
    let cache = forward(params, config, inputs, Mode::Eval, 0)?;
    (0..inputs.nrows())
        .map(|i| {
            let bf = normalize_power(&cache.users(i, config), config.power_p)?;
            Ok(if config.unit_modulus { bf.project_unit_modulus() } else { bf })
        })
        .collect()
}

/// Eval-mode per-sample sum rate over a batch.
pub fn evaluate_rates(params: &NetParams, config: &NetConfig, batch: &Batch) -> Result<Vec<f64>> {
    let bfs = beamformers(params, config, &batch.inputs)?;
    bfs.iter()
        .zip(&batch.channels)
        .map(|(bf, ch)| {
            let h_list: Vec<Vec<Complex64>> = ch.chunks(config.n_antennas).map(<[Complex64]>::to_vec).collect();
            super::rate::sum_rate(&h_list, bf, config.noise_var)
        })
        .collect()
}
