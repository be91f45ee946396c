use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::config::NetConfig;
use super::net::{backward_impl, Batch, Mode};
use super::params::NetParams;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { epochs: 2000, batch_size: 32, learning_rate: 1e-3, seed: 0 }
    }
}

/// Plain minibatch SGD with a fresh shuffle every epoch. Returns the trained
/// parameters and the mean training loss of each epoch.
///
/// A trailing minibatch of a single sample is folded into the previous one so
/// that batch statistics are always defined, except when the whole dataset is
/// one sample.
pub fn train(
    mut params: NetParams,
    data: &Batch,
    config: &NetConfig,
    schedule: &Schedule,
) -> Result<(NetParams, Vec<f64>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if schedule.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if !(schedule.learning_rate >= 0.0 && schedule.learning_rate.is_finite()) {
        return Err(Error::invalid("learning rate must be finite and non-negative"));
    }
    let n = data.len();
    let mut rng = rng::seeded(rng::derive(schedule.seed, "train"));
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        order.shuffle(&mut rng);
        let mut bounds: Vec<(usize, usize)> =
            (0..n).step_by(schedule.batch_size).map(|s| (s, (s + schedule.batch_size).min(n))).collect();
        if bounds.len() > 1 && bounds.last().is_some_and(|&(s, e)| e - s == 1) {
            let (_, e) = bounds.pop().unwrap();
            bounds.last_mut().unwrap().1 = e;
        }
        let mut epoch_loss = 0.0;
        for &(start, end) in &bounds {
            let batch = data.select(&order[start..end]);
            let out = backward_impl(&params, &batch, config, Mode::Train, rng.next_u64(), false)?;
            epoch_loss += out.loss * (end - start) as f64;
            params.sgd_step(&out.params, schedule.learning_rate);
            params.update_running_stats(&out.cache, config.bn_momentum);
        }
        let mean = epoch_loss / n as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        history.push(mean);
    }
    Ok((params, history))
}
