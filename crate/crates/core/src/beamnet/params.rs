use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng as _;

use super::config::NetConfig;
use crate::binio::{write_atomic, Reader, Writer};
use crate::error::{Error, Result};
use crate::rng;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"BNET";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in x fan_out`; a batch row times this matrix gives the layer output.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub dense: Dense,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub blocks: Vec<Block>,
}

impl NetParams {
    /// Glorot-uniform weights, zero biases, identity batch norm.
    pub fn init(config: &NetConfig, rng_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(rng::derive(rng_seed, "init"));
        let mut fan_in = config.input_width();
        let mut blocks = Vec::with_capacity(config.hidden_widths.len());
        for &fan_out in &config.hidden_widths {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weight = Array2::from_shape_fn((fan_in, fan_out), |_| bound * (2.0 * rng.random::<f64>() - 1.0));
            blocks.push(Block {
                dense: Dense { weight, bias: Array1::zeros(fan_out) },
                bn: BatchNorm {
                    gamma: Array1::ones(fan_out),
                    beta: Array1::zeros(fan_out),
                    running_mean: Array1::zeros(fan_out),
                    running_var: Array1::ones(fan_out),
                },
            });
            fan_in = fan_out;
        }
        Ok(Self { blocks })
    }

    pub fn input_width(&self) -> usize {
        self.blocks[0].dense.weight.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.dense.weight.ncols())
    }

    pub fn dense_param_counts(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.dense.weight.len() + b.dense.bias.len()).collect()
    }

    /// Trainable batch-norm parameters (scale and shift) per block.
    pub fn bn_param_counts(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.bn.gamma.len() + b.bn.beta.len()).collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.dense_param_counts().iter().sum::<usize>() + self.bn_param_counts().iter().sum::<usize>()
    }

    /// Trainable values in canonical order: per block weight (row-major),
    /// bias, gamma, beta.
    pub fn trainable_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_count());
        for b in &self.blocks {
            out.extend(b.dense.weight.iter());
            out.extend(b.dense.bias.iter());
            out.extend(b.bn.gamma.iter());
            out.extend(b.bn.beta.iter());
        }
        out
    }

    pub fn set_trainable_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.trainable_count() {
            return Err(Error::invalid(format!(
                "expected {} trainable values, got {}",
                self.trainable_count(),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        for b in &mut self.blocks {
            let slots = b
                .dense
                .weight
                .iter_mut()
                .chain(b.dense.bias.iter_mut())
                .chain(b.bn.gamma.iter_mut())
                .chain(b.bn.beta.iter_mut());
            for (x, v) in slots.zip(&mut it) {
                *x = v;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| {
            b.dense
                .weight
                .iter()
                .chain(&b.dense.bias)
                .chain(&b.bn.gamma)
                .chain(&b.bn.beta)
                .chain(&b.bn.running_mean)
                .chain(&b.bn.running_var)
                .all(|v| v.is_finite())
        })
    }
}

/// Gradients with the same layout as the trainable part of [`NetParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub blocks: Vec<BlockGrad>,
}

impl NetGradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend(b.weight.iter());
            out.extend(b.bias.iter());
            out.extend(b.gamma.iter());
            out.extend(b.beta.iter());
        }
        out
    }
}

impl NetParams {
    /// Plain gradient-descent step.
    pub fn sgd_step(&mut self, grads: &NetGradients, learning_rate: f64) {
        for (b, g) in self.blocks.iter_mut().zip(&grads.blocks) {
            b.dense.weight.scaled_add(-learning_rate, &g.weight);
            b.dense.bias.scaled_add(-learning_rate, &g.bias);
            b.bn.gamma.scaled_add(-learning_rate, &g.gamma);
            b.bn.beta.scaled_add(-learning_rate, &g.beta);
        }
    }
}

fn write_config(w: &mut Writer, c: &NetConfig) {
    w.u32(c.n_antennas as u32);
    w.u32(c.n_users as u32);
    w.u32(c.n_rf_chains as u32);
    w.u32(c.hidden_widths.len() as u32);
    for &h in &c.hidden_widths {
        w.u32(h as u32);
    }
    w.f64(c.dropout_rate);
    w.f64(c.bn_epsilon);
    w.f64(c.bn_momentum);
    w.f64(c.power_p);
    w.f64(c.noise_var);
    w.u32(u32::from(c.unit_modulus));
}

fn read_config(r: &mut Reader) -> Result<NetConfig> {
    let n_antennas = r.u32("n_antennas")? as usize;
    let n_users = r.u32("n_users")? as usize;
    let n_rf_chains = r.u32("n_rf_chains")? as usize;
    let n_blocks = r.u32("block count")? as usize;
    if n_blocks > 1024 {
        return Err(Error::Malformed(format!("{n_blocks} blocks")));
    }
    let hidden_widths = (0..n_blocks).map(|_| r.u32("block width").map(|v| v as usize)).collect::<Result<_>>()?;
    let config = NetConfig {
        n_antennas,
        n_users,
        n_rf_chains,
        hidden_widths,
        dropout_rate: r.f64("dropout")?,
        bn_epsilon: r.f64("bn_epsilon")?,
        bn_momentum: r.f64("bn_momentum")?,
        power_p: r.f64("power")?,
        noise_var: r.f64("noise_var")?,
        unit_modulus: r.u32("unit_modulus")? != 0,
    };
    config.validate().map_err(|e| Error::Malformed(format!("checkpoint config: {e}")))?;
    Ok(config)
}

pub fn encode_checkpoint(config: &NetConfig, params: &NetParams) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(&CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    write_config(&mut w, config);
    for b in &params.blocks {
        w.f64s(b.dense.weight.as_slice().expect("standard layout"));
        w.f64s(b.dense.bias.as_slice().unwrap());
        w.f64s(b.bn.gamma.as_slice().unwrap());
        w.f64s(b.bn.beta.as_slice().unwrap());
        w.f64s(b.bn.running_mean.as_slice().unwrap());
        w.f64s(b.bn.running_var.as_slice().unwrap());
    }
    w.buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(NetConfig, NetParams)> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let config = read_config(&mut r)?;
    let mut fan_in = config.input_width();
    let mut blocks = Vec::new();
    for (i, &fan_out) in config.hidden_widths.iter().enumerate() {
        let what = |name: &str| format!("block {i} {name}");
        let weight = Array2::from_shape_vec((fan_in, fan_out), r.f64s(fan_in * fan_out, &what("weight"))?)
            .map_err(|e| Error::Malformed(e.to_string()))?;
        let mut vec = |name: &str| r.f64s(fan_out, &what(name)).map(Array1::from);
        let bias = vec("bias")?;
        let gamma = vec("gamma")?;
        let beta = vec("beta")?;
        let running_mean = vec("running mean")?;
        let running_var = vec("running var")?;
        blocks.push(Block { dense: Dense { weight, bias }, bn: BatchNorm { gamma, beta, running_mean, running_var } });
        fan_in = fan_out;
    }
    r.finish()?;
    Ok((config, NetParams { blocks }))
}

pub fn save_checkpoint(path: &Path, config: &NetConfig, params: &NetParams) -> Result<()> {
    write_atomic(path, &encode_checkpoint(config, params))
}

pub fn load_checkpoint(path: &Path) -> Result<(NetConfig, NetParams)> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_counts() {
        let p = NetParams::init(&NetConfig::default(), 0).unwrap();
        assert_eq!(p.dense_param_counts(), vec![41280, 102720, 41088]);
        assert_eq!(p.bn_param_counts(), vec![640, 640, 256]);
        assert_eq!(p.trainable_count(), 186_624);
        assert_eq!(p.trainable_flat().len(), 186_624);
    }

    #[test]
    fn init_contract() {
        let c = NetConfig::scaled(4);
        let p = NetParams::init(&c, 11).unwrap();
        assert_eq!(p, NetParams::init(&c, 11).unwrap());
        assert_ne!(p, NetParams::init(&c, 12).unwrap());
        let mut fan_in = c.input_width();
        for b in &p.blocks {
            let fan_out = b.dense.bias.len();
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            assert!(b.dense.weight.iter().all(|w| w.abs() <= bound));
            assert!(b.dense.bias.iter().all(|&v| v == 0.0));
            assert!(b.bn.gamma.iter().all(|&v| v == 1.0));
            assert!(b.bn.beta.iter().all(|&v| v == 0.0));
            assert!(b.bn.running_mean.iter().all(|&v| v == 0.0));
            assert!(b.bn.running_var.iter().all(|&v| v == 1.0));
            fan_in = fan_out;
        }
    }

    #[test]
    fn flat_round_trip() {
        let c = NetConfig::scaled(2);
        let mut p = NetParams::init(&c, 1).unwrap();
        let mut flat = p.trainable_flat();
        flat.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64);
        p.set_trainable_flat(&flat).unwrap();
        assert_eq!(p.trainable_flat(), flat);
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let c = NetConfig::scaled(4);
        let p = NetParams::init(&c, 3).unwrap();
        let bytes = encode_checkpoint(&c, &p);
        let (c2, p2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!((c2, p2), (c, p));

        let mut bad = bytes.clone();
        bad[1] = 0;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1]), Err(Error::Truncated(_))));
    }
}
