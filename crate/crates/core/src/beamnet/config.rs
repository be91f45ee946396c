use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and hyperparameters of the beamforming network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub n_antennas: usize,
    pub n_users: usize,
    pub n_rf_chains: usize,
    /// Output widths of the Dense/ReLU/BN/Dropout blocks. The last entry is the
    /// network output and must equal `2 * n_antennas * n_users * n_rf_chains`.
    pub hidden_widths: Vec<usize>,
    pub dropout_rate: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    /// Total transmit power `P`.
    pub power_p: f64,
    /// Receiver noise variance `sigma^2`.
    pub noise_var: f64,
    /// Project the inference-time beamformer onto equal-modulus entries.
    /// Training always uses the sum-power normalization only.
    #[serde(default)]
    pub unit_modulus: bool,
}

impl Default for NetConfig {
    /// The 64-antenna single-user network: 128 -> 320 -> 320 -> 128.
    fn default() -> Self {
        Self {
            n_antennas: 64,
            n_users: 1,
            n_rf_chains: 1,
            hidden_widths: vec![320, 320, 128],
            dropout_rate: 0.3,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
            power_p: 1.0,
            noise_var: 0.1,
            unit_modulus: false,
        }
    }
}

impl NetConfig {
    /// A network for `n_antennas` with hidden widths scaled like the default
    /// (5x, 5x, 2x of the per-user real antenna count).
    pub fn scaled(n_antennas: usize) -> Self {
        let out = 2 * n_antennas;
        Self { n_antennas, hidden_widths: vec![5 * out / 2, 5 * out / 2, out], ..Self::default() }
    }

    pub fn input_width(&self) -> usize {
        2 * self.n_antennas * self.n_users
    }

    pub fn output_width(&self) -> usize {
        2 * self.n_antennas * self.n_users * self.n_rf_chains
    }

    /// Complex entries per user beamformer.
    pub fn beam_len(&self) -> usize {
        self.n_antennas * self.n_rf_chains
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.power_p / self.noise_var).log10()
    }

    /// Sets `sigma^2 = P * 10^(-snr/10)`.
    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.noise_var = self.power_p * 10f64.powf(-snr_db / 10.0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_antennas == 0 || self.n_users == 0 || self.n_rf_chains == 0 {
            return Err(Error::invalid("antenna, user and RF chain counts must be positive"));
        }
        match self.hidden_widths.last() {
            None => return Err(Error::invalid("network needs at least one block")),
            Some(&w) if w != self.output_width() => {
                return Err(Error::invalid(format!(
                    "last block width {w} must equal 2*N_t*N_r*N_RF = {}",
                    self.output_width()
                )))
            }
            _ => {}
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::invalid("block widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(Error::invalid("bn_epsilon must be positive"));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::invalid("bn_momentum must lie in (0, 1)"));
        }
        if !(self.power_p > 0.0 && self.power_p.is_finite()) {
            return Err(Error::invalid("power P must be positive"));
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(Error::invalid("noise variance must be positive"));
        }
        Ok(())
    }
}
