use num_complex::Complex64;

use crate::channel::norm_sqr;
use crate::error::{Error, Result};

/// Per-user transmit vectors. With `N_RF > 1` each user's vector holds the
/// `N_RF` columns of its `N_t x N_RF` precoder back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformer {
    pub v: Vec<Vec<Complex64>>,
}

impl Beamformer {
    pub fn total_power(&self) -> f64 {
        self.v.iter().map(|vk| norm_sqr(vk)).sum()
    }

    pub fn n_users(&self) -> usize {
        self.v.len()
    }

    /// Equal-modulus projection at the same total power: every entry keeps its
    /// phase and gets magnitude `sqrt(P / entries)`.
    pub fn project_unit_modulus(&self) -> Beamformer {
        let entries: usize = self.v.iter().map(Vec::len).sum();
        let mag = (self.total_power() / entries as f64).sqrt();
        Beamformer {
            v: self.v.iter().map(|vk| vk.iter().map(|z| Complex64::from_polar(mag, z.arg())).collect()).collect(),
        }
    }
}

/// `v_k = sqrt(P / sum_j |u_j|^2) u_k`.
pub fn normalize_power(u: &[Vec<Complex64>], power: f64) -> Result<Beamformer> {
    if !(power > 0.0 && power.is_finite()) {
        return Err(Error::invalid(format!("power {power} must be positive")));
    }
    let total: f64 = u.iter().map(|uk| norm_sqr(uk)).sum();
    if !total.is_finite() {
        return Err(Error::NonFinite("beamformer".into()));
    }
    if total <= 0.0 {
        return Err(Error::DegenerateBeamformer);
    }
    let scale = (power / total).sqrt();
    Ok(Beamformer { v: u.iter().map(|uk| uk.iter().map(|z| z * scale).collect()).collect() })
}
