//! Spectral efficiency of a multi-user downlink and its derivatives.

use num_complex::Complex64;

use super::power::Beamformer;
use crate::error::{Error, Result};

/// `sum_r |h^H v_r|^2` where `v` holds `N_RF` columns of length `h.len()`.
pub fn beam_gain(h: &[Complex64], v: &[Complex64]) -> f64 {
    v.chunks_exact(h.len())
        .map(|col| h.iter().zip(col).map(|(hm, vm)| hm.conj() * vm).sum::<Complex64>().norm_sqr())
        .sum()
}

fn check_dims(h_list: &[Vec<Complex64>], bf: &Beamformer, noise_var: f64) -> Result<()> {
    if h_list.len() != bf.v.len() {
        return Err(Error::invalid(format!("{} channels but {} beamformers", h_list.len(), bf.v.len())));
    }
    if !(noise_var > 0.0) {
        return Err(Error::invalid("noise variance must be positive"));
    }
    for (h, v) in h_list.iter().zip(&bf.v) {
        if h.is_empty() || v.len() % h.len() != 0 {
            return Err(Error::invalid(format!(
                "beamformer length {} incompatible with {} antennas",
                v.len(),
                h.len()
            )));
        }
    }
    Ok(())
}

/// Rate of user `k` in bit/s/Hz, `log2(1 + S_kk / (sigma^2 + sum_{j != k} S_kj))`.
pub fn user_rate(h_list: &[Vec<Complex64>], bf: &Beamformer, noise_var: f64, k: usize) -> Result<f64> {
    check_dims(h_list, bf, noise_var)?;
    let h = h_list.get(k).ok_or_else(|| Error::invalid(format!("user index {k} out of range")))?;
    let signal = beam_gain(h, &bf.v[k]);
    let interference: f64 = bf.v.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, vj)| beam_gain(h, vj)).sum();
    Ok((1.0 + signal / (noise_var + interference)).log2())
}

pub fn sum_rate(h_list: &[Vec<Complex64>], bf: &Beamformer, noise_var: f64) -> Result<f64> {
    (0..h_list.len()).map(|k| user_rate(h_list, bf, noise_var, k)).sum()
}

/// Sum rate together with its gradients with respect to every beamformer and
/// every channel entry. Gradients of a real function of a complex vector are
/// packed as `d/d re + j d/d im`.
pub(crate) struct RateGrad {
    pub sum_rate: f64,
    pub d_v: Vec<Vec<Complex64>>,
    pub d_h: Vec<Vec<Complex64>>,
}

pub(crate) fn sum_rate_with_grad(h_list: &[&[Complex64]], v: &[Vec<Complex64>], noise_var: f64) -> RateGrad {
    let n_users = h_list.len();
    let n_t = h_list[0].len();
    // inner[k][j][r] = h_k^H v_{j,r}
    let inner: Vec<Vec<Vec<Complex64>>> = h_list
        .iter()
        .map(|h| {
            v.iter()
                .map(|vj| {
                    vj.chunks_exact(n_t).map(|col| h.iter().zip(col).map(|(hm, vm)| hm.conj() * vm).sum()).collect()
                })
                .collect()
        })
        .collect();
    let gain = |k: usize, j: usize| inner[k][j].iter().map(|s| s.norm_sqr()).sum::<f64>();

    let ln2 = std::f64::consts::LN_2;
    let mut d_v: Vec<Vec<Complex64>> = v.iter().map(|vj| vec![Complex64::new(0.0, 0.0); vj.len()]).collect();
    let mut d_h: Vec<Vec<Complex64>> = h_list.iter().map(|h| vec![Complex64::new(0.0, 0.0); h.len()]).collect();
    let mut total = 0.0;
    for k in 0..n_users {
        let interference: f64 = noise_var + (0..n_users).filter(|&j| j != k).map(|j| gain(k, j)).sum::<f64>();
        let t = interference + gain(k, k);
        total += (t / interference).log2();
        for j in 0..n_users {
            let weight = if j == k { 1.0 / (t * ln2) } else { (1.0 / t - 1.0 / interference) / ln2 };
            // d|h^H v|^2 / dv = 2 h (h^H v);  d|h^H v|^2 / dh = 2 v conj(h^H v)
            for (r, s) in inner[k][j].iter().enumerate() {
                let col = &v[j][r * n_t..(r + 1) * n_t];
                let dcol = &mut d_v[j][r * n_t..(r + 1) * n_t];
                for (dv, hm) in dcol.iter_mut().zip(h_list[k]) {
                    *dv += hm * s * (2.0 * weight);
                }
                for (dh, vm) in d_h[k].iter_mut().zip(col) {
                    *dh += vm * s.conj() * (2.0 * weight);
                }
            }
        }
    }
    RateGrad { sum_rate: total, d_v, d_h }
}
