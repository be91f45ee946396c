//! Reference beamformers: maximum ratio transmission (the single-user optimum)
//! and exhaustive search over an oversampled DFT codebook.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::beamnet::{user_rate, Beamformer};
use crate::channel::norm_sqr;
use crate::error::{Error, Result};

/// `v = sqrt(P) h / |h|`.
pub fn mrt_beamformer(h: &[Complex64], power: f64) -> Result<Beamformer> {
    let n2 = norm_sqr(h);
    if n2 <= 0.0 {
        return Err(Error::ZeroChannel);
    }
    let scale = (power / n2).sqrt();
    Ok(Beamformer { v: vec![h.iter().map(|z| z * scale).collect()] })
}

/// Closed-form single-user optimum `log2(1 + P |h|^2 / sigma^2)`.
pub fn mrt_rate(h: &[Complex64], power: f64, noise_var: f64) -> f64 {
    (1.0 + power * norm_sqr(h) / noise_var).log2()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    vectors: Vec<Vec<Complex64>>,
}

impl Codebook {
    pub fn new(vectors: Vec<Vec<Complex64>>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::invalid("codebook must not be empty"));
        }
        let n = vectors[0].len();
        for v in &vectors {
            if v.len() != n {
                return Err(Error::invalid("codebook vectors differ in length"));
            }
            if (norm_sqr(v) - 1.0).abs() > 1e-12 {
                return Err(Error::invalid("codebook vectors must have unit norm"));
            }
        }
        Ok(Self { vectors })
    }

    pub fn vectors(&self) -> &[Vec<Complex64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// `oversampling * N` beams; entry `m` of beam `i` is
/// `exp(j 2 pi m i / (oversampling N)) / sqrt(N)`.
pub fn dft_codebook(n_antennas: usize, oversampling: usize) -> Result<Codebook> {
    if n_antennas == 0 || oversampling == 0 {
        return Err(Error::invalid("antenna count and oversampling must be positive"));
    }
    let size = oversampling * n_antennas;
    let norm = 1.0 / (n_antennas as f64).sqrt();
    let vectors = (0..size)
        .map(|i| {
            (0..n_antennas)
                .map(|m| Complex64::from_polar(norm, 2.0 * PI * ((m * i) % size) as f64 / size as f64))
                .collect()
        })
        .collect();
    Ok(Codebook { vectors })
}

/// Best codebook beam at full power; ties go to the lowest index.
pub fn codebook_search(h: &[Complex64], codebook: &Codebook, power: f64, noise_var: f64) -> Result<(Beamformer, f64)> {
    let channel = [h.to_vec()];
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in codebook.vectors.iter().enumerate() {
        if c.len() != h.len() {
            return Err(Error::AntennaMismatch { expected: h.len(), found: c.len() });
        }
        let bf = Beamformer { v: vec![c.iter().map(|z| z * power.sqrt()).collect()] };
        let rate = user_rate(&channel, &bf, noise_var, 0)?;
        if best.is_none_or(|(_, r)| rate > r) {
            best = Some((i, rate));
        }
    }
    let (i, rate) = best.expect("codebook is non-empty");
    Ok((Beamformer { v: vec![codebook.vectors[i].iter().map(|z| z * power.sqrt()).collect()] }, rate))
}
