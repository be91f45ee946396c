//! Narrowband geometric channel model for a uniform linear array.
//!
//! A channel is the superposition of `L` plane-wave paths, each with a complex
//! gain, an angle of arrival and a delay. The delay only enters as a carrier
//! phase rotation since the model is single-carrier.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_antennas: usize,
    #[serde(default = "default_spacing")]
    pub spacing_wavelengths: f64,
}

fn default_spacing() -> f64 {
    0.5
}

impl ArrayGeometry {
    pub fn new(n_antennas: usize, spacing_wavelengths: f64) -> Result<Self> {
        let g = Self { n_antennas, spacing_wavelengths };
        g.validate()?;
        Ok(g)
    }

    /// Half-wavelength ULA.
    pub fn ula(n_antennas: usize) -> Result<Self> {
        Self::new(n_antennas, 0.5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_antennas == 0 {
            return Err(Error::invalid("array needs at least one antenna"));
        }
        if !(self.spacing_wavelengths > 0.0 && self.spacing_wavelengths.is_finite()) {
            return Err(Error::invalid("antenna spacing must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathComponent {
    pub gain: Complex64,
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
    pub delay_s: f64,
}

impl PathComponent {
    fn validate(&self) -> Result<()> {
        if !(self.gain.re.is_finite() && self.gain.im.is_finite()) {
            return Err(Error::NonFinite("path gain".into()));
        }
        if !(-PI..=PI).contains(&self.azimuth_rad) {
            return Err(Error::invalid(format!("azimuth {} outside [-pi, pi]", self.azimuth_rad)));
        }
        if !(0.0..=PI).contains(&self.elevation_rad) {
            return Err(Error::invalid(format!("elevation {} outside [0, pi]", self.elevation_rad)));
        }
        if !(self.delay_s >= 0.0 && self.delay_s.is_finite()) {
            return Err(Error::invalid("path delay must be non-negative"));
        }
        Ok(())
    }
}

/// A parameterized distribution over propagation paths. Two families with
/// disjoint angular support stand in for two environments with different
/// statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFamily {
    #[serde(default)]
    pub id: String,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    pub azimuth_center_rad: f64,
    pub azimuth_spread_rad: f64,
    /// Elevation is drawn uniformly in `center ± spread`, clipped to `[0, pi]`.
    /// Zero elevation is the array's horizontal plane.
    #[serde(default)]
    pub elevation_center_rad: f64,
    #[serde(default)]
    pub elevation_spread_rad: f64,
    /// Mean power of path `l` (0-indexed) is `-l * gain_decay_db_per_path` dB.
    pub gain_decay_db_per_path: f64,
    /// `10 log10(rho)`.
    pub pathloss_db: f64,
    pub delay_spread_s: f64,
    #[serde(default = "default_carrier")]
    pub carrier_hz: f64,
}

fn default_paths() -> usize {
    5
}

fn default_carrier() -> f64 {
    60e9
}

impl SceneFamily {
    /// Family with the crate's default power statistics centred on `azimuth_center_rad`.
    pub fn with_center(id: impl Into<String>, azimuth_center_rad: f64) -> Self {
        Self {
            id: id.into(),
            n_paths: 5,
            azimuth_center_rad,
            azimuth_spread_rad: 0.3,
            elevation_center_rad: 0.0,
            elevation_spread_rad: 0.0,
            gain_decay_db_per_path: 3.0,
            pathloss_db: 20.0,
            delay_spread_s: 50e-9,
            carrier_hz: 60e9,
        }
    }

    pub fn family_a() -> Self {
        Self::with_center("family_A", 0.0)
    }

    pub fn family_b() -> Self {
        Self::with_center("family_B", 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::NoPaths(self.id.clone()));
        }
        if self.id.is_empty() {
            return Err(Error::invalid("scene id must not be empty"));
        }
        let finite = [
            self.azimuth_center_rad,
            self.azimuth_spread_rad,
            self.elevation_center_rad,
            self.elevation_spread_rad,
            self.gain_decay_db_per_path,
            self.pathloss_db,
            self.delay_spread_s,
            self.carrier_hz,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("scene `{}` parameters", self.id)));
        }
        if self.azimuth_spread_rad < 0.0 || self.elevation_spread_rad < 0.0 {
            return Err(Error::invalid("angular spreads must be non-negative"));
        }
        if self.gain_decay_db_per_path < 0.0 || self.delay_spread_s < 0.0 {
            return Err(Error::invalid("gain decay and delay spread must be non-negative"));
        }
        if self.carrier_hz <= 0.0 {
            return Err(Error::invalid("carrier frequency must be positive"));
        }
        Ok(())
    }

    /// Mean power of each path, dominant path first.
    pub fn path_powers(&self) -> Vec<f64> {
        (0..self.n_paths).map(|l| 10f64.powf(-(l as f64) * self.gain_decay_db_per_path / 10.0)).collect()
    }

    /// `E[|h|^2]` in closed form: paths have independent uniform phases, so
    /// cross terms vanish and each path contributes `(N/rho) * N * E|alpha_l|^2`.
    pub fn expected_channel_power(&self, geometry: &ArrayGeometry) -> f64 {
        let n = geometry.n_antennas as f64;
        let rho = 10f64.powf(self.pathloss_db / 10.0);
        n * n / rho * self.path_powers().iter().sum::<f64>()
    }

    /// Draws the path set for one channel realization.
    pub fn draw_paths(&self, rng: &mut rng::Rng) -> Vec<PathComponent> {
        let el_lo = (self.elevation_center_rad - self.elevation_spread_rad).max(0.0);
        let el_hi = (self.elevation_center_rad + self.elevation_spread_rad).min(PI);
        self.path_powers()
            .into_iter()
            .map(|power| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                let gain = Complex64::new(re, im) * (power / 2.0).sqrt();
                let azimuth = (self.azimuth_center_rad + self.azimuth_spread_rad * (2.0 * rng.random::<f64>() - 1.0))
                    .clamp(-PI, PI);
                let elevation = el_lo + (el_hi - el_lo) * rng.random::<f64>();
                let delay = self.delay_spread_s * rng.random::<f64>();
                PathComponent { gain, azimuth_rad: azimuth, elevation_rad: elevation, delay_s: delay }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub h: Vec<Complex64>,
    pub scene_id: String,
    pub seed_index: u64,
}

impl ChannelSample {
    pub fn n_antennas(&self) -> usize {
        self.h.len()
    }

    pub fn power(&self) -> f64 {
        norm_sqr(&self.h)
    }
}

pub fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// ULA steering vector: entry `m` is `exp(j 2 pi d m sin(az) cos(el))`.
pub fn array_response(geometry: &ArrayGeometry, azimuth_rad: f64, elevation_rad: f64) -> Vec<Complex64> {
    let step = 2.0 * PI * geometry.spacing_wavelengths * azimuth_rad.sin() * elevation_rad.cos();
    (0..geometry.n_antennas).map(|m| Complex64::from_polar(1.0, step * m as f64)).collect()
}

/// `h = sqrt(N/rho) * sum_l alpha_l exp(-j 2 pi f tau_l) a(az_l, el_l)`.
pub fn channel_from_paths(
    geometry: &ArrayGeometry,
    paths: &[PathComponent],
    pathloss_db: f64,
    carrier_hz: f64,
) -> Result<Vec<Complex64>> {
    geometry.validate()?;
    if paths.is_empty() {
        return Err(Error::invalid("at least one path is required"));
    }
    let rho = 10f64.powf(pathloss_db / 10.0);
    let scale = (geometry.n_antennas as f64 / rho).sqrt();
    let mut h = vec![Complex64::new(0.0, 0.0); geometry.n_antennas];
    for path in paths {
        path.validate()?;
        let coeff = path.gain * Complex64::from_polar(scale, -2.0 * PI * carrier_hz * path.delay_s);
        for (hm, am) in h.iter_mut().zip(array_response(geometry, path.azimuth_rad, path.elevation_rad)) {
            *hm += coeff * am;
        }
    }
    Ok(h)
}

/// One channel realization from a scene family. The RNG stream is derived from
/// both the seed and the scene id so that two families never share draws.
pub fn generate_channel(scene: &SceneFamily, geometry: &ArrayGeometry, rng_seed: u64) -> Result<ChannelSample> {
    scene.validate()?;
    geometry.validate()?;
    let mut rng = rng::seeded(rng::derive(rng_seed, &scene.id));
    // A zero channel has probability zero but would break every downstream ratio.
    loop {
        let paths = scene.draw_paths(&mut rng);
        let h = channel_from_paths(geometry, &paths, scene.pathloss_db, scene.carrier_hz)?;
        if norm_sqr(&h) > 0.0 {
            return Ok(ChannelSample { h, scene_id: scene.id.clone(), seed_index: rng_seed });
        }
    }
}

/// Noisy channel estimate at the given pilot-to-noise ratio. The noise is
/// circular complex Gaussian with per-element variance `|h|^2 / N * 10^(-pnr/10)`.
/// `f64::INFINITY` means a perfect estimate.
pub fn estimate_channel(h: &[Complex64], pnr_db: f64, rng_seed: u64) -> Result<Vec<Complex64>> {
    let power = norm_sqr(h);
    if power <= 0.0 {
        return Err(Error::ZeroChannel);
    }
    if pnr_db.is_nan() {
        return Err(Error::invalid("PNR is NaN"));
    }
    if pnr_db == f64::INFINITY {
        return Ok(h.to_vec());
    }
    let var = power / h.len() as f64 * 10f64.powf(-pnr_db / 10.0);
    let sd = (var / 2.0).sqrt();
    let mut rng = rng::seeded(rng::derive(rng_seed, "channel-estimate"));
    Ok(h.iter()
        .map(|&z| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            z + Complex64::new(re * sd, im * sd)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn boresight_response_is_all_ones() {
        let g = ArrayGeometry::ula(4).unwrap();
        for z in array_response(&g, 0.0, PI / 2.0) {
            assert!(close(z, Complex64::new(1.0, 0.0), 1e-15));
        }
    }

    #[test]
    fn endfire_response_alternates() {
        let g = ArrayGeometry::ula(2).unwrap();
        let a = array_response(&g, PI / 2.0, 0.0);
        assert!(close(a[0], Complex64::new(1.0, 0.0), 1e-15));
        assert!(close(a[1], Complex64::new(-1.0, 0.0), 1e-15));
    }

    #[test]
    fn thirty_degree_response() {
        let g = ArrayGeometry::ula(3).unwrap();
        let a = array_response(&g, PI / 6.0, 0.0);
        let expected = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(-1.0, 0.0)];
        for (z, e) in a.iter().zip(expected) {
            assert!(close(*z, e, 1e-12), "{z} vs {e}");
        }
    }

    #[test]
    fn single_boresight_path_gives_ones() {
        let g = ArrayGeometry::ula(8).unwrap();
        let path =
            PathComponent { gain: Complex64::new(1.0, 0.0), azimuth_rad: 0.0, elevation_rad: PI / 2.0, delay_s: 0.0 };
        let pathloss_db = 10.0 * 8f64.log10();
        let h = channel_from_paths(&g, &[path], pathloss_db, 60e9).unwrap();
        for z in h {
            assert!(close(z, Complex64::new(1.0, 0.0), 1e-12));
        }
    }

    #[test]
    fn zero_path_scene_rejected() {
        let mut s = SceneFamily::family_a();
        s.n_paths = 0;
        let g = ArrayGeometry::ula(4).unwrap();
        assert!(matches!(generate_channel(&s, &g, 0), Err(Error::NoPaths(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let g = ArrayGeometry::ula(16).unwrap();
        let s = SceneFamily::family_b();
        let a = generate_channel(&s, &g, 42).unwrap();
        let b = generate_channel(&s, &g, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.h, generate_channel(&s, &g, 43).unwrap().h);
    }

    #[test]
    fn families_do_not_share_draws() {
        let g = ArrayGeometry::ula(16).unwrap();
        let mut a = SceneFamily::family_a();
        let mut b = SceneFamily::family_a();
        a.id = "x".into();
        b.id = "y".into();
        assert_ne!(generate_channel(&a, &g, 1).unwrap().h, generate_channel(&b, &g, 1).unwrap().h);
    }

    #[test]
    fn noiseless_estimate_is_exact() {
        let g = ArrayGeometry::ula(8).unwrap();
        let h = generate_channel(&SceneFamily::family_a(), &g, 5).unwrap().h;
        assert_eq!(estimate_channel(&h, f64::INFINITY, 1).unwrap(), h);
    }

    #[test]
    fn estimates_depend_on_seed() {
        let g = ArrayGeometry::ula(8).unwrap();
        let h = generate_channel(&SceneFamily::family_a(), &g, 5).unwrap().h;
        let e1 = estimate_channel(&h, 20.0, 1).unwrap();
        let e2 = estimate_channel(&h, 20.0, 2).unwrap();
        assert_ne!(e1, e2);
        assert_eq!(e1, estimate_channel(&h, 20.0, 1).unwrap());
    }

    #[test]
    fn zero_channel_estimate_rejected() {
        let h = vec![Complex64::new(0.0, 0.0); 4];
        assert!(matches!(estimate_channel(&h, 20.0, 0), Err(Error::ZeroChannel)));
    }

    #[test]
    fn invalid_geometry_rejected() {
        assert!(ArrayGeometry::new(0, 0.5).is_err());
        assert!(ArrayGeometry::new(4, 0.0).is_err());
    }
}
