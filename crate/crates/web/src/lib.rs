//! WebAssembly bindings for the interactive demo page: the radiation pattern of
//! MRT and codebook beams on a drawn channel, average rate against SNR, and the
//! mixture curve `C(q)` for two synthetic diagonal curvature spectra.
//!
//! Every export is an ordinary Rust function as well, so the same code is
//! tested natively.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use wasm_bindgen::prelude::*;

use holobeam::baselines::{codebook_search, dft_codebook, mrt_beamformer, mrt_rate};
use holobeam::beamnet::{user_rate, Beamformer};
use holobeam::channel::{array_response, channel_from_paths, estimate_channel, ArrayGeometry, SceneFamily};
use holobeam::rng;
use holobeam::theory::{sweep_q, HessianEstimate};

const OVERSAMPLING: usize = 2;
const FLOOR_DB: f64 = -40.0;
const MAX_ANTENNAS: usize = 256;
const MAX_CHANNELS: usize = 5000;
const MAX_POINTS: usize = 2000;
const MAX_DIM: usize = 512;

type Out<T> = std::result::Result<T, String>;

fn err(e: holobeam::Error) -> String {
    e.to_string()
}

fn geometry(n_antennas: usize) -> Out<ArrayGeometry> {
    if n_antennas > MAX_ANTENNAS {
        return Err(format!("at most {MAX_ANTENNAS} antennas"));
    }
    ArrayGeometry::ula(n_antennas).map_err(err)
}

fn scene(center_deg: f64, spread_deg: f64) -> Out<SceneFamily> {
    let mut s = SceneFamily::with_center("demo", center_deg.to_radians());
    s.azimuth_spread_rad = spread_deg.to_radians();
    s.validate().map_err(err)?;
    Ok(s)
}

fn noise_var(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Normalized array gain `|a(theta)^H v|^2 / (N |v|^2)` in dB, floored.
fn gain_db(geometry: &ArrayGeometry, v: &[Complex64], azimuth_rad: f64) -> f64 {
    let a = array_response(geometry, azimuth_rad, 0.0);
    let inner: Complex64 = a.iter().zip(v).map(|(a, v)| a.conj() * v).sum();
    let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    let g = inner.norm_sqr() / (geometry.n_antennas as f64 * norm);
    (10.0 * g.log10()).max(FLOOR_DB)
}

#[wasm_bindgen]
pub struct BeamPattern {
    angles_deg: Vec<f64>,
    mrt_db: Vec<f64>,
    codebook_db: Vec<f64>,
    path_azimuths_deg: Vec<f64>,
    path_powers_db: Vec<f64>,
    mrt_rate: f64,
    codebook_rate: f64,
}

#[wasm_bindgen]
impl BeamPattern {
    pub fn angles_deg(&self) -> Vec<f64> {
        self.angles_deg.clone()
    }
    pub fn mrt_db(&self) -> Vec<f64> {
        self.mrt_db.clone()
    }
    pub fn codebook_db(&self) -> Vec<f64> {
        self.codebook_db.clone()
    }
    pub fn path_azimuths_deg(&self) -> Vec<f64> {
        self.path_azimuths_deg.clone()
    }
    /// Path powers relative to the strongest path.
    pub fn path_powers_db(&self) -> Vec<f64> {
        self.path_powers_db.clone()
    }
    pub fn mrt_rate(&self) -> f64 {
        self.mrt_rate
    }
    pub fn codebook_rate(&self) -> f64 {
        self.codebook_rate
    }
}

/// Draws one channel and evaluates the MRT and best-codebook beams on a grid
/// of `resolution` azimuths over `[-90, 90]` degrees.
#[wasm_bindgen]
pub fn beam_pattern(
    n_antennas: usize,
    center_deg: f64,
    spread_deg: f64,
    seed: u32,
    snr_db: f64,
    resolution: usize,
) -> Out<BeamPattern> {
    let geometry = geometry(n_antennas)?;
    let scene = scene(center_deg, spread_deg)?;
    if !(2..=MAX_POINTS).contains(&resolution) {
        return Err(format!("resolution must be in 2..={MAX_POINTS}"));
    }
    let mut rng = rng::seeded(rng::derive(seed as u64, &scene.id));
    let paths = scene.draw_paths(&mut rng);
    let h = channel_from_paths(&geometry, &paths, scene.pathloss_db, scene.carrier_hz).map_err(err)?;
    let nv = noise_var(snr_db);
    let mrt = mrt_beamformer(&h, 1.0).map_err(err)?;
    let codebook = dft_codebook(n_antennas, OVERSAMPLING).map_err(err)?;
    let (best, codebook_rate) = codebook_search(&h, &codebook, 1.0, nv).map_err(err)?;

    let angles_deg: Vec<f64> = (0..resolution).map(|i| -90.0 + 180.0 * i as f64 / (resolution - 1) as f64).collect();
    let pattern = |v: &[Complex64]| angles_deg.iter().map(|a| gain_db(&geometry, v, a.to_radians())).collect();
    let strongest = paths.iter().map(|p| p.gain.norm_sqr()).fold(0.0, f64::max);
    Ok(BeamPattern {
        mrt_db: pattern(&mrt.v[0]),
        codebook_db: pattern(&best.v[0]),
        angles_deg,
        path_azimuths_deg: paths.iter().map(|p| p.azimuth_rad.to_degrees()).collect(),
        path_powers_db: paths.iter().map(|p| (10.0 * (p.gain.norm_sqr() / strongest).log10()).max(FLOOR_DB)).collect(),
        mrt_rate: mrt_rate(&h, 1.0, nv),
        codebook_rate,
    })
}

#[wasm_bindgen]
pub struct RateCurve {
    snr_db: Vec<f64>,
    mrt: Vec<f64>,
    mrt_estimated: Vec<f64>,
    codebook: Vec<f64>,
}

#[wasm_bindgen]
impl RateCurve {
    pub fn snr_db(&self) -> Vec<f64> {
        self.snr_db.clone()
    }
    /// MRT with perfect channel knowledge, the single-user optimum.
    pub fn mrt(&self) -> Vec<f64> {
        self.mrt.clone()
    }
    /// MRT steered by a noisy channel estimate.
    pub fn mrt_estimated(&self) -> Vec<f64> {
        self.mrt_estimated.clone()
    }
    pub fn codebook(&self) -> Vec<f64> {
        self.codebook.clone()
    }
}

/// Mean rate over `n_channels` draws at SNRs `snr_min, snr_min + snr_step, ...`
/// up to `snr_max`.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn rate_curve(
    n_antennas: usize,
    center_deg: f64,
    spread_deg: f64,
    seed: u32,
    n_channels: usize,
    pnr_db: f64,
    snr_min: f64,
    snr_max: f64,
    snr_step: f64,
) -> Out<RateCurve> {
    let geometry = geometry(n_antennas)?;
    let scene = scene(center_deg, spread_deg)?;
    if !(1..=MAX_CHANNELS).contains(&n_channels) {
        return Err(format!("channel count must be in 1..={MAX_CHANNELS}"));
    }
    if !(snr_step > 0.0 && snr_min.is_finite() && snr_max >= snr_min) {
        return Err("SNR grid needs a positive step and max >= min".into());
    }
    let n_snr = ((snr_max - snr_min) / snr_step + 1e-9).floor() as usize + 1;
    if n_snr > MAX_POINTS {
        return Err(format!("at most {MAX_POINTS} SNR points"));
    }
    let snr_db: Vec<f64> = (0..n_snr).map(|i| snr_min + i as f64 * snr_step).collect();
    let codebook = dft_codebook(n_antennas, OVERSAMPLING).map_err(err)?;
    let base = rng::derive(seed as u64, "demo-rates");
    let (mut mrt, mut est, mut cb) = (vec![0.0; n_snr], vec![0.0; n_snr], vec![0.0; n_snr]);
    for i in 0..n_channels {
        let index = base.wrapping_add(i as u64);
        let h = holobeam::channel::generate_channel(&scene, &geometry, index).map_err(err)?.h;
        let estimate = estimate_channel(&h, pnr_db, index).map_err(err)?;
        let steered = mrt_beamformer(&estimate, 1.0).map_err(err)?;
        // the best codebook beam maximizes gain, so it does not depend on SNR
        let (best, _) = codebook_search(&h, &codebook, 1.0, 1.0).map_err(err)?;
        let channel = [h.clone()];
        let rate = |bf: &Beamformer, nv: f64| user_rate(&channel, bf, nv, 0).map_err(err);
        for (j, &s) in snr_db.iter().enumerate() {
            let nv = noise_var(s);
            mrt[j] += mrt_rate(&h, 1.0, nv);
            est[j] += rate(&steered, nv)?;
            cb[j] += rate(&best, nv)?;
        }
    }
    let mean = |v: Vec<f64>| v.into_iter().map(|x| x / n_channels as f64).collect();
    Ok(RateCurve { snr_db, mrt: mean(mrt), mrt_estimated: mean(est), codebook: mean(cb) })
}

#[wasm_bindgen]
pub struct MixtureDemo {
    q: Vec<f64>,
    c: Vec<f64>,
    argmin_q: f64,
    u_shaped: bool,
}

#[wasm_bindgen]
impl MixtureDemo {
    /// Proportion of dataset A at each grid point.
    pub fn q(&self) -> Vec<f64> {
        self.q.clone()
    }
    /// `C(q)`; NaN where the mixture curvature is singular.
    pub fn c(&self) -> Vec<f64> {
        self.c.clone()
    }
    /// NaN when no grid point is valid.
    pub fn argmin_q(&self) -> f64 {
        self.argmin_q
    }
    pub fn u_shaped(&self) -> bool {
        self.u_shaped
    }
}

/// Diagonal curvature of two datasets in `dim` dimensions. A is stiff by
/// `1 + contrast` on the leading dimensions, B on the trailing ones; `overlap`
/// in `[0, 1]` is the fraction of dimensions stiff in both. The target is the
/// `test_q` mixture of the two.
fn synthetic_spectra(dim: usize, contrast: f64, overlap: f64) -> (DVector<f64>, DVector<f64>) {
    let half = dim as f64 * (1.0 + overlap) / 2.0;
    let a = DVector::from_fn(dim, |i, _| if (i as f64) < half { 1.0 + contrast } else { 1.0 });
    let b = DVector::from_fn(dim, |i, _| if ((dim - 1 - i) as f64) < half { 1.0 + contrast } else { 1.0 });
    (a, b)
}

fn diag(values: &DVector<f64>, id: &str) -> HessianEstimate {
    HessianEstimate { matrix: DMatrix::from_diagonal(values), n_samples: 1, dataset_id: id.into() }
}

#[wasm_bindgen]
pub fn mixture_curve(dim: usize, contrast: f64, overlap: f64, test_q: f64, grid_step: f64) -> Out<MixtureDemo> {
    if !(1..=MAX_DIM).contains(&dim) {
        return Err(format!("dimension must be in 1..={MAX_DIM}"));
    }
    if !(contrast >= 0.0 && contrast.is_finite()) {
        return Err("contrast must be non-negative".into());
    }
    if !(0.0..=1.0).contains(&overlap) || !(0.0..=1.0).contains(&test_q) {
        return Err("overlap and test proportion must lie in [0, 1]".into());
    }
    let (a, b) = synthetic_spectra(dim, contrast, overlap);
    let star = &a * test_q + &b * (1.0 - test_q);
    let curve = sweep_q(&diag(&star, "target"), &[diag(&a, "A"), diag(&b, "B")], grid_step).map_err(err)?;
    Ok(MixtureDemo {
        q: curve.q_grid.iter().map(|q| q[0]).collect(),
        c: curve.c_values.iter().map(|c| c.unwrap_or(f64::NAN)).collect(),
        argmin_q: curve.argmin_q().map_or(f64::NAN, |q| q[0]),
        u_shaped: curve.is_u_shaped(),
    })
}
