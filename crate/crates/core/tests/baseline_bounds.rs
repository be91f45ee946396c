use std::f64::consts::PI;

use holobeam::baselines::{codebook_search, dft_codebook, mrt_beamformer, mrt_rate};
use holobeam::beamnet::{user_rate, Beamformer};
use holobeam::channel::{channel_from_paths, norm_sqr, ArrayGeometry, PathComponent};
use holobeam::rng;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

fn random_channel(n: usize, seed: u64) -> Vec<Complex64> {
    let mut r = rng::seeded(seed);
    (0..n).map(|_| Complex64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5)).collect()
}

#[test]
fn oversampled_codebook_is_near_mrt_on_line_of_sight() {
    let geometry = ArrayGeometry::ula(64).unwrap();
    let codebook = dft_codebook(64, 2).unwrap();
    let mut r = rng::seeded(11);
    let (mut found, mut oracle) = (0.0, 0.0);
    for _ in 0..1000 {
        let path = PathComponent {
            gain: Complex64::from_polar(1.0, r.random::<f64>() * 2.0 * PI),
            azimuth_rad: (r.random::<f64>() - 0.5) * PI,
            elevation_rad: 0.0,
            delay_s: 0.0,
        };
        let h = channel_from_paths(&geometry, &[path], 20.0, 60e9).unwrap();
        let (_, rate) = codebook_search(&h, &codebook, 1.0, 0.1).unwrap();
        found += rate;
        oracle += mrt_rate(&h, 1.0, 0.1);
    }
    assert!(found / oracle >= 0.95, "{}", found / oracle);
}

#[test]
fn random_unit_beams_never_beat_mrt() {
    let h = random_channel(16, 3);
    let best = mrt_rate(&h, 1.0, 0.5);
    for seed in 0..100 {
        let mut v = random_channel(16, 1000 + seed);
        let n = norm_sqr(&v).sqrt();
        v.iter_mut().for_each(|z| *z /= n);
        let rate = user_rate(std::slice::from_ref(&h), &Beamformer { v: vec![v] }, 0.5, 0).unwrap();
        assert!(rate <= best + 1e-12);
    }
}

proptest! {
    #[test]
    fn mrt_rate_has_closed_form(seed in any::<u64>(), n in 1usize..32, power in 0.1f64..10.0, noise in 0.01f64..5.0) {
        let h = random_channel(n, seed);
        let bf = mrt_beamformer(&h, power).unwrap();
        let evaluated = user_rate(std::slice::from_ref(&h), &bf, noise, 0).unwrap();
        let closed = (1.0 + power * norm_sqr(&h) / noise).log2();
        prop_assert!((evaluated - closed).abs() < 1e-10 * closed.max(1.0));
        prop_assert!((bf.total_power() - power).abs() < 1e-12 * power);
    }
}
