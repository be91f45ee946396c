use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::beamnet::{backward, decode_csi, encode_csi, Batch, Mode, NetConfig, NetParams};
use crate::binio::{write_atomic, Reader, Writer};
use crate::dataset::ChannelDataset;
use crate::error::{Error, Result};

pub const HESSIAN_MAGIC: [u8; 4] = *b"HESS";
pub const HESSIAN_VERSION: u32 = 1;

/// Mean Hessian of the per-sample loss with respect to the real channel entries.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianEstimate {
    pub matrix: DMatrix<f64>,
    pub n_samples: usize,
    pub dataset_id: String,
}

impl HessianEstimate {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Sample-weighted mean of several estimates over disjoint sample sets.
    pub fn pooled(parts: &[HessianEstimate], dataset_id: impl Into<String>) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to pool"))?;
        let total: usize = parts.iter().map(|p| p.n_samples).sum();
        if total == 0 {
            return Err(Error::invalid("pooled estimates hold no samples"));
        }
        let mut matrix = DMatrix::zeros(first.dim(), first.dim());
        for p in parts {
            if p.dim() != first.dim() {
                return Err(Error::invalid("Hessian dimensions differ"));
            }
            matrix += &p.matrix * (p.n_samples as f64 / total as f64);
        }
        Ok(Self { matrix, n_samples: total, dataset_id: dataset_id.into() })
    }
}

/// A per-sample scalar loss of a real input vector with an analytic gradient.
pub trait InputGradient {
    fn dim(&self) -> usize;

    /// Gradient of the per-sample loss at each row of `points`.
    fn gradients(&self, points: &Array2<f64>) -> Result<Array2<f64>>;
}

/// The network loss `l(h) = -sum_k R_k(h, V(h)) / N_r` with the same noiseless
/// channel used as the network input and as the rate channel; its gradient is
/// the total derivative through both.
pub struct NetworkLoss<'a> {
    pub params: &'a NetParams,
    pub config: &'a NetConfig,
}

impl InputGradient for NetworkLoss<'_> {
    fn dim(&self) -> usize {
        self.config.input_width()
    }

    fn gradients(&self, points: &Array2<f64>) -> Result<Array2<f64>> {
        let channels =
            points.rows().into_iter().map(|r| decode_csi(r.as_slice().unwrap(), self.config.n_antennas)).collect();
        let batch = Batch::new(points.clone(), channels)?;
        let g = backward(self.params, &batch, self.config, Mode::Eval, 0)?;
        // batch_loss averages over rows; undo that to get per-sample gradients
        Ok((g.input + g.channel) * points.nrows() as f64)
    }
}

/// Mean over `points` of the central-difference Jacobian of the analytic
/// gradient, symmetrized. Row `i` of each per-sample Hessian is
/// `(g(x + eps e_i) - g(x - eps e_i)) / (2 eps)`.
pub fn expected_hessian(
    model: &dyn InputGradient,
    points: &[Vec<f64>],
    fd_step: f64,
    dataset_id: &str,
) -> Result<HessianEstimate> {
    let d = model.dim();
    if !(fd_step > 0.0 && fd_step.is_finite()) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    if points.is_empty() {
        return Err(Error::invalid("no samples for Hessian estimation"));
    }
    let mut sum = DMatrix::<f64>::zeros(d, d);
    let mut probes = Array2::<f64>::zeros((2 * d, d));
    for (idx, x) in points.iter().enumerate() {
        if x.len() != d {
            return Err(Error::InputLength { expected: d, found: x.len() });
        }
        for i in 0..d {
            let mut plus = probes.row_mut(2 * i);
            plus.assign(&ndarray::ArrayView1::from(x));
            plus[i] += fd_step;
            let mut minus = probes.row_mut(2 * i + 1);
            minus.assign(&ndarray::ArrayView1::from(x));
            minus[i] -= fd_step;
        }
        let g = model.gradients(&probes)?;
        let mut h = DMatrix::<f64>::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                h[(i, j)] = (g[[2 * i, j]] - g[[2 * i + 1, j]]) / (2.0 * fd_step);
            }
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteHessian { sample_index: idx });
        }
        sum += h;
    }
    let mean = sum / points.len() as f64;
    let matrix = (&mean + mean.transpose()) * 0.5;
    Ok(HessianEstimate { matrix, n_samples: points.len(), dataset_id: dataset_id.to_string() })
}

/// Expected input Hessian of the eval-mode network loss over the first
/// `n_samples` channels of `dataset`.
pub fn expected_input_hessian(
    params: &NetParams,
    dataset: &ChannelDataset,
    config: &NetConfig,
    n_samples: usize,
    fd_step: f64,
) -> Result<HessianEstimate> {
    if n_samples == 0 || n_samples > dataset.len() {
        return Err(Error::invalid(format!("n_samples {n_samples} not in 1..={}", dataset.len())));
    }
    if config.n_users != 1 && dataset.n_users() != config.n_users {
        return Err(Error::invalid("dataset user grouping does not match the network"));
    }
    let points: Vec<Vec<f64>> = dataset.samples()[..n_samples]
        .chunks(config.n_users)
        .filter(|group| group.len() == config.n_users)
        .map(|group| {
            let h: Vec<_> = group.iter().flat_map(|s| s.h.iter().copied()).collect();
            encode_csi(&h, config.n_antennas)
        })
        .collect();
    let model = NetworkLoss { params, config };
    expected_hessian(&model, &points, fd_step, dataset.scene_label())
}

pub fn encode_hessian(h: &HessianEstimate) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(&HESSIAN_MAGIC);
    w.u32(HESSIAN_VERSION);
    w.u64(h.dim() as u64);
    w.u64(h.n_samples as u64);
    // nalgebra is column-major; the file is row-major
    for i in 0..h.dim() {
        for j in 0..h.dim() {
            w.f64(h.matrix[(i, j)]);
        }
    }
    w.buf
}

pub fn decode_hessian(bytes: &[u8], dataset_id: &str) -> Result<HessianEstimate> {
    let mut r = Reader::new(bytes);
    r.magic(HESSIAN_MAGIC)?;
    r.version(HESSIAN_VERSION)?;
    let d = r.u64("dimension")? as usize;
    let n_samples = r.u64("n_samples")? as usize;
    let values = r.f64s(d.checked_mul(d).ok_or_else(|| Error::Malformed("dimension overflow".into()))?, "matrix")?;
    r.finish()?;
    Ok(HessianEstimate {
        matrix: DMatrix::from_row_slice(d, d, &values),
        n_samples,
        dataset_id: dataset_id.to_string(),
    })
}

pub fn save_hessian(path: &Path, h: &HessianEstimate) -> Result<()> {
    write_atomic(path, &encode_hessian(h))
}

/// The dataset id is not stored in the file; the file stem is used instead.
pub fn load_hessian(path: &Path) -> Result<HessianEstimate> {
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    decode_hessian(&fs::read(path)?, id)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `l(x) = x^T A x`, gradient `(A + A^T) x`.
    struct Quadratic(DMatrix<f64>);

    impl InputGradient for Quadratic {
        fn dim(&self) -> usize {
            self.0.nrows()
        }
        fn gradients(&self, points: &Array2<f64>) -> Result<Array2<f64>> {
            let sym = &self.0 + self.0.transpose();
            let mut out = Array2::zeros(points.raw_dim());
            for (r, mut o) in points.rows().into_iter().zip(out.rows_mut()) {
                let x = nalgebra::DVector::from_iterator(r.len(), r.iter().copied());
                let g = &sym * x;
                o.iter_mut().zip(g.iter()).for_each(|(a, b)| *a = *b);
            }
            Ok(out)
        }
    }

    fn pts(n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..d).map(|j| ((i * 7 + j * 3) % 11) as f64 - 5.0).collect()).collect()
    }

    #[test]
    fn quadratic_hessian_recovered() {
        let a =
            DMatrix::from_fn(5, 5, |i, j| (i as f64 + 1.0) * 0.3 - (j as f64) * 0.2 + if i == j { 2.0 } else { 0.0 });
        let est = expected_hessian(&Quadratic(a.clone()), &pts(4, 5), 1e-4, "q").unwrap();
        let truth = &a + a.transpose();
        assert!((est.matrix - truth).norm() < 1e-6);
    }

    #[test]
    fn output_is_exactly_symmetric() {
        let a = DMatrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64);
        let est = expected_hessian(&Quadratic(a), &pts(3, 4), 1e-3, "q").unwrap();
        assert_eq!((&est.matrix - est.matrix.transpose()).norm(), 0.0);
    }

    #[test]
    fn pooled_halves_match_full_mean() {
        // a non-quadratic loss so that per-sample Hessians differ
        struct Quartic;
        impl InputGradient for Quartic {
            fn dim(&self) -> usize {
                3
            }
            fn gradients(&self, points: &Array2<f64>) -> Result<Array2<f64>> {
                Ok(points.mapv(|x| 4.0 * x.powi(3)) + points.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1)))
            }
        }
        let p = pts(6, 3);
        let full = expected_hessian(&Quartic, &p, 1e-4, "f").unwrap();
        let a = expected_hessian(&Quartic, &p[..2], 1e-4, "f").unwrap();
        let b = expected_hessian(&Quartic, &p[2..], 1e-4, "f").unwrap();
        let pooled = HessianEstimate::pooled(&[a, b], "f").unwrap();
        assert_eq!(pooled.n_samples, 6);
        assert!((pooled.matrix - full.matrix).amax() < 1e-12);
    }

    #[test]
    fn rejects_bad_arguments() {
        let q = Quadratic(DMatrix::identity(2, 2));
        assert!(expected_hessian(&q, &pts(1, 2), 0.0, "q").is_err());
        assert!(expected_hessian(&q, &[], 1e-3, "q").is_err());
        assert!(matches!(expected_hessian(&q, &pts(1, 3), 1e-3, "q"), Err(Error::InputLength { .. })));
    }

    #[test]
    fn non_finite_reported_with_index() {
        struct Blows;
        impl InputGradient for Blows {
            fn dim(&self) -> usize {
                1
            }
            fn gradients(&self, points: &Array2<f64>) -> Result<Array2<f64>> {
                Ok(points.mapv(|x| if x > 2.0 { f64::NAN } else { x }))
            }
        }
        let p = vec![vec![0.0], vec![1.0], vec![3.0]];
        assert!(matches!(expected_hessian(&Blows, &p, 1e-3, "b"), Err(Error::NonFiniteHessian { sample_index: 2 })));
    }

    #[test]
    fn file_round_trip() {
        let m = DMatrix::from_fn(3, 3, |i, j| (i as f64) - 0.5 * j as f64);
        let h = HessianEstimate { matrix: m, n_samples: 9, dataset_id: "x".into() };
        let bytes = encode_hessian(&h);
        assert_eq!(bytes.len(), 4 + 4 + 8 + 8 + 9 * 8);
        // row-major: second value is entry (0, 1)
        assert_eq!(f64::from_le_bytes(bytes[32..40].try_into().unwrap()), -0.5);
        assert_eq!(decode_hessian(&bytes, "x").unwrap(), h);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_hessian(&bad, "x"), Err(Error::BadMagic { .. })));
    }
}
