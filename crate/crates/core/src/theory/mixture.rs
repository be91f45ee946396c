use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use super::hessian::HessianEstimate;
use crate::error::{Error, Result};

fn check_q(q: &[f64], k: usize) -> Result<()> {
    if q.len() != k {
        return Err(Error::invalid(format!("{} proportions for {k} datasets", q.len())));
    }
    if q.iter().any(|v| !v.is_finite() || *v < 0.0) || (q.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("q = {q:?} is not on the simplex")));
    }
    Ok(())
}

fn mixture_matrix(sigmas: &[HessianEstimate], q: &[f64], ridge: f64) -> Result<DMatrix<f64>> {
    let d = sigmas.first().ok_or_else(|| Error::invalid("no training Hessians"))?.dim();
    let mut m = DMatrix::<f64>::identity(d, d) * ridge;
    for (s, &qk) in sigmas.iter().zip(q) {
        if s.dim() != d {
            return Err(Error::invalid("training Hessians differ in dimension"));
        }
        m += &s.matrix * qk;
    }
    Ok(m)
}

/// `P |D| P^T` for the eigendecomposition `S = P D P^T`: the same eigenvectors
/// with every curvature replaced by its magnitude. Makes an indefinite
/// expected Hessian usable in `C(q)`, whose inverse presumes positive curvature.
pub fn absolute_curvature(sigma: &HessianEstimate) -> Result<HessianEstimate> {
    if sigma.matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("Hessian has non-finite entries".into()));
    }
    let eig = SymmetricEigen::try_new(sigma.matrix.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::abs));
    let m = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    Ok(HessianEstimate { matrix: (&m + m.transpose()) * 0.5, ..sigma.clone() })
}

/// Ridge used when the mixture Hessian cannot be inverted:
/// `1e-8 * |Tr(M)| / d`.
pub fn default_ridge(sigmas: &[HessianEstimate], q: &[f64]) -> Result<f64> {
    let m = mixture_matrix(sigmas, q, 0.0)?;
    let r = 1e-8 * m.trace().abs() / m.nrows() as f64;
    Ok(if r > 0.0 { r } else { 1e-8 })
}

/// `Tr(S* (sum_k q_k S_k + ridge I)^-1)`.
pub fn c_of_q_direct(sigma_star: &HessianEstimate, sigmas: &[HessianEstimate], q: &[f64], ridge: f64) -> Result<f64> {
    check_q(q, sigmas.len())?;
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge must be non-negative"));
    }
    let m = mixture_matrix(sigmas, q, ridge)?;
    if sigma_star.dim() != m.nrows() {
        return Err(Error::invalid("test Hessian dimension differs from training Hessians"));
    }
    let eig = m.clone().symmetric_eigenvalues();
    let largest = eig.amax();
    let smallest = eig.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if !(smallest > f64::EPSILON * m.nrows() as f64 * largest) {
        return Err(Error::SingularMixture { smallest_eigenvalue: smallest });
    }
    let solved = m.lu().solve(&sigma_star.matrix).ok_or(Error::SingularMixture { smallest_eigenvalue: smallest })?;
    Ok(solved.trace())
}

/// [`c_of_q_direct`] at zero ridge, retried with [`default_ridge`] when the
/// mixture Hessian is singular. Returns the value and the ridge used.
pub fn c_of_q_auto(sigma_star: &HessianEstimate, sigmas: &[HessianEstimate], q: &[f64]) -> Result<(f64, f64)> {
    match c_of_q_direct(sigma_star, sigmas, q, 0.0) {
        Ok(c) => Ok((c, 0.0)),
        Err(Error::SingularMixture { .. }) => {
            let ridge = default_ridge(sigmas, q)?;
            c_of_q_direct(sigma_star, sigmas, q, ridge).map(|c| (c, ridge))
        }
        Err(e) => Err(e),
    }
}

/// Eigenbasis of the test Hessian with every training Hessian expressed in it.
#[derive(Debug, Clone)]
pub struct Diagonalization {
    /// Orthogonal matrix whose columns are eigenvectors of `S*`, eigenvalues descending.
    pub basis: DMatrix<f64>,
    pub d_star: DVector<f64>,
    /// Diagonal of `P^T S_k P` for each k.
    pub d_k: Vec<DVector<f64>>,
    /// Frobenius norm of the off-diagonal remainder `O_k` for each k.
    pub offdiag_norms: Vec<f64>,
}

impl Diagonalization {
    /// `P (D_k + O_k) P^T`, which reproduces `S_k`.
    pub fn reconstruct(&self, sigma: &HessianEstimate) -> DMatrix<f64> {
        let t = self.basis.transpose() * &sigma.matrix * &self.basis;
        &self.basis * t * self.basis.transpose()
    }
}

pub fn diagonalize_pair(sigma_star: &HessianEstimate, sigmas: &[HessianEstimate]) -> Result<Diagonalization> {
    let d = sigma_star.dim();
    if sigma_star.matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("test Hessian has non-finite entries".into()));
    }
    let eig = SymmetricEigen::try_new(sigma_star.matrix.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let basis = DMatrix::from_fn(d, d, |i, j| eig.eigenvectors[(i, order[j])]);
    let d_star = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));

    let mut d_k = Vec::with_capacity(sigmas.len());
    let mut offdiag_norms = Vec::with_capacity(sigmas.len());
    for s in sigmas {
        if s.dim() != d {
            return Err(Error::invalid("training Hessian dimension differs from test Hessian"));
        }
        if s.matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Eigen("training Hessian has non-finite entries".into()));
        }
        let t = basis.transpose() * &s.matrix * &basis;
        let diag = t.diagonal();
        let off = (&t - DMatrix::from_diagonal(&diag)).norm();
        d_k.push(diag);
        offdiag_norms.push(off);
    }
    Ok(Diagonalization { basis, d_star, d_k, offdiag_norms })
}

/// Ratios `lambda_ik = D_k,ii / D*_ii` over the retained dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaMatrix {
    /// `retained.len() x K`.
    pub values: DMatrix<f64>,
    /// Eigen-dimensions used, in the order of `values` rows.
    pub retained: Vec<usize>,
    /// Dimensions dropped because `|D*_ii| <= 1e-10 max |D*|`.
    pub excluded: Vec<usize>,
}

pub fn lambda_matrix(d_star: &DVector<f64>, d_k_list: &[DVector<f64>]) -> Result<LambdaMatrix> {
    let d = d_star.len();
    if d_k_list.iter().any(|dk| dk.len() != d) {
        return Err(Error::invalid("diagonal lengths differ"));
    }
    let threshold = 1e-10 * d_star.amax();
    let (retained, excluded): (Vec<usize>, Vec<usize>) = (0..d).partition(|&i| d_star[i].abs() > threshold);
    let values =
        DMatrix::from_fn(retained.len(), d_k_list.len(), |r, k| d_k_list[k][retained[r]] / d_star[retained[r]]);
    Ok(LambdaMatrix { values, retained, excluded })
}

/// `sum_i (sum_k lambda_ik q_k)^-1` over the retained dimensions.
pub fn c_of_q_rational(lambda: &LambdaMatrix, q: &[f64]) -> Result<f64> {
    check_q(q, lambda.values.ncols())?;
    let mut total = 0.0;
    for (r, &dim) in lambda.retained.iter().enumerate() {
        let denom: f64 = (0..q.len()).map(|k| lambda.values[(r, k)] * q[k]).sum();
        if !(denom > 0.0) {
            return Err(Error::NonPositiveDenominator { dimension: dim, value: denom });
        }
        total += 1.0 / denom;
    }
    Ok(total)
}

/// `C(q)` over a grid of proportion vectors. Points whose evaluation fails are
/// recorded and skipped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureCurve {
    pub q_grid: Vec<Vec<f64>>,
    pub c_values: Vec<Option<f64>>,
    /// Ridge used at each point (0 when the mixture Hessian was invertible).
    pub ridges: Vec<f64>,
    pub failures: Vec<(usize, String)>,
    pub empirical_rates: Option<Vec<f64>>,
    pub empirical_extra_losses: Option<Vec<f64>>,
}

impl MixtureCurve {
    /// Index of the smallest valid `C`. Values within `1e-12` relative of each
    /// other tie, and ties go to the earlier grid point.
    pub fn argmin(&self) -> Option<usize> {
        argmin_with_ties(&self.c_values)
    }

    /// Sign changes in the sequence of consecutive differences, zero
    /// differences skipped; `None` if any point is invalid.
    pub fn sign_changes(&self) -> Option<usize> {
        let values: Vec<f64> = self.c_values.iter().copied().collect::<Option<Vec<_>>>()?;
        Some(sign_changes(&values))
    }

    /// Falls first, rises last, and changes direction exactly once.
    pub fn is_u_shaped(&self) -> bool {
        self.c_values.iter().copied().collect::<Option<Vec<_>>>().is_some_and(|v| is_u_shaped(&v))
    }

    pub fn argmin_q(&self) -> Option<&[f64]> {
        self.argmin().map(|i| self.q_grid[i].as_slice())
    }

    /// Number of consecutive differences whose sign disagrees with a curve
    /// that falls to its minimum and rises after it, or `None` when the
    /// minimum is on the boundary or a point is invalid.
    pub fn u_shape_violations(&self) -> Option<usize> {
        let values: Vec<f64> = self.c_values.iter().copied().collect::<Option<Vec<_>>>()?;
        let m = self.argmin()?;
        if m == 0 || m + 1 == values.len() {
            return None;
        }
        let violations =
            values.windows(2).enumerate().filter(|(i, w)| if *i < m { w[1] > w[0] } else { w[1] < w[0] }).count();
        Some(violations)
    }
}

fn sign_changes(values: &[f64]) -> usize {
    let signs: Vec<bool> = values.windows(2).map(|w| w[1] - w[0]).filter(|d| *d != 0.0).map(|d| d > 0.0).collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

/// True when consecutive differences start negative, end positive and change
/// sign exactly once.
pub fn is_u_shaped(values: &[f64]) -> bool {
    let diffs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    match (diffs.first(), diffs.last()) {
        (Some(&first), Some(&last)) => first < 0.0 && last > 0.0 && sign_changes(values) == 1,
        _ => false,
    }
}

pub(crate) fn argmin_with_ties(values: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in values.iter().enumerate() {
        if let Some(c) = *c {
            if best.is_none_or(|(_, b)| c < b - 1e-12 * b.abs()) {
                best = Some((i, c));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Proportion vectors `(t, 1 - t)` for `t = 0, step, ..., 1`.
pub fn simplex_grid(step: f64) -> Result<Vec<Vec<f64>>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::invalid(format!("grid step {step} outside (0, 1]")));
    }
    let intervals = (1.0 / step).round();
    if ((intervals * step) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("grid step {step} does not divide 1")));
    }
    let n = intervals as usize;
    Ok((0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            vec![t, 1.0 - t]
        })
        .collect())
}

pub fn sweep_grid(sigma_star: &HessianEstimate, sigmas: &[HessianEstimate], grid: Vec<Vec<f64>>) -> MixtureCurve {
    let mut c_values = Vec::with_capacity(grid.len());
    let mut ridges = Vec::with_capacity(grid.len());
    let mut failures = Vec::new();
    for (i, q) in grid.iter().enumerate() {
        match c_of_q_auto(sigma_star, sigmas, q) {
            Ok((c, ridge)) => {
                c_values.push(Some(c));
                ridges.push(ridge);
            }
            Err(e) => {
                c_values.push(None);
                ridges.push(f64::NAN);
                failures.push((i, e.to_string()));
            }
        }
    }
    MixtureCurve { q_grid: grid, c_values, ridges, failures, empirical_rates: None, empirical_extra_losses: None }
}

/// Two-dataset sweep over `q = (t, 1 - t)`, `t` from 0 to 1 in `grid_step` increments.
pub fn sweep_q(sigma_star: &HessianEstimate, sigmas: &[HessianEstimate], grid_step: f64) -> Result<MixtureCurve> {
    if sigmas.len() != 2 {
        return Err(Error::invalid("step sweeps need exactly two datasets; use sweep_grid"));
    }
    Ok(sweep_grid(sigma_star, sigmas, simplex_grid(grid_step)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(m: DMatrix<f64>) -> HessianEstimate {
        HessianEstimate { matrix: m, n_samples: 1, dataset_id: String::new() }
    }

    fn diag(v: &[f64]) -> HessianEstimate {
        est(DMatrix::from_diagonal(&DVector::from_row_slice(v)))
    }

    fn spd(d: usize, seed: u64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |i, j| (((i * 31 + j * 17 + seed as usize * 7) % 13) as f64 - 6.0) / 6.0);
        &a * a.transpose() + DMatrix::identity(d, d) * 0.5
    }

    #[test]
    fn single_matched_dataset_gives_dimension() {
        let s = est(spd(128, 1));
        let c = c_of_q_direct(&s, std::slice::from_ref(&s), &[1.0], 0.0).unwrap();
        assert!((c - 128.0).abs() < 1e-9, "{c}");
    }

    #[test]
    fn scalar_identity_construction() {
        let d = 6;
        let star = est(DMatrix::identity(d, d));
        let s1 = est(DMatrix::identity(d, d) * 2.0);
        let s2 = est(DMatrix::identity(d, d) * 4.0);
        let c = c_of_q_direct(&star, &[s1, s2], &[0.5, 0.5], 0.0).unwrap();
        assert!((c - d as f64 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn joint_rescaling_invariance() {
        let star = est(spd(5, 2));
        let sig = [est(spd(5, 3)), est(spd(5, 4))];
        let base = c_of_q_direct(&star, &sig, &[0.3, 0.7], 0.0).unwrap();
        let k = 7.5;
        let scaled_star = est(&star.matrix * k);
        let scaled: Vec<_> = sig.iter().map(|s| est(&s.matrix * k)).collect();
        let both = c_of_q_direct(&scaled_star, &scaled, &[0.3, 0.7], 0.0).unwrap();
        assert!((both - base).abs() < 1e-10 * base.abs());
        let train_only = c_of_q_direct(&star, &scaled, &[0.3, 0.7], 0.0).unwrap();
        assert!((train_only - base / k).abs() < 1e-10 * base.abs());
    }

    #[test]
    fn singular_mixture_reported() {
        let star = diag(&[1.0, 1.0]);
        let s = diag(&[1.0, 0.0]);
        let err = c_of_q_direct(&star, std::slice::from_ref(&s), &[1.0], 0.0).unwrap_err();
        assert!(matches!(err, Error::SingularMixture { smallest_eigenvalue } if smallest_eigenvalue == 0.0));
        let (c, ridge) = c_of_q_auto(&star, &[s], &[1.0]).unwrap();
        assert!(ridge > 0.0 && c.is_finite());
    }

    #[test]
    fn commuting_matrices_have_no_remainder() {
        let star = diag(&[3.0, 1.0, 2.0]);
        let s1 = diag(&[1.0, 5.0, 2.0]);
        let dz = diagonalize_pair(&star, &[s1]).unwrap();
        assert!(dz.offdiag_norms[0] < 1e-12);
        assert_eq!(dz.d_star.as_slice(), &[3.0, 2.0, 1.0]);
        assert_eq!(dz.d_k[0].as_slice(), &[1.0, 2.0, 5.0]);
    }

    #[test]
    fn identity_star_keeps_diagonal_and_reconstructs() {
        let star = est(DMatrix::identity(4, 4));
        let s = est(spd(4, 9));
        let dz = diagonalize_pair(&star, std::slice::from_ref(&s)).unwrap();
        assert!((dz.reconstruct(&s) - &s.matrix).norm() < 1e-10);
        // trace is basis independent even if the diagonal is not
        assert!((dz.d_k[0].sum() - s.matrix.trace()).abs() < 1e-10);
    }

    #[test]
    fn reconstruction_general() {
        let star = est(spd(6, 1));
        let sig = [est(spd(6, 2)), est(spd(6, 5))];
        let dz = diagonalize_pair(&star, &sig).unwrap();
        for s in &sig {
            assert!((dz.reconstruct(s) - &s.matrix).norm() < 1e-10);
        }
        let p = &dz.basis;
        assert!((p.transpose() * p - DMatrix::identity(6, 6)).norm() < 1e-10);
    }

    #[test]
    fn lambda_ratios() {
        let star = DVector::from_row_slice(&[1.0, 2.0]);
        let l = lambda_matrix(&star, &[DVector::from_row_slice(&[2.0, 2.0])]).unwrap();
        assert_eq!(l.values.column(0).as_slice(), &[2.0, 1.0]);
        let same = lambda_matrix(&star, std::slice::from_ref(&star)).unwrap();
        assert!(same.values.iter().all(|&v| v == 1.0));
        assert!((c_of_q_rational(&same, &[1.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn excluded_dimensions_are_skipped() {
        let star = DVector::from_row_slice(&[1.0, 1e-14, 2.0]);
        let l = lambda_matrix(&star, &[DVector::from_row_slice(&[1.0, 5.0, 2.0])]).unwrap();
        assert_eq!(l.excluded, vec![1]);
        assert_eq!(l.retained, vec![0, 2]);
        assert!((c_of_q_rational(&l, &[1.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn scalar_rational_case() {
        let l =
            LambdaMatrix { values: DMatrix::from_row_slice(1, 2, &[2.0, 4.0]), retained: vec![0], excluded: vec![] };
        assert!((c_of_q_rational(&l, &[0.5, 0.5]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn non_positive_denominator_named() {
        let l = LambdaMatrix {
            values: DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            retained: vec![0, 3],
            excluded: vec![],
        };
        assert!(matches!(c_of_q_rational(&l, &[1.0]), Err(Error::NonPositiveDenominator { dimension: 3, .. })));
    }

    #[test]
    fn diagonal_routes_agree() {
        let star = diag(&[1.0, 2.0, 0.5, 3.0]);
        let s1 = diag(&[2.0, 0.1, 1.0, 4.0]);
        let s2 = diag(&[0.2, 3.0, 0.7, 1.0]);
        let dz = diagonalize_pair(&star, &[s1.clone(), s2.clone()]).unwrap();
        let l = lambda_matrix(&dz.d_star, &dz.d_k).unwrap();
        for q in simplex_grid(0.1).unwrap() {
            let direct = c_of_q_direct(&star, &[s1.clone(), s2.clone()], &q, 0.0).unwrap();
            let rational = c_of_q_rational(&l, &q).unwrap();
            assert!((direct - rational).abs() <= 1e-8 * direct.abs());
        }
    }

    #[test]
    fn equal_training_hessians_give_flat_curve() {
        let star = est(spd(4, 1));
        let s = est(spd(4, 2));
        let curve = sweep_q(&star, &[s.clone(), s], 0.1).unwrap();
        assert_eq!(curve.q_grid.len(), 11);
        let first = curve.c_values[0].unwrap();
        assert!(curve.c_values.iter().all(|c| (c.unwrap() - first).abs() < 1e-9 * first.abs()));
        assert_eq!(curve.argmin(), Some(0));
    }

    #[test]
    fn tenfold_second_dataset_pushes_minimum_to_its_corner() {
        let s1 = est(spd(3, 4));
        let s2 = est(&s1.matrix * 10.0);
        let curve = sweep_q(&s1, &[s1.clone(), s2], 0.1).unwrap();
        // C(t) = d / (t + 10 (1 - t)): increasing in t, minimum at t = 0
        for (q, c) in curve.q_grid.iter().zip(&curve.c_values) {
            let expected = 3.0 / (q[0] + 10.0 * q[1]);
            assert!((c.unwrap() - expected).abs() < 1e-9);
        }
        assert_eq!(curve.argmin(), Some(0));
        assert_eq!(curve.u_shape_violations(), None);
        assert!(!curve.is_u_shaped());
    }

    #[test]
    fn complementary_supports_give_u_shape() {
        let star = diag(&[1.0, 1.0]);
        let curve = sweep_q(&star, &[diag(&[1.0, 0.05]), diag(&[0.05, 1.0])], 0.1).unwrap();
        assert_eq!(curve.argmin(), Some(5));
        assert_eq!(curve.u_shape_violations(), Some(0));
        assert!(curve.is_u_shaped());
        assert_eq!(curve.sign_changes(), Some(1));
    }

    #[test]
    fn absolute_curvature_flips_negative_eigenvalues() {
        let h = est(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let a = absolute_curvature(&h).unwrap();
        assert!((a.matrix - DMatrix::identity(2, 2)).norm() < 1e-12);
        let pd = est(spd(5, 3));
        assert!((absolute_curvature(&pd).unwrap().matrix - &pd.matrix).norm() < 1e-10);
    }

    #[test]
    fn u_shape_predicate() {
        assert!(is_u_shaped(&[3.0, 2.0, 1.0, 1.0, 2.0]));
        assert!(!is_u_shaped(&[3.0, 2.0, 2.5, 1.0, 2.0]));
        assert!(!is_u_shaped(&[1.0, 2.0, 3.0]));
        assert!(!is_u_shaped(&[1.0]));
    }

    #[test]
    fn grid_construction() {
        let g = simplex_grid(0.1).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], vec![0.0, 1.0]);
        assert_eq!(g[10], vec![1.0, 0.0]);
        assert!(simplex_grid(0.3).is_err());
        assert!(simplex_grid(0.0).is_err());
    }
}
