use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `L = E[l] - min E[l]`, with the minimum taken over the observed values.
pub fn extra_loss_empirical(final_losses: &[f64]) -> Result<Vec<f64>> {
    if final_losses.is_empty() {
        return Err(Error::invalid("no losses"));
    }
    if let Some(i) = final_losses.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("loss at index {i}")));
    }
    let min = final_losses.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(final_losses.iter().map(|v| v - min).collect())
}

/// Least-squares line through `(ln n, ln L)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub alpha: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_scaling_law(n_values: &[usize], extra_losses: &[f64]) -> Result<ScalingFit> {
    if n_values.len() != extra_losses.len() {
        return Err(Error::invalid("n and loss lists differ in length"));
    }
    let mut distinct = n_values.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::invalid(format!("need at least 3 distinct n, got {}", distinct.len())));
    }
    if distinct[0] == 0 {
        return Err(Error::invalid("sample counts must be positive"));
    }
    if let Some(i) = extra_losses.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::NonPositiveExtraLoss { index: i, value: extra_losses[i] });
    }
    let x: Vec<f64> = n_values.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = extra_losses.iter().map(|v| v.ln()).collect();
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let alpha = sxy / sxx;
    let intercept = my - alpha * mx;
    let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - alpha * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(ScalingFit { alpha, intercept, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subtracts_minimum() {
        let out = extra_loss_empirical(&[-3.0, -3.5, -3.2]).unwrap();
        for (a, b) in out.iter().zip([0.5, 0.0, 0.3]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(extra_loss_empirical(&[2.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert!(extra_loss_empirical(&[]).is_err());
        assert!(extra_loss_empirical(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn shift_invariant() {
        let a = extra_loss_empirical(&[1.0, 4.0, 2.5]).unwrap();
        let b = extra_loss_empirical(&[11.0, 14.0, 12.5]).unwrap();
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn planted_power_law() {
        let n = [100, 1000, 10000];
        let l: Vec<f64> = n.iter().map(|&v| 4.0 * (v as f64).powf(-0.5)).collect();
        let fit = fit_scaling_law(&n, &l).unwrap();
        assert!((fit.alpha + 0.5).abs() < 1e-9);
        assert!((fit.intercept - 4f64.ln()).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn preconditions() {
        assert!(fit_scaling_law(&[10, 100, 100], &[1.0, 0.5, 0.4]).is_err());
        assert!(matches!(
            fit_scaling_law(&[10, 100, 1000], &[1.0, 0.0, 0.4]),
            Err(Error::NonPositiveExtraLoss { index: 1, .. })
        ));
    }
}
