//! Small least-squares fits used by the diagnostics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

/// Fitted slope with a 95% confidence interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub points: usize,
}

impl SlopeFit {
    pub fn within(&self, target: f64, rel: f64) -> bool {
        (self.slope - target).abs() <= rel * target.abs()
    }
}

fn t_quantile(dof: usize) -> f64 {
    if dof == 0 {
        return f64::INFINITY;
    }
    StudentsT::new(0.0, 1.0, dof as f64).map(|t| t.inverse_cdf(0.975)).unwrap_or(f64::INFINITY)
}

/// Common slope of `y` on `x` with a separate intercept per group.
pub fn grouped_slope(groups: &[Vec<(f64, f64)>]) -> Result<SlopeFit> {
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut points = 0;
    let mut used = 0;
    let mut centered = Vec::new();
    for g in groups.iter().filter(|g| !g.is_empty()) {
        let m = g.len() as f64;
        let mx = g.iter().map(|p| p.0).sum::<f64>() / m;
        let my = g.iter().map(|p| p.1).sum::<f64>() / m;
        for &(x, y) in g {
            sxx += (x - mx) * (x - mx);
            sxy += (x - mx) * (y - my);
            centered.push((x - mx, y - my));
        }
        points += g.len();
        used += 1;
    }
    if !(sxx > 0.0) {
        return Err(Error::InvalidParams("slope fit needs spread in x".into()));
    }
    let slope = sxy / sxx;
    let ssr: f64 = centered.iter().map(|(x, y)| (y - slope * x).powi(2)).sum();
    let dof = points.saturating_sub(used + 1);
    let se = if dof > 0 { (ssr / dof as f64 / sxx).sqrt() } else { f64::INFINITY };
    let half = t_quantile(dof) * se;
    Ok(SlopeFit { slope, ci_low: slope - half, ci_high: slope + half, points })
}

/// Log-log slope of `ys` against `xs` (all positive).
pub fn power_law(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.len() != ys.len() || xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParams("power-law fit needs matching positive samples".into()));
    }
    grouped_slope(&[xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).collect()])
}

/// Least squares `y ≈ Σ_k c_k f_k(x)` without intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
}

/// Solves the normal equations for the columns `basis[k][i]`. `R²` is taken
/// about the mean of `y`.
pub fn linear_fit(basis: &[Vec<f64>], y: &[f64]) -> Result<LinearFit> {
    let k = basis.len();
    if k == 0 || basis.iter().any(|b| b.len() != y.len()) || y.len() < k {
        return Err(Error::InvalidParams("linear fit needs at least as many samples as columns".into()));
    }
    let mut m = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    for a in 0..k {
        for b in 0..k {
            m[a * k + b] = basis[a].iter().zip(&basis[b]).map(|(p, q)| p * q).sum();
        }
        rhs[a] = basis[a].iter().zip(y).map(|(p, q)| p * q).sum();
    }
    let coefficients = crate::linalg::Cholesky::new(m, k)?.solve(&rhs);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ssr: f64 = (0..y.len())
        .map(|i| (y[i] - (0..k).map(|a| coefficients[a] * basis[a][i]).sum::<f64>()).powi(2))
        .sum();
    let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else if ssr == 0.0 { 1.0 } else { 0.0 };
    Ok(LinearFit { coefficients, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let xs: Vec<f64> = (1..8).map(|k| k as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-1.25)).collect();
        let f = power_law(&xs, &ys).unwrap();
        assert!((f.slope + 1.25).abs() < 1e-12);
        assert!(f.ci_high - f.ci_low < 1e-9);
    }

    #[test]
    fn groups_get_their_own_intercepts() {
        let g1: Vec<(f64, f64)> = (0..5).map(|k| (k as f64, 2.0 * k as f64 + 1.0)).collect();
        let g2: Vec<(f64, f64)> = (0..5).map(|k| (k as f64 + 0.5, 2.0 * (k as f64 + 0.5) - 7.0)).collect();
        let f = grouped_slope(&[g1, g2]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!(grouped_slope(&[vec![(1.0, 1.0)]]).is_err());
    }

    #[test]
    fn two_term_fit_recovers_coefficients() {
        let lam = [2.0, 3.0, 4.0, 6.0, 8.0];
        let b1: Vec<f64> = lam.iter().map(|l| 1.0 / l).collect();
        let b2: Vec<f64> = lam.iter().map(|l: &f64| l.powf(-1.5)).collect();
        let y: Vec<f64> = (0..5).map(|i| -0.3 * b1[i] + 2.0 * b2[i]).collect();
        let f = linear_fit(&[b1, b2], &y).unwrap();
        assert!((f.coefficients[0] + 0.3).abs() < 1e-10 && (f.coefficients[1] - 2.0).abs() < 1e-10);
        assert!(f.r_squared > 1.0 - 1e-12);
    }
}
