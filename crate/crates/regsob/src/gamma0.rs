//! The curvature constant
//! `Γ₀ = ∬_{ℝⁿ₊×ℝⁿ₊} (ξ_n-ζ_n)(|ξ'|²-|ζ'|²) |Θ(ξ)-Θ(ζ)|² |ξ-ζ|^{-(n+2σ+2)}`
//! and the weighted energies that control its truncation.
//!
//! The remainder of `Γ₀` outside `B_λ⁺×B_λ⁺` is dominated pointwise by `√2`
//! times the `γ = 1` power-weighted energy of the same region, because
//! `|ξ_n-ζ_n| ||ξ'|²-|ζ'|²| ≤ |ξ-ζ|² (|ξ'|+|ζ'|)`. That energy is computed
//! directly on resolved scales and extrapolated past the box with the
//! exponent `1-2σ`.

use serde::{Deserialize, Serialize};

use crate::energy::{weighted_binned, EnergyContext, WeightSpec};
use crate::field::{make_grid, resample, RadialField};
use crate::fit::{power_law, SlopeFit};
use crate::kernel::KernelParams;
use crate::{Error, Result};

/// Richardson order assumed for the grid sequence.
const GRID_ORDER: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignVerdict {
    Positive,
    Negative,
    Indeterminate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gamma0Row {
    pub intervals: usize,
    /// `None` for the whole box.
    pub lambda: Option<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gamma0Report {
    pub value: f64,
    pub grid_extrapolation_error: f64,
    /// Bound on the part of `Γ₀` beyond the box.
    pub truncation_tail_bound: f64,
    /// `C` in `T(λ) ≤ C λ^{1-2σ}` for the `γ = 1` exterior energy, fitted on the schedule.
    pub tail_constant: f64,
    /// Fitted log-log slope of `|Γ₀(box) - Γ₀(B_λ⁺×B_λ⁺)|` over the schedule.
    pub remainder_exponent: Option<f64>,
    pub lambda_schedule: Vec<f64>,
    pub grids: Vec<usize>,
    pub table: Vec<Gamma0Row>,
    pub sign_verdict: SignVerdict,
    /// Extrapolation error above ten times `|value|`; the verdict is then indeterminate.
    pub insufficient_convergence: bool,
    pub theta_provenance: u64,
}

impl Gamma0Report {
    pub fn error_budget(&self) -> f64 {
        self.grid_extrapolation_error + self.truncation_tail_bound
    }

    /// [`Error::InsufficientConvergence`] when the extrapolation is not trustworthy.
    pub fn require_converged(self) -> Result<Self> {
        if self.insufficient_convergence {
            return Err(Error::InsufficientConvergence { value: self.value, error: self.grid_extrapolation_error });
        }
        Ok(self)
    }

    /// One-line summary for terminals.
    pub fn verdict_line(&self) -> String {
        format!(
            "Γ₀ = {:.6e} ± {:.2e} (grid {:.2e}, tail {:.2e}): {:?}",
            self.value,
            self.error_budget(),
            self.grid_extrapolation_error,
            self.truncation_tail_bound,
            self.sign_verdict
        )
    }
}

pub fn sign_verdict(value: f64, budget: f64) -> SignVerdict {
    if value - budget > 0.0 {
        SignVerdict::Positive
    } else if value + budget < 0.0 {
        SignVerdict::Negative
    } else {
        SignVerdict::Indeterminate
    }
}

fn check_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.is_empty() || schedule.iter().any(|l| !(*l > 0.0)) || schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParams("λ schedule must be positive and increasing".into()));
    }
    Ok(())
}

fn on_grid(theta: &RadialField, intervals: usize) -> Result<RadialField> {
    let g = &theta.grid;
    if g.intervals() == (intervals, intervals) {
        return Ok(theta.clone());
    }
    resample(theta, &make_grid(g.n, g.r_max, intervals, intervals, g.grading)?)
}

/// Power-weighted energies of `theta` inside and outside `B_λ⁺×B_λ⁺`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedScan {
    pub gamma: f64,
    pub lambdas: Vec<f64>,
    pub interior: Vec<f64>,
    pub exterior: Vec<f64>,
}

impl WeightedScan {
    /// Power-law slope of the increments `I(λ_{k+1}) - I(λ_k)` against `λ_k`.
    /// For `I = a + bλ^p` on a geometric schedule this is `p`; the constant
    /// part, which dominates `I` long before the growth shows, drops out.
    pub fn interior_growth(&self) -> Result<SlopeFit> {
        let inc: Vec<f64> = self.interior.windows(2).map(|w| w[1] - w[0]).collect();
        power_law(&self.lambdas[..inc.len()], &inc)
    }
}

/// One sweep for every `λ` in `lambdas`.
pub fn weighted_scan(theta: &RadialField, gamma: f64, lambdas: &[f64]) -> Result<WeightedScan> {
    check_schedule(lambdas)?;
    let ctx = EnergyContext::new(&theta.grid, KernelParams::energy(theta.grid.n, theta.sigma)?)?;
    let b = weighted_binned(theta, &ctx, WeightSpec::Power(gamma), lambdas)?;
    Ok(WeightedScan {
        gamma,
        lambdas: lambdas.to_vec(),
        interior: (0..lambdas.len()).map(|k| b.interior(k)).collect(),
        exterior: (0..lambdas.len()).map(|k| b.exterior(k)).collect(),
    })
}

/// Weighted energy of `(ℝⁿ₊×ℝⁿ₊) \ (B_λ⁺×B_λ⁺)` with weight `(|ξ'|²+|ζ'|²)^{γ/2}`; needs `γ < 2σ`.
pub fn tail_bound(theta: &RadialField, lambda: f64, gamma: f64) -> Result<f64> {
    if !(gamma < 2.0 * theta.sigma) {
        return Err(Error::InvalidGamma { gamma, two_sigma: 2.0 * theta.sigma });
    }
    Ok(weighted_scan(theta, gamma, &[lambda])?.exterior[0])
}

/// Weighted energy of `B_λ⁺×B_λ⁺`; needs `γ > 0` and `γ ≠ 2σ`.
pub fn interior_weighted_growth(theta: &RadialField, lambda: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) || gamma == 2.0 * theta.sigma {
        return Err(Error::InvalidGamma { gamma, two_sigma: 2.0 * theta.sigma });
    }
    Ok(weighted_scan(theta, gamma, &[lambda])?.interior[0])
}

/// Estimates `Γ₀` from `theta` on each grid of `grids` (intervals per axis,
/// increasing) and each truncation radius of `schedule`.
///
/// The value is the whole-box integral Richardson-extrapolated over the two
/// finest grids. With a single grid the quadrature error estimate of the
/// sweep stands in for the extrapolation error.
pub fn estimate_gamma0(theta: &RadialField, schedule: &[f64], grids: &[usize], provenance: u64) -> Result<Gamma0Report> {
    check_schedule(schedule)?;
    if grids.is_empty() || grids.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParams("grid list must be nonempty and increasing".into()));
    }
    let n = theta.grid.n;
    let sigma = theta.sigma;
    let mut table = Vec::new();
    let mut totals = Vec::new();
    let mut quad_err = 0.0;
    for &m in grids {
        let f = on_grid(theta, m)?;
        let ctx = EnergyContext::new(&f.grid, KernelParams::gamma0(n, sigma)?)?;
        let b = weighted_binned(&f, &ctx, WeightSpec::Gamma0, schedule)?;
        for (k, &l) in schedule.iter().enumerate() {
            table.push(Gamma0Row { intervals: m, lambda: Some(l), value: b.interior(k) });
        }
        let total = b.total();
        table.push(Gamma0Row { intervals: m, lambda: None, value: total });
        totals.push(total);
        quad_err = b.breakdown().quad_error_estimate;
    }
    let (value, grid_err) = if grids.len() >= 2 {
        let (m1, m2) = (grids[grids.len() - 2] as f64, grids[grids.len() - 1] as f64);
        let (v1, v2) = (totals[totals.len() - 2], totals[totals.len() - 1]);
        let corr = (v2 - v1) / ((m2 / m1).powf(GRID_ORDER) - 1.0);
        (v2 + corr, corr.abs())
    } else {
        (totals[0], quad_err)
    };

    // truncation: γ = 1 exterior energy on the finest grid, extrapolated to the box size
    let finest = on_grid(theta, *grids.last().expect("nonempty"))?;
    let r_box = finest.grid.r_max;
    let resolved: Vec<f64> = schedule.iter().copied().filter(|&l| l < r_box).collect();
    let tail_constant = if resolved.is_empty() {
        0.0
    } else {
        let scan = weighted_scan(&finest, 1.0, &resolved)?;
        resolved.iter().zip(&scan.exterior).map(|(l, t)| t * l.powf(2.0 * sigma - 1.0)).fold(0.0, f64::max)
    };
    let truncation_tail_bound = std::f64::consts::SQRT_2 * tail_constant * r_box.powf(1.0 - 2.0 * sigma);

    let last = *grids.last().expect("nonempty");
    let finest_total = *totals.last().expect("nonempty");
    let rem: Vec<(f64, f64)> = table
        .iter()
        .filter(|r| r.intervals == last)
        .filter_map(|r| r.lambda.map(|l| (l, (finest_total - r.value).abs())))
        .filter(|&(_, v)| v > 0.0)
        .collect();
    let remainder_exponent = if rem.len() >= 2 {
        let (ls, vs): (Vec<f64>, Vec<f64>) = rem.into_iter().unzip();
        power_law(&ls, &vs).ok().map(|f| f.slope)
    } else {
        None
    };

    let insufficient_convergence = grid_err > 10.0 * value.abs();
    let sign = if insufficient_convergence {
        SignVerdict::Indeterminate
    } else {
        sign_verdict(value, grid_err + truncation_tail_bound)
    };
    Ok(Gamma0Report {
        value,
        grid_extrapolation_error: grid_err,
        truncation_tail_bound,
        tail_constant,
        remainder_exponent,
        lambda_schedule: schedule.to_vec(),
        grids: grids.to_vec(),
        table,
        sign_verdict: sign,
        insufficient_convergence,
        theta_provenance: provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{synthesize_profile, Grading};

    fn bump(m: usize) -> RadialField {
        let g = make_grid(4, 1.5, m, m, Grading::default()).unwrap();
        synthesize_profile("compact-bump", &g, 0.75).unwrap()
    }

    #[test]
    fn zero_field_gives_zero() {
        let f = bump(8).scale(0.0);
        let r = estimate_gamma0(&f, &[0.5, 1.0], &[8], 0).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.sign_verdict, SignVerdict::Indeterminate);
    }

    #[test]
    fn verdict_needs_the_whole_budget() {
        assert_eq!(sign_verdict(1.0, 0.5), SignVerdict::Positive);
        assert_eq!(sign_verdict(-1.0, 0.5), SignVerdict::Negative);
        assert_eq!(sign_verdict(0.4, 0.5), SignVerdict::Indeterminate);
        assert_eq!(sign_verdict(0.5, 0.5), SignVerdict::Indeterminate);
    }

    #[test]
    fn gamma_ranges_are_enforced() {
        let f = bump(8);
        assert!(matches!(tail_bound(&f, 1.0, 1.5), Err(Error::InvalidGamma { .. })));
        assert!(matches!(interior_weighted_growth(&f, 1.0, 1.5), Err(Error::InvalidGamma { .. })));
        assert!(matches!(interior_weighted_growth(&f, 1.0, 0.0), Err(Error::InvalidGamma { .. })));
        assert!(estimate_gamma0(&f, &[1.0, 0.5], &[8], 0).is_err());
        assert!(estimate_gamma0(&f, &[1.0], &[8, 8], 0).is_err());
    }

    #[test]
    fn exterior_energy_shrinks_with_lambda() {
        let f = bump(8);
        let s = weighted_scan(&f, 1.0, &[0.25, 0.5, 1.0, 1.4]).unwrap();
        for w in s.exterior.windows(2) {
            assert!(w[1] <= w[0]);
        }
        for w in s.interior.windows(2) {
            assert!(w[1] >= w[0]);
        }
        // the two regions split one fixed total
        let total = s.interior[0] + s.exterior[0];
        for k in 1..4 {
            assert!((s.interior[k] + s.exterior[k] - total).abs() <= 1e-12 * total, "{s:?}");
        }
    }

    #[test]
    fn report_rows_cover_every_grid_and_radius() {
        let f = bump(8);
        let r = estimate_gamma0(&f, &[0.5, 1.0], &[6, 8], 42).unwrap();
        assert_eq!(r.table.len(), 6);
        assert_eq!(r.theta_provenance, 42);
        assert!(r.grid_extrapolation_error.is_finite() && r.truncation_tail_bound >= 0.0);
        let json = serde_json::to_string(&r).unwrap();
        let back: Gamma0Report = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn interior_growth_ignores_the_constant() {
        let lambdas = vec![2.0, 4.0, 8.0, 16.0];
        let interior = lambdas.iter().map(|l: &f64| 50.0 + 3.0 * l.powf(0.5)).collect();
        let s = WeightedScan { gamma: 2.0, lambdas, interior, exterior: vec![1.0; 4] };
        assert!((s.interior_growth().unwrap().slope - 0.5).abs() < 1e-12);
    }
}
