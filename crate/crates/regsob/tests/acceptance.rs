//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! A failing criterion is printed, not asserted, and so is a criterion that
//! could not be evaluated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regsob::energy::{brute_force_full_space, brute_force_profile, seminorm, EnergyContext, SamplerConfig};
use regsob::expansion::{
    bounds_check, cutoff_bound_check, residual_fit, verify_upper_bound, BoundaryGraph, McConfig, Perturbation,
};
use regsob::field::{make_grid, synthesize_profile, Grading, Profile, RadialField, TailModel};
use regsob::fit::power_law;
use regsob::gamma0::{estimate_gamma0, weighted_scan, Gamma0Report};
use regsob::kernel::KernelParams;
use regsob::minimize::{envelope_check, scale_field, solve_halfspace, Initialization, MinimizerResult, SolverConfig};
use regsob::rearrange::{rearrange_sharp, slice_interaction, slice_norm, SliceProfile};
use regsob::{critical_exponent, Result};

const N: usize = 4;
const SIGMA: f64 = 0.75;

type Outcome = Result<(bool, String)>;

struct Tally {
    failed: Vec<&'static str>,
    errors: Vec<&'static str>,
}

impl Tally {
    fn record(&mut self, id: &'static str, outcome: Outcome) {
        match outcome {
            Ok((pass, detail)) => {
                println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
                if !pass {
                    self.failed.push(id);
                }
            }
            Err(e) => {
                println!("FAIL criterion {id}: not evaluated ({e})");
                self.errors.push(id);
            }
        }
    }
}

fn solver(init: Initialization) -> SolverConfig {
    SolverConfig {
        schedule: vec![16, 24, 32],
        grading: Grading { beta_r: 2.0, beta_z: 2.0 },
        max_iterations: 400,
        init,
        ..SolverConfig::default()
    }
}

fn kernel() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for n in [3, 4] {
        let grid = make_grid(n, 1.0, 24, 24, Grading::default())?;
        let f = synthesize_profile("compact-bump", &grid, SIGMA)?;
        let q = seminorm(&f, &EnergyContext::new(&grid, KernelParams::energy(n, SIGMA)?)?)?.total;
        let mc = brute_force_profile(&Profile::new("compact-bump", n, SIGMA)?, n, &SamplerConfig::default())?;
        let tol = (0.01 * mc.value).max(3.0 * mc.stderr);
        pass &= (q - mc.value).abs() <= tol;
        detail.push(format!("n={n} quadrature {q:.5} vs {:.5} ± {:.5} (tol {tol:.5})", mc.value, mc.stderr));
    }
    Ok((pass, detail.join("; ")))
}

fn rearrangement() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for n in [2, 3, 4] {
        let grid = make_grid(n, 2.0, 8, 8, Grading::default())?;
        let ctx = EnergyContext::new(&grid, KernelParams::energy(n, SIGMA)?)?;
        let ps = [1.0, 2.0, critical_exponent(n, SIGMA)];
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let (mut rises, mut worst_rise) = (0, 0.0f64);
        let mut drift = [0.0f64; 3];
        for _ in 0..200 {
            let vals: Vec<f64> = (0..grid.len()).map(|_| rng.gen::<f64>()).collect();
            let f = RadialField::from_regular(grid.clone(), SIGMA, vals)?.with_tail(TailModel::Zero);
            let g = rearrange_sharp(&f);
            let (ef, eg) = (seminorm(&f, &ctx)?.total, seminorm(&g, &ctx)?.total);
            if eg > ef * (1.0 + 1e-8) {
                rises += 1;
            }
            worst_rise = worst_rise.max(eg / ef - 1.0);
            for j in 0..grid.nz() {
                for (k, &p) in ps.iter().enumerate() {
                    let (a, b) = (slice_norm(&f, j, p), slice_norm(&g, j, p));
                    if a > 0.0 {
                        drift[k] = drift[k].max((a - b).abs() / a);
                    }
                }
            }
        }
        pass &= rises == 0 && drift.iter().all(|d| *d <= 1e-10);
        detail.push(format!(
            "n={n} energy rises {rises}/200 (max {worst_rise:+.1e}), slice norm drift L1 {:.1e} L2 {:.1e} L2* {:.1e}",
            drift[0], drift[1], drift[2]
        ));
    }
    Ok((pass, detail.join("; ")))
}

fn random_profile(rng: &mut ChaCha8Rng) -> Result<SliceProfile> {
    let k = rng.gen_range(4..10);
    let radii: Vec<f64> = (0..=k).map(|i| 2.0 * i as f64 / k as f64).collect();
    let mut values: Vec<f64> = (0..=k).map(|_| rng.gen::<f64>()).collect();
    values[k] = 0.0;
    SliceProfile::new(radii, values, N)
}

/// Sampling density of the rearranged profiles; the gap between two densities
/// bounds the piecewise-linear reconstruction error and sets the tolerance.
fn riesz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let coarse: Vec<f64> = (0..=200).map(|i| 2.0 * i as f64 / 200.0).collect();
    let fine: Vec<f64> = (0..=400).map(|i| 2.0 * i as f64 / 400.0).collect();
    let (mut violations, mut worst) = (0, f64::INFINITY);
    for _ in 0..100 {
        let (f, g) = (random_profile(&mut rng)?, random_profile(&mut rng)?);
        let t = rng.gen_range(0.2..1.0);
        let j = slice_interaction(&f, &g, t, N, SIGMA)?;
        let j_fine = slice_interaction(&f.rearranged(&fine)?, &g.rearranged(&fine)?, t, N, SIGMA)?;
        let j_coarse = slice_interaction(&f.rearranged(&coarse)?, &g.rearranged(&coarse)?, t, N, SIGMA)?;
        let tol = 3.0 * (j_fine - j_coarse).abs() + 1e-10 * j;
        let margin = (j - j_fine + tol) / j;
        worst = worst.min(margin);
        if margin < 0.0 {
            violations += 1;
        }
    }
    Ok((violations == 0, format!("{violations}/100 violations, smallest relative margin {worst:.2e}")))
}

/// Full-space sharp constant of the unnormalized seminorm, from the closed-form
/// extremizer `(1+|x|²)^{-(n-2σ)/2}`: the fractional Laplacian constant times `2/C_{n,σ}`.
fn sharp_full_space(n: usize, sigma: f64) -> f64 {
    use statrs::function::gamma::gamma;
    use std::f64::consts::PI;
    let nf = n as f64;
    let s = 4f64.powf(sigma) * PI.powf(sigma) * gamma((nf + 2.0 * sigma) / 2.0) / gamma((nf - 2.0 * sigma) / 2.0)
        * (gamma(nf / 2.0) / gamma(nf)).powf(2.0 * sigma / nf);
    let c = 4f64.powf(sigma) * gamma(nf / 2.0 + sigma) / (PI.powf(nf / 2.0) * gamma(-sigma).abs());
    2.0 * s / c
}

#[test]
fn sharp_constant_matches_frozen_value() {
    assert!((sharp_full_space(4, 0.75) - 126.877_366).abs() < 1e-5);
}

fn solver_checks(main: &MinimizerResult, other: &Result<MinimizerResult>) -> Outcome {
    let other = other.as_ref().map_err(|e| regsob::Error::InvalidParams(format!("second initialization: {e}")))?;
    let levels = &main.levels;
    let (a, b) = (levels[levels.len() - 2].s_estimate, levels[levels.len() - 1].s_estimate);
    let tail = (a - b).abs() / b;
    let agree = (main.s_estimate - other.s_estimate).abs() / main.s_estimate;
    let y = brute_force_full_space(N, SIGMA, &SamplerConfig { samples_per_batch: 50_000, ..SamplerConfig::default() })?;
    let exact = sharp_full_space(N, SIGMA);
    let oracle_ok = (y.value - exact).abs() <= 3.0 * y.stderr;
    let below = main.s_estimate < exact && main.s_estimate < y.value;
    let el_ok = main.el_residual <= main.config.el_tol;
    let pass = tail <= 0.01 && agree <= 0.01 && el_ok && below && oracle_ok;
    Ok((
        pass,
        format!(
            "schedule tail {:.3}% ({a:.4} -> {b:.4}), initializations {:.3}% ({:.4} vs {:.4}), EL residual {:.2e} (tol {:.1e}), S {:.4} vs Y {exact:.3} (sampled {:.3} ± {:.3})",
            100.0 * tail,
            100.0 * agree,
            main.s_estimate,
            other.s_estimate,
            main.el_residual,
            main.config.el_tol,
            main.s_estimate,
            y.value,
            y.stderr
        ),
    ))
}

fn envelope(main: &MinimizerResult) -> Outcome {
    let rep = envelope_check(&main.theta)?;
    let pass = rep.boundary.within(0.5, 0.1) && rep.far_field.within(3.5, 0.1);
    Ok((pass, format!("boundary exponent {:.4}, far-field exponent {:.4}", rep.boundary.slope, rep.far_field.slope)))
}

/// Both rates are large-λ asymptotics, so the envelope (scale 1) sits in a
/// box of radius 1024 and λ runs over [32, 256].
fn weighted() -> Outcome {
    let grid = make_grid(N, 1024.0, 48, 48, Grading::default())?;
    let env = synthesize_profile("envelope", &grid, SIGMA)?;
    let lambdas = [32.0, 64.0, 128.0, 256.0];
    let inner = weighted_scan(&env, 2.0, &lambdas)?.interior_growth()?;
    let outer = power_law(&lambdas, &weighted_scan(&env, 1.0, &lambdas)?.exterior)?;
    let pass = inner.within(0.5, 0.15) && outer.within(-0.5, 0.15);
    Ok((pass, format!("interior γ=2 growth exponent {:.4}, exterior γ=1 exponent {:.4}", inner.slope, outer.slope)))
}

fn gamma0_grids(theta: &RadialField) -> Vec<usize> {
    let m = theta.grid.intervals().0;
    vec![m / 2, m]
}

const GAMMA0_LAMBDAS: [f64; 6] = [0.25, 0.5, 1.0, 1.5, 2.0, 3.0];

fn covariance(main: &MinimizerResult, g0: &Gamma0Report) -> Outcome {
    let theta = &main.theta;
    let half = estimate_gamma0(&scale_field(theta, 2.0)?, &GAMMA0_LAMBDAS, &gamma0_grids(theta), 0)?;
    let rel = (half.value - g0.value / 2.0).abs() / (g0.value / 2.0).abs();
    Ok((rel <= 0.03, format!("Γ₀ = {:.5e}, scaled by 2 gives {:.5e} (deviation {:.2}% from half)", g0.value, half.value, 100.0 * rel)))
}

fn cap() -> Result<BoundaryGraph> {
    BoundaryGraph::new(vec![0.05; N - 1], Perturbation::Zero, 4.0, 1.0, 0.05)
}

fn pointwise(main: &MinimizerResult) -> Outcome {
    let rep = bounds_check(&cap()?, SIGMA, 100_000, 17)?;
    let t = cutoff_bound_check(&main.theta, 1.0, 100_000, 17)?;
    let pass = rep.violations() == 0 && t.violations == 0;
    Ok((
        pass,
        format!(
            "B {} C {} D {} Taylor {} cutoff {} violations in {} pairs",
            rep.b.violations, rep.c.violations, rep.d.violations, rep.taylor.violations, t.violations, rep.samples
        ),
    ))
}

fn expansion(main: &MinimizerResult, g0: &Gamma0Report) -> Outcome {
    let theta = &main.theta;
    let mc = McConfig::default();
    let lambdas = [1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0];

    let flat = verify_upper_bound(theta, Some(g0), &BoundaryGraph::flat(N, 4.0), &[8.0], &mc)?;
    let f = &flat[0];
    let flat_ok = (f.direct_quotient - f.reference_quotient).abs() <= 3.0 * f.direct_stderr;

    let scan = verify_upper_bound(theta, Some(g0), &cap()?, &lambdas, &mc)?;
    let fit = residual_fit(&scan, SIGMA)?;
    let all_pass = scan.iter().all(|v| v.pass);
    let pass = flat_ok && fit.r_squared >= 0.95 && all_pass;
    let failing: Vec<String> = scan.iter().filter(|v| !v.pass).map(|v| v.lambda.to_string()).collect();
    Ok((
        pass,
        format!(
            "flat λ=8 quotient {:.4} ± {:.4} vs {:.4}; cap residual fit R² = {:.4} (a = {:.3e}, b = {:.3e}); pass at {}/{} λ{}",
            f.direct_quotient,
            f.direct_stderr,
            f.reference_quotient,
            fit.r_squared,
            fit.coefficients[0],
            fit.coefficients[1],
            scan.len() - failing.len(),
            scan.len(),
            if failing.is_empty() { String::new() } else { format!(" (fails at λ = {})", failing.join(", ")) }
        ),
    ))
}

#[test]
fn acceptance() {
    let mut tally = Tally { failed: vec![], errors: vec![] };
    tally.record("1 kernel", kernel());
    tally.record("2 rearrangement", rearrangement());
    tally.record("3 riesz", riesz());

    let main = solve_halfspace(&solver(Initialization::Envelope));
    let other = solve_halfspace(&solver(Initialization::Gaussian));
    match &main {
        Ok(m) => {
            tally.record("4 solver", solver_checks(m, &other));
            tally.record("5 envelope", envelope(m));
        }
        Err(e) => {
            for id in ["4 solver", "5 envelope"] {
                tally.record(id, Err(regsob::Error::InvalidParams(format!("solver failed: {e}"))));
            }
        }
    }
    tally.record("6 weighted", weighted());

    let g0 = main
        .as_ref()
        .map_err(|e| regsob::Error::InvalidParams(format!("solver failed: {e}")))
        .and_then(|m| estimate_gamma0(&m.theta, &GAMMA0_LAMBDAS, &gamma0_grids(&m.theta), 0));
    match (&main, &g0) {
        (Ok(m), Ok(g)) => {
            println!("     Γ₀ report: {}", g.verdict_line());
            tally.record("7 covariance", covariance(m, g));
            tally.record("8 pointwise", pointwise(m));
            tally.record("9 expansion", expansion(m, g));
        }
        _ => {
            let why = match (&main, &g0) {
                (Err(e), _) | (_, Err(e)) => e.to_string(),
                _ => unreachable!(),
            };
            for id in ["7 covariance", "8 pointwise", "9 expansion"] {
                tally.record(id, Err(regsob::Error::InvalidParams(why.clone())));
            }
        }
    }
    println!("failed: {:?}; not evaluated: {:?}", tally.failed, tally.errors);
}
