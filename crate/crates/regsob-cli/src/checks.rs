//! Named property suites for `regsob check`.

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use regsob::energy::{brute_force_profile, seminorm, EnergyContext, SamplerConfig};
use regsob::expansion::{bounds_check, cutoff_bound_check};
use regsob::field::{make_grid, synthesize_profile, Grading, RadialField, TailModel};
use regsob::fit::power_law;
use regsob::gamma0::weighted_scan;
use regsob::kernel::KernelParams;
use regsob::rearrange::{rearrange_sharp, slice_norm};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub value: String,
    pub pass: bool,
}

fn line(name: impl Into<String>, value: impl Into<String>, pass: bool) -> CheckLine {
    CheckLine { name: name.into(), value: value.into(), pass }
}

pub const SUITES: [&str; 4] = ["rearrangement", "kernel", "appendix-scaling", "taylor-bounds"];

pub fn run(suite: &str, cfg: &RunConfig) -> Result<Vec<CheckLine>> {
    match suite {
        "rearrangement" => rearrangement(cfg),
        "kernel" => kernel(cfg),
        "appendix-scaling" => appendix_scaling(cfg),
        "taylor-bounds" => taylor_bounds(cfg),
        other => anyhow::bail!("unknown suite `{other}` (one of {})", SUITES.join(", ")),
    }
}

/// Random nonnegative fields: slices become nonincreasing, the L¹ slice
/// norms stay, the map is idempotent and the energy does not rise.
fn rearrangement(cfg: &RunConfig) -> Result<Vec<CheckLine>> {
    let mut out = Vec::new();
    let sigma = cfg.sigma;
    for n in [2, 3, 4] {
        let grid = make_grid(n, 2.0, 8, 8, Grading::default())?;
        let ctx = EnergyContext::new(&grid, KernelParams::energy(n, sigma)?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (mut sorted, mut l1, mut idem, mut energy) = (0, 0.0f64, 0.0f64, 0);
        let fields = 20;
        for _ in 0..fields {
            let vals: Vec<f64> = (0..grid.len()).map(|_| rng.gen::<f64>()).collect();
            let f = RadialField::from_regular(grid.clone(), sigma, vals)?.with_tail(TailModel::Zero);
            let g = rearrange_sharp(&f);
            for j in 0..grid.nz() {
                let col: Vec<f64> = (0..grid.nr()).map(|i| g.regular_values[grid.idx(i, j)]).collect();
                if col.windows(2).any(|w| w[1] > w[0]) {
                    sorted += 1;
                }
                let (a, b) = (slice_norm(&f, j, 1.0), slice_norm(&g, j, 1.0));
                l1 = l1.max((a - b).abs() / a.max(1e-300));
            }
            idem = idem.max(
                rearrange_sharp(&g).regular_values.iter().zip(&g.regular_values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
            );
            if seminorm(&g, &ctx)?.total > seminorm(&f, &ctx)?.total * (1.0 + 1e-8) {
                energy += 1;
            }
        }
        out.push(line(format!("n={n} unsorted slices"), sorted.to_string(), sorted == 0));
        out.push(line(format!("n={n} slice L1 drift"), format!("{l1:.2e}"), l1 <= 1e-10));
        out.push(line(format!("n={n} idempotence defect"), format!("{idem:.2e}"), idem <= 1e-12));
        out.push(line(format!("n={n} energy increases"), format!("{energy}/{fields}"), energy == 0));
    }
    Ok(out)
}

/// Reduced-kernel seminorm of the compact bump against the 2n-D sampler.
fn kernel(cfg: &RunConfig) -> Result<Vec<CheckLine>> {
    let mut out = Vec::new();
    for n in [3, 4] {
        let grid = make_grid(n, 1.0, 16, 16, Grading::default())?;
        let f = synthesize_profile("compact-bump", &grid, cfg.sigma)?;
        let ctx = EnergyContext::new(&grid, KernelParams::energy(n, cfg.sigma)?)?;
        let q = seminorm(&f, &ctx)?.total;
        let prof = regsob::field::Profile::new("compact-bump", n, cfg.sigma)?;
        let mc = brute_force_profile(&prof, n, &SamplerConfig { seed: cfg.seed, ..SamplerConfig::default() })?;
        let tol = (0.01 * mc.value).max(3.0 * mc.stderr);
        let dev = (q - mc.value).abs();
        out.push(line(
            format!("n={n} quadrature vs sampler"),
            format!("{q:.5} vs {:.5} ± {:.5} (tol {tol:.5})", mc.value, mc.stderr),
            dev <= tol,
        ));
    }
    Ok(out)
}

/// Weighted energies of the envelope against the rates `λ^{γ-2σ}` for `λ ≫ 1`.
fn appendix_scaling(cfg: &RunConfig) -> Result<Vec<CheckLine>> {
    let sigma = cfg.sigma;
    let grid = make_grid(cfg.n, 1024.0, 48, 48, Grading::default())?;
    let env = synthesize_profile("envelope", &grid, sigma)?;
    let lambdas = [32.0, 64.0, 128.0, 256.0];
    let mut out = Vec::new();
    for gamma in [0.5, 1.0] {
        let s = weighted_scan(&env, gamma, &lambdas)?;
        let fit = power_law(&lambdas, &s.exterior)?;
        let want = gamma - 2.0 * sigma;
        out.push(line(format!("exterior γ={gamma} exponent"), format!("{:.4} (want {want:.3})", fit.slope), fit.within(want, 0.15)));
    }
    let gamma = 2.0;
    let fit = weighted_scan(&env, gamma, &lambdas)?.interior_growth()?;
    let want = gamma - 2.0 * sigma;
    out.push(line(format!("interior γ={gamma} growth exponent"), format!("{:.4} (want {want:.3})", fit.slope), fit.within(want, 0.15)));
    Ok(out)
}

/// Pointwise chart bounds and the cutoff split.
fn taylor_bounds(cfg: &RunConfig) -> Result<Vec<CheckLine>> {
    let bg = cfg.graph()?;
    let rep = bounds_check(&bg, cfg.sigma, cfg.check_samples, cfg.seed)?;
    let mut out = vec![
        line("B bound violations", format!("{} (worst slack {:.3})", rep.b.violations, rep.b.worst_margin), rep.b.violations == 0),
        line("C bound violations", format!("{} (worst slack {:.3})", rep.c.violations, rep.c.worst_margin), rep.c.violations == 0),
        line("D bound violations", format!("{} (worst slack {:.3})", rep.d.violations, rep.d.worst_margin), rep.d.violations == 0),
        line(
            "Taylor violations",
            format!("{} (worst margin {:.3e}, max |E| {:.3})", rep.taylor.violations, rep.taylor.worst_margin, rep.max_abs_e),
            rep.taylor.violations == 0,
        ),
    ];
    let grid = make_grid(cfg.n, 16.0, 24, 24, Grading::default())?;
    let env = synthesize_profile("envelope", &grid, cfg.sigma)?;
    let t = cutoff_bound_check(&env, 1.0, cfg.check_samples, cfg.seed)?;
    out.push(line("cutoff split violations", t.violations.to_string(), t.violations == 0));
    Ok(out)
}
