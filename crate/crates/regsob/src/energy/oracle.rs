//! Monte Carlo oracles for the pair energy, in the full `2n` dimensions.
//!
//! The inner variable is sampled as `y = x + δ` with `|δ|` drawn from a
//! mixture matched to the integrand: a power `ρ^β` below `ρ₀` and a
//! `ρ^{-1-2σ}` Pareto tail. On the half-space the boundary factor `z^{2σ-1}`
//! makes the plain estimator's variance infinite, so `x_n` is oversampled
//! near the boundary and `β` is lowered until the second moment is finite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta;

use crate::field::Profile;
use crate::{par, sphere_area, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub samples_per_batch: usize,
    pub batches: usize,
    pub seed: u64,
    /// Radius of a half-ball containing the support of `u`.
    pub support_radius: Option<f64>,
    /// Probability of drawing `|δ|` from the near branch.
    pub near_fraction: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { samples_per_batch: 20_000, batches: 32, seed: 1, support_radius: None, near_fraction: 0.6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl McEstimate {
    pub(crate) fn from_batches(means: &[f64], per_batch: usize) -> Self {
        let b = means.len() as f64;
        let value = means.iter().sum::<f64>() / b;
        let var = if means.len() > 1 { means.iter().map(|m| (m - value).powi(2)).sum::<f64>() / (b - 1.0) } else { 0.0 };
        Self { value, stderr: (var / b).sqrt(), samples: means.len() * per_batch }
    }
}

pub(crate) fn unit_vector(rng: &mut ChaCha8Rng, n: usize, out: &mut [f64]) {
    loop {
        let mut norm = 0.0;
        for x in out.iter_mut().take(n) {
            *x = rng.sample(StandardNormal);
            norm += *x * *x;
        }
        if norm > 1e-20 {
            let inv = norm.sqrt().recip();
            out.iter_mut().for_each(|x| *x *= inv);
            return;
        }
    }
}

/// Step radius sampler and its density in `ρ`.
pub(crate) struct StepLaw {
    pub rho0: f64,
    pub near: f64,
    pub sigma: f64,
    /// Near-branch exponent, in `(-1, 0]`.
    pub beta: f64,
}

impl StepLaw {
    pub fn sample(&self, u: f64) -> f64 {
        if u < self.near {
            self.rho0 * (u / self.near).powf(1.0 / (1.0 + self.beta))
        } else {
            let v = (u - self.near) / (1.0 - self.near);
            self.rho0 * (1.0 - v).powf(-1.0 / (2.0 * self.sigma))
        }
    }

    pub fn density(&self, rho: f64) -> f64 {
        let s = self.sigma;
        if rho <= self.rho0 {
            let b = self.beta;
            self.near * (1.0 + b) * rho.powf(b) / self.rho0.powf(1.0 + b)
        } else {
            (1.0 - self.near) * 2.0 * s * self.rho0.powf(2.0 * s) * rho.powf(-1.0 - 2.0 * s)
        }
    }
}

/// Mixture of uniform and `x^{-GRADE}` on `[0, h]`, half each.
pub(crate) const GRADE: f64 = 0.9;

pub(crate) fn boundary_sample(rng: &mut ChaCha8Rng, h: f64) -> f64 {
    let v: f64 = rng.gen();
    if rng.gen::<bool>() {
        h * v
    } else {
        h * v.powf(1.0 / (1.0 - GRADE))
    }
}

pub(crate) fn boundary_density(x: f64, h: f64) -> f64 {
    0.5 / h + 0.5 * (1.0 - GRADE) * x.powf(-GRADE) / h.powf(1.0 - GRADE)
}

pub(crate) fn stratified(rng: &mut ChaCha8Rng, k: usize, m: usize) -> f64 {
    ((k as f64 + rng.gen::<f64>()) / m as f64).clamp(1e-300, 1.0 - 1e-16)
}

/// `∬_{ℝⁿ₊×ℝⁿ₊} (u(ξ)-u(ζ))² |ξ-ζ|^{-(n+2σ)}` for `u` supported in the half-ball
/// of radius `cfg.support_radius`.
///
/// `x` ranges over the support half-ball; pairs with `y` outside it are
/// counted twice to cover the mirrored ordering.
pub fn brute_force_seminorm<F>(u: F, n: usize, sigma: f64, cfg: &SamplerConfig) -> Result<McEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let rs = cfg.support_radius.ok_or(Error::NonCompactSupport)?;
    validate(n, sigma, cfg)?;
    let p = n as f64 + 2.0 * sigma;
    let area = sphere_area(n - 1);
    let disk = sphere_area(n - 2) / (n - 1) as f64;
    // finite variance needs β < 3-4σ in the bulk and β < 4σ-4+GRADE at the boundary
    let beta = (1.0 - 2.0 * sigma).min(4.0 * sigma - 4.0 + GRADE - 0.1).max(-0.9);
    let law = StepLaw { rho0: 0.5 * rs, near: cfg.near_fraction, sigma, beta };
    let m = cfg.samples_per_batch;
    let means = par::map_collect(cfg.batches, |batch| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(batch as u64);
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut dir = vec![0.0; n];
        let mut acc = 0.0;
        for k in 0..m {
            let xn = boundary_sample(&mut rng, rs);
            let a = (rs * rs - xn * xn).max(0.0).sqrt();
            if n > 1 {
                unit_vector(&mut rng, n - 1, &mut x[..n - 1]);
                let rad = a * rng.gen::<f64>().powf(1.0 / (n - 1) as f64);
                x[..n - 1].iter_mut().for_each(|c| *c *= rad);
            }
            x[n - 1] = xn;
            let qx = boundary_density(xn, rs) / (disk * a.powi(n as i32 - 1));
            let rho = law.sample(stratified(&mut rng, k, m));
            unit_vector(&mut rng, n, &mut dir);
            for d in 0..n {
                y[d] = x[d] + rho * dir[d];
            }
            if y[n - 1] <= 0.0 {
                continue;
            }
            let diff = u(&x) - u(&y);
            if diff == 0.0 {
                continue;
            }
            let inside = y.iter().map(|c| c * c).sum::<f64>() < rs * rs;
            let q = qx * law.density(rho) / (area * rho.powi(n as i32 - 1));
            acc += diff * diff * rho.powf(-p) * if inside { 1.0 } else { 2.0 } / q;
        }
        acc / m as f64
    });
    Ok(McEstimate::from_batches(&means, m))
}

/// Oracle for a closed-form profile; refuses profiles without compact support.
pub fn brute_force_profile(profile: &Profile, n: usize, cfg: &SamplerConfig) -> Result<McEstimate> {
    let support = profile.support_radius().ok_or(Error::NonCompactSupport)?;
    let cfg = SamplerConfig { support_radius: Some(support), ..cfg.clone() };
    brute_force_seminorm(
        |x: &[f64]| {
            let r = x[..n - 1].iter().map(|c| c * c).sum::<f64>().sqrt();
            profile.u(r, x[n - 1])
        },
        n,
        profile.sigma(),
        &cfg,
    )
}

fn validate(n: usize, sigma: f64, cfg: &SamplerConfig) -> Result<()> {
    if n < 2 || !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::InvalidParams(format!("n = {n}, σ = {sigma}")));
    }
    if cfg.samples_per_batch == 0 || cfg.batches == 0 || !(cfg.near_fraction > 0.0 && cfg.near_fraction < 1.0) {
        return Err(Error::InvalidParams("sampler needs samples, batches and a near fraction in (0, 1)".into()));
    }
    Ok(())
}

/// Sobolev quotient of `U = (1+|x|²)^{-(n-2σ)/2}` on all of `ℝⁿ`,
/// `∬ (U(x)-U(y))² |x-y|^{-(n+2σ)} / ‖U‖²_{2n/(n-2σ)}`.
///
/// `|x|` is drawn through `|x|²/(1+|x|²) ~ Beta(n/2, σ)`; the `L^p` norm is exact.
pub fn brute_force_full_space(n: usize, sigma: f64, cfg: &SamplerConfig) -> Result<McEstimate> {
    validate(n, sigma, cfg)?;
    let nf = n as f64;
    let p = nf + 2.0 * sigma;
    let area = sphere_area(n - 1);
    let law_x = Beta::new(nf / 2.0, sigma).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let norm_x = beta(nf / 2.0, sigma) * area / 2.0;
    let big_u = |rho2: f64| (1.0 + rho2).powf(-(nf - 2.0 * sigma) / 2.0);
    let m = cfg.samples_per_batch;
    let means = par::map_collect(cfg.batches, |batch| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(batch as u64);
        let mut x = vec![0.0; n];
        let mut dir = vec![0.0; n];
        let mut acc = 0.0;
        for k in 0..m {
            let t: f64 = law_x.sample(&mut rng);
            let t = t.min(1.0 - 1e-16);
            let rx = (t / (1.0 - t)).sqrt();
            unit_vector(&mut rng, n, &mut x);
            x.iter_mut().for_each(|c| *c *= rx);
            let qx = (1.0 + rx * rx).powf(-p / 2.0) / norm_x;
            let law = StepLaw { rho0: 0.5 * (1.0 + rx), near: cfg.near_fraction, sigma, beta: 1.0 - 2.0 * sigma };
            let rho = law.sample(stratified(&mut rng, k, m));
            unit_vector(&mut rng, n, &mut dir);
            let ry2: f64 = (0..n).map(|d| (x[d] + rho * dir[d]).powi(2)).sum();
            let diff = big_u(rx * rx) - big_u(ry2);
            let qd = law.density(rho) / (area * rho.powi(n as i32 - 1));
            acc += diff * diff * rho.powf(-p) / (qx * qd);
        }
        acc / m as f64
    });
    let energy = McEstimate::from_batches(&means, m);
    let lp_mass = area * beta(nf / 2.0, nf / 2.0) / 2.0;
    let scale = lp_mass.powf(-(nf - 2.0 * sigma) / nf);
    Ok(McEstimate { value: energy.value * scale, stderr: energy.stderr * scale, samples: energy.samples })
}
