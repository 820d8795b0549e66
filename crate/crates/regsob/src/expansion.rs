//! Boundary flattening for domains above a graph and the test-function upper
//! bound for their Sobolev quotient.
//!
//! The boundary near the origin is `x_n = h(x') = ½Σα_i x_i² + g(x')|x'|²`
//! and `Φ(x) = (x', x_n - h(x'))` flattens it with unit Jacobian. Pulling the
//! kernel back through `Φ` gives
//! `|Φ⁻¹ξ-Φ⁻¹ζ|^{-(n+2σ)} = |ξ-ζ|^{-(n+2σ)} (1+B+C+D)^{-(n+2σ)/2}`.
//!
//! The test function is `v_λ = (ηΘ_λ)∘Φ` with `Θ_λ(x) = λ^{(n-2σ)/2}Θ(λx)`.
//! All Monte Carlo work happens in the coordinates `x̂ = λx` where `Θ` keeps
//! its own scale; the quotient is invariant and the graph becomes the
//! dilation of `h` by `λ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta;

use crate::energy::oracle::{boundary_density, boundary_sample, stratified, unit_vector, StepLaw, GRADE};
use crate::energy::{lp_norm, seminorm, EnergyContext, McEstimate};
use crate::field::{eval_u, RadialField, TailModel};
use crate::fit::{linear_fit, power_law, LinearFit, SlopeFit};
use crate::gamma0::Gamma0Report;
use crate::kernel::KernelParams;
use crate::minimize::axis_peak;
use crate::{critical_exponent, par, sphere_area, Error, Result};

/// Radial perturbation `g` of the quadratic part of the graph, with `g(0) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Perturbation {
    Zero,
    /// `g = a s²/(1+s²/w²)` in `s = |x'|`.
    QuadraticTaper { amplitude: f64, width: f64 },
    /// `g = Σ_k c_k s^{k+1}`.
    Polynomial { coefficients: Vec<f64> },
}

impl Perturbation {
    pub fn value(&self, s: f64) -> f64 {
        match self {
            Perturbation::Zero => 0.0,
            Perturbation::QuadraticTaper { amplitude, width } => amplitude * s * s / (1.0 + (s / width).powi(2)),
            Perturbation::Polynomial { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, c| acc * s + c) * s
            }
        }
    }

    /// Lipschitz constant on `s < r`.
    pub fn lipschitz(&self, r: f64) -> f64 {
        match self {
            Perturbation::Zero => 0.0,
            Perturbation::QuadraticTaper { amplitude, width } => {
                // s/(1+s²/w²)² increases up to w/√3
                let s = r.min(width / 3f64.sqrt());
                amplitude.abs() * 2.0 * s / (1.0 + (s / width).powi(2)).powi(2)
            }
            Perturbation::Polynomial { coefficients } => {
                coefficients.iter().enumerate().map(|(k, c)| c.abs() * (k + 1) as f64 * r.powi(k as i32)).sum()
            }
        }
    }

    fn check(&self) -> Result<()> {
        let ok = match self {
            Perturbation::Zero => true,
            Perturbation::QuadraticTaper { amplitude, width } => amplitude.is_finite() && *width > 0.0,
            Perturbation::Polynomial { coefficients } => coefficients.iter().all(|c| c.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("bad perturbation {self:?}")))
        }
    }
}

/// Boundary chart `{|x'| < R0}` above the graph of `h`, dilated by `dilation`:
/// the graph actually used is `μ h(x'/μ)` on `|x'| < μ R0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryGraph {
    pub alpha: Vec<f64>,
    pub g: Perturbation,
    pub r0: f64,
    pub delta0: f64,
    pub epsilon0: f64,
    #[serde(default = "unit")]
    pub dilation: f64,
}

fn unit() -> f64 {
    1.0
}

impl BoundaryGraph {
    pub fn new(alpha: Vec<f64>, g: Perturbation, r0: f64, delta0: f64, epsilon0: f64) -> Result<Self> {
        let bg = Self { alpha, g, r0, delta0, epsilon0, dilation: 1.0 };
        bg.validate()?;
        Ok(bg)
    }

    pub fn flat(n: usize, r0: f64) -> Self {
        Self { alpha: vec![0.0; n - 1], g: Perturbation::Zero, r0, delta0: r0, epsilon0: 0.0, dilation: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() || self.alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParams("need n-1 finite principal curvatures".into()));
        }
        if !(self.r0 > 0.0 && self.delta0 > 0.0 && self.delta0 <= self.r0 && self.epsilon0 >= 0.0 && self.dilation > 0.0) {
            return Err(Error::InvalidParams(format!(
                "chart needs 0 < δ0 ≤ R0, ε0 ≥ 0, μ > 0 (got δ0 = {}, R0 = {}, ε0 = {}, μ = {})",
                self.delta0, self.r0, self.epsilon0, self.dilation
            )));
        }
        self.g.check()
    }

    /// Checks `|α_i| ≤ ε0` and `Lip(g) ≤ ε0` on the chart.
    pub fn check_smallness(&self) -> Result<()> {
        let worst_alpha = self.curvatures().iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let lip = self.g_lipschitz();
        if worst_alpha > self.epsilon0 || lip > self.epsilon0 {
            return Err(Error::InvalidParams(format!(
                "smallness fails: max |α| = {worst_alpha}, Lip(g) = {lip}, ε0 = {}",
                self.epsilon0
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.alpha.len() + 1
    }

    /// The same domain seen at `μ` times the scale.
    pub fn dilate(&self, mu: f64) -> Self {
        Self { dilation: self.dilation * mu, ..self.clone() }
    }

    pub fn chart_radius(&self) -> f64 {
        self.r0 * self.dilation
    }

    pub fn inner_radius(&self) -> f64 {
        self.delta0 * self.dilation
    }

    pub fn curvatures(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| a / self.dilation).collect()
    }

    pub fn mean_curvature(&self) -> f64 {
        self.alpha.iter().sum::<f64>() / (self.alpha.len() as f64 * self.dilation)
    }

    fn g_at(&self, s: f64) -> f64 {
        self.g.value(s / self.dilation) / self.dilation
    }

    pub fn g_lipschitz(&self) -> f64 {
        self.g.lipschitz(self.r0) / (self.dilation * self.dilation)
    }

    fn quadratic(&self, xp: &[f64]) -> f64 {
        self.alpha.iter().zip(xp).map(|(a, x)| a * x * x).sum::<f64>() / self.dilation
    }

    fn height_unchecked(&self, xp: &[f64]) -> f64 {
        let s2: f64 = xp.iter().map(|x| x * x).sum();
        0.5 * self.quadratic(xp) + self.g_at(s2.sqrt()) * s2
    }

    fn in_chart(&self, xp: &[f64]) -> bool {
        xp.len() == self.alpha.len() && xp.iter().map(|x| x * x).sum::<f64>().sqrt() < self.chart_radius()
    }
}

/// `h(x')`.
pub fn graph_height(bg: &BoundaryGraph, xp: &[f64]) -> Result<f64> {
    if !bg.in_chart(xp) {
        return Err(Error::OutsideChart);
    }
    Ok(bg.height_unchecked(xp))
}

/// `Φ(x) = (x', x_n - h(x'))` for `x` above the graph.
pub fn flatten_map(bg: &BoundaryGraph, x: &[f64]) -> Result<Vec<f64>> {
    let n = bg.dim();
    if x.len() != n {
        return Err(Error::OutsideChart);
    }
    let h = graph_height(bg, &x[..n - 1])?;
    if !(x[n - 1] > h) {
        return Err(Error::OutsideChart);
    }
    let mut xi = x.to_vec();
    xi[n - 1] -= h;
    Ok(xi)
}

/// `Φ⁻¹(ξ) = (ξ', ξ_n + h(ξ'))` for `ξ_n > 0`.
pub fn unflatten_map(bg: &BoundaryGraph, xi: &[f64]) -> Result<Vec<f64>> {
    let n = bg.dim();
    if xi.len() != n || !(xi[n - 1] > 0.0) {
        return Err(Error::OutsideChart);
    }
    let h = graph_height(bg, &xi[..n - 1])?;
    let mut x = xi.to_vec();
    x[n - 1] += h;
    Ok(x)
}

/// Smallest `A₁` with `(1+a)^{-k} ≤ 1 - k a + A₁ a²` on `|a| ≤ 1/2`, `k = (n+2σ)/2`.
///
/// The remainder quotient `((1+a)^{-k} - 1 + k a)/a²` is an average of the
/// decreasing second derivative, so it peaks at `a = -1/2`. The same constant
/// then serves every `a ≥ -1/2`.
pub fn taylor_constant(n: usize, sigma: f64) -> f64 {
    let k = (n as f64 + 2.0 * sigma) / 2.0;
    4.0 * (2f64.powf(k) - 1.0 - 0.5 * k)
}

/// Kernel corrections for one pair of flattened points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corrections {
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    /// `A(ξ,ζ)|ξ-ζ|^{n+2σ} = (1+E)^{-(n+2σ)/2}`.
    pub ratio: f64,
}

fn corrections_unchecked(bg: &BoundaryGraph, k: f64, a1: f64, xi: &[f64], zeta: &[f64]) -> Corrections {
    let n = xi.len();
    let (xp, zp) = (&xi[..n - 1], &zeta[..n - 1]);
    let dn = xi[n - 1] - zeta[n - 1];
    let dp2: f64 = xp.iter().zip(zp).map(|(a, b)| (a - b) * (a - b)).sum();
    let d2 = dp2 + dn * dn;
    let qa = bg.quadratic(xp) - bg.quadratic(zp);
    let s2x: f64 = xp.iter().map(|x| x * x).sum();
    let s2z: f64 = zp.iter().map(|x| x * x).sum();
    let gq = bg.g_at(s2x.sqrt()) * s2x - bg.g_at(s2z.sqrt()) * s2z;
    let dh = 0.5 * qa + gq;
    let b = dn * qa / d2;
    let c = 2.0 * dn * gq / d2;
    let d = dh * dh / d2;
    let e = b + c + d;
    let f = k * c.abs() + k * d + a1 * e * e;
    // 1+E straight from the pulled-back distance
    let ratio = ((dp2 + (dn + dh).powi(2)) / d2).powf(-k);
    Corrections { b, c, d, e, f, ratio }
}

/// `B, C, D, E, F` and the kernel ratio for `ξ ≠ ζ` in the chart.
pub fn correction_terms(bg: &BoundaryGraph, sigma: f64, xi: &[f64], zeta: &[f64]) -> Result<Corrections> {
    let n = bg.dim();
    if xi.len() != n || zeta.len() != n || !bg.in_chart(&xi[..n - 1]) || !bg.in_chart(&zeta[..n - 1]) {
        return Err(Error::OutsideChart);
    }
    if xi == zeta {
        return Err(Error::CoincidentPoints);
    }
    let k = (n as f64 + 2.0 * sigma) / 2.0;
    Ok(corrections_unchecked(bg, k, taylor_constant(n, sigma), xi, zeta))
}

/// Smooth radial cutoff: 1 on `[0, 2]`, 0 beyond 3, quintic smoothstep between.
pub fn cutoff(rho: f64) -> f64 {
    if rho <= 2.0 {
        1.0
    } else if rho >= 3.0 {
        0.0
    } else {
        let t = rho - 2.0;
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

/// Worst relative slack `(bound - |value|)/bound` and violation count of one bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundTally {
    pub violations: usize,
    pub worst_margin: f64,
}

impl BoundTally {
    fn new() -> Self {
        Self { violations: 0, worst_margin: f64::INFINITY }
    }

    fn record(&mut self, value: f64, bound: f64, slack: f64) {
        if value > bound + slack {
            self.violations += 1;
        }
        let m = if bound > 0.0 { (bound - value) / bound } else if value <= slack { 1.0 } else { f64::NEG_INFINITY };
        self.worst_margin = self.worst_margin.min(m);
    }

    fn merge(self, o: Self) -> Self {
        Self { violations: self.violations + o.violations, worst_margin: self.worst_margin.min(o.worst_margin) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub samples: usize,
    pub b: BoundTally,
    pub c: BoundTally,
    pub d: BoundTally,
    /// `ratio ≤ 1 - (n+2σ)B/2 + F`; the margin is absolute.
    pub taylor: BoundTally,
    pub max_abs_e: f64,
    pub min_e: f64,
}

impl BoundsReport {
    pub fn violations(&self) -> usize {
        self.b.violations + self.c.violations + self.d.violations + self.taylor.violations
    }
}

const CHECK_BATCH: usize = 4096;
const SLACK: f64 = 1e-12;

fn chart_point(rng: &mut ChaCha8Rng, n: usize, radius: f64, out: &mut [f64]) {
    unit_vector(rng, n - 1, &mut out[..n - 1]);
    let s = radius * rng.gen::<f64>().powf(1.0 / (n - 1) as f64);
    out[..n - 1].iter_mut().for_each(|c| *c *= s);
    out[n - 1] = radius * rng.gen::<f64>();
}

/// Second point of a pair: independent half the time, otherwise at a
/// log-uniform distance down to `1e-6` of the chart radius.
fn partner(rng: &mut ChaCha8Rng, n: usize, radius: f64, xi: &[f64], out: &mut [f64], dir: &mut [f64]) {
    if rng.gen::<bool>() {
        chart_point(rng, n, radius, out);
        return;
    }
    loop {
        let rho = radius * 10f64.powf(-6.0 * rng.gen::<f64>());
        unit_vector(rng, n, dir);
        for d in 0..n {
            out[d] = xi[d] + rho * dir[d];
        }
        let s: f64 = out[..n - 1].iter().map(|c| c * c).sum::<f64>().sqrt();
        if s < radius && out[n - 1] > 0.0 {
            return;
        }
    }
}

/// Samples chart pairs and checks the pointwise bounds
/// `|B| ≤ ε0 S^{1/2}`, `|C| ≤ (3/2) ε0 S`, `D ≤ (n-1)ε0² S + (9/2)ε0² S²`
/// with `S = |ξ'|²+|ζ'|²`, and the one-sided Taylor inequality.
pub fn bounds_check(bg: &BoundaryGraph, sigma: f64, samples: usize, seed: u64) -> Result<BoundsReport> {
    bg.validate()?;
    let n = bg.dim();
    let k = (n as f64 + 2.0 * sigma) / 2.0;
    let a1 = taylor_constant(n, sigma);
    let eps = bg.epsilon0;
    let radius = bg.chart_radius();
    let batches = samples.div_ceil(CHECK_BATCH);
    let parts = par::map_collect(batches, |batch| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(batch as u64);
        let mut xi = vec![0.0; n];
        let mut zeta = vec![0.0; n];
        let mut dir = vec![0.0; n];
        let (mut tb, mut tc, mut td, mut tt) = (BoundTally::new(), BoundTally::new(), BoundTally::new(), BoundTally::new());
        let (mut max_e, mut min_e) = (0.0f64, f64::INFINITY);
        let count = CHECK_BATCH.min(samples - batch * CHECK_BATCH);
        for _ in 0..count {
            chart_point(&mut rng, n, radius, &mut xi);
            partner(&mut rng, n, radius, &xi, &mut zeta, &mut dir);
            if xi == zeta {
                continue;
            }
            let c = corrections_unchecked(bg, k, a1, &xi, &zeta);
            let s: f64 = xi[..n - 1].iter().chain(&zeta[..n - 1]).map(|x| x * x).sum();
            tb.record(c.b.abs(), eps * s.sqrt(), SLACK);
            tc.record(c.c.abs(), 1.5 * eps * s, SLACK);
            td.record(c.d, (n - 1) as f64 * eps * eps * s + 4.5 * eps * eps * s * s, SLACK);
            let rhs = 1.0 - k * c.b + c.f;
            if c.ratio > rhs + SLACK {
                tt.violations += 1;
            }
            tt.worst_margin = tt.worst_margin.min(rhs - c.ratio);
            max_e = max_e.max(c.e.abs());
            min_e = min_e.min(c.e);
        }
        (tb, tc, td, tt, max_e, min_e)
    });
    let mut rep = BoundsReport {
        samples,
        b: BoundTally::new(),
        c: BoundTally::new(),
        d: BoundTally::new(),
        taylor: BoundTally::new(),
        max_abs_e: 0.0,
        min_e: f64::INFINITY,
    };
    for (tb, tc, td, tt, max_e, min_e) in parts {
        rep.b = rep.b.merge(tb);
        rep.c = rep.c.merge(tc);
        rep.d = rep.d.merge(td);
        rep.taylor = rep.taylor.merge(tt);
        rep.max_abs_e = rep.max_abs_e.max(max_e);
        rep.min_e = rep.min_e.min(min_e);
    }
    Ok(rep)
}

/// Checks `|η(ξ/λ)Θ(ξ) - η(ζ/λ)Θ(ζ)|² ≤ 2|Θ(ξ)-Θ(ζ)|² + 2|η(ξ/λ)-η(ζ/λ)|²|Θ(ζ)|²`
/// on pairs in the half-ball of radius `4λ`.
pub fn cutoff_bound_check(theta: &RadialField, lambda: f64, samples: usize, seed: u64) -> Result<BoundTally> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParams(format!("λ = {lambda}")));
    }
    let n = theta.grid.n;
    let radius = 4.0 * lambda;
    let batches = samples.div_ceil(CHECK_BATCH);
    let u = |x: &[f64]| eval_u(theta, x[..n - 1].iter().map(|c| c * c).sum::<f64>().sqrt(), x[n - 1]);
    let eta = |x: &[f64]| cutoff(x.iter().map(|c| c * c).sum::<f64>().sqrt() / lambda);
    let parts = par::map_collect(batches, |batch| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(batch as u64);
        let mut xi = vec![0.0; n];
        let mut zeta = vec![0.0; n];
        let mut dir = vec![0.0; n];
        let mut t = BoundTally::new();
        for _ in 0..CHECK_BATCH.min(samples - batch * CHECK_BATCH) {
            chart_point(&mut rng, n, radius, &mut xi);
            partner(&mut rng, n, radius, &xi, &mut zeta, &mut dir);
            let (tx, tz) = (u(&xi), u(&zeta));
            let (ex, ez) = (eta(&xi), eta(&zeta));
            let lhs = (ex * tx - ez * tz).powi(2);
            let rhs = 2.0 * (tx - tz).powi(2) + 2.0 * (ex - ez).powi(2) * tz * tz;
            t.record(lhs, rhs, SLACK * (1.0 + rhs));
        }
        t
    });
    Ok(parts.into_iter().fold(BoundTally::new(), BoundTally::merge))
}

/// `η(·/λ)Θ` interpolated at the nodes of `Θ`'s grid, with a zero tail.
fn cut_field(theta: &RadialField, lambda: f64) -> Result<RadialField> {
    let g = &theta.grid;
    if let TailModel::PowerLaw { .. } = theta.tail {
        if 3.0 * lambda > g.r_max {
            return Err(Error::InvalidParams(format!(
                "cutoff radius 3λ = {} leaves the box of a field with a power-law tail",
                3.0 * lambda
            )));
        }
    }
    let mut v = theta.regular_values.clone();
    for (i, &r) in g.r_nodes.iter().enumerate() {
        for (j, &z) in g.z_nodes.iter().enumerate() {
            v[g.idx(i, j)] *= cutoff(r.hypot(z) / lambda);
        }
    }
    Ok(theta.with_values(v).with_tail(TailModel::Zero))
}

/// Evaluable `v_λ = (ηΘ_λ)∘Φ`, with `ηΘ` taken as its nodal interpolant on the grid of `Θ`.
#[derive(Clone, Debug)]
pub struct TestFunction {
    pub lambda: f64,
    pub graph: BoundaryGraph,
    /// `η(·/λ)Θ` in the coordinates `λx`.
    pub profile: RadialField,
    amplitude: f64,
}

impl TestFunction {
    /// `θ_λ(ξ)` in flattened coordinates.
    pub fn eval_flat(&self, xi: &[f64]) -> f64 {
        let n = xi.len();
        let r = xi[..n - 1].iter().map(|c| c * c).sum::<f64>().sqrt();
        self.amplitude * eval_u(&self.profile, self.lambda * r, self.lambda * xi[n - 1])
    }

    /// `v_λ(x)` for `x` in the chart above the graph.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval_flat(&flatten_map(&self.graph, x)?))
    }
}

pub fn build_test_function(theta: &RadialField, lambda: f64, bg: &BoundaryGraph) -> Result<TestFunction> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParams(format!("λ = {lambda}")));
    }
    bg.validate()?;
    if bg.dim() != theta.grid.n {
        return Err(Error::InvalidParams(format!("graph in dimension {} for a field in dimension {}", bg.dim(), theta.grid.n)));
    }
    let n = theta.grid.n as f64;
    Ok(TestFunction {
        lambda,
        graph: bg.clone(),
        profile: cut_field(theta, lambda)?,
        amplitude: lambda.powf((n - 2.0 * theta.sigma) / 2.0),
    })
}

/// Energy and `L^{2n/(n-2σ)}` mass lost to the cutoff at scale `λ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffDeficit {
    pub lambda: f64,
    pub energy: f64,
    /// `∫|ηΘ_λ|^{2n/(n-2σ)}` relative to the same integral for `Θ`.
    pub lp_mass: f64,
    pub quotient: f64,
    /// Quotient of `ηΘ_λ` minus the quotient of `Θ`.
    pub energy_deficit: f64,
    pub lp_deficit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffScan {
    pub rows: Vec<CutoffDeficit>,
    /// Log-log slope of `lp_deficit` against `λ`, where positive.
    pub lp_exponent: Option<SlopeFit>,
}

pub fn cutoff_deficit_scan(theta: &RadialField, lambdas: &[f64]) -> Result<CutoffScan> {
    let n = theta.grid.n;
    let p = critical_exponent(n, theta.sigma);
    let ctx = EnergyContext::new(&theta.grid, KernelParams::energy(n, theta.sigma)?)?;
    let e0 = seminorm(theta, &ctx)?.total;
    let m0 = lp_norm(theta, p).powf(p);
    if !(m0 > 0.0) {
        return Err(Error::ZeroField);
    }
    let q0 = e0 / m0.powf(2.0 / p);
    let mut rows = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        if !(l > 0.0) {
            return Err(Error::InvalidParams(format!("λ = {l}")));
        }
        let w = cut_field(theta, l)?;
        let energy = seminorm(&w, &ctx)?.total;
        let mass = lp_norm(&w, p).powf(p);
        let quotient = energy / mass.powf(2.0 / p);
        rows.push(CutoffDeficit {
            lambda: l,
            energy,
            lp_mass: mass / m0,
            quotient,
            energy_deficit: quotient - q0,
            lp_deficit: 1.0 - mass / m0,
        });
    }
    let pos: Vec<&CutoffDeficit> = rows.iter().filter(|r| r.lp_deficit > 0.0).collect();
    let lp_exponent = if pos.len() >= 3 {
        let xs: Vec<f64> = pos.iter().map(|r| r.lambda).collect();
        let ys: Vec<f64> = pos.iter().map(|r| r.lp_deficit).collect();
        power_law(&xs, &ys).ok()
    } else {
        None
    };
    Ok(CutoffScan { rows, lp_exponent })
}

pub fn cutoff_energy_deficit(theta: &RadialField, lambda: f64) -> Result<CutoffDeficit> {
    Ok(cutoff_deficit_scan(theta, &[lambda])?.rows[0])
}

/// Leading curvature correction `(n+2σ)/2 · H Γ₀ / λ` per unit `‖Θ‖²_{2n/(n-2σ)}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureTerm {
    pub value: f64,
    /// Propagated from the Γ₀ error budget.
    pub error: f64,
}

pub fn curvature_term(theta: &RadialField, lambda: f64, bg: &BoundaryGraph, gamma0: Option<&Gamma0Report>) -> Result<CurvatureTerm> {
    let g0 = gamma0.ok_or(Error::MissingGamma0)?;
    let n = theta.grid.n;
    let p = critical_exponent(n, theta.sigma);
    let mass = lp_norm(theta, p).powi(2);
    if !(mass > 0.0) {
        return Err(Error::ZeroField);
    }
    Ok(curvature_with_mass(n, theta.sigma, lambda, bg, g0, mass))
}

fn curvature_with_mass(n: usize, sigma: f64, lambda: f64, bg: &BoundaryGraph, g0: &Gamma0Report, mass: f64) -> CurvatureTerm {
    let c = (n as f64 + 2.0 * sigma) / 2.0 * bg.mean_curvature() / (lambda * mass);
    CurvatureTerm { value: c * g0.value, error: c.abs() * g0.error_budget() }
}

/// Monte Carlo settings for [`verify_upper_bound`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples_per_batch: usize,
    pub batches: usize,
    pub seed: u64,
    /// Probability of the near branch of the step law.
    pub near_fraction: f64,
    /// Largest relative standard error of the measured quotient that still gives a verdict.
    pub max_rel_stderr: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { samples_per_batch: 20_000, batches: 32, seed: 1, near_fraction: 0.6, max_rel_stderr: 0.02 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermBreakdown {
    /// Quadrature quotient of `ηΘ_λ` on the flat half-space.
    pub flat_energy: f64,
    /// Predicted `(n+2σ)HΓ₀/(2λ)`.
    pub curvature_term: f64,
    /// Sampled `-(n+2σ)/2 ∬ B |Δθ|² |ξ-ζ|^{-(n+2σ)}`, the first-order part of the pulled-back kernel.
    pub linear_term: f64,
    pub linear_stderr: f64,
    /// Sampled `∬ F |Δθ|² |ξ-ζ|^{-(n+2σ)}`.
    pub f_term: f64,
    pub f_stderr: f64,
    /// Cutoff and chart truncation: flat quotient on the chart minus the half-space quotient of `Θ`.
    pub cutoff_corrections: f64,
    /// `1 - ‖θ_λ‖²/‖Θ‖²` in `L^{2n/(n-2σ)}`.
    pub denominator_deficit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionVerdict {
    pub lambda: f64,
    /// Quotient of `v_λ` on the chart domain: flat quadrature plus sampled corrections.
    pub measured_quotient: f64,
    pub stderr: f64,
    /// The same quotient sampled directly, without the quadrature control variate.
    pub direct_quotient: f64,
    pub direct_stderr: f64,
    /// Half-space quotient of `Θ`.
    pub reference_quotient: f64,
    pub predicted_bound: f64,
    /// Three standard errors plus the propagated Γ₀ error.
    pub bound_error: f64,
    pub term_breakdown: TermBreakdown,
    pub pass: bool,
}

/// Proposal for the outer point: `x_n` from a boundary-graded mixture and
/// `x'` radially from a beta-prime law, both on the length scale `s`.
struct OuterLaw {
    n: usize,
    s: f64,
    radial: Beta<f64>,
    radial_norm: f64,
}

const NORMAL_TAIL: f64 = 1.5;
const RADIAL_TAIL: f64 = 1.5;

impl OuterLaw {
    fn new(n: usize, s: f64) -> Self {
        let k = (n - 1) as f64;
        let radial = Beta::new(k, RADIAL_TAIL).expect("positive shape");
        Self { n, s, radial, radial_norm: 1.0 / (beta(k, RADIAL_TAIL) * sphere_area(n - 2)) }
    }

    /// Fills `x`, returns its density.
    fn sample(&self, rng: &mut ChaCha8Rng, x: &mut [f64]) -> f64 {
        let n = self.n;
        let s = self.s;
        let xn = if rng.gen::<bool>() {
            boundary_sample(rng, s)
        } else {
            s * ((1.0 - rng.gen::<f64>()).powf(-1.0 / NORMAL_TAIL) - 1.0)
        };
        let b: f64 = self.radial.sample(rng);
        let y = b / (1.0 - b);
        unit_vector(rng, n - 1, &mut x[..n - 1]);
        x[..n - 1].iter_mut().for_each(|c| *c *= s * y);
        x[n - 1] = xn;
        let qn = 0.5 * if xn <= s { boundary_density(xn, s) } else { 0.0 }
            + 0.5 * NORMAL_TAIL / s * (1.0 + xn / s).powf(-1.0 - NORMAL_TAIL);
        // density of y per unit volume of ℝ^{n-1}: y^{n-2}(1+y)^{-(n-1)-b}/B / (|S^{n-2}| y^{n-2})
        let k = (n - 1) as f64;
        let qp = self.radial_norm * (1.0 + y).powf(-k - RADIAL_TAIL) / s.powf(k);
        qn * qp
    }
}

/// Batch means of the sampled integrals at one `λ`.
#[derive(Clone, Copy, Default)]
struct PairSums {
    direct: f64,
    missing: f64,
    curved: f64,
    linear: f64,
    f: f64,
}

fn sample_pairs(w: &RadialField, graph: &BoundaryGraph, support: f64, mc: &McConfig, stream: u64) -> Vec<PairSums> {
    let n = w.grid.n;
    let sigma = w.sigma;
    let p = n as f64 + 2.0 * sigma;
    let k = p / 2.0;
    let a1 = taylor_constant(n, sigma);
    let box_r = w.grid.r_max;
    let chart = graph.chart_radius();
    let scale = axis_peak(w).max(1e-3 * box_r);
    let outer = OuterLaw::new(n, scale);
    let beta = (1.0 - 2.0 * sigma).min(4.0 * sigma - 4.0 + GRADE - 0.1).max(-0.9);
    let law = StepLaw { rho0: scale, near: mc.near_fraction, sigma, beta };
    let area = sphere_area(n - 1);
    let m = mc.samples_per_batch;
    let radial = |x: &[f64]| x[..n - 1].iter().map(|c| c * c).sum::<f64>().sqrt();
    let in_support = |x: &[f64]| {
        let r = radial(x);
        r <= box_r && x[n - 1] <= box_r && r.hypot(x[n - 1]) <= support
    };
    par::map_collect(mc.batches, |batch| {
        let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
        rng.set_stream(stream.wrapping_mul(1 << 20) + batch as u64);
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut dir = vec![0.0; n];
        let mut acc = PairSums::default();
        for kk in 0..m {
            let qx = outer.sample(&mut rng, &mut x);
            let rho = law.sample(stratified(&mut rng, kk, m));
            unit_vector(&mut rng, n, &mut dir);
            for d in 0..n {
                y[d] = x[d] + rho * dir[d];
            }
            if y[n - 1] <= 0.0 || !in_support(&x) {
                continue;
            }
            let wx = eval_u(w, radial(&x), x[n - 1]);
            let y_in = in_support(&y);
            let wy = if y_in { eval_u(w, radial(&y), y[n - 1]) } else { 0.0 };
            let diff = wx - wy;
            if diff == 0.0 {
                continue;
            }
            let q = qx * law.density(rho) / (area * rho.powi(n as i32 - 1));
            let g = diff * diff * rho.powf(-p) * if y_in { 1.0 } else { 2.0 } / q;
            if radial(&y) >= chart {
                acc.missing += g;
                continue;
            }
            acc.direct += g;
            let c = corrections_unchecked(graph, k, a1, &x, &y);
            acc.curved += g * (c.ratio - 1.0);
            acc.linear -= g * k * c.b;
            acc.f += g * c.f;
        }
        let inv = 1.0 / m as f64;
        PairSums {
            direct: acc.direct * inv,
            missing: acc.missing * inv,
            curved: acc.curved * inv,
            linear: acc.linear * inv,
            f: acc.f * inv,
        }
    })
}

fn estimate(batches: &[PairSums], per_batch: usize, f: impl Fn(&PairSums) -> f64) -> McEstimate {
    let v: Vec<f64> = batches.iter().map(f).collect();
    McEstimate::from_batches(&v, per_batch)
}

/// Upper-bound verdicts for `v_λ` on the domain above `bg` within `|x'| < R0`.
///
/// The flat quotient of `ηΘ_λ` comes from the quadrature; the pair sampler
/// supplies what the chart adds to it (the pulled-back kernel minus the flat
/// one) and removes (pairs reaching past `|x'| = R0`). The direct sampled
/// quotient is reported alongside as a check on both.
pub fn verify_upper_bound(
    theta: &RadialField,
    gamma0: Option<&Gamma0Report>,
    bg: &BoundaryGraph,
    schedule: &[f64],
    mc: &McConfig,
) -> Result<Vec<ExpansionVerdict>> {
    let g0 = gamma0.ok_or(Error::MissingGamma0)?;
    bg.validate()?;
    let n = theta.grid.n;
    if bg.dim() != n {
        return Err(Error::InvalidParams(format!("graph in dimension {} for a field in dimension {n}", bg.dim())));
    }
    if !(bg.chart_radius() > 3.0) {
        return Err(Error::InvalidParams("the chart radius must exceed the cutoff radius 3".into()));
    }
    if mc.samples_per_batch == 0 || mc.batches < 2 || !(mc.near_fraction > 0.0 && mc.near_fraction < 1.0) {
        return Err(Error::InvalidParams("sampler needs samples, at least two batches and a near fraction in (0, 1)".into()));
    }
    if schedule.is_empty() || schedule.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::InvalidParams("λ schedule must be positive".into()));
    }
    let sigma = theta.sigma;
    let p = critical_exponent(n, sigma);
    let theta = match theta.tail {
        TailModel::Truncated => theta.clone().with_tail(TailModel::Zero),
        _ => theta.clone(),
    };
    let ctx = EnergyContext::new(&theta.grid, KernelParams::energy(n, sigma)?)?;
    let e_theta = seminorm(&theta, &ctx)?.total;
    let l_theta = lp_norm(&theta, p).powi(2);
    if !(l_theta > 0.0) {
        return Err(Error::ZeroField);
    }
    let s_hat = e_theta / l_theta;
    let m = mc.samples_per_batch;
    let mut out = Vec::with_capacity(schedule.len());
    for (idx, &lambda) in schedule.iter().enumerate() {
        let w = cut_field(&theta, lambda)?;
        let e_w = if w.regular_values == theta.regular_values { e_theta } else { seminorm(&w, &ctx)?.total };
        let l_w = lp_norm(&w, p).powi(2);
        let graph = bg.dilate(lambda);
        let sums = sample_pairs(&w, &graph, 3.0 * lambda, mc, idx as u64);
        let measured = estimate(&sums, m, |s| (e_w - s.missing + s.curved) / l_w);
        let direct = estimate(&sums, m, |s| s.direct / l_w);
        let linear = estimate(&sums, m, |s| s.linear / l_w);
        let f_term = estimate(&sums, m, |s| s.f / l_w);
        let missing = estimate(&sums, m, |s| s.missing / l_w);
        let rel = measured.stderr / measured.value.abs();
        if !(rel <= mc.max_rel_stderr) {
            return Err(Error::MonteCarloVarianceTooHigh(rel));
        }
        let curv = curvature_with_mass(n, sigma, lambda, bg, g0, l_theta);
        let predicted = s_hat - curv.value;
        let bound_error = 3.0 * measured.stderr + curv.error;
        out.push(ExpansionVerdict {
            lambda,
            measured_quotient: measured.value,
            stderr: measured.stderr,
            direct_quotient: direct.value,
            direct_stderr: direct.stderr,
            reference_quotient: s_hat,
            predicted_bound: predicted,
            bound_error,
            term_breakdown: TermBreakdown {
                flat_energy: e_w / l_w,
                curvature_term: curv.value,
                linear_term: linear.value,
                linear_stderr: linear.stderr,
                f_term: f_term.value,
                f_stderr: f_term.stderr,
                cutoff_corrections: e_w / l_w - s_hat - missing.value,
                denominator_deficit: 1.0 - l_w / l_theta,
            },
            pass: measured.value <= predicted + bound_error,
        });
    }
    Ok(out)
}

/// Fits `measured - reference ≈ a/λ + b/λ^{2σ}` over a scan.
pub fn residual_fit(verdicts: &[ExpansionVerdict], sigma: f64) -> Result<LinearFit> {
    let inv: Vec<f64> = verdicts.iter().map(|v| 1.0 / v.lambda).collect();
    let frac: Vec<f64> = verdicts.iter().map(|v| v.lambda.powf(-2.0 * sigma)).collect();
    let y: Vec<f64> = verdicts.iter().map(|v| v.measured_quotient - v.reference_quotient).collect();
    linear_fit(&[inv, frac], &y)
}

/// λ-scan table with a header row.
pub fn verdicts_csv(verdicts: &[ExpansionVerdict]) -> String {
    let mut s = String::from("lambda,measured_quotient,stderr,predicted_bound,curvature_term,F_term,pass\n");
    for v in verdicts {
        s.push_str(&format!(
            "{},{:.10e},{:.3e},{:.10e},{:.6e},{:.6e},{}\n",
            v.lambda, v.measured_quotient, v.stderr, v.predicted_bound, v.term_breakdown.curvature_term, v.term_breakdown.f_term, v.pass
        ));
    }
    s
}

#[cfg(test)]
mod tests;
