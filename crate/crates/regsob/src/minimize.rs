//! Half-space extremizer of the regional Sobolev quotient.
//!
//! The discrete problem minimizes `Q(ṽ) = ṽᵀAṽ / ‖u‖²_p` over nonnegative
//! nodal values with `u = z^{2σ-1} ṽ` vanishing outside the box; nodes on
//! `r = R` and `z = R` are held at zero. Each step is a projected gradient
//! step preconditioned by `A` itself,
//!
//! `ṽ ← Π₊[ṽ - τ(ṽ - Q A⁻¹G(ṽ))]`, `G_k = ∫ |u|^{p-2} u φ_k`,
//!
//! followed by renormalization in `L^p`. At `τ = 1` this is the normalized
//! fixed-point map `ṽ ↦ Q A⁻¹G`. The step is accepted under an Armijo test
//! on `Q`; every few iterations the slice rearrangement is tried and kept when
//! it does not raise `Q`, and so are trial dilations of the iterate: the box
//! and the grid break the dilation symmetry only weakly, and plain descent
//! moves along that direction very slowly. Levels of the grid schedule are
//! chained by resampling. The final iterate is dilated exactly (by rescaling
//! its grid) so that the maximum of `u` on the axis sits at a fixed height.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{el_residual, EnergyContext, EnergyOperator, LpRule, QuadOptions, WeightSpec};
use crate::field::{make_grid, resample, save_field, Grading, HalfSpaceGrid, RadialField, TailModel, CRC64};
use crate::fit::{grouped_slope, SlopeFit};
use crate::kernel::KernelParams;
use crate::linalg::Cholesky;
use crate::rearrange::rearrange_sharp;
use crate::{critical_exponent, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Initialization {
    /// `ṽ = (1 + ρ²/ℓ²)^{-(n+2σ-2)/2}`.
    Envelope,
    /// `ṽ = exp(-ρ²/ℓ²)`: right boundary behaviour, wrong decay.
    Gaussian,
    /// Envelope times `exp(a Σ c_k cos(kπρ/R + φ_k))` with seeded coefficients.
    Perturbed { amplitude: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub n: usize,
    pub sigma: f64,
    pub r_max: f64,
    /// Intervals per axis, coarse to fine.
    pub schedule: Vec<usize>,
    pub grading: Grading,
    /// Initial step `τ` of every line search.
    pub step: f64,
    pub backtrack: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    pub rearrangement_period: usize,
    /// Iterations between trial dilations of the iterate.
    pub dilation_period: usize,
    /// Relative quotient change below which a level counts as stagnant.
    pub stagnation_tol: f64,
    pub el_tol: f64,
    /// Iterations per level.
    pub max_iterations: usize,
    /// Height of the axis maximum of `u` after pinning.
    pub pin_height: f64,
    pub init: Initialization,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n: 4,
            sigma: 0.75,
            r_max: 16.0,
            schedule: vec![16, 32, 64],
            grading: Grading::default(),
            step: 1.0,
            backtrack: 0.5,
            armijo: 1e-4,
            max_backtracks: 30,
            rearrangement_period: 10,
            dilation_period: 10,
            stagnation_tol: 1e-9,
            el_tol: 2e-3,
            max_iterations: 400,
            pin_height: 0.5,
            init: Initialization::Envelope,
            seed: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.n < 2 || !(self.sigma > 0.0 && self.sigma < 1.0) {
            return bad(format!("n = {}, σ = {}", self.n, self.sigma));
        }
        if (self.n as f64) < 4.0 * self.sigma || self.sigma == 0.5 {
            return bad(format!("no half-space minimizer is known for n = {}, σ = {}", self.n, self.sigma));
        }
        if self.schedule.is_empty() || self.schedule.windows(2).any(|w| w[1] <= w[0]) || self.schedule[0] < 4 {
            return bad(format!("schedule {:?} must increase from at least 4", self.schedule));
        }
        if !(self.step > 0.0) || !(self.backtrack > 0.0 && self.backtrack < 1.0) || !(self.armijo > 0.0 && self.armijo < 1.0) {
            return bad("step must be positive, backtrack and armijo in (0, 1)".into());
        }
        if !(self.stagnation_tol > 0.0) || !(self.el_tol > 0.0) || self.max_iterations == 0 {
            return bad("tolerances and the iteration budget must be positive".into());
        }
        if !(self.pin_height > 0.0 && self.pin_height < self.r_max / 4.0) {
            return bad(format!("pin height {} must lie in (0, R/4)", self.pin_height));
        }
        if self.rearrangement_period == 0 || self.dilation_period == 0 {
            return bad("rearrangement and dilation periods must be positive".into());
        }
        Ok(())
    }

    /// CRC-64 of the canonical JSON form.
    pub fn hash(&self) -> u64 {
        CRC64.checksum(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    fn decay(&self) -> f64 {
        self.n as f64 + 2.0 * self.sigma - 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    Start,
    Gradient,
    Rearrangement,
    Dilation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub level: usize,
    pub iteration: usize,
    pub quotient: f64,
    pub step: f64,
    pub kind: StepKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub intervals: usize,
    pub iterations: usize,
    pub s_estimate: f64,
    pub el_residual: f64,
    /// Height of the axis maximum of `u` before the final pin.
    pub axis_peak: f64,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    Converged,
    /// Iteration budget spent before the tolerances were met.
    Stagnated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    /// Length `ℓ` of the envelope with the same axis maximum.
    pub scale: f64,
    pub axis_peak: f64,
    /// Exponent `a` in `u ~ z^a` near the boundary.
    pub boundary: SlopeFit,
    /// Exponent `d` in `ṽ ~ ρ^{-d}` far out.
    pub far_field: SlopeFit,
    pub ratio_min: f64,
    pub ratio_max: f64,
}

#[derive(Clone, Debug)]
pub struct MinimizerResult {
    /// Normalized minimizer, `‖u‖_p = 1`.
    pub theta: RadialField,
    pub s_estimate: f64,
    pub el_residual: f64,
    /// Factor `S^{(n-2σ)/(4σ)}` turning `theta` into a solution of the equation with unit coefficient.
    pub el_scale: f64,
    pub envelope: EnvelopeReport,
    pub trace: Vec<TracePoint>,
    pub levels: Vec<LevelSummary>,
    pub status: SolverStatus,
    pub config: SolverConfig,
    pub config_hash: u64,
}

impl MinimizerResult {
    pub fn el_solution(&self) -> RadialField {
        self.theta.scale(self.el_scale)
    }

    /// Turns a stagnated run into [`Error::StagnationWithoutConvergence`].
    pub fn require_converged(self) -> Result<Self> {
        match self.status {
            SolverStatus::Converged => Ok(self),
            SolverStatus::Stagnated => {
                let last = self.trace.iter().rev().filter(|t| t.kind == StepKind::Gradient).take(2).collect::<Vec<_>>();
                let change = if last.len() == 2 { (last[1].quotient - last[0].quotient).abs() / last[0].quotient } else { f64::NAN };
                Err(Error::StagnationWithoutConvergence { iterations: self.levels.last().map_or(0, |l| l.iterations), last_change: change })
            }
        }
    }
}

/// JSON sidecar written next to the field file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultSidecar {
    pub s_estimate: f64,
    pub el_residual: f64,
    pub el_scale: f64,
    pub status: SolverStatus,
    pub envelope: EnvelopeReport,
    pub levels: Vec<LevelSummary>,
    pub trace: Vec<TracePoint>,
    pub config: SolverConfig,
    pub config_hash: u64,
}

/// Writes `<stem>.field` and `<stem>.json` into `dir`; returns both paths.
pub fn save_result(result: &MinimizerResult, dir: impl AsRef<Path>, stem: &str) -> Result<[PathBuf; 2]> {
    let field = dir.as_ref().join(format!("{stem}.field"));
    let json = dir.as_ref().join(format!("{stem}.json"));
    save_field(&result.theta, &field)?;
    let side = ResultSidecar {
        s_estimate: result.s_estimate,
        el_residual: result.el_residual,
        el_scale: result.el_scale,
        status: result.status,
        envelope: result.envelope.clone(),
        levels: result.levels.clone(),
        trace: result.trace.clone(),
        config: result.config.clone(),
        config_hash: result.config_hash,
    };
    std::fs::write(&json, serde_json::to_string_pretty(&side)?)?;
    Ok([field, json])
}

pub fn load_sidecar(path: impl AsRef<Path>) -> Result<ResultSidecar> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// `Θ_λ(x) = λ^{(n-2σ)/2} Θ(λx)`, sampled on `grid`.
pub fn scale_onto(theta: &RadialField, lambda: f64, grid: &HalfSpaceGrid) -> Result<RadialField> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParams(format!("dilation λ = {lambda} must be positive")));
    }
    if grid.n != theta.grid.n {
        return Err(Error::GridMismatch(format!("dimension {} vs {}", grid.n, theta.grid.n)));
    }
    let n = grid.n as f64;
    let e = theta.boundary_exponent();
    // u_λ = z^e λ^{(n-2σ)/2 + e} ṽ(λr, λz)
    let c = lambda.powf((n - 2.0 * theta.sigma) / 2.0 + e);
    let mut out = RadialField::from_regular_fn(grid.clone(), theta.sigma, |r, z| c * theta.eval_regular(lambda * r, lambda * z))?;
    out.tail = match &theta.tail {
        TailModel::PowerLaw { decay, angles, amplitudes } => TailModel::PowerLaw {
            decay: *decay,
            angles: angles.clone(),
            amplitudes: amplitudes.iter().map(|a| a * c * lambda.powf(-decay)).collect(),
        },
        t => t.clone(),
    };
    out.interp_error = theta.interp_error;
    if theta.nonnegative {
        out.regular_values.iter_mut().for_each(|v| *v = v.max(0.0));
        out.nonnegative = true;
    }
    Ok(out)
}

/// Dilation on the field's own grid.
pub fn scale_field(theta: &RadialField, lambda: f64) -> Result<RadialField> {
    if lambda == 1.0 {
        return Ok(theta.clone());
    }
    scale_onto(theta, lambda, &theta.grid)
}

/// Height of the maximum of `u(0, z)` for the interpolated field.
pub fn axis_peak(field: &RadialField) -> f64 {
    let g = &field.grid;
    let e = field.boundary_exponent();
    let u = |z: f64| if z <= 0.0 { 0.0 } else { z.powf(e) * field.eval_regular(0.0, z) };
    let mut best = 1;
    for j in 1..g.nz() {
        if u(g.z_nodes[j]) > u(g.z_nodes[best]) {
            best = j;
        }
    }
    let (mut a, mut b) = (g.z_nodes[best - 1], g.z_nodes[(best + 1).min(g.nz() - 1)]);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - ratio * (b - a);
        let d = a + ratio * (b - a);
        if u(c) >= u(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Envelope length `ℓ` whose profile `z^e (1+ρ²/ℓ²)^{-d/2}` peaks on the axis at `peak`.
fn envelope_scale(peak: f64, e: f64, d: f64) -> f64 {
    if e > 0.0 && d > e {
        peak * ((d - e) / e).sqrt()
    } else {
        peak
    }
}

fn initial_field(cfg: &SolverConfig, grid: &HalfSpaceGrid) -> Result<RadialField> {
    let e = 2.0 * cfg.sigma - 1.0;
    let d = cfg.decay();
    let l = envelope_scale(cfg.pin_height, e, d);
    let env = move |r: f64, z: f64| (1.0 + (r * r + z * z) / (l * l)).powf(-d / 2.0);
    let f = match cfg.init {
        Initialization::Envelope => RadialField::from_regular_fn(grid.clone(), cfg.sigma, env)?,
        Initialization::Gaussian => {
            RadialField::from_regular_fn(grid.clone(), cfg.sigma, |r, z| (-(r * r + z * z) / (l * l)).exp())?
        }
        Initialization::Perturbed { amplitude } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let modes: Vec<(f64, f64)> =
                (0..4).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..std::f64::consts::TAU))).collect();
            let rm = cfg.r_max;
            RadialField::from_regular_fn(grid.clone(), cfg.sigma, |r, z| {
                let rho = r.hypot(z);
                let s: f64 = modes
                    .iter()
                    .enumerate()
                    .map(|(k, (c, ph))| c * ((k + 1) as f64 * std::f64::consts::PI * rho / rm + ph).cos())
                    .sum();
                env(r, z) * (amplitude * s).exp()
            })?
        }
    };
    Ok(f.with_tail(TailModel::Zero))
}

/// One level of the schedule: operator, factorization and the constraint set.
struct Level {
    op: EnergyOperator,
    rule: LpRule,
    chol: Cholesky,
    free: Vec<usize>,
    p: f64,
}

impl Level {
    fn new(grid: &HalfSpaceGrid, cfg: &SolverConfig) -> Result<Self> {
        let ctx = EnergyContext::new(grid, KernelParams::energy(cfg.n, cfg.sigma)?)?;
        let op = EnergyOperator::assemble(&ctx, WeightSpec::Unit, &TailModel::Zero)?;
        let (nr, nz) = (grid.nr(), grid.nz());
        let free: Vec<usize> =
            (0..nr - 1).flat_map(|i| (0..nz - 1).map(move |j| (i, j))).map(|(i, j)| grid.idx(i, j)).collect();
        let m = free.len();
        let mut sub = vec![0.0; m * m];
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate().take(a + 1) {
                sub[a * m + b] = op.entry(i, j);
            }
        }
        let chol = Cholesky::new(sub, m)?;
        let rule = LpRule::new(grid, 2.0 * cfg.sigma - 1.0, QuadOptions::default().lp_order);
        Ok(Self { op, rule, chol, free, p: critical_exponent(cfg.n, cfg.sigma) })
    }

    /// Zeroes the held nodes and negative values, then normalizes; `None` for a zero field.
    fn project(&self, v: &[f64]) -> Option<Vec<f64>> {
        let mut w = vec![0.0; v.len()];
        for &k in &self.free {
            w[k] = v[k].max(0.0);
        }
        let mass = self.rule.integral_abs_pow(&w, self.p);
        if !(mass > 0.0 && mass.is_finite()) {
            return None;
        }
        let c = mass.powf(-1.0 / self.p);
        w.iter_mut().for_each(|x| *x *= c);
        Some(w)
    }

    /// Quotient and `A v` of a normalized vector.
    fn quotient(&self, v: &[f64]) -> (f64, Vec<f64>) {
        let av = self.op.apply(v);
        (av.iter().zip(v).map(|(a, b)| a * b).sum(), av)
    }
}

enum LevelEnd {
    Converged,
    Budget,
}

struct Descent<'a> {
    cfg: &'a SolverConfig,
    level: &'a Level,
    index: usize,
    trace: &'a mut Vec<TracePoint>,
}

impl Descent<'_> {
    fn run(&mut self, field: &RadialField) -> Result<(Vec<f64>, usize, LevelEnd)> {
        let lv = self.level;
        let cfg = self.cfg;
        let mut v = lv.project(&field.regular_values).ok_or(Error::ZeroField)?;
        let (mut q, mut av) = lv.quotient(&v);
        self.push(0, q, 0.0, StepKind::Start);
        let mut quiet = 0;
        for it in 1..=cfg.max_iterations {
            let g = lv.rule.gradient(&v, lv.p);
            let rhs: Vec<f64> = lv.free.iter().map(|&k| g[k]).collect();
            let y = lv.chol.solve(&rhs);
            let mut dir = vec![0.0; v.len()];
            for (a, &k) in lv.free.iter().enumerate() {
                dir[k] = v[k] - q * y[a];
            }
            let grad: Vec<f64> = (0..v.len()).map(|k| 2.0 * (av[k] - q * g[k])).collect();
            let mut tau = cfg.step;
            let mut accepted = None;
            for _ in 0..=cfg.max_backtracks {
                let raw: Vec<f64> = (0..v.len()).map(|k| (v[k] - tau * dir[k]).max(0.0)).collect();
                if let Some(w) = lv.project(&raw) {
                    let decrease: f64 = lv.free.iter().map(|&k| grad[k] * (v[k] - raw[k])).sum();
                    let (qw, aw) = lv.quotient(&w);
                    if qw <= q - cfg.armijo * decrease.max(0.0) && qw.is_finite() {
                        accepted = Some((w, qw, aw));
                        break;
                    }
                }
                tau *= cfg.backtrack;
            }
            let Some((w, qw, aw)) = accepted else {
                // no descent left: either stationary or a genuine failure
                let res = el_residual(&field.with_values(v.clone()), &lv.op)?;
                if res <= cfg.el_tol {
                    return Ok((v, it, LevelEnd::Converged));
                }
                return Err(Error::DivergentStep(it));
            };
            let change = (q - qw) / q;
            v = w;
            q = qw;
            av = aw;
            self.push(it, q, tau, StepKind::Gradient);

            if it % cfg.rearrangement_period == 0 {
                let r = rearrange_sharp(&field.with_values(v.clone()));
                if let Some(w) = lv.project(&r.regular_values) {
                    let (qr, ar) = lv.quotient(&w);
                    if qr <= q {
                        v = w;
                        q = qr;
                        av = ar;
                        self.push(it, q, 0.0, StepKind::Rearrangement);
                    }
                }
            }

            if it % cfg.dilation_period == cfg.dilation_period / 2 {
                let current = field.with_values(v.clone());
                for lambda in [1.25, 0.8, 1.1, 1.0 / 1.1] {
                    let w = scale_onto(&current, lambda, &current.grid)?;
                    if let Some(w) = lv.project(&w.regular_values) {
                        let (qd, ad) = lv.quotient(&w);
                        if qd < q {
                            v = w;
                            q = qd;
                            av = ad;
                            self.push(it, q, lambda, StepKind::Dilation);
                            break;
                        }
                    }
                }
            }

            quiet = if change < cfg.stagnation_tol { quiet + 1 } else { 0 };
            if quiet >= 3 || it % 25 == 0 {
                let res = el_residual(&field.with_values(v.clone()), &lv.op)?;
                if quiet >= 3 && res <= cfg.el_tol {
                    return Ok((v, it, LevelEnd::Converged));
                }
                if quiet >= 3 && change == 0.0 {
                    break;
                }
            }
        }
        Ok((v, cfg.max_iterations, LevelEnd::Budget))
    }

    fn push(&mut self, iteration: usize, quotient: f64, step: f64, kind: StepKind) {
        self.trace.push(TracePoint { level: self.index, iteration, quotient, step, kind });
    }
}

/// Exact dilation `Θ_λ`: the grid shrinks by `λ` and the nodal values pick up
/// `λ^{(n-2σ)/2+2σ-1}`, so every quadrature of the field is reproduced.
pub fn dilate_grid(theta: &RadialField, lambda: f64) -> Result<RadialField> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParams(format!("dilation λ = {lambda} must be positive")));
    }
    let g = &theta.grid;
    let (nr, nz) = g.intervals();
    let grid = make_grid(g.n, g.r_max / lambda, nr, nz, g.grading)?;
    let c = lambda.powf((g.n as f64 - 2.0 * theta.sigma) / 2.0 + theta.boundary_exponent());
    let mut out = theta.scale(c);
    out.grid = grid;
    if let TailModel::PowerLaw { decay, amplitudes, .. } = &mut out.tail {
        amplitudes.iter_mut().for_each(|a| *a *= lambda.powf(-*decay));
    }
    Ok(out)
}

/// Minimizes the half-space quotient across `config.schedule`.
///
/// The returned `theta` is the finest iterate dilated exactly so that the
/// axis maximum of `u` sits at `config.pin_height`; its grid is the schedule
/// grid shrunk by the same factor.
pub fn solve_halfspace(config: &SolverConfig) -> Result<MinimizerResult> {
    config.validate()?;
    let grid_for = |m: usize| make_grid(config.n, config.r_max, m, m, config.grading);
    let mut field = initial_field(config, &grid_for(config.schedule[0])?)?;
    let mut trace = Vec::new();
    let mut levels = Vec::new();
    let mut last = None;
    for (index, &m) in config.schedule.iter().enumerate() {
        if index > 0 {
            field = resample(&field, &grid_for(m)?)?;
        }
        let level = Level::new(&field.grid, config)?;
        let (v, iterations, end) = Descent { cfg: config, level: &level, index, trace: &mut trace }.run(&field)?;
        // last gradient steps can leave slight disorder in r; sorted slices are left untouched
        let sorted = rearrange_sharp(&field.with_values(v.clone()));
        field = field.with_values(level.project(&sorted.regular_values).unwrap_or(v));
        let (q, _) = level.quotient(&field.regular_values);
        let res = el_residual(&field, &level.op)?;
        levels.push(LevelSummary {
            intervals: m,
            iterations,
            s_estimate: q,
            el_residual: res,
            axis_peak: axis_peak(&field),
            converged: matches!(end, LevelEnd::Converged),
        });
        last = Some((q, res, end));
    }
    let (s, res, end) = last.expect("schedule is not empty");
    let theta = dilate_grid(&field, axis_peak(&field) / config.pin_height)?;
    let envelope = envelope_check(&theta)?;
    let el_scale = s.powf((config.n as f64 - 2.0 * config.sigma) / (4.0 * config.sigma));
    Ok(MinimizerResult {
        theta,
        s_estimate: s,
        el_residual: res,
        el_scale,
        envelope,
        trace,
        levels,
        status: match end {
            LevelEnd::Converged => SolverStatus::Converged,
            LevelEnd::Budget => SolverStatus::Stagnated,
        },
        config: config.clone(),
        config_hash: config.hash(),
    })
}

/// Fits the boundary and far-field exponents of `theta` and scans its ratio
/// to the envelope with the same axis maximum.
///
/// The far-field exponent is the slope of `log ṽ` against `log √(ℓ²+ρ²)` along
/// three rays with separate intercepts, over `3ℓ ≤ ρ ≤ R/2`; the boundary
/// exponent is the slope of `log u` against `log z` over the first nodes
/// (`z ≤ ℓ/20`, at least three) at `r ∈ {0, ℓ/2, ℓ}`.
pub fn envelope_check(theta: &RadialField) -> Result<EnvelopeReport> {
    let g = &theta.grid;
    let e = theta.boundary_exponent();
    let d = g.n as f64 + 2.0 * theta.sigma - 2.0;
    let peak = axis_peak(theta);
    let l = envelope_scale(peak, e, d);

    let hi = g.r_max / 2.0;
    let lo = if 3.0 * l < hi / 2.0 { 3.0 * l } else { hi / 4.0 };
    let rays: Vec<Vec<(f64, f64)>> = [15.0f64, 45.0, 75.0]
        .iter()
        .map(|deg| {
            let (s, c) = deg.to_radians().sin_cos();
            (0..16)
                .filter_map(|k| {
                    let rho = lo * (hi / lo).powf(k as f64 / 15.0);
                    let v = theta.eval_regular(rho * c, rho * s);
                    (v > 0.0).then(|| ((l * l + rho * rho).sqrt().ln(), v.ln()))
                })
                .collect()
        })
        .collect();
    let far = grouped_slope(&rays)?;
    let far_field = SlopeFit { slope: -far.slope, ci_low: -far.ci_high, ci_high: -far.ci_low, points: far.points };

    let zs: Vec<f64> = {
        let pos = &g.z_nodes[1..];
        let k = pos.iter().filter(|&&z| z <= l / 20.0).count().max(3).min(pos.len());
        pos[..k].to_vec()
    };
    let slices: Vec<Vec<(f64, f64)>> = [0.0, 0.5 * l, l]
        .iter()
        .map(|&r| {
            zs.iter()
                .filter_map(|&z| {
                    let u = z.powf(e) * theta.eval_regular(r, z);
                    (u > 0.0).then(|| (z.ln(), u.ln()))
                })
                .collect()
        })
        .collect();
    let boundary = grouped_slope(&slices)?;

    let mut ratio_min = f64::INFINITY;
    let mut ratio_max = 0.0f64;
    for (i, &r) in g.r_nodes.iter().enumerate() {
        for (j, &z) in g.z_nodes.iter().enumerate() {
            if r.hypot(z) > hi {
                continue;
            }
            let env = (1.0 + (r * r + z * z) / (l * l)).powf(-d / 2.0);
            let ratio = theta.regular_values[g.idx(i, j)] / env;
            ratio_min = ratio_min.min(ratio);
            ratio_max = ratio_max.max(ratio);
        }
    }
    Ok(EnvelopeReport { scale: l, axis_peak: peak, boundary, far_field, ratio_min, ratio_max })
}

#[cfg(test)]
mod tests;
