//! Regional fractional Sobolev energies of radial half-space fields.
//!
//! All pair integrals are discretized the same way: the field is the bilinear
//! interpolant of `ṽ` times `z^{2σ-1}`, and a cell pair is integrated by one of
//! three rules depending on its separation relative to the cell sizes:
//!
//! * far pairs: a two-point tensor Gauss rule, contracted axis by axis;
//! * medium pairs: a four-point tensor Gauss rule;
//! * near pairs (touching or almost): relative coordinates `δ = y - x` with Duffy
//!   triangles at the singular corner.
//!
//! Everything outside `[0, R_max]²` is governed by the field's [`TailModel`].

pub(crate) mod oracle;
mod pv;
pub(crate) mod rules;
mod sweep;

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::field::{HalfSpaceGrid, RadialField, TailModel};
use crate::kernel::{FastKernel, KernelKind, KernelParams};
use crate::par::Reduction;
use crate::{critical_exponent, sphere_area, Error, Result};

pub use oracle::{brute_force_full_space, brute_force_profile, brute_force_seminorm, McEstimate, SamplerConfig};
pub use pv::{regional_laplacian, PvEstimate};
pub use sweep::EnergyOperator;

use rules::{AxisPoints, NearRule};

/// Pair weight multiplying the integrand.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum WeightSpec {
    Unit,
    /// `(|ξ'|² + |ζ'|²)^{γ/2}`.
    Power(f64),
    /// `(ξ_n - ζ_n)(|ξ'|² - |ζ'|²)`, paired with the kernel exponent `n+2σ+2`.
    Gamma0,
}

impl WeightSpec {
    #[inline]
    pub fn eval(&self, r: f64, z: f64, s: f64, w: f64) -> f64 {
        match *self {
            WeightSpec::Unit => 1.0,
            WeightSpec::Power(g) => {
                if g == 0.0 {
                    1.0
                } else {
                    (r * r + s * s).powf(0.5 * g)
                }
            }
            WeightSpec::Gamma0 => (z - w) * (r * r - s * s),
        }
    }

    fn kernel_kind(&self) -> KernelKind {
        match self {
            WeightSpec::Gamma0 => KernelKind::Gamma0,
            _ => KernelKind::Energy,
        }
    }
}

/// Quadrature settings shared by every energy evaluation on a context.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadOptions {
    pub far_order: usize,
    pub medium_order: usize,
    pub near_delta_order: usize,
    pub near_inner_order: usize,
    /// Grading power of the rules in cells touching `z = 0` (and `r = 0` for near pairs).
    pub boundary_grading: f64,
    /// Pairs with `dist ≥ far_ratio · diam` use the far rule.
    pub far_ratio: f64,
    /// Pairs with `dist ≥ near_ratio · diam` (and not far) use the medium rule.
    pub near_ratio: f64,
    pub lp_order: usize,
    pub reduction: Reduction,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            far_order: 2,
            medium_order: 4,
            near_delta_order: 6,
            near_inner_order: 3,
            boundary_grading: 2.0,
            far_ratio: 2.0,
            near_ratio: 1.0,
            lp_order: 4,
            reduction: Reduction::Deterministic,
        }
    }
}

/// Energy split by quadrature rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub total: f64,
    /// Far and medium cell pairs (regular tensor rules).
    pub far_part: f64,
    /// Near cell pairs (singular rule).
    pub near_part: f64,
    /// Interaction with the region beyond `R_max`.
    pub tail_estimate: f64,
    pub quad_error_estimate: f64,
}

impl EnergyBreakdown {
    fn new(far: f64, near: f64, tail: f64, interp_error: f64) -> Self {
        let total = far + near + tail;
        let quad = QUAD_REL_ERROR * (far.abs() + near.abs()) + TAIL_REL_ERROR * tail.abs() + interp_error * total.abs();
        Self { total, far_part: far, near_part: near, tail_estimate: tail, quad_error_estimate: quad }
    }
}

/// Relative quadrature error budget of the default rules, from refinement studies.
const QUAD_REL_ERROR: f64 = 2e-3;
const TAIL_REL_ERROR: f64 = 2e-2;

/// Pair energies binned by `max(|ξ|, |ζ|)` against increasing radii.
///
/// Bin `k` collects pairs with `radii[k-1] < max ≤ radii[k]`; the last bin is
/// everything beyond the largest radius, including the tail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedEnergy {
    pub radii: Vec<f64>,
    pub far: Vec<f64>,
    pub near: Vec<f64>,
    pub tail: Vec<f64>,
}

impl BinnedEnergy {
    fn bin(&self, k: usize) -> f64 {
        self.far[k] + self.near[k] + self.tail[k]
    }

    pub fn total(&self) -> f64 {
        (0..self.far.len()).map(|k| self.bin(k)).sum()
    }

    /// Pairs with both points in `B_{radii[k]}`.
    pub fn interior(&self, k: usize) -> f64 {
        (0..=k).map(|b| self.bin(b)).sum()
    }

    /// Pairs with at least one point outside `B_{radii[k]}`.
    pub fn exterior(&self, k: usize) -> f64 {
        (k + 1..self.far.len()).map(|b| self.bin(b)).sum()
    }

    pub fn breakdown(&self) -> EnergyBreakdown {
        EnergyBreakdown::new(self.far.iter().sum(), self.near.iter().sum(), self.tail.iter().sum(), 0.0)
    }
}

/// Grid, kernel and quadrature rules for energy evaluations.
#[derive(Debug)]
pub struct EnergyContext {
    pub grid: HalfSpaceGrid,
    pub params: KernelParams,
    pub opts: QuadOptions,
    pub(crate) kernel: FastKernel,
    pub(crate) area: f64,
    pub(crate) exponent: f64,
    pub(crate) far_r: AxisPoints,
    pub(crate) far_z: AxisPoints,
    pub(crate) med_r: AxisPoints,
    pub(crate) med_z: AxisPoints,
    pub(crate) ext: Vec<(f64, f64, f64)>,
    pub(crate) kappa: OnceLock<Vec<f64>>,
}

impl Clone for EnergyContext {
    fn clone(&self) -> Self {
        Self::build(self.grid.clone(), self.params, self.opts, self.exponent)
    }
}

impl EnergyContext {
    pub fn new(grid: &HalfSpaceGrid, params: KernelParams) -> Result<Self> {
        params.validate()?;
        if grid.n != params.n {
            return Err(Error::GridMismatch(format!("grid n = {} but kernel n = {}", grid.n, params.n)));
        }
        Ok(Self::build(grid.clone(), params, QuadOptions::default(), 2.0 * params.sigma - 1.0))
    }

    fn build(grid: HalfSpaceGrid, params: KernelParams, opts: QuadOptions, exponent: f64) -> Self {
        let n = grid.n as i32;
        let q = opts.boundary_grading;
        let far_r = rules::axis_points(&grid.r_nodes, opts.far_order, n - 2, 1.0);
        let far_z = rules::axis_points(&grid.z_nodes, opts.far_order, 0, q);
        let med_r = rules::axis_points(&grid.r_nodes, opts.medium_order, n - 2, 1.0);
        let med_z = rules::axis_points(&grid.z_nodes, opts.medium_order, 0, q);
        let ext = rules::exterior_rule(&grid, q);
        Self {
            kernel: FastKernel::new(&params),
            area: sphere_area(grid.n - 2),
            grid,
            params,
            opts,
            exponent,
            far_r,
            far_z,
            med_r,
            med_z,
            ext,
            kappa: OnceLock::new(),
        }
    }

    pub fn with_options(self, opts: QuadOptions) -> Self {
        Self::build(self.grid, self.params, opts, self.exponent)
    }

    /// Replaces the boundary factor `z^{2σ-1}` by `z^e` (`e = 0` treats `ṽ` as the field itself).
    pub fn with_boundary_exponent(self, e: f64) -> Self {
        Self::build(self.grid, self.params, self.opts, e)
    }

    pub fn boundary_exponent(&self) -> f64 {
        self.exponent
    }

    pub(crate) fn near_rule(&self) -> NearRule {
        NearRule {
            delta_order: self.opts.near_delta_order,
            inner_order: self.opts.near_inner_order,
            grading: 1.0 / (2.0 - 2.0 * self.params.sigma),
            inner_grading: self.opts.boundary_grading,
            max_depth: 40,
        }
    }

    fn check(&self, field: &RadialField, weight: WeightSpec) -> Result<()> {
        if field.grid != self.grid {
            return Err(Error::GridMismatch("field and energy context use different grids".into()));
        }
        if field.sigma != self.params.sigma {
            return Err(Error::GridMismatch(format!(
                "field σ = {} but kernel σ = {}",
                field.sigma, self.params.sigma
            )));
        }
        if weight.kernel_kind() != self.params.kind {
            let required = KernelParams::new(self.params.n, self.params.sigma, weight.kernel_kind())?.p();
            return Err(Error::TableExponentMismatch { found: self.params.p(), expected: required });
        }
        Ok(())
    }
}

/// `I[u] = ∬_{ℝⁿ₊×ℝⁿ₊} (u(ξ)-u(ζ))² |ξ-ζ|^{-(n+2σ)}` of the discrete field.
pub fn seminorm(field: &RadialField, ctx: &EnergyContext) -> Result<EnergyBreakdown> {
    weighted_seminorm(field, ctx, WeightSpec::Unit)
}

/// Weighted pair energy; signed for the `Γ₀` weight.
pub fn weighted_seminorm(field: &RadialField, ctx: &EnergyContext, weight: WeightSpec) -> Result<EnergyBreakdown> {
    ctx.check(field, weight)?;
    let b = sweep::scalar(ctx, field, weight, &[]);
    let mut out = b.breakdown();
    out.quad_error_estimate += field.interp_error * out.total.abs();
    Ok(out)
}

/// Weighted pair energy binned by `max(|ξ|, |ζ|)`; `radii` must increase.
pub fn weighted_binned(
    field: &RadialField,
    ctx: &EnergyContext,
    weight: WeightSpec,
    radii: &[f64],
) -> Result<BinnedEnergy> {
    ctx.check(field, weight)?;
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParams("bin radii must increase".into()));
    }
    Ok(sweep::scalar(ctx, field, weight, radii))
}

/// Gauss points for `∫ f(u) dx` over the box with the full `ℝⁿ₊` measure.
#[derive(Clone, Debug)]
pub struct LpRule {
    pub nodes: Vec<[usize; 4]>,
    pub coef: Vec<[f64; 4]>,
    /// Weight including `|S^{n-2}| r^{n-2}`.
    pub weight: Vec<f64>,
}

impl LpRule {
    pub fn new(grid: &HalfSpaceGrid, exponent: f64, order: usize) -> Self {
        let n = grid.n as i32;
        let area = sphere_area(grid.n - 2);
        let q = QuadOptions::default().boundary_grading;
        let pr = rules::axis_points(&grid.r_nodes, order, n - 2, 1.0);
        let pz = rules::axis_points(&grid.z_nodes, order, 0, q);
        let mut out = LpRule { nodes: vec![], coef: vec![], weight: vec![] };
        for a in 0..pr.x.len() {
            let (i, fr) = (pr.cell[a], pr.frac[a]);
            for b in 0..pz.x.len() {
                let (j, fz) = (pz.cell[b], pz.frac[b]);
                let za = pz.x[b].powf(exponent);
                out.nodes.push([grid.idx(i, j), grid.idx(i, j + 1), grid.idx(i + 1, j), grid.idx(i + 1, j + 1)]);
                out.coef.push([
                    za * (1.0 - fr) * (1.0 - fz),
                    za * (1.0 - fr) * fz,
                    za * fr * (1.0 - fz),
                    za * fr * fz,
                ]);
                out.weight.push(area * pr.w[a] * pz.w[b]);
            }
        }
        out
    }

    #[inline]
    fn value(&self, k: usize, v: &[f64]) -> f64 {
        let (nd, c) = (&self.nodes[k], &self.coef[k]);
        c[0] * v[nd[0]] + c[1] * v[nd[1]] + c[2] * v[nd[2]] + c[3] * v[nd[3]]
    }

    /// `∫ |u|^p` over the box.
    pub fn integral_abs_pow(&self, v: &[f64], p: f64) -> f64 {
        (0..self.weight.len()).map(|k| self.weight[k] * self.value(k, v).abs().powf(p)).sum()
    }

    /// `∫ |u|^{p-2} u φ_k` for every nodal basis function.
    pub fn gradient(&self, v: &[f64], p: f64) -> Vec<f64> {
        let mut g = vec![0.0; v.len()];
        for k in 0..self.weight.len() {
            let u = self.value(k, v);
            let f = self.weight[k] * u.abs().powf(p - 2.0) * u;
            if f == 0.0 || !f.is_finite() {
                continue;
            }
            for m in 0..4 {
                g[self.nodes[k][m]] += f * self.coef[k][m];
            }
        }
        g
    }
}

/// `(∫_{ℝⁿ₊} |u|^p)^{1/p}`, including the power-law tail when one is attached. Returns NaN for `p ≤ 0`.
pub fn lp_norm(field: &RadialField, p: f64) -> f64 {
    if !(p > 0.0) {
        return f64::NAN;
    }
    let rule = LpRule::new(&field.grid, field.boundary_exponent(), QuadOptions::default().lp_order);
    let mut total = rule.integral_abs_pow(&field.regular_values, p);
    if let TailModel::PowerLaw { .. } = field.tail {
        let area = sphere_area(field.grid.n - 2);
        let a = field.boundary_exponent();
        total += rules::exterior_rule(&field.grid, QuadOptions::default().boundary_grading)
            .iter()
            .map(|&(s, w, wt)| area * wt * (w.powf(a) * field.tail.regular(s, w)).abs().powf(p))
            .sum::<f64>();
    }
    total.powf(1.0 / p)
}

/// `I[u] / ‖u‖²_{2n/(n-2σ)}`.
pub fn rayleigh_quotient(field: &RadialField, ctx: &EnergyContext) -> Result<f64> {
    if field.regular_values.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroField);
    }
    let e = seminorm(field, ctx)?;
    let q = lp_norm(field, critical_exponent(field.grid.n, field.sigma));
    Ok(e.total / (q * q))
}

/// Fixed bank of compactly supported test fields used by [`el_residual`].
pub fn test_bank(grid: &HalfSpaceGrid) -> Vec<Vec<f64>> {
    let scale = grid.r_max / 4.0;
    let radius = 0.6 * scale;
    let mut bank = Vec::new();
    for &cr in &[0.0, 0.5, 1.0, 2.0] {
        for &cz in &[0.5, 1.0, 2.0] {
            let (cr, cz) = (cr * scale, cz * scale);
            let mut v = Vec::with_capacity(grid.len());
            for &r in &grid.r_nodes {
                for &z in &grid.z_nodes {
                    let d2 = ((r - cr).powi(2) + (z - cz).powi(2)) / (radius * radius);
                    v.push(if d2 < 1.0 { (1.0 - d2).powi(2) } else { 0.0 });
                }
            }
            bank.push(v);
        }
    }
    bank
}

/// Weak-form Euler–Lagrange residual
/// `max_k |a(u, φ_k) - Q ‖u‖^{2-p} ∫ |u|^{p-2} u φ_k| / (√a(φ_k, φ_k) √a(u, u))`
/// over [`test_bank`], with `Q` the Rayleigh quotient and `p = 2n/(n-2σ)`.
pub fn el_residual(field: &RadialField, op: &EnergyOperator) -> Result<f64> {
    op.check_field(field)?;
    let v = &field.regular_values;
    let auu = op.quad_form(v);
    if auu == 0.0 {
        return Ok(0.0);
    }
    let p = critical_exponent(field.grid.n, field.sigma);
    let rule = LpRule::new(&field.grid, op.boundary_exponent(), QuadOptions::default().lp_order);
    let norm = rule.integral_abs_pow(v, p).powf(1.0 / p);
    let q = auu / (norm * norm);
    let grad = rule.gradient(v, p);
    let av = op.apply(v);
    let mut worst = 0.0f64;
    for phi in test_bank(&field.grid) {
        let a_uphi: f64 = av.iter().zip(&phi).map(|(a, b)| a * b).sum();
        let rhs: f64 = grad.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>() * q * norm.powf(2.0 - p);
        let aphi = op.quad_form(&phi);
        if aphi > 0.0 {
            worst = worst.max((a_uphi - rhs).abs() / (aphi.sqrt() * auu.sqrt()));
        }
    }
    Ok(worst)
}
