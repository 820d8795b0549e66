//! Angular reduction of the interaction kernel `|ξ-ζ|^{-p}`.
//!
//! For `ξ = (x', z)`, `ζ = (y', w)` with `|x'| = r`, `|y'| = s` and `t = z - w`,
//! integrating the relative angle between `x'` and `y'` over `S^{n-2}` gives
//!
//! `K_p(r, s, t) = ∫_{S^{n-2}} (r² + s² - 2 r s ω₁ + t²)^{-p/2} dω`.
//!
//! The pair integral of a horizontally radial function then becomes
//! `|S^{n-2}| ∫∫∫∫ F(r,z,s,w) K_p(r,s,z-w) r^{n-2} s^{n-2} dr dz ds dw`.

use serde::{Deserialize, Serialize};

use crate::{par, quad, sphere_area, Error, Result};

/// Which member of the kernel family: the energy kernel `p = n+2σ` or the
/// `Γ₀` kernel `p = n+2σ+2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    Energy,
    Gamma0,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub n: usize,
    pub sigma: f64,
    pub kind: KernelKind,
}

impl KernelParams {
    pub fn new(n: usize, sigma: f64, kind: KernelKind) -> Result<Self> {
        let k = Self { n, sigma, kind };
        k.validate()?;
        Ok(k)
    }

    pub fn energy(n: usize, sigma: f64) -> Result<Self> {
        Self::new(n, sigma, KernelKind::Energy)
    }

    pub fn gamma0(n: usize, sigma: f64) -> Result<Self> {
        Self::new(n, sigma, KernelKind::Gamma0)
    }

    /// Builds parameters from an explicit exponent, which must be `n+2σ` or `n+2σ+2`.
    pub fn with_exponent(n: usize, sigma: f64, p: f64) -> Result<Self> {
        let base = n as f64 + 2.0 * sigma;
        if p == base {
            Self::energy(n, sigma)
        } else if p == base + 2.0 {
            Self::gamma0(n, sigma)
        } else {
            Err(Error::InvalidParams(format!("exponent {p} is neither n+2σ nor n+2σ+2")))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParams(format!("dimension n = {} must be at least 2", self.n)));
        }
        if !(self.sigma > 0.5 && self.sigma < 1.0) {
            return Err(Error::InvalidParams(format!("σ = {} must lie in (1/2, 1)", self.sigma)));
        }
        Ok(())
    }

    pub fn p(&self) -> f64 {
        let base = self.n as f64 + 2.0 * self.sigma;
        match self.kind {
            KernelKind::Energy => base,
            KernelKind::Gamma0 => base + 2.0,
        }
    }
}

/// Reduced kernel `K_p(r, s, t)` including the surface measure of `S^{n-2}`.
pub fn angular_kernel(r: f64, s: f64, t: f64, params: &KernelParams) -> Result<f64> {
    params.validate()?;
    if !(r >= 0.0 && s >= 0.0) || !t.is_finite() || !r.is_finite() || !s.is_finite() {
        return Err(Error::InvalidParams(format!("radii must be finite and nonnegative, got r = {r}, s = {s}")));
    }
    if r == s && t == 0.0 {
        return Err(Error::DiagonalSingularity { r });
    }
    Ok(Kernel::new(params).eval(r, s, t))
}

/// Reusable evaluator for `K_p` with the quadrature rules fetched once.
#[derive(Clone, Debug)]
pub struct Kernel {
    n: usize,
    p: f64,
    area_nm2: f64,
    area_nm3: f64,
    alpha: f64,
    sym_rules: [&'static [(f64, f64)]; 4],
}

const SYM_ORDERS: [usize; 4] = [16, 32, 64, 128];
const DIRECT_EPS: f64 = 0.05;
const REL_TOL: f64 = 1e-11;

impl Kernel {
    pub fn new(params: &KernelParams) -> Self {
        let n = params.n;
        let alpha = (n as f64 - 4.0) / 2.0;
        let sym_rules = if n >= 3 {
            SYM_ORDERS.map(|o| quad::jacobi(o, alpha, alpha))
        } else {
            [&[][..]; 4]
        };
        Self {
            n,
            p: params.p(),
            area_nm2: sphere_area(n - 2),
            area_nm3: if n >= 3 { sphere_area(n - 3) } else { 0.0 },
            alpha,
            sym_rules,
        }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Evaluates `K_p(r, s, t)`; the caller guarantees `(r, s, t)` is off the diagonal.
    #[inline]
    pub fn eval(&self, r: f64, s: f64, t: f64) -> f64 {
        let half_p = 0.5 * self.p;
        let a2 = (r - s) * (r - s) + t * t;
        let rs = r * s;
        if rs == 0.0 {
            return self.area_nm2 * (r * r + s * s + t * t).powf(-half_p);
        }
        match self.n {
            2 => a2.powf(-half_p) + ((r + s) * (r + s) + t * t).powf(-half_p),
            4 => closed_form_n4(a2, rs, self.p),
            _ => self.quadrature(a2, rs),
        }
    }

    /// Gauss–Jacobi evaluation valid for every `n ≥ 3`, used for `n ≠ 4`
    /// and as an independent path for `n = 4`.
    pub fn quadrature(&self, a2: f64, rs: f64) -> f64 {
        let eps = a2 / (2.0 * rs);
        self.area_nm3 * (2.0 * rs).powf(-0.5 * self.p) * self.shape(eps)
    }

    /// Shape function `F(ε) = ∫_0^2 (ε+v)^{-p/2} v^α (2-v)^α dv`, so that
    /// `K = |S^{n-3}| (2rs)^{-p/2} F(A²/(2rs))` for `n ≥ 3`.
    pub fn shape(&self, eps: f64) -> f64 {
        let half_p = 0.5 * self.p;
        if eps >= DIRECT_EPS {
            // the rule lives on u = 1 - v ∈ [-1, 1]
            let mut prev = f64::NAN;
            for rule in &self.sym_rules {
                let val: f64 = rule.iter().map(|&(u, w)| w * (eps + 1.0 - u).powf(-half_p)).sum();
                if (val - prev).abs() <= REL_TOL * val.abs() {
                    return val;
                }
                prev = val;
            }
            return prev;
        }
        self.graded(eps)
    }

    /// `∫_0^2 (ε+v)^{-p/2} v^α (2-v)^α dv` for small `ε`, via `v = ε(e^y - 1)` on `[0, 1]`.
    fn graded(&self, eps: f64) -> f64 {
        let half_p = 0.5 * self.p;
        let alpha = self.alpha;
        let ymax = (1.0 / eps).ln_1p();
        let tail = |y: f64| {
            let v = eps * y.exp_m1();
            (y * (1.0 - half_p)).exp() * (2.0 - v).powf(alpha)
        };
        let y1 = ymax.min(1.0);
        let mut near: f64 = quad::left_singular_on(24, alpha, y1)
            .map(|(y, w)| {
                let ratio = if y > 0.0 { y.exp_m1() / y } else { 1.0 };
                w * tail(y) * ratio.powf(alpha)
            })
            .sum();
        let mut a = y1;
        while a < ymax {
            let b = (a + 1.5).min(ymax);
            let panel: f64 = quad::legendre_on(16, a, b).map(|(y, w)| w * tail(y) * y.exp_m1().powf(alpha)).sum();
            near += panel;
            if panel.abs() < 1e-16 * near.abs() {
                break;
            }
            a = b;
        }
        let near = near * eps.powf(1.0 + alpha - half_p);
        let far: f64 = quad::left_singular_on(24, alpha, 1.0)
            .map(|(y, w)| w * (eps + 2.0 - y).powf(-half_p) * (2.0 - y).powf(alpha))
            .sum();
        near + far
    }
}

/// `2π ∫_{-1}^{1} (c - 2rs u)^{-p/2} du = 2π/((p-2) rs) (A^{2a} - (A²+4rs)^a)`, `a = 1 - p/2`.
/// When `A² ≫ rs` the difference is formed as `(A²+4rs)^a · expm1(a · ln1p(-4rs/(A²+4rs)))`.
#[inline]
fn closed_form_n4(a2: f64, rs: f64, p: f64) -> f64 {
    let a = 1.0 - 0.5 * p;
    let plus = a2 + 4.0 * rs;
    let diff = if a2 < 4.0 * rs {
        a2.powf(a) - plus.powf(a)
    } else {
        plus.powf(a) * (a * (-4.0 * rs / plus).ln_1p()).exp_m1()
    };
    2.0 * std::f64::consts::PI / ((p - 2.0) * rs) * diff
}

/// Kernel evaluator for the energy sweeps.
///
/// `n = 2` and `n = 4` use the exact formulas. Other dimensions interpolate
/// the shape function: `y(x) = ln(F(e^x) e^{κx})`, with `κ = p/2 - 1 - α` the
/// near-diagonal blow-up rate, is smooth in `x = ln ε` and is tabulated once
/// per `(n, p)` with four-point Lagrange interpolation.
#[derive(Clone, Debug)]
pub struct FastKernel {
    exact: Kernel,
    shape: Option<std::sync::Arc<ShapeTable>>,
}

#[derive(Debug)]
struct ShapeTable {
    x0: f64,
    inv_h: f64,
    y: Vec<f64>,
    blowup: f64,
}

const SHAPE_X_MIN: f64 = -32.0;
const SHAPE_X_MAX: f64 = 7.0;
const SHAPE_STEP: f64 = 0.01;

type ShapeCache = std::sync::Mutex<Vec<((usize, u64), std::sync::Arc<ShapeTable>)>>;
static SHAPE_CACHE: ShapeCache = std::sync::Mutex::new(Vec::new());

impl FastKernel {
    pub fn new(params: &KernelParams) -> Self {
        let exact = Kernel::new(params);
        let shape = (params.n != 2 && params.n != 4).then(|| {
            let key = (params.n, exact.p.to_bits());
            let mut cache = SHAPE_CACHE.lock().expect("shape cache poisoned");
            if let Some((_, t)) = cache.iter().find(|(k, _)| *k == key) {
                return t.clone();
            }
            let blowup = 0.5 * exact.p - 1.0 - exact.alpha;
            let m = ((SHAPE_X_MAX - SHAPE_X_MIN) / SHAPE_STEP).round() as usize;
            let y = par::map_collect(m + 3, |k| {
                let x = SHAPE_X_MIN + (k as f64 - 1.0) * SHAPE_STEP;
                exact.shape(x.exp()).ln() + blowup * x
            });
            let t = std::sync::Arc::new(ShapeTable { x0: SHAPE_X_MIN - SHAPE_STEP, inv_h: 1.0 / SHAPE_STEP, y, blowup });
            cache.push((key, t.clone()));
            t
        });
        Self { exact, shape }
    }

    pub fn p(&self) -> f64 {
        self.exact.p
    }

    pub fn n(&self) -> usize {
        self.exact.n
    }

    /// `K_p(r, s, t)` off the diagonal.
    #[inline]
    pub fn eval(&self, r: f64, s: f64, t: f64) -> f64 {
        let Some(tab) = &self.shape else {
            return self.exact.eval(r, s, t);
        };
        let rs = r * s;
        if rs == 0.0 {
            return self.exact.eval(r, s, t);
        }
        let eps = ((r - s) * (r - s) + t * t) / (2.0 * rs);
        let x = eps.ln();
        let pref = self.exact.area_nm3 * (2.0 * rs).powf(-0.5 * self.exact.p);
        if x >= SHAPE_X_MAX {
            return pref * self.exact.shape(eps);
        }
        let u = ((x.max(SHAPE_X_MIN) - tab.x0) * tab.inv_h).max(1.0);
        let k = (u.floor() as usize).min(tab.y.len() - 3);
        let f = u - k as f64;
        let (y0, y1, y2, y3) = (tab.y[k - 1], tab.y[k], tab.y[k + 1], tab.y[k + 2]);
        let yv = -f * (f - 1.0) * (f - 2.0) / 6.0 * y0 + (f + 1.0) * (f - 1.0) * (f - 2.0) * 0.5 * y1
            - (f + 1.0) * f * (f - 2.0) * 0.5 * y2
            + (f + 1.0) * f * (f - 1.0) / 6.0 * y3;
        let yv = if x < SHAPE_X_MIN { tab.y[1] } else { yv };
        pref * (yv - tab.blowup * x).exp()
    }
}

/// Tabulated kernel on node triples `(r_i, s_j, t_k)`, `t_k ≥ 0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelTable {
    pub params: KernelParams,
    pub r_nodes: Vec<f64>,
    pub s_nodes: Vec<f64>,
    /// Distinct nonnegative z-differences; negative differences reflect by symmetry.
    pub t_nodes: Vec<f64>,
    /// Flat `[i][j][k]` values; masked entries hold `+∞`.
    pub values: Vec<f64>,
    pub near_diag_mask: Vec<bool>,
}

/// Default memory budget for kernel tables.
pub const DEFAULT_TABLE_BUDGET: usize = 512 << 20;

impl KernelTable {
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.s_nodes.len() + j) * self.t_nodes.len() + k
    }

    /// Shape with signed t-axis, as seen by callers that index `z_j - z_l` directly.
    pub fn logical_shape(&self) -> (usize, usize, usize) {
        let nt = self.t_nodes.len();
        let signed = if self.t_nodes.first() == Some(&0.0) { 2 * nt - 1 } else { 2 * nt };
        (self.r_nodes.len(), self.s_nodes.len(), signed)
    }

    /// Stored shape (nonnegative t only).
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.r_nodes.len(), self.s_nodes.len(), self.t_nodes.len())
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn masked(&self, i: usize, j: usize, k: usize) -> bool {
        self.near_diag_mask[self.index(i, j, k)]
    }

    /// Looks up `K(r_i, s_j, t)` for a signed difference `t` present in the table.
    pub fn lookup(&self, i: usize, j: usize, t: f64) -> Option<f64> {
        let k = t_index(&self.t_nodes, t.abs())?;
        Some(self.get(i, j, k))
    }

    pub fn bytes(&self) -> usize {
        self.values.len() * (std::mem::size_of::<f64>() + 1)
    }
}

fn t_index(t_nodes: &[f64], t: f64) -> Option<usize> {
    let scale = t_nodes.last().copied().unwrap_or(1.0).max(1.0);
    let k = t_nodes.partition_point(|&x| x < t - 1e-12 * scale);
    (k < t_nodes.len() && (t_nodes[k] - t).abs() <= 1e-12 * scale).then_some(k)
}

/// Sorted distinct pairwise differences `|z_j - z_l|`.
pub fn distinct_differences(z: &[f64]) -> Vec<f64> {
    let mut d: Vec<f64> = Vec::with_capacity(z.len() * z.len() / 2 + 1);
    for j in 0..z.len() {
        for l in 0..=j {
            d.push((z[j] - z[l]).abs());
        }
    }
    d.sort_by(f64::total_cmp);
    let scale = z.iter().fold(1.0f64, |m, &x| m.max(x.abs()));
    let mut out: Vec<f64> = Vec::with_capacity(d.len());
    for x in d {
        if out.last().is_none_or(|&l| x - l > 1e-12 * scale) {
            out.push(x);
        }
    }
    out
}

fn local_spacing(nodes: &[f64], i: usize) -> f64 {
    let left = if i > 0 { nodes[i] - nodes[i - 1] } else { 0.0 };
    let right = if i + 1 < nodes.len() { nodes[i + 1] - nodes[i] } else { 0.0 };
    left.max(right)
}

fn min_spacing(nodes: &[f64]) -> f64 {
    nodes.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// Tabulates `K_p` on all node triples of `grid`, masking near-diagonal entries.
pub fn build_kernel_table(grid: &crate::field::HalfSpaceGrid, params: KernelParams) -> Result<KernelTable> {
    build_kernel_table_with_budget(grid, params, DEFAULT_TABLE_BUDGET)
}

pub fn build_kernel_table_with_budget(
    grid: &crate::field::HalfSpaceGrid,
    params: KernelParams,
    budget: usize,
) -> Result<KernelTable> {
    params.validate()?;
    if grid.n != params.n {
        return Err(Error::GridMismatch(format!("grid n = {} but kernel n = {}", grid.n, params.n)));
    }
    let t_nodes = distinct_differences(&grid.z_nodes);
    let r = grid.r_nodes.clone();
    let nr = r.len();
    let nt = t_nodes.len();
    let entries = nr * nr * nt;
    let bytes = entries * (std::mem::size_of::<f64>() + 1);
    if bytes > budget {
        return Err(Error::OutOfMemory { entries, bytes, budget });
    }
    let hz = min_spacing(&grid.z_nodes);
    let kernel = Kernel::new(&params);
    let rows: Vec<(Vec<f64>, Vec<bool>)> = par::map_collect(nr * nr, |ij| {
        let (i, j) = (ij / nr, ij % nr);
        let hr = local_spacing(&r, i).max(local_spacing(&r, j));
        let d2 = (hr * hr + hz * hz) * (1.0 + 1e-9);
        let mut vals = Vec::with_capacity(nt);
        let mut mask = Vec::with_capacity(nt);
        for &t in &t_nodes {
            let m = (r[i] - r[j]).powi(2) + t * t <= d2;
            mask.push(m);
            vals.push(if m { f64::INFINITY } else { kernel.eval(r[i], r[j], t) });
        }
        (vals, mask)
    });
    let mut values = Vec::with_capacity(entries);
    let mut near_diag_mask = Vec::with_capacity(entries);
    for (v, m) in rows {
        values.extend(v);
        near_diag_mask.extend(m);
    }
    Ok(KernelTable { params, s_nodes: r.clone(), r_nodes: r, t_nodes, values, near_diag_mask })
}
