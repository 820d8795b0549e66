//! Pair sweeps: the scalar energy with radial binning, and assembly of the
//! dense matrix of the quadratic form.

use crate::field::{HalfSpaceGrid, RadialField, TailModel};
use crate::par;
use crate::{Error, Result};

use super::rules::{self, AxisPoints, PairClass, Rect};
use super::{BinnedEnergy, EnergyBreakdown, EnergyContext, WeightSpec};

/// Node indices and bilinear coefficients (times `z^e`) of a point in cell `(i, j)`.
#[inline]
pub(crate) fn local(grid: &HalfSpaceGrid, e: f64, i: usize, j: usize, r: f64, z: f64) -> ([usize; 4], [f64; 4]) {
    let fr = (r - grid.r_nodes[i]) / (grid.r_nodes[i + 1] - grid.r_nodes[i]);
    let fz = (z - grid.z_nodes[j]) / (grid.z_nodes[j + 1] - grid.z_nodes[j]);
    coefficients(grid, e, i, j, fr, fz, z)
}

#[inline]
fn coefficients(grid: &HalfSpaceGrid, e: f64, i: usize, j: usize, fr: f64, fz: f64, z: f64) -> ([usize; 4], [f64; 4]) {
    let ze = if e == 0.0 { 1.0 } else { z.powf(e) };
    (
        [grid.idx(i, j), grid.idx(i, j + 1), grid.idx(i + 1, j), grid.idx(i + 1, j + 1)],
        [ze * (1.0 - fr) * (1.0 - fz), ze * (1.0 - fr) * fz, ze * fr * (1.0 - fz), ze * fr * fz],
    )
}

#[inline]
fn dot4(nodes: &[usize; 4], c: &[f64; 4], v: &[f64]) -> f64 {
    c[0] * v[nodes[0]] + c[1] * v[nodes[1]] + c[2] * v[nodes[2]] + c[3] * v[nodes[3]]
}

/// Tensor points of one axis rule, grouped by cell: entry `[r, z, weight, u, |x|]`.
struct CellPoints {
    per_cell: usize,
    pts: Vec<[f64; 5]>,
}

impl CellPoints {
    fn new(ctx: &EnergyContext, pr: &AxisPoints, pz: &AxisPoints, order: usize, v: &[f64]) -> Self {
        let g = &ctx.grid;
        let ncz = g.nz() - 1;
        let ncr = g.nr() - 1;
        let mut pts = vec![[0.0; 5]; ncr * ncz * order * order];
        for a in 0..pr.x.len() {
            for b in 0..pz.x.len() {
                let (i, j) = (pr.cell[a], pz.cell[b]);
                let (nd, c) = coefficients(g, ctx.exponent, i, j, pr.frac[a], pz.frac[b], pz.x[b]);
                let k = (i * ncz + j) * order * order + (a % order) * order + b % order;
                pts[k] = [pr.x[a], pz.x[b], pr.w[a] * pz.w[b], dot4(&nd, &c, v), pr.x[a].hypot(pz.x[b])];
            }
        }
        Self { per_cell: order * order, pts }
    }

    fn cell(&self, c: usize) -> &[[f64; 5]] {
        &self.pts[c * self.per_cell..(c + 1) * self.per_cell]
    }
}

/// Per-bin partial sums.
#[derive(Clone)]
struct Acc {
    far: Vec<f64>,
    near: Vec<f64>,
    tail: Vec<f64>,
}

impl Acc {
    fn new(nb: usize) -> Self {
        Self { far: vec![0.0; nb], near: vec![0.0; nb], tail: vec![0.0; nb] }
    }

    fn merge(mut self, o: Acc) -> Acc {
        for k in 0..self.far.len() {
            self.far[k] += o.far[k];
            self.near[k] += o.near[k];
            self.tail[k] += o.tail[k];
        }
        self
    }

    fn scale(&mut self, s: f64) {
        for v in self.far.iter_mut().chain(self.near.iter_mut()).chain(self.tail.iter_mut()) {
            *v *= s;
        }
    }
}

#[inline]
fn bin_of(radii: &[f64], rho: f64) -> usize {
    if radii.is_empty() {
        0
    } else {
        radii.partition_point(|&r| r < rho)
    }
}

pub(crate) fn rects(grid: &HalfSpaceGrid) -> Vec<Rect> {
    let ncz = grid.nz() - 1;
    (0..(grid.nr() - 1) * ncz).map(|c| Rect::cell(grid, c / ncz, c % ncz)).collect()
}

/// Binned pair energy of `field`. With `swapped`, every summand is evaluated
/// with the roles of `ξ` and `ζ` exchanged and the cells are visited in reverse.
pub(crate) fn scalar(ctx: &EnergyContext, field: &RadialField, weight: WeightSpec, radii: &[f64]) -> BinnedEnergy {
    scalar_with(ctx, field, weight, radii, false)
}

pub(crate) fn scalar_with(
    ctx: &EnergyContext,
    field: &RadialField,
    weight: WeightSpec,
    radii: &[f64],
    swapped: bool,
) -> BinnedEnergy {
    let g = &ctx.grid;
    let v = &field.regular_values;
    let e = ctx.exponent;
    let nb = radii.len() + 1;
    let ncz = g.nz() - 1;
    let cells = rects(g);
    let ncell = cells.len();
    let far = CellPoints::new(ctx, &ctx.far_r, &ctx.far_z, ctx.opts.far_order, v);
    let med = CellPoints::new(ctx, &ctx.med_r, &ctx.med_z, ctx.opts.medium_order, v);
    let near_rule = ctx.near_rule();
    let kern = &ctx.kernel;
    let pw = g.n as i32 - 2;
    let term = |rx: f64, zx: f64, ux: f64, ry: f64, zy: f64, uy: f64| -> f64 {
        let d = ux - uy;
        if swapped {
            kern.eval(ry, rx, zy - zx) * weight.eval(ry, zy, rx, zx) * (uy - ux) * (uy - ux)
        } else {
            kern.eval(rx, ry, zx - zy) * weight.eval(rx, zx, ry, zy) * d * d
        }
    };

    let task = |t: usize| -> Acc {
        let c1 = if swapped { ncell - 1 - t } else { t };
        let mut acc = Acc::new(nb);
        let (i1, j1) = (c1 / ncz, c1 % ncz);
        for c2 in c1..ncell {
            let sym = if c2 == c1 { 1.0 } else { 2.0 };
            let class = rules::classify(&cells[c1], &cells[c2], ctx.opts.far_ratio, ctx.opts.near_ratio);
            match class {
                PairClass::Far | PairClass::Medium => {
                    let set = if class == PairClass::Far { &far } else { &med };
                    for x in set.cell(c1) {
                        for y in set.cell(c2) {
                            let val = sym * x[2] * y[2] * term(x[0], x[1], x[3], y[0], y[1], y[3]);
                            acc.far[bin_of(radii, x[4].max(y[4]))] += val;
                        }
                    }
                }
                PairClass::Near => {
                    let (i2, j2) = (c2 / ncz, c2 % ncz);
                    rules::near_pair(&cells[c1], &cells[c2], &near_rule, &mut |rx, zx, ry, zy, w| {
                        let (n1, k1) = local(g, e, i1, j1, rx, zx);
                        let (n2, k2) = local(g, e, i2, j2, ry, zy);
                        let val = sym * w * (rx * ry).powi(pw) * term(rx, zx, dot4(&n1, &k1, v), ry, zy, dot4(&n2, &k2, v));
                        acc.near[bin_of(radii, rx.hypot(zx).max(ry.hypot(zy)))] += val;
                    });
                }
            }
        }
        acc
    };
    let mut acc = par::map_reduce(ncell, ctx.opts.reduction, || Acc::new(nb), task, Acc::merge);

    let tail = tail_sweep(ctx, field, weight, radii, &far, &term);
    for k in 0..nb {
        acc.tail[k] += tail[k];
    }
    acc.scale(ctx.area);
    BinnedEnergy { radii: radii.to_vec(), far: acc.far, near: acc.near, tail: acc.tail }
}

/// Box × exterior interaction, counted for both orderings.
fn tail_sweep(
    ctx: &EnergyContext,
    field: &RadialField,
    weight: WeightSpec,
    radii: &[f64],
    far: &CellPoints,
    term: &(impl Fn(f64, f64, f64, f64, f64, f64) -> f64 + Sync),
) -> Vec<f64> {
    let nb = radii.len() + 1;
    if !field.tail.extends() {
        return vec![0.0; nb];
    }
    let pts = &far.pts;
    if matches!(field.tail, TailModel::Zero) && weight == WeightSpec::Unit && radii.is_empty() {
        let kappa = ctx.kappa();
        let s: f64 = par::sum(pts.len(), ctx.opts.reduction, |k| 2.0 * pts[k][2] * kappa[k] * pts[k][3] * pts[k][3]);
        return vec![s];
    }
    let e = ctx.exponent;
    let ext = &ctx.ext;
    let ext_u: Vec<f64> = ext.iter().map(|&(s, w, _)| w.powf(e) * field.tail.regular(s, w)).collect();
    let parts = par::map_reduce(
        pts.len(),
        ctx.opts.reduction,
        || vec![0.0; nb],
        |k| {
            let x = pts[k];
            let mut out = vec![0.0; nb];
            for (m, &(s, w, wt)) in ext.iter().enumerate() {
                let val = 2.0 * x[2] * wt * term(x[0], x[1], x[3], s, w, ext_u[m]);
                out[bin_of(radii, x[4].max(s.hypot(w)))] += val;
            }
            out
        },
        |mut a, b| {
            a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            a
        },
    );
    parts
}

impl EnergyContext {
    /// `κ(x) = ∫_{exterior} K(x, y) dy` at the far-rule points, in cell order.
    pub(crate) fn kappa(&self) -> &[f64] {
        self.kappa.get_or_init(|| {
            let g = &self.grid;
            let q = self.opts.far_order;
            let ncz = g.nz() - 1;
            let n_pts = (g.nr() - 1) * ncz * q * q;
            let (pr, pz) = (&self.far_r, &self.far_z);
            par::map_collect(n_pts, |k| {
                let c = k / (q * q);
                let (i, j) = (c / ncz, c % ncz);
                let (a, b) = (i * q + (k % (q * q)) / q, j * q + k % q);
                let (r, z) = (pr.x[a], pz.x[b]);
                self.ext.iter().map(|&(s, w, wt)| wt * self.kernel.eval(r, s, z - w)).sum()
            })
        })
    }
}

/// Dense matrix of the discrete quadratic form: `E(ṽ) = ṽᵀ A ṽ`.
///
/// The near-pair and exterior contributions are also kept as local blocks so
/// that [`EnergyOperator::breakdown`] can split the energy by rule.
#[derive(Clone, Debug)]
pub struct EnergyOperator {
    grid: HalfSpaceGrid,
    sigma: f64,
    exponent: f64,
    dim: usize,
    dense: Vec<f64>,
    near: Vec<Block8>,
    tail: Vec<Block4>,
}

#[derive(Clone, Debug)]
struct Block8 {
    nodes: [usize; 8],
    m: [f64; 64],
}

#[derive(Clone, Debug)]
struct Block4 {
    nodes: [usize; 4],
    c: [f64; 4],
    s: f64,
}

impl Block8 {
    fn quad(&self, v: &[f64]) -> f64 {
        let x: [f64; 8] = std::array::from_fn(|k| v[self.nodes[k]]);
        let mut s = 0.0;
        for a in 0..8 {
            for b in 0..8 {
                s += x[a] * self.m[a * 8 + b] * x[b];
            }
        }
        s
    }
}

/// Accumulates `w g gᵀ` with `g = [c_x, -c_y]`.
#[inline]
fn add_outer(m: &mut [f64; 64], cx: &[f64; 4], cy: &[f64; 4], w: f64) {
    let g = [cx[0], cx[1], cx[2], cx[3], -cy[0], -cy[1], -cy[2], -cy[3]];
    for a in 0..8 {
        let ga = w * g[a];
        for b in a..8 {
            m[a * 8 + b] += ga * g[b];
        }
    }
}

fn mirror(m: &mut [f64; 64]) {
    for a in 0..8 {
        for b in 0..a {
            m[a * 8 + b] = m[b * 8 + a];
        }
    }
}

impl EnergyOperator {
    /// Assembles the matrix for `weight`; the tail must be truncated or zero.
    pub fn assemble(ctx: &EnergyContext, weight: WeightSpec, tail: &TailModel) -> Result<Self> {
        if matches!(tail, TailModel::PowerLaw { .. }) {
            return Err(Error::InvalidParams("the matrix form supports truncated or zero tails only".into()));
        }
        let probe = RadialField::from_regular(ctx.grid.clone(), ctx.params.sigma, vec![0.0; ctx.grid.len()])?;
        ctx.check(&probe, weight)?;
        let g = &ctx.grid;
        let dim = g.len();
        let mut dense = far_matrix(ctx, weight);
        let near = local_blocks(ctx, weight, &mut dense);
        let tail_blocks = if matches!(tail, TailModel::Zero) { tail_blocks(ctx, weight) } else { Vec::new() };
        for b in &tail_blocks {
            for x in 0..4 {
                for y in 0..4 {
                    dense[b.nodes[x] * dim + b.nodes[y]] += b.s * b.c[x] * b.c[y];
                }
            }
        }
        Ok(Self {
            grid: g.clone(),
            sigma: ctx.params.sigma,
            exponent: ctx.exponent,
            dim,
            dense,
            near,
            tail: tail_blocks,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn boundary_exponent(&self) -> f64 {
        self.exponent
    }

    pub fn grid(&self) -> &HalfSpaceGrid {
        &self.grid
    }

    /// Matrix entry `A[i][j]`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.dense[i * self.dim + j]
    }

    pub(crate) fn check_field(&self, field: &RadialField) -> Result<()> {
        if field.grid != self.grid {
            return Err(Error::GridMismatch("field and operator use different grids".into()));
        }
        if field.sigma != self.sigma {
            return Err(Error::GridMismatch(format!("field σ = {} but operator σ = {}", field.sigma, self.sigma)));
        }
        Ok(())
    }

    /// `A v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.dim;
        par::map_collect(n, |i| self.dense[i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum())
    }

    /// `uᵀ A w`.
    pub fn bilinear(&self, u: &[f64], w: &[f64]) -> f64 {
        self.apply(w).iter().zip(u).map(|(a, b)| a * b).sum()
    }

    pub fn quad_form(&self, v: &[f64]) -> f64 {
        self.bilinear(v, v)
    }

    /// Splits `vᵀ A v` the same way as the scalar sweep.
    pub fn breakdown(&self, v: &[f64]) -> EnergyBreakdown {
        let total = self.quad_form(v);
        let near: f64 = self.near.iter().map(|b| b.quad(v)).sum();
        let tail: f64 = self
            .tail
            .iter()
            .map(|b| {
                let u = dot4(&b.nodes, &b.c, v);
                b.s * u * u
            })
            .sum();
        EnergyBreakdown::new(total - near - tail, near, tail, 0.0)
    }
}

/// Far pairs, contracted one r-point at a time. Returns `2|S^{n-2}|(D - G)`
/// where `G = Bᵀ M B` is the interpolated kernel matrix and `D` its row-sum term.
fn far_matrix(ctx: &EnergyContext, weight: WeightSpec) -> Vec<f64> {
    let g = &ctx.grid;
    let dim = g.len();
    let nz = g.nz();
    let (pr, pz) = (&ctx.far_r, &ctx.far_z);
    let (npr, npz) = (pr.x.len(), pz.x.len());
    let e = ctx.exponent;
    let kern = &ctx.kernel;
    let diam2: Vec<f64> = rects(g).iter().map(|c| c.diam2()).collect();
    let ncz = nz - 1;
    let coef: Vec<([usize; 4], [f64; 4])> = (0..npr * npz)
        .map(|k| {
            let (a, b) = (k / npz, k % npz);
            coefficients(g, e, pr.cell[a], pz.cell[b], pr.frac[a], pz.frac[b], pz.x[b])
        })
        .collect();
    let (fr, nr) = (ctx.opts.far_ratio, ctx.opts.near_ratio);
    let gap_r = |a: usize, a2: usize| {
        let (c1, c2) = (pr.cell[a], pr.cell[a2]);
        rules::gap(g.r_nodes[c1], g.r_nodes[c1 + 1], g.r_nodes[c2], g.r_nodes[c2 + 1])
    };
    let gap_z = |b: usize, b2: usize| {
        let (c1, c2) = (pz.cell[b], pz.cell[b2]);
        rules::gap(g.z_nodes[c1], g.z_nodes[c1 + 1], g.z_nodes[c2], g.z_nodes[c2 + 1])
    };

    let task = |a: usize| -> (Vec<f64>, Vec<f64>) {
        let i = pr.cell[a];
        let mut rows = vec![0.0; 2 * nz * dim];
        let mut d = vec![0.0; npr * npz];
        let mut tmp = vec![0.0; dim];
        for b in 0..npz {
            let (xr, xz) = (pr.x[a], pz.x[b]);
            let wx = pr.w[a] * pz.w[b];
            let cx = pr.cell[a] * ncz + pz.cell[b];
            tmp.iter_mut().for_each(|t| *t = 0.0);
            let mut dx = 0.0;
            for a2 in a..npr {
                let half = if a2 == a { 0.5 } else { 1.0 };
                let gr = gap_r(a, a2);
                let yr = pr.x[a2];
                for b2 in 0..npz {
                    let cy = pr.cell[a2] * ncz + pz.cell[b2];
                    if rules::classify_gaps(gr, gap_z(b, b2), diam2[cx].max(diam2[cy]), fr, nr) != PairClass::Far {
                        continue;
                    }
                    let yz = pz.x[b2];
                    let k = half * wx * pr.w[a2] * pz.w[b2] * kern.eval(xr, yr, xz - yz) * weight.eval(xr, xz, yr, yz);
                    dx += k;
                    d[a2 * npz + b2] += k;
                    let (nd, c) = &coef[a2 * npz + b2];
                    for m in 0..4 {
                        tmp[nd[m]] += k * c[m];
                    }
                }
            }
            d[a * npz + b] += dx;
            let (nd, c) = &coef[a * npz + b];
            for m in 0..4 {
                // node (i + di, j') maps to buffer row di * nz + j'
                let row = (nd[m] / nz - i) * nz + nd[m] % nz;
                let dst = &mut rows[row * dim..(row + 1) * dim];
                let cm = c[m];
                dst.iter_mut().zip(&tmp).for_each(|(x, t)| *x += cm * t);
            }
        }
        (rows, d)
    };

    let mut s = vec![0.0; dim * dim];
    let mut dsum = vec![0.0; npr * npz];
    let chunk = (2 * par::threads()).max(1);
    let mut start = 0;
    while start < npr {
        let end = (start + chunk).min(npr);
        let parts = par::map_collect(end - start, |k| task(start + k));
        for (k, (rows, d)) in parts.into_iter().enumerate() {
            let i = pr.cell[start + k];
            for di in 0..2 {
                for j in 0..nz {
                    let src = &rows[(di * nz + j) * dim..(di * nz + j + 1) * dim];
                    let node = g.idx(i + di, j);
                    s[node * dim..(node + 1) * dim].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                }
            }
            dsum.iter_mut().zip(&d).for_each(|(x, y)| *x += y);
        }
        start = end;
    }
    // A = 2|S|(D - S - Sᵀ)
    let scale = 2.0 * ctx.area;
    for p in 0..dim {
        for q in p..dim {
            let v = -(s[p * dim + q] + s[q * dim + p]) * scale;
            s[p * dim + q] = v;
            s[q * dim + p] = v;
        }
    }
    for (k, (nd, c)) in coef.iter().enumerate() {
        let dk = scale * dsum[k];
        for x in 0..4 {
            for y in 0..4 {
                s[nd[x] * dim + nd[y]] += dk * c[x] * c[y];
            }
        }
    }
    s
}

/// Medium and near cell pairs as local 8×8 blocks, added to `dense`; the near blocks are returned.
fn local_blocks(ctx: &EnergyContext, weight: WeightSpec, dense: &mut [f64]) -> Vec<Block8> {
    let g = &ctx.grid;
    let dim = g.len();
    let e = ctx.exponent;
    let ncz = g.nz() - 1;
    let cells = rects(g);
    let ncell = cells.len();
    let rule = ctx.near_rule();
    let kern = &ctx.kernel;
    let pw = g.n as i32 - 2;
    let (fr, nr) = (ctx.opts.far_ratio, ctx.opts.near_ratio);
    let mut near_out = Vec::new();
    let chunk = 64.max(4 * par::threads());
    let mut start = 0;
    while start < ncell {
        let end = (start + chunk).min(ncell);
        let parts = par::map_collect(end - start, |k| {
            let c1 = start + k;
            let (i1, j1) = (c1 / ncz, c1 % ncz);
            let mut out: Vec<(bool, Block8)> = Vec::new();
            for c2 in c1..ncell {
                let class = rules::classify(&cells[c1], &cells[c2], fr, nr);
                if class == PairClass::Far {
                    continue;
                }
                let (i2, j2) = (c2 / ncz, c2 % ncz);
                let sym = if c1 == c2 { 1.0 } else { 2.0 };
                let mut m = [0.0; 64];
                let mut emit = |rx: f64, zx: f64, ry: f64, zy: f64, w: f64| {
                    let (_, kx) = local(g, e, i1, j1, rx, zx);
                    let (_, ky) = local(g, e, i2, j2, ry, zy);
                    let wt = w * (rx * ry).powi(pw) * kern.eval(rx, ry, zx - zy) * weight.eval(rx, zx, ry, zy);
                    add_outer(&mut m, &kx, &ky, wt);
                };
                if class == PairClass::Near {
                    rules::near_pair(&cells[c1], &cells[c2], &rule, &mut emit);
                } else {
                    rules::medium_pair(&cells[c1], &cells[c2], ctx.opts.medium_order, ctx.opts.boundary_grading, &mut emit);
                }
                mirror(&mut m);
                let s = sym * ctx.area;
                m.iter_mut().for_each(|x| *x *= s);
                let n1 = [g.idx(i1, j1), g.idx(i1, j1 + 1), g.idx(i1 + 1, j1), g.idx(i1 + 1, j1 + 1)];
                let n2 = [g.idx(i2, j2), g.idx(i2, j2 + 1), g.idx(i2 + 1, j2), g.idx(i2 + 1, j2 + 1)];
                let nodes = [n1[0], n1[1], n1[2], n1[3], n2[0], n2[1], n2[2], n2[3]];
                out.push((class == PairClass::Near, Block8 { nodes, m }));
            }
            out
        });
        for list in parts {
            for (is_near, b) in list {
                for x in 0..8 {
                    for y in 0..8 {
                        dense[b.nodes[x] * dim + b.nodes[y]] += b.m[x * 8 + y];
                    }
                }
                if is_near {
                    near_out.push(b);
                }
            }
        }
        start = end;
    }
    near_out
}

/// Zero-extension exterior term `2|S| ∫ u(x)² κ_W(x) dx` at the far-rule points.
fn tail_blocks(ctx: &EnergyContext, weight: WeightSpec) -> Vec<Block4> {
    let g = &ctx.grid;
    let q = ctx.opts.far_order;
    let ncz = g.nz() - 1;
    let (pr, pz) = (&ctx.far_r, &ctx.far_z);
    let n_pts = (g.nr() - 1) * ncz * q * q;
    let unit = if weight == WeightSpec::Unit { Some(ctx.kappa()) } else { None };
    par::map_collect(n_pts, |k| {
        let c = k / (q * q);
        let (i, j) = (c / ncz, c % ncz);
        let (a, b) = (i * q + (k % (q * q)) / q, j * q + k % q);
        let (r, z) = (pr.x[a], pz.x[b]);
        let kappa = match unit {
            Some(kap) => kap[k],
            None => ctx.ext.iter().map(|&(s, w, wt)| wt * ctx.kernel.eval(r, s, z - w) * weight.eval(r, z, s, w)).sum(),
        };
        let (nodes, c) = coefficients(g, ctx.exponent, i, j, pr.frac[a], pz.frac[b], z);
        Block4 { nodes, c, s: 2.0 * ctx.area * pr.w[a] * pz.w[b] * kappa }
    })
}
