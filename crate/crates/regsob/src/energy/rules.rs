//! Quadrature rules for pair integrals over cells of a half-space grid.

use crate::field::HalfSpaceGrid;
use crate::quad;

/// Axis-aligned cell `[r0, r1] × [z0, z1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Rect {
    pub r0: f64,
    pub r1: f64,
    pub z0: f64,
    pub z1: f64,
}

impl Rect {
    pub fn cell(grid: &HalfSpaceGrid, i: usize, j: usize) -> Self {
        Rect { r0: grid.r_nodes[i], r1: grid.r_nodes[i + 1], z0: grid.z_nodes[j], z1: grid.z_nodes[j + 1] }
    }

    pub fn diam2(&self) -> f64 {
        (self.r1 - self.r0).powi(2) + (self.z1 - self.z0).powi(2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum PairClass {
    /// Separated enough for the low-order tensor rule of the far sweep.
    Far,
    /// Separated, but needs a higher-order tensor rule.
    Medium,
    /// Touching or nearly touching: relative-coordinate rule.
    Near,
}

/// Classifies a cell pair by `dist / max(diam)`.
#[inline]
pub(crate) fn classify_gaps(gap_r: f64, gap_z: f64, diam2_max: f64, far_ratio: f64, near_ratio: f64) -> PairClass {
    let d2 = gap_r * gap_r + gap_z * gap_z;
    if d2 >= far_ratio * far_ratio * diam2_max {
        PairClass::Far
    } else if d2 > 0.0 && d2 >= near_ratio * near_ratio * diam2_max {
        PairClass::Medium
    } else {
        PairClass::Near
    }
}

pub(crate) fn gap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (b0 - a1).max(a0 - b1).max(0.0)
}

pub(crate) fn classify(c1: &Rect, c2: &Rect, far_ratio: f64, near_ratio: f64) -> PairClass {
    classify_gaps(
        gap(c1.r0, c1.r1, c2.r0, c2.r1),
        gap(c1.z0, c1.z1, c2.z0, c2.z1),
        c1.diam2().max(c2.diam2()),
        far_ratio,
        near_ratio,
    )
}

/// Per-cell Gauss points along one axis.
#[derive(Clone, Debug)]
pub(crate) struct AxisPoints {
    pub x: Vec<f64>,
    /// Gauss weight times `x^power`.
    pub w: Vec<f64>,
    pub cell: Vec<usize>,
    /// Local coordinate in `[0, 1]` within the cell.
    pub frac: Vec<f64>,
}

/// Gauss rule on `[a, b]`, mapped through `x = a + (b-a) t^q` when `a = 0` to
/// absorb a power-type endpoint.
pub(crate) fn graded_on(order: usize, a: f64, b: f64, q: f64) -> Vec<(f64, f64)> {
    graded_left(order, a, b, q, a == 0.0)
}

fn graded_left(order: usize, a: f64, b: f64, q: f64, grade: bool) -> Vec<(f64, f64)> {
    if !grade || q <= 1.0 {
        return quad::legendre_on(order, a, b).collect();
    }
    quad::legendre_on(order, 0.0, 1.0)
        .map(|(t, w)| (a + (b - a) * t.powf(q), w * (b - a) * q * t.powf(q - 1.0)))
        .collect()
}

/// Per-cell points; the cell at the origin is graded with power `q`.
pub(crate) fn axis_points(nodes: &[f64], order: usize, power: i32, q: f64) -> AxisPoints {
    let mut p = AxisPoints { x: vec![], w: vec![], cell: vec![], frac: vec![] };
    for c in 0..nodes.len() - 1 {
        let (a, b) = (nodes[c], nodes[c + 1]);
        for (x, w) in graded_on(order, a, b, q) {
            p.x.push(x);
            p.w.push(w * x.powi(power));
            p.cell.push(c);
            p.frac.push((x - a) / (b - a));
        }
    }
    p
}

/// Settings of the relative-coordinate rule.
#[derive(Clone, Copy, Debug)]
pub(crate) struct NearRule {
    pub delta_order: usize,
    pub inner_order: usize,
    /// Radial grading power of the Duffy triangles, `τ = ν^k`.
    pub grading: f64,
    /// Grading power of the inner rule in cells at `r = 0` or `z = 0`.
    pub inner_grading: f64,
    pub max_depth: usize,
}

/// Enumerates a quadrature for `∫_{c1} ∫_{c2} F(x, y) dy dx` in relative
/// coordinates `δ = y - x`, calling `emit(r_x, z_x, r_y, z_y, weight)`.
///
/// The `δ`-range is split where the overlap `c1 ∩ (c2 - δ)` changes shape and at
/// `δ = 0`; rectangles with a corner at the origin are split into two Duffy
/// triangles with radial grading, the rest are refined toward the origin until
/// they are well separated from it.
pub(crate) fn near_pair(c1: &Rect, c2: &Rect, rule: &NearRule, emit: &mut impl FnMut(f64, f64, f64, f64, f64)) {
    let br = breakpoints(c1.r0, c1.r1, c2.r0, c2.r1);
    let bz = breakpoints(c1.z0, c1.z1, c2.z0, c2.z1);
    let mut inner = |dr: f64, dz: f64, wd: f64| {
        let (lr, hr) = (c1.r0.max(c2.r0 - dr), c1.r1.min(c2.r1 - dr));
        let (lz, hz) = (c1.z0.max(c2.z0 - dz), c1.z1.min(c2.z1 - dz));
        if hr <= lr || hz <= lz {
            return;
        }
        // x or y reaching the axis or the boundary puts the endpoint at the lower limit
        let edge = |lo: f64, a1: f64, a2: f64, d: f64| (a1 == 0.0 && lo == a1) || (a2 == 0.0 && lo == a2 - d);
        let rs = graded_left(rule.inner_order, lr, hr, rule.inner_grading, edge(lr, c1.r0, c2.r0, dr));
        let zs = graded_left(rule.inner_order, lz, hz, rule.inner_grading, edge(lz, c1.z0, c2.z0, dz));
        for &(xr, wr) in &rs {
            for &(xz, wz) in &zs {
                emit(xr, xz, xr + dr, xz + dz, wd * wr * wz);
            }
        }
    };
    for a in br.windows(2) {
        for b in bz.windows(2) {
            delta_rect(a[0], a[1], b[0], b[1], 0, rule, &mut inner);
        }
    }
}

fn breakpoints(a1: f64, b1: f64, a2: f64, b2: f64) -> Vec<f64> {
    let lo = a2 - b1;
    let hi = b2 - a1;
    let tol = 1e-12 * (hi - lo);
    let mut v = vec![lo, a2 - a1, b2 - b1, hi];
    if lo < 0.0 && hi > 0.0 {
        v.push(0.0);
    }
    for x in v.iter_mut() {
        if x.abs() <= tol {
            *x = 0.0;
        }
    }
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= tol);
    v
}

fn delta_rect(p0: f64, p1: f64, q0: f64, q1: f64, depth: usize, rule: &NearRule, f: &mut impl FnMut(f64, f64, f64)) {
    let (wp, wq) = (p1 - p0, q1 - q0);
    // elongated pieces are halved along the long side; Duffy and tensor rules
    // both lose accuracy at high aspect ratio
    if depth < rule.max_depth && (wp > 2.0 * wq || wq > 2.0 * wp) {
        if wp > wq {
            let pm = 0.5 * (p0 + p1);
            delta_rect(p0, pm, q0, q1, depth + 1, rule, f);
            delta_rect(pm, p1, q0, q1, depth + 1, rule, f);
        } else {
            let qm = 0.5 * (q0 + q1);
            delta_rect(p0, p1, q0, qm, depth + 1, rule, f);
            delta_rect(p0, p1, qm, q1, depth + 1, rule, f);
        }
        return;
    }
    let corner_r = if p0 == 0.0 { Some(p1) } else if p1 == 0.0 { Some(p0) } else { None };
    let corner_z = if q0 == 0.0 { Some(q1) } else if q1 == 0.0 { Some(q0) } else { None };
    if let (Some(or), Some(oz)) = (corner_r, corner_z) {
        duffy(or, 0.0, or, oz, rule, f);
        duffy(or, oz, 0.0, oz, rule, f);
        return;
    }
    let dr = if p0 > 0.0 { p0 } else if p1 < 0.0 { -p1 } else { 0.0 };
    let dz = if q0 > 0.0 { q0 } else if q1 < 0.0 { -q1 } else { 0.0 };
    let dist2 = dr * dr + dz * dz;
    let size2 = wp * wp + wq * wq;
    if dist2 >= size2 || depth >= rule.max_depth {
        for (x, wx) in quad::legendre_on(rule.delta_order, p0, p1) {
            for (y, wy) in quad::legendre_on(rule.delta_order, q0, q1) {
                f(x, y, wx * wy);
            }
        }
        return;
    }
    let pm = 0.5 * (p0 + p1);
    let qm = 0.5 * (q0 + q1);
    delta_rect(p0, pm, q0, qm, depth + 1, rule, f);
    delta_rect(pm, p1, q0, qm, depth + 1, rule, f);
    delta_rect(p0, pm, qm, q1, depth + 1, rule, f);
    delta_rect(pm, p1, qm, q1, depth + 1, rule, f);
}

/// Triangle with vertices `0, P, Q`: `δ = τ (P + s (Q - P))`, `τ = ν^k`.
fn duffy(px: f64, py: f64, qx: f64, qy: f64, rule: &NearRule, f: &mut impl FnMut(f64, f64, f64)) {
    let det = (px * qy - py * qx).abs();
    if det == 0.0 {
        return;
    }
    let k = rule.grading;
    for (nu, wn) in quad::legendre_on(rule.delta_order, 0.0, 1.0) {
        let tau = nu.powf(k);
        let jac = wn * k * nu.powf(k - 1.0) * tau * det;
        for (s, ws) in quad::legendre_on(rule.delta_order, 0.0, 1.0) {
            let x = tau * (px + s * (qx - px));
            let y = tau * (py + s * (qy - py));
            f(x, y, jac * ws);
        }
    }
}

/// Tensor Gauss rule on the product of two cells.
pub(crate) fn medium_pair(c1: &Rect, c2: &Rect, order: usize, q: f64, emit: &mut impl FnMut(f64, f64, f64, f64, f64)) {
    let xs: Vec<(f64, f64, f64)> = tensor(c1, order, q);
    let ys: Vec<(f64, f64, f64)> = tensor(c2, order, q);
    for &(xr, xz, wx) in &xs {
        for &(yr, yz, wy) in &ys {
            emit(xr, xz, yr, yz, wx * wy);
        }
    }
}

fn tensor(c: &Rect, order: usize, q: f64) -> Vec<(f64, f64, f64)> {
    let mut v = Vec::with_capacity(order * order);
    let zs = graded_on(order, c.z0, c.z1, q);
    for (r, wr) in quad::legendre_on(order, c.r0, c.r1) {
        for &(z, wz) in &zs {
            v.push((r, z, wr * wz));
        }
    }
    v
}

/// One-dimensional rule on `[R, ∞)` graded away from `R`: Gauss panels of
/// doubling width starting at `h`, then `s = s₁/v` on the remainder.
pub(crate) fn semi_infinite(r_max: f64, h: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut a = 0.0;
    let mut w = h;
    while a < r_max {
        for (t, wt) in quad::legendre_on(4, a, a + w) {
            out.push((r_max + t, wt));
        }
        a += w;
        w *= 2.0;
    }
    let s1 = r_max + a;
    for (v, wv) in quad::legendre_on(8, 0.0, 1.0) {
        out.push((s1 / v, wv * s1 / (v * v)));
    }
    out
}

/// Points `(s, w, weight)` covering `[0, ∞)² ∖ [0, R]²`; weights carry `s^{n-2}`.
pub(crate) fn exterior_rule(grid: &HalfSpaceGrid, q: f64) -> Vec<(f64, f64, f64)> {
    let n = grid.n as i32;
    let r = grid.r_max;
    let nr = grid.nr();
    let nz = grid.nz();
    let semi_r = semi_infinite(r, grid.r_nodes[nr - 1] - grid.r_nodes[nr - 2]);
    let semi_z = semi_infinite(r, grid.z_nodes[nz - 1] - grid.z_nodes[nz - 2]);
    let fin = |nodes: &[f64], q: f64| -> Vec<(f64, f64)> {
        let mut v = Vec::new();
        for c in nodes.windows(2) {
            v.extend(graded_on(2, c[0], c[1], q));
        }
        v
    };
    let fin_r = fin(&grid.r_nodes, 1.0);
    let fin_z = fin(&grid.z_nodes, q);
    let mut out = Vec::new();
    for &(s, ws) in &semi_r {
        for &(w, ww) in fin_z.iter().chain(semi_z.iter()) {
            out.push((s, w, ws * ww * s.powi(n - 2)));
        }
    }
    for &(s, ws) in &fin_r {
        for &(w, ww) in &semi_z {
            out.push((s, w, ws * ww * s.powi(n - 2)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_rule() -> NearRule {
        NearRule { delta_order: 6, inner_order: 3, grading: 1.0, inner_grading: 1.0, max_depth: 14 }
    }

    #[test]
    fn near_rule_integrates_polynomials() {
        let c1 = Rect { r0: 0.0, r1: 1.0, z0: 0.0, z1: 0.5 };
        let c2 = Rect { r0: 1.0, r1: 1.25, z0: 0.0, z1: 0.5 };
        for (a, b) in [(c1, c1), (c1, c2), (c2, c1)] {
            let mut vol = 0.0;
            let mut mom = 0.0;
            near_pair(&a, &b, &unit_rule(), &mut |xr, xz, yr, yz, w| {
                vol += w;
                mom += w * xr * yz * (yr - xz);
            });
            let area = |c: &Rect| (c.r1 - c.r0) * (c.z1 - c.z0);
            let m1 = |c: &Rect| 0.5 * (c.r1 * c.r1 - c.r0 * c.r0);
            let exact_vol = area(&a) * area(&b);
            assert!((vol - exact_vol).abs() < 1e-12, "{vol} {exact_vol}");
            // ∫∫ x_r y_z (y_r - x_z)
            let iz = |c: &Rect| 0.5 * (c.z1 * c.z1 - c.z0 * c.z0);
            let wz = |c: &Rect| c.z1 - c.z0;
            let wr = |c: &Rect| c.r1 - c.r0;
            let exact = m1(&a) * wz(&a) * (m1(&b) * iz(&b)) - m1(&a) * iz(&a) * wr(&b) * iz(&b);
            assert!((mom - exact).abs() < 1e-12, "{mom} {exact}");
        }
    }

    #[test]
    fn near_rule_handles_weak_singularity() {
        // ∫∫_{[0,1]²×[0,1]²} |x-y|^{-1} in the plane, computed against a fine tensor rule on an
        // integrable reference: compare the self pair with the sum over its four quarter pairs.
        let c = Rect { r0: 0.0, r1: 1.0, z0: 0.0, z1: 1.0 };
        let f = |xr: f64, xz: f64, yr: f64, yz: f64| ((xr - yr).powi(2) + (xz - yz).powi(2)).powf(-0.5);
        let mut whole = 0.0;
        near_pair(&c, &c, &unit_rule(), &mut |a, b, p, q, w| whole += w * f(a, b, p, q));
        let quarters = [
            Rect { r0: 0.0, r1: 0.5, z0: 0.0, z1: 0.5 },
            Rect { r0: 0.5, r1: 1.0, z0: 0.0, z1: 0.5 },
            Rect { r0: 0.0, r1: 0.5, z0: 0.5, z1: 1.0 },
            Rect { r0: 0.5, r1: 1.0, z0: 0.5, z1: 1.0 },
        ];
        let mut split = 0.0;
        for a in &quarters {
            for b in &quarters {
                near_pair(a, b, &unit_rule(), &mut |x, y, p, q, w| split += w * f(x, y, p, q));
            }
        }
        assert!((whole - split).abs() < 1e-6 * whole, "{whole} {split}");
    }

    #[test]
    fn exterior_rule_measure() {
        let g = crate::field::make_grid(2, 2.0, 8, 8, Default::default()).unwrap();
        // ∫ over the exterior of [0,2]² of (1+s+w)^{-4} ds dw
        let ext: f64 = exterior_rule(&g, 1.0).iter().map(|&(s, w, wt)| wt * (1.0 + s + w).powi(-4)).sum();
        // total over the quadrant is 1/6; over the box: ∫∫_{[0,2]²}
        let boxed = 1.0 / 6.0 * (1.0 - 2.0 * 3f64.powi(-2) + 5f64.powi(-2));
        let exact = 1.0 / 6.0 - boxed;
        assert!((ext - exact).abs() < 1e-4 * exact, "{ext} {exact}");
    }
}
