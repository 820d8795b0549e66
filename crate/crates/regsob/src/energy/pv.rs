//! Principal-value evaluation of `2 P.V. ∫_{ℝⁿ₊} (u(x) - u(y)) |x-y|^{-(n+2σ)} dy`.
//!
//! The truncated integral over `|x-y| ≥ ε` is computed in polar coordinates
//! around `(r, z)` in the reduced plane. Inside the reduced disk of radius `ε`
//! only part of each angular orbit lies outside the `n`-ball, which the
//! partial-angle kernel accounts for. Three radii `ε, ε/2, ε/4` feed a
//! two-level Richardson extrapolation in `ε^{2-2σ}`.

use serde::{Deserialize, Serialize};

use crate::field::{locate, RadialField};
use crate::quad;
use crate::{sphere_area, Error, Result};

use super::sweep::local;
use super::{EnergyContext, WeightSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvEstimate {
    pub value: f64,
    /// Difference of the two Richardson extrapolants.
    pub error: f64,
    /// Truncated integrals at `ε, ε/2, ε/4`.
    pub levels: [f64; 3],
}

const DISK_RADIAL: usize = 16;
const DISK_ANGLES: usize = 48;
const SECTOR_ORDER: usize = 24;
const PANEL_ORDER: usize = 8;

/// Regional fractional Laplacian of `field` at `(r, z)`.
///
/// `eps` must be smaller than the distance from `(r, z)` to the edges of its
/// grid cell, where the interpolant is smooth.
pub fn regional_laplacian(field: &RadialField, r: f64, z: f64, ctx: &EnergyContext, eps: f64) -> Result<PvEstimate> {
    ctx.check(field, WeightSpec::Unit)?;
    let g = &ctx.grid;
    if !(eps > 0.0) || !(r >= 0.0 && z > 0.0 && r < g.r_max && z < g.r_max) {
        return Err(Error::PointTooCloseToEdge { r, z, eps });
    }
    let (i, _) = locate(&g.r_nodes, r);
    let (j, _) = locate(&g.z_nodes, z);
    let room = (r - g.r_nodes[i])
        .min(g.r_nodes[i + 1] - r)
        .min(z - g.z_nodes[j])
        .min(g.z_nodes[j + 1] - z);
    if eps >= room {
        return Err(Error::PointTooCloseToEdge { r, z, eps });
    }
    let l = [0, 1, 2].map(|k| truncated(ctx, field, r, z, eps / f64::from(1 << k)));
    let beta = 2.0 - 2.0 * ctx.params.sigma;
    let f = 2f64.powf(beta);
    let e1 = (f * l[1] - l[0]) / (f - 1.0);
    let e2 = (f * l[2] - l[1]) / (f - 1.0);
    Ok(PvEstimate { value: e2, error: (e2 - e1).abs(), levels: l })
}

fn u_at(ctx: &EnergyContext, v: &[f64], s: f64, w: f64) -> f64 {
    let g = &ctx.grid;
    let (i, _) = locate(&g.r_nodes, s);
    let (j, _) = locate(&g.z_nodes, w);
    let (nd, c) = local(g, ctx.exponent, i, j, s, w);
    c[0] * v[nd[0]] + c[1] * v[nd[1]] + c[2] * v[nd[2]] + c[3] * v[nd[3]]
}

/// `2 ∫_{|x-y| ≥ ε} (u(x) - u(y)) |x-y|^{-p} dy`.
fn truncated(ctx: &EnergyContext, field: &RadialField, r: f64, z: f64, eps: f64) -> f64 {
    let g = &ctx.grid;
    let v = &field.regular_values;
    let n = g.n;
    let pw = n as i32 - 2;
    let p = ctx.params.p();
    let ux = u_at(ctx, v, r, z);
    let big_r = g.r_max;
    let mut total = 0.0;

    // reduced disk ϱ < ε: ϱ = ε(1 - (1-t)²) resolves the square-root edge of the partial kernel
    let dpsi = 2.0 * std::f64::consts::PI / DISK_ANGLES as f64;
    for (t, wt) in quad::legendre_on(DISK_RADIAL, 0.0, 1.0) {
        let rho = eps * (1.0 - (1.0 - t) * (1.0 - t));
        let jac = 2.0 * eps * (1.0 - t) * wt * rho * dpsi;
        for k in 0..DISK_ANGLES {
            let psi = (k as f64 + 0.5) * dpsi;
            let (s, w) = (r + rho * psi.cos(), z + rho * psi.sin());
            let kern = partial_kernel(n, p, r, s, z - w, eps);
            total += jac * (ux - u_at(ctx, v, s, w)) * kern * s.powi(pw);
        }
    }

    // rest of the box: sectors between the directions of the corners
    let corners = [(0.0, 0.0), (big_r, 0.0), (big_r, big_r), (0.0, big_r)];
    let mut angles: Vec<f64> = corners
        .iter()
        .map(|&(cs, cw)| (cw - z).atan2(cs - r).rem_euclid(2.0 * std::f64::consts::PI))
        .collect();
    angles.sort_by(f64::total_cmp);
    angles.push(angles[0] + 2.0 * std::f64::consts::PI);
    for sec in angles.windows(2) {
        for (psi, wpsi) in quad::legendre_on(SECTOR_ORDER, sec[0], sec[1]) {
            let (c, sn) = (psi.cos(), psi.sin());
            let exit = exit_distance(r, z, c, sn, big_r);
            let mut a = eps;
            while a < exit {
                let b = (2.0 * a).min(exit);
                for (rho, wr) in quad::legendre_on(PANEL_ORDER, a, b) {
                    let (s, w) = ((r + rho * c).max(0.0), (z + rho * sn).max(0.0));
                    let kern = ctx.kernel.eval(r, s, z - w);
                    total += wpsi * wr * rho * (ux - u_at(ctx, v, s, w)) * kern * s.powi(pw);
                }
                a = b;
            }
        }
    }

    if field.tail.extends() {
        let e = ctx.exponent;
        for &(s, w, wt) in &ctx.ext {
            let uy = w.powf(e) * field.tail.regular(s, w);
            total += wt * (ux - uy) * ctx.kernel.eval(r, s, z - w);
        }
    }
    2.0 * total
}

fn exit_distance(r: f64, z: f64, c: f64, s: f64, big_r: f64) -> f64 {
    let mut t = f64::INFINITY;
    if c > 0.0 {
        t = t.min((big_r - r) / c);
    } else if c < 0.0 {
        t = t.min(r / -c);
    }
    if s > 0.0 {
        t = t.min((big_r - z) / s);
    } else if s < 0.0 {
        t = t.min(z / -s);
    }
    t
}

/// `∫_{S^{n-2}} 1[d ≥ ε] d^{-p} dω` with `d² = r² + s² - 2rs ω₁ + t²`.
pub(crate) fn partial_kernel(n: usize, p: f64, r: f64, s: f64, t: f64, eps: f64) -> f64 {
    let c = r * r + s * s + t * t;
    let e2 = eps * eps;
    let rs = r * s;
    if rs == 0.0 {
        return if c >= e2 { sphere_area(n - 2) * c.powf(-0.5 * p) } else { 0.0 };
    }
    if n == 2 {
        let mut k = 0.0;
        for d2 in [(r - s) * (r - s) + t * t, (r + s) * (r + s) + t * t] {
            if d2 >= e2 {
                k += d2.powf(-0.5 * p);
            }
        }
        return k;
    }
    // excluded angles φ < φ*, cos φ* = (c - ε²)/(2rs)
    let u_star = (c - e2) / (2.0 * rs);
    if u_star <= -1.0 {
        return 0.0;
    }
    if n == 4 {
        let u_star = u_star.min(1.0);
        let top = (c - 2.0 * rs * u_star).powf(1.0 - 0.5 * p);
        return 2.0 * std::f64::consts::PI / (rs * (p - 2.0)) * (top - (c + 2.0 * rs).powf(1.0 - 0.5 * p));
    }
    let phi0 = u_star.clamp(-1.0, 1.0).acos();
    let pi = std::f64::consts::PI;
    let mut h = (e2 / rs).min(pi - phi0).max(1e-14);
    let mut a = phi0;
    let mut sum = 0.0;
    while a < pi {
        let b = (a + h).min(pi);
        for (phi, w) in quad::legendre_on(PANEL_ORDER, a, b) {
            sum += w * (c - 2.0 * rs * phi.cos()).powf(-0.5 * p) * phi.sin().powi(n as i32 - 3);
        }
        a = b;
        h *= 2.0;
    }
    sphere_area(n - 3) * sum
}
