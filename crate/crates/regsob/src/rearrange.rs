//! Slice-wise symmetric decreasing rearrangement and the slice interaction `J_t`.
//!
//! On the grid each node carries the lumped mass `∫ φ_i(r) r^{n-2} dr` of its
//! hat function. The rearranged slice is built in the mass coordinate: the
//! values are sorted into a nonincreasing step function of mass, and node `i`
//! receives the mean of that step function over its own mass cell. The `L¹`
//! norm of every slice is kept exactly; higher norms can only decrease, by the
//! spread of the sorted values inside each mass cell.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta;

use crate::field::RadialField;
use crate::kernel::{FastKernel, KernelParams};
use crate::{par, quad, sphere_area, Error, Result};

/// Rearranges `|u|` on every fixed-`z` slice.
pub fn rearrange_sharp(field: &RadialField) -> RadialField {
    let g = &field.grid;
    let (nr, nz) = (g.nr(), g.nz());
    let slices = par::map_collect(nz, |j| {
        let vals: Vec<f64> = (0..nr).map(|i| field.regular_values[g.idx(i, j)].abs()).collect();
        rearrange_masses(&vals, &g.r_weights)
    });
    let mut out = vec![0.0; g.len()];
    for (j, s) in slices.iter().enumerate() {
        for i in 0..nr {
            out[g.idx(i, j)] = s[i];
        }
    }
    let mut f = field.with_values(out);
    f.nonnegative = true;
    f
}

/// Discrete rearrangement of `values` carried by `masses`, in node order.
///
/// Ties keep the smaller index first.
pub fn rearrange_masses(values: &[f64], masses: &[f64]) -> Vec<f64> {
    let m = values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    if order.iter().enumerate().all(|(k, &i)| k == i) {
        return values.to_vec();
    }
    let mut out = vec![0.0; m];
    // sorted step k covers [s, s + masses[order[k]]), node i covers [c, c + masses[i])
    let (mut k, mut s) = (0usize, 0.0f64);
    let mut c = 0.0f64;
    for i in 0..m {
        let hi = c + masses[i];
        let mut acc = 0.0;
        let mut lo = c;
        while k < m {
            let top = s + masses[order[k]];
            let end = top.min(hi);
            acc += values[order[k]] * (end - lo).max(0.0);
            lo = end;
            if top <= hi && k + 1 < m {
                s = top;
                k += 1;
            } else {
                break;
            }
        }
        out[i] = if masses[i] > 0.0 { acc / masses[i] } else { values[order[k.min(m - 1)]] };
        // a cell inside one step can come out an ulp above it
        if i > 0 {
            out[i] = out[i].min(out[i - 1]);
        }
        c = hi;
    }
    out
}

/// `(Σ_i m_i |u(r_i, z_j)|^p)^{1/p}` with the lumped masses of the grid.
pub fn slice_norm(field: &RadialField, j: usize, p: f64) -> f64 {
    let g = &field.grid;
    let zf = g.z_nodes[j].powf(field.boundary_exponent());
    let s: f64 = (0..g.nr()).map(|i| g.r_weights[i] * (zf * field.regular_values[g.idx(i, j)]).abs().powf(p)).sum();
    s.powf(1.0 / p)
}

/// Radial profile on `ℝ^{n-1}`, piecewise linear in `r` and constant beyond the last radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceProfile {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    /// `n - 2`; the measure is `r^{n-2} dr`.
    pub measure_exponent: usize,
}

impl SliceProfile {
    pub fn new(radii: Vec<f64>, values: Vec<f64>, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParams(format!("n = {n}")));
        }
        if radii.len() < 2 || radii.len() != values.len() {
            return Err(Error::InvalidParams("profile needs matching radii and values, at least two".into()));
        }
        if !(radii[0] >= 0.0) || radii.windows(2).any(|w| !(w[1] > w[0])) || !radii[radii.len() - 1].is_finite() {
            return Err(Error::InvalidParams("radii must be increasing from r ≥ 0".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParams("profile values must be finite and nonnegative".into()));
        }
        Ok(Self { radii, values, measure_exponent: n - 2 })
    }

    pub fn n(&self) -> usize {
        self.measure_exponent + 2
    }

    fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn eval(&self, r: f64) -> f64 {
        let x = &self.radii;
        if r <= x[0] {
            return self.values[0];
        }
        if r >= x[x.len() - 1] {
            return self.last();
        }
        let k = x.partition_point(|&v| v <= r) - 1;
        let f = (r - x[k]) / (x[k + 1] - x[k]);
        self.values[k] * (1.0 - f) + self.values[k + 1] * f
    }

    /// Volume of the ball of radius `r` in `ℝ^{n-1}`.
    fn ball(&self, r: f64) -> f64 {
        let k = self.measure_exponent;
        sphere_area(k) / (k + 1) as f64 * r.powi(k as i32 + 1)
    }

    /// `|{f > λ}|` in `ℝ^{n-1}`, for profiles that vanish at the last radius.
    pub fn distribution(&self, lambda: f64) -> f64 {
        let (x, v) = (&self.radii, &self.values);
        let mut mu = if v[0] > lambda { self.ball(x[0]) } else { 0.0 };
        for k in 0..x.len() - 1 {
            let (a, b, fa, fb) = (x[k], x[k + 1], v[k], v[k + 1]);
            let cut = |f: f64| a + (b - a) * (lambda - fa) / (f - fa);
            let (lo, hi) = match (fa > lambda, fb > lambda) {
                (true, true) => (a, b),
                (false, false) => continue,
                (true, false) => (a, cut(fb)),
                (false, true) => (cut(fb), b),
            };
            mu += self.ball(hi) - self.ball(lo);
        }
        mu
    }

    /// Symmetric decreasing rearrangement sampled at `radii`.
    ///
    /// Each sample inverts the distribution function exactly, so only the
    /// piecewise-linear reconstruction between samples is approximate.
    pub fn rearranged(&self, radii: &[f64]) -> Result<SliceProfile> {
        if self.last() != 0.0 {
            return Err(Error::InvalidParams("rearrangement needs a profile vanishing at its last radius".into()));
        }
        let top = self.values.iter().cloned().fold(0.0, f64::max);
        let values = radii
            .iter()
            .map(|&r| {
                let vol = self.ball(r);
                if self.distribution(0.0) <= vol {
                    return 0.0;
                }
                // f*(r) = sup{λ : μ(λ) > |B_r|}
                let (mut lo, mut hi) = (0.0, top);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.distribution(mid) > vol {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-15 * top {
                        break;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect();
        SliceProfile::new(radii.to_vec(), values, self.n())
    }
}

/// `J_t[f, g] = ∬_{ℝ^{n-1}×ℝ^{n-1}} (f(x')-g(y'))² (|x'-y'|² + t²)^{-(n+2σ)/2} dx' dy'`.
///
/// Profiles continue with their last value; the integral is infinite when the
/// two limits differ. Otherwise
/// `J = c_t (‖f̂‖² + ‖ĝ‖²) - 2 ∬ f̂ ĝ K` for the compactly supported parts
/// `f̂, ĝ`, with `c_t = ∫ (|y|²+t²)^{-p/2} dy`, and the double integral runs
/// through the angular kernel on Gauss panels no wider than `t/2`.
pub fn slice_interaction(f: &SliceProfile, g: &SliceProfile, t: f64, n: usize, sigma: f64) -> Result<f64> {
    if t == 0.0 {
        return Err(Error::SingularAtZeroSeparation);
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParams(format!("separation t = {t}")));
    }
    if f.n() != n || g.n() != n {
        return Err(Error::InvalidParams(format!("profiles carry r^{} and r^{}, expected r^{}", f.measure_exponent, g.measure_exponent, n - 2)));
    }
    let params = KernelParams::energy(n, sigma)?;
    let p = params.p();
    let limit = f.last();
    if g.last() != limit {
        return Ok(f64::INFINITY);
    }
    let nf = n as f64;
    let area = sphere_area(n - 2);
    let c_t = area * t.powf(nf - 1.0 - p) * beta((nf - 1.0) / 2.0, (p - nf + 1.0) / 2.0) / 2.0;

    let mut nodes: Vec<f64> = f.radii.iter().chain(&g.radii).cloned().collect();
    nodes.push(0.0);
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for w in nodes.windows(2) {
        let pieces = ((w[1] - w[0]) / (0.5 * t)).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / pieces as f64;
        for k in 0..pieces {
            let a = w[0] + k as f64 * h;
            pts.extend(quad::legendre_on(8, a, a + h).map(|(r, wr)| (r, wr * r.powi(n as i32 - 2))));
        }
    }
    let fv: Vec<f64> = pts.iter().map(|&(r, _)| f.eval(r) - limit).collect();
    let gv: Vec<f64> = pts.iter().map(|&(r, _)| g.eval(r) - limit).collect();
    let sq = |v: &[f64]| -> f64 { pts.iter().zip(v).map(|(&(_, w), x)| w * x * x).sum::<f64>() };
    let norms = area * (sq(&fv) + sq(&gv));
    let kernel = FastKernel::new(&params);
    let cross: f64 = par::map_collect(pts.len(), |a| {
        if fv[a] == 0.0 {
            return 0.0;
        }
        let (r, wr) = pts[a];
        let mut acc = 0.0;
        for (b, &(s, ws)) in pts.iter().enumerate() {
            if gv[b] != 0.0 {
                acc += ws * gv[b] * kernel.eval(r, s, t);
            }
        }
        wr * fv[a] * acc
    })
    .into_iter()
    .sum();
    Ok(c_t * norms - 2.0 * area * cross)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_grid, Grading};

    #[test]
    fn sorted_slices_are_fixed_points() {
        let masses = [0.1, 0.3, 0.2, 0.7, 0.05];
        let v = [5.0, 4.0, 4.0, 1.0, 0.0];
        assert_eq!(rearrange_masses(&v, &masses), v.to_vec());
    }

    #[test]
    fn swap_between_equal_masses_is_undone() {
        let masses = [0.2, 0.5, 0.5, 0.9];
        let v = [3.0, 1.0, 2.0, 0.5];
        let out = rearrange_masses(&v, &masses);
        for (a, b) in out.iter().zip([3.0, 2.0, 1.0, 0.5]) {
            assert!((a - b).abs() < 1e-14, "{out:?}");
        }
    }

    #[test]
    fn mass_average_keeps_l1_and_orders() {
        let masses = [0.05, 0.2, 0.4, 0.6, 0.8, 1.0];
        let v = [0.3, 2.0, 0.1, 1.5, 0.0, 0.9];
        let out = rearrange_masses(&v, &masses);
        let l1 = |x: &[f64]| x.iter().zip(&masses).map(|(a, m)| a * m).sum::<f64>();
        assert!((l1(&out) - l1(&v)).abs() < 1e-14);
        assert!(out.windows(2).all(|w| w[0] >= w[1]));
        let l2 = |x: &[f64]| x.iter().zip(&masses).map(|(a, m)| a * a * m).sum::<f64>();
        assert!(l2(&out) <= l2(&v) + 1e-14);
        assert_eq!(rearrange_masses(&out, &masses), out);
    }

    #[test]
    fn field_rearrangement_is_idempotent() {
        let g = make_grid(3, 2.0, 10, 6, Grading::default()).unwrap();
        let f = RadialField::from_regular_fn(g, 0.75, |r, z| (3.0 * r).sin() * (1.0 + z)).unwrap();
        let a = rearrange_sharp(&f);
        let b = rearrange_sharp(&a);
        assert!(a.nonnegative);
        for (x, y) in a.regular_values.iter().zip(&b.regular_values) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        for j in 0..a.grid.nz() {
            assert!((slice_norm(&a, j, 1.0) - slice_norm(&f, j, 1.0)).abs() <= 1e-12 * slice_norm(&f, j, 1.0).max(1e-300));
        }
    }

    fn bump() -> SliceProfile {
        SliceProfile::new(vec![0.0, 0.5, 1.0, 1.5, 2.0], vec![0.2, 1.0, 0.3, 0.6, 0.0], 3).unwrap()
    }

    #[test]
    fn distribution_of_a_cone() {
        // f = 1 - r on the unit disk: |{f > λ}| = π (1-λ)²
        let f = SliceProfile::new(vec![0.0, 1.0], vec![1.0, 0.0], 3).unwrap();
        for l in [0.0, 0.25, 0.9] {
            let mu = f.distribution(l);
            assert!((mu - std::f64::consts::PI * (1.0 - l) * (1.0 - l)).abs() < 1e-14);
        }
    }

    #[test]
    fn rearranged_profile_is_equimeasurable() {
        let f = bump();
        let radii: Vec<f64> = (0..=400).map(|k| 2.0 * k as f64 / 400.0).collect();
        let s = f.rearranged(&radii).unwrap();
        assert!(s.values.windows(2).all(|w| w[0] >= w[1]));
        for l in [0.1, 0.25, 0.5, 0.8] {
            let (a, b) = (f.distribution(l), s.distribution(l));
            assert!((a - b).abs() < 2e-3 * a, "{l}: {a} {b}");
        }
    }

    #[test]
    fn interaction_of_equal_constants_vanishes() {
        let c = SliceProfile::new(vec![0.0, 1.0, 2.0], vec![0.7; 3], 4).unwrap();
        assert!(slice_interaction(&c, &c, 0.3, 4, 0.75).unwrap().abs() < 1e-25);
        assert!(matches!(slice_interaction(&c, &c, 0.0, 4, 0.75), Err(Error::SingularAtZeroSeparation)));
        let d = SliceProfile::new(vec![0.0, 1.0, 2.0], vec![0.7, 0.7, 0.1], 4).unwrap();
        assert_eq!(slice_interaction(&c, &d, 0.3, 4, 0.75).unwrap(), f64::INFINITY);
    }

    #[test]
    fn interaction_is_symmetric_and_matches_direct_sum() {
        let f = bump();
        let g = SliceProfile::new(vec![0.0, 0.7, 1.4], vec![0.9, 0.8, 0.0], 3).unwrap();
        let t = 0.4;
        let a = slice_interaction(&f, &g, t, 3, 0.75).unwrap();
        let b = slice_interaction(&g, &f, t, 3, 0.75).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
        // direct midpoint sum of (f(x)-g(y))² K over a large plane patch
        let (m, half) = (90usize, 3.0);
        let h = 2.0 * half / m as f64;
        let p = 3.0 + 1.5;
        let xs: Vec<(f64, f64)> = (0..m * m)
            .map(|k| (-half + h * ((k / m) as f64 + 0.5), -half + h * ((k % m) as f64 + 0.5)))
            .collect();
        let mut direct = 0.0;
        for &(x1, x2) in &xs {
            let fx = f.eval(x1.hypot(x2));
            for &(y1, y2) in &xs {
                let d = fx - g.eval(y1.hypot(y2));
                if d != 0.0 {
                    direct += d * d * ((x1 - y1).powi(2) + (x2 - y2).powi(2) + t * t).powf(-p / 2.0);
                }
            }
        }
        direct *= h.powi(4);
        // the patch misses pairs with one point outside, where only f² or g² survives
        assert!(direct < a && a < 1.1 * direct, "{direct} {a}");
    }
}
