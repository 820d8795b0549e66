//! Cached Gauss rules.
//!
//! Nodes and weights come from `gauss-quad` (Golub–Welsch). Rules are built
//! once per `(order, α, β)` and leaked into a process-wide cache.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::Mutex;

use gauss_quad::{GaussJacobi, GaussLegendre};

type Rule = &'static [(f64, f64)];

static CACHE: Mutex<Option<HashMap<(usize, u64, u64), Rule>>> = Mutex::new(None);

fn cached(order: usize, alpha: f64, beta: f64, build: impl FnOnce() -> Vec<(f64, f64)>) -> Rule {
    let key = (order, alpha.to_bits(), beta.to_bits());
    if let Some(rule) = CACHE.lock().expect("quadrature cache poisoned").get_or_insert_with(HashMap::new).get(&key) {
        return rule;
    }
    // built outside the lock: some rules are derived from other cached rules
    let built = build();
    let mut guard = CACHE.lock().expect("quadrature cache poisoned");
    let map = guard.get_or_insert_with(HashMap::new);
    map.entry(key).or_insert_with(|| Box::leak(built.into_boxed_slice()))
}

/// Gauss–Legendre rule on `[-1, 1]`.
pub fn legendre(order: usize) -> Rule {
    cached(order, 0.0, 0.0, || {
        let mut v = GaussLegendre::new(NonZeroUsize::new(order).expect("order > 0"))
            .into_node_weight_pairs()
            .into_vec();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    })
}

/// Gauss–Jacobi rule on `[-1, 1]` for the weight `(1-x)^α (1+x)^β`.
///
/// Odd orders are bumped to the next even order: the underlying eigen-solver
/// pins the middle node of odd rules to zero, which is only valid for `α = β`.
pub fn jacobi(order: usize, alpha: f64, beta: f64) -> Rule {
    let order = if alpha != beta && order % 2 == 1 { order + 1 } else { order };
    if alpha == 0.0 && beta == 0.0 {
        return legendre(order);
    }
    cached(order, alpha, beta, || {
        let a = alpha.try_into().expect("alpha > -1");
        let b = beta.try_into().expect("beta > -1");
        let mut v = GaussJacobi::new(NonZeroUsize::new(order).expect("order > 0"), a, b)
            .into_node_weight_pairs()
            .into_vec();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    })
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn legendre_on(order: usize, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let h = 0.5 * (b - a);
    let m = 0.5 * (b + a);
    legendre(order).iter().map(move |&(x, w)| (m + h * x, h * w))
}

/// Rule on `[0, L]` for `∫_0^L y^α f(y) dy`: returns `(y, w)` with `w` absorbing `y^α`.
pub fn left_singular_on(order: usize, alpha: f64, len: f64) -> impl Iterator<Item = (f64, f64)> {
    // y = L (1 + x) / 2, so y^α dy = (L/2)^{α+1} (1+x)^α dx.
    let scale = (0.5 * len).powf(alpha + 1.0);
    jacobi(order, 0.0, alpha).iter().map(move |&(x, w)| (0.5 * len * (1.0 + x), scale * w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let s: f64 = legendre_on(5, 0.0, 2.0).map(|(x, w)| w * x.powi(9)).sum();
        assert!((s - 2f64.powi(10) / 10.0).abs() < 1e-11);
    }

    #[test]
    fn jacobi_weight_moments() {
        // ∫_{-1}^{1} (1-x^2)^{-1/2} dx = π
        let s: f64 = jacobi(8, -0.5, -0.5).iter().map(|&(_, w)| w).sum();
        assert!((s - std::f64::consts::PI).abs() < 1e-13);
        // ∫_0^2 y^{-1/2} y^2 dy = 2^{2.5}/2.5
        let t: f64 = left_singular_on(7, -0.5, 2.0).map(|(y, w)| w * y * y).sum();
        assert!((t - 2f64.powf(2.5) / 2.5).abs() < 1e-12);
    }

    #[test]
    fn cache_returns_same_rule() {
        assert!(std::ptr::eq(legendre(12), legendre(12)));
    }
}
