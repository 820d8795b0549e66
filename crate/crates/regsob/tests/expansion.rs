use proptest::prelude::*;

use regsob::expansion::{
    correction_terms, cutoff, flatten_map, taylor_constant, unflatten_map, BoundaryGraph, Perturbation,
};

fn graph() -> BoundaryGraph {
    BoundaryGraph::new(vec![0.05, -0.03, 0.04], Perturbation::QuadraticTaper { amplitude: 0.02, width: 1.0 }, 4.0, 1.0, 0.05)
        .unwrap()
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-2.2f64..2.2, 3), 0.0f64..3.0).prop_map(|(mut v, z)| {
        v.push(z);
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn flattening_round_trips(mut xi in point()) {
        xi[3] += 1e-3;
        let bg = graph();
        let x = unflatten_map(&bg, &xi).unwrap();
        let back = flatten_map(&bg, &x).unwrap();
        for (a, b) in xi.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn corrections_are_swap_symmetric(xi in point(), zeta in point()) {
        prop_assume!(xi != zeta);
        let bg = graph();
        let a = correction_terms(&bg, 0.75, &xi, &zeta).unwrap();
        let b = correction_terms(&bg, 0.75, &zeta, &xi).unwrap();
        for (u, v) in [(a.b, b.b), (a.c, b.c), (a.d, b.d), (a.e, b.e), (a.ratio, b.ratio)] {
            prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn taylor_inequality_holds(xi in point(), zeta in point()) {
        prop_assume!(xi != zeta);
        let c = correction_terms(&graph(), 0.75, &xi, &zeta).unwrap();
        let k = (4.0 + 1.5) / 2.0;
        prop_assert!(c.e >= -0.5);
        prop_assert!(c.ratio <= 1.0 - k * c.b + c.f + 1e-12);
    }

    #[test]
    fn cutoff_is_a_monotone_unit_step(a in 0.0f64..4.0, b in 0.0f64..4.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!((0.0..=1.0).contains(&cutoff(lo)));
        prop_assert!(cutoff(hi) <= cutoff(lo));
    }
}

#[test]
fn taylor_constant_bounds_the_whole_half_line() {
    let k = 2.75;
    let a1 = taylor_constant(4, 0.75);
    for i in 0..=2000 {
        let a = -0.5 + i as f64 * 0.005;
        assert!((1.0 + a).powf(-k) <= 1.0 - k * a + a1 * a * a + 1e-12, "a = {a}");
    }
}
