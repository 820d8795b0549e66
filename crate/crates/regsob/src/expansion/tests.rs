use super::*;
use crate::field::{make_grid, synthesize_profile, Grading};
use crate::gamma0::SignVerdict;

fn cap(eps: f64) -> BoundaryGraph {
    BoundaryGraph::new(vec![eps; 3], Perturbation::QuadraticTaper { amplitude: eps / 2.0, width: 1.0 }, 4.0, 1.0, eps).unwrap()
}

fn bump() -> RadialField {
    let g = make_grid(4, 1.5, 10, 10, Grading::default()).unwrap();
    synthesize_profile("compact-bump", &g, 0.75).unwrap()
}

fn report(value: f64, error: f64) -> Gamma0Report {
    Gamma0Report {
        value,
        grid_extrapolation_error: error,
        truncation_tail_bound: 0.0,
        tail_constant: 0.0,
        remainder_exponent: None,
        lambda_schedule: vec![1.0],
        grids: vec![8],
        table: vec![],
        sign_verdict: SignVerdict::Indeterminate,
        insufficient_convergence: false,
        theta_provenance: 0,
    }
}

#[test]
fn flat_chart_is_the_identity() {
    let bg = BoundaryGraph::flat(4, 5.0);
    let x = [0.3, -1.0, 2.0, 0.7];
    assert_eq!(flatten_map(&bg, &x).unwrap(), x.to_vec());
}

#[test]
fn flattening_inverts_exactly() {
    let bg = cap(0.05);
    let x = [0.4, -1.1, 0.9, 0.8];
    let back = unflatten_map(&bg, &flatten_map(&bg, &x).unwrap()).unwrap();
    for (a, b) in x.iter().zip(&back) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn height_arithmetic() {
    let bg = BoundaryGraph::new(vec![0.1; 3], Perturbation::Zero, 4.0, 1.0, 0.1).unwrap();
    assert!((graph_height(&bg, &[1.0, 1.0, 1.0]).unwrap() - 0.15).abs() < 1e-15);
}

#[test]
fn chart_limits_are_enforced() {
    let bg = cap(0.05);
    assert!(matches!(graph_height(&bg, &[4.0, 0.0, 0.0]), Err(Error::OutsideChart)));
    assert!(matches!(graph_height(&bg, &[1.0, 0.0]), Err(Error::OutsideChart)));
    let h = graph_height(&bg, &[1.0, 0.0, 0.0]).unwrap();
    assert!(matches!(flatten_map(&bg, &[1.0, 0.0, 0.0, h]), Err(Error::OutsideChart)));
    assert!(matches!(unflatten_map(&bg, &[1.0, 0.0, 0.0, 0.0]), Err(Error::OutsideChart)));
    assert!(BoundaryGraph::new(vec![0.0; 3], Perturbation::Zero, 1.0, 2.0, 0.1).is_err());
}

#[test]
fn smallness_checks_curvature_and_slope() {
    assert!(cap(0.05).check_smallness().is_ok());
    let steep = BoundaryGraph::new(vec![0.05; 3], Perturbation::QuadraticTaper { amplitude: 0.5, width: 1.0 }, 4.0, 1.0, 0.05).unwrap();
    assert!(steep.check_smallness().is_err());
    let curved = BoundaryGraph::new(vec![0.2, 0.0, 0.0], Perturbation::Zero, 4.0, 1.0, 0.05).unwrap();
    assert!(curved.check_smallness().is_err());
    // dilation flattens the graph
    assert!(curved.dilate(4.0).check_smallness().is_ok());
}

#[test]
fn declared_lipschitz_constants_hold() {
    let gs = [
        Perturbation::QuadraticTaper { amplitude: 0.3, width: 1.7 },
        Perturbation::Polynomial { coefficients: vec![0.1, -0.02, 0.003] },
    ];
    for g in gs {
        for r in [0.5, 1.0, 3.0] {
            let lip = g.lipschitz(r);
            let h = 1e-6;
            let mut s = 0.0;
            while s + h < r {
                assert!(((g.value(s + h) - g.value(s)) / h).abs() <= lip * (1.0 + 1e-5) + 1e-9, "{g:?} at {s}");
                s += r / 997.0;
            }
        }
        assert_eq!(g.value(0.0), 0.0);
    }
}

#[test]
fn dilated_height_is_rescaled() {
    let bg = cap(0.05);
    let d = bg.dilate(3.0);
    let x = [0.6, 0.9, -1.5];
    let xs: Vec<f64> = x.iter().map(|c| c / 3.0).collect();
    let want = 3.0 * graph_height(&bg, &xs).unwrap();
    assert!((graph_height(&d, &x).unwrap() - want).abs() < 1e-15);
    assert!((d.mean_curvature() - 0.05 / 3.0).abs() < 1e-15);
}

#[test]
fn flat_corrections_vanish() {
    let bg = BoundaryGraph::flat(4, 4.0);
    let c = correction_terms(&bg, 0.75, &[0.1, 0.2, 0.3, 0.4], &[1.0, -0.5, 0.0, 2.0]).unwrap();
    assert_eq!((c.b, c.c, c.d, c.e), (0.0, 0.0, 0.0, 0.0));
    assert_eq!(c.ratio, 1.0);
}

#[test]
fn level_pairs_have_no_odd_terms() {
    let bg = cap(0.05);
    let c = correction_terms(&bg, 0.75, &[0.1, 0.2, 0.3, 0.4], &[1.0, -0.5, 0.0, 0.4]).unwrap();
    assert_eq!((c.b, c.c), (0.0, 0.0));
    assert!(c.d > 0.0);
    assert!(matches!(correction_terms(&bg, 0.75, &[0.1; 4], &[0.1; 4]), Err(Error::CoincidentPoints)));
}

#[test]
fn ratio_matches_pulled_back_distance() {
    let bg = cap(0.05);
    let (xi, zeta) = ([0.3, 0.9, -0.2, 0.5], [-1.2, 0.4, 0.8, 0.05]);
    let c = correction_terms(&bg, 0.75, &xi, &zeta).unwrap();
    let (x, z) = (unflatten_map(&bg, &xi).unwrap(), unflatten_map(&bg, &zeta).unwrap());
    let d: f64 = x.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let flat: f64 = xi.iter().zip(&zeta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    assert!((c.ratio - (flat / d).powf(4.0 + 1.5)).abs() < 1e-14);
    assert!(((1.0 + c.e).powf(-2.75) - c.ratio).abs() < 1e-14);
}

#[test]
fn taylor_constant_is_minimal_and_sufficient() {
    for (n, sigma) in [(2, 0.6), (4, 0.75), (6, 0.9)] {
        let k = (n as f64 + 2.0 * sigma) / 2.0;
        let a1 = taylor_constant(n, sigma);
        for i in 0..=2000 {
            let a = -0.5 + 10.5 * i as f64 / 2000.0;
            assert!((1.0 + a).powf(-k) <= 1.0 - k * a + a1 * a * a + 1e-12, "n={n} a={a}");
        }
        // equality at the left end, so no smaller constant works
        assert!(((0.5f64).powf(-k) - (1.0 + 0.5 * k + 0.25 * a1)).abs() < 1e-12);
    }
}

#[test]
fn cutoff_shape() {
    assert_eq!(cutoff(0.0), 1.0);
    assert_eq!(cutoff(2.0), 1.0);
    assert_eq!(cutoff(3.0), 0.0);
    assert_eq!(cutoff(7.0), 0.0);
    let h = 1e-7;
    for i in 0..=1000 {
        let r = 1.5 + 2.0 * i as f64 / 1000.0;
        let v = cutoff(r);
        assert!((0.0..=1.0).contains(&v));
        assert!(cutoff(r + 1e-3) <= v);
    }
    for r in [2.0, 3.0] {
        let left = (cutoff(r) - cutoff(r - h)) / h;
        let right = (cutoff(r + h) - cutoff(r)) / h;
        assert!(left.abs() < 1e-5 && right.abs() < 1e-5);
    }
}

#[test]
fn flat_bounds_keep_full_margins() {
    let bg = BoundaryGraph::flat(4, 4.0);
    let r = bounds_check(&bg, 0.75, 5000, 3).unwrap();
    assert_eq!(r.violations(), 0);
    assert_eq!(r.b.worst_margin, 1.0);
    assert_eq!(r.max_abs_e, 0.0);
}

#[test]
fn small_graph_satisfies_pointwise_bounds() {
    let bg = cap(0.05);
    let r = bounds_check(&bg, 0.75, 20_000, 11).unwrap();
    assert_eq!(r.violations(), 0, "{r:?}");
    assert!(r.max_abs_e < 0.5);
    // same seed, same report
    assert_eq!(bounds_check(&bg, 0.75, 20_000, 11).unwrap(), r);
}

#[test]
fn cutoff_split_never_violated() {
    let t = cutoff_bound_check(&bump(), 0.4, 20_000, 5).unwrap();
    assert_eq!(t.violations, 0);
}

#[test]
fn test_function_plateau_and_support() {
    let theta = bump();
    let lambda = 0.5;
    let tf = build_test_function(&theta, lambda, &BoundaryGraph::flat(4, 4.0)).unwrap();
    let amp = lambda.powf((4.0 - 1.5) / 2.0);
    // nodes of the scaled grid well inside the plateau
    let g = &theta.grid;
    for i in [0, 2, 4] {
        for j in [1, 3, 5] {
            let (r, z) = (g.r_nodes[i], g.z_nodes[j]);
            let x = [r / lambda, 0.0, 0.0, z / lambda];
            let want = amp * eval_u(&theta, r, z);
            assert!((tf.eval(&x).unwrap() - want).abs() <= 1e-14 * want.abs().max(1.0));
        }
    }
    assert_eq!(tf.eval(&[0.0, 0.0, 0.0, 3.2]).unwrap(), 0.0);
    let curved = build_test_function(&theta, lambda, &cap(0.05)).unwrap();
    assert!(matches!(curved.eval(&[1.0, 0.0, 0.0, 0.0]), Err(Error::OutsideChart)));
}

#[test]
fn curvature_term_scaling() {
    let theta = bump();
    let bg = cap(0.05);
    assert!(matches!(curvature_term(&theta, 1.0, &bg, None), Err(Error::MissingGamma0)));
    let g0 = report(2.0, 0.1);
    let t1 = curvature_term(&theta, 1.0, &bg, Some(&g0)).unwrap();
    let t2 = curvature_term(&theta, 2.0, &bg, Some(&g0)).unwrap();
    assert!((t2.value - t1.value / 2.0).abs() < 1e-15 * t1.value.abs());
    assert!((t1.error / t1.value - 0.05).abs() < 1e-12);
    let flat = curvature_term(&theta, 1.0, &BoundaryGraph::flat(4, 4.0), Some(&g0)).unwrap();
    assert_eq!(flat.value, 0.0);
}

#[test]
fn flat_verdict_reduces_to_the_half_space() {
    let theta = bump();
    let mc = McConfig { samples_per_batch: 4000, batches: 8, max_rel_stderr: 0.5, ..Default::default() };
    let v = verify_upper_bound(&theta, Some(&report(0.0, 0.0)), &BoundaryGraph::flat(4, 4.0), &[0.4, 1.0], &mc).unwrap();
    for x in &v {
        let t = x.term_breakdown;
        assert_eq!(t.linear_term, 0.0);
        assert_eq!(t.f_term, 0.0);
        assert_eq!(t.curvature_term, 0.0);
        let tol = 4.0 * (x.direct_stderr.powi(2) + x.stderr.powi(2)).sqrt() + 0.02 * x.measured_quotient;
        assert!((x.direct_quotient - x.measured_quotient).abs() < tol, "{x:?}");
    }
    // λ = 1 leaves the bump untouched: flat part equals the half-space quotient
    assert_eq!(v[1].term_breakdown.flat_energy, v[1].reference_quotient);
    assert!(v[0].term_breakdown.denominator_deficit > 0.0);
}

#[test]
fn verify_needs_gamma0_and_room_for_the_cutoff() {
    let theta = bump();
    let mc = McConfig::default();
    assert!(matches!(verify_upper_bound(&theta, None, &cap(0.05), &[1.0], &mc), Err(Error::MissingGamma0)));
    let small = BoundaryGraph::new(vec![0.0; 3], Perturbation::Zero, 2.5, 1.0, 0.1).unwrap();
    assert!(verify_upper_bound(&theta, Some(&report(0.0, 0.0)), &small, &[1.0], &mc).is_err());
}

#[test]
fn csv_has_one_row_per_lambda() {
    let theta = bump();
    let mc = McConfig { samples_per_batch: 1000, batches: 4, max_rel_stderr: 1.0, ..Default::default() };
    let v = verify_upper_bound(&theta, Some(&report(1.0, 0.1)), &cap(0.05), &[1.0, 2.0], &mc).unwrap();
    let csv = verdicts_csv(&v);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "lambda,measured_quotient,stderr,predicted_bound,curvature_term,F_term,pass");
    assert!(lines[1].starts_with("1,"));
}

#[test]
fn residual_fit_recovers_the_two_rates() {
    let mk = |lambda: f64, r: f64| ExpansionVerdict {
        lambda,
        measured_quotient: 10.0 + r,
        stderr: 0.0,
        direct_quotient: 0.0,
        direct_stderr: 0.0,
        reference_quotient: 10.0,
        predicted_bound: 0.0,
        bound_error: 0.0,
        term_breakdown: TermBreakdown {
            flat_energy: 0.0,
            curvature_term: 0.0,
            linear_term: 0.0,
            linear_stderr: 0.0,
            f_term: 0.0,
            f_stderr: 0.0,
            cutoff_corrections: 0.0,
            denominator_deficit: 0.0,
        },
        pass: true,
    };
    let v: Vec<_> = [1.0, 2.0, 3.0, 5.0].iter().map(|&l| mk(l, -0.4 / l - 2.0 * l.powf(-1.5))).collect();
    let f = residual_fit(&v, 0.75).unwrap();
    assert!((f.coefficients[0] + 0.4).abs() < 1e-10 && (f.coefficients[1] + 2.0).abs() < 1e-10);
}

#[test]
fn envelope_cutoff_mass_decays_at_the_predicted_rate() {
    let g = make_grid(4, 16.0, 24, 24, Grading::default()).unwrap();
    let env = synthesize_profile("envelope", &g, 0.75).unwrap();
    let scan = cutoff_deficit_scan(&env, &[2.0, 3.0, 4.0, 5.0]).unwrap();
    for w in scan.rows.windows(2) {
        assert!(w[1].lp_deficit < w[0].lp_deficit);
    }
    let slope = scan.lp_exponent.unwrap().slope;
    // n(n+2σ-2)/(n-2σ) = 5.6
    assert!((slope + 5.6).abs() < 0.15 * 5.6, "slope {slope}");
}
