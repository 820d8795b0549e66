use proptest::prelude::*;

use regsob::field::{make_grid, synthesize_profile, Grading, TailModel};
use regsob::gamma0::{estimate_gamma0, sign_verdict, tail_bound, weighted_scan, SignVerdict};

proptest! {
    #[test]
    fn verdict_respects_the_budget(value in -10.0f64..10.0, budget in 0.0f64..10.0) {
        let v = sign_verdict(value, budget);
        let want = if value - budget > 0.0 {
            SignVerdict::Positive
        } else if value + budget < 0.0 {
            SignVerdict::Negative
        } else {
            SignVerdict::Indeterminate
        };
        prop_assert_eq!(v, want);
        // flipping the sign flips a definite verdict
        let flipped = match v {
            SignVerdict::Positive => SignVerdict::Negative,
            SignVerdict::Negative => SignVerdict::Positive,
            SignVerdict::Indeterminate => SignVerdict::Indeterminate,
        };
        prop_assert_eq!(sign_verdict(-value, budget), flipped);
    }
}

#[test]
fn exterior_energy_is_nonincreasing_in_the_radius() {
    let g = make_grid(4, 8.0, 16, 16, Grading::default()).unwrap();
    let env = synthesize_profile("envelope", &g, 0.75).unwrap();
    let lambdas = [0.5, 1.0, 2.0, 3.0];
    for gamma in [0.5, 1.0] {
        let s = weighted_scan(&env, gamma, &lambdas).unwrap();
        assert!(s.exterior.windows(2).all(|w| w[1] <= w[0]), "{s:?}");
        assert!(s.interior.windows(2).all(|w| w[1] >= w[0]), "{s:?}");
        let t = tail_bound(&env, 1.0, gamma).unwrap();
        assert!((t - s.exterior[1]).abs() <= 1e-6 * t, "{t} vs {}", s.exterior[1]);
    }
}

#[test]
fn estimate_is_finite_and_reports_every_grid() {
    let g = make_grid(4, 6.0, 16, 16, Grading::default()).unwrap();
    let env = synthesize_profile("envelope", &g, 0.75).unwrap().with_tail(TailModel::Zero);
    let rep = estimate_gamma0(&env, &[0.5, 1.0, 2.0], &[8, 16], 7).unwrap();
    assert!(rep.value.is_finite() && rep.grid_extrapolation_error.is_finite());
    assert!(rep.truncation_tail_bound >= 0.0);
    assert_eq!(rep.theta_provenance, 7);
    assert_eq!(rep.grids, vec![8, 16]);
    assert!(rep.verdict_line().contains("Γ₀"));
}
