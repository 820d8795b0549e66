use super::*;
use crate::energy::{lp_norm, rayleigh_quotient};
use crate::field::synthesize_profile;
use approx::assert_relative_eq;

fn envelope_field(l: f64, m: usize) -> RadialField {
    let g = make_grid(4, 16.0, m, m, Grading::default()).unwrap();
    RadialField::from_regular_fn(g, 0.75, |r, z| (1.0 + (r * r + z * z) / (l * l)).powf(-1.75)).unwrap()
}

fn quick() -> SolverConfig {
    SolverConfig { r_max: 8.0, schedule: vec![8, 12], max_iterations: 40, ..Default::default() }
}

#[test]
fn validation_rejects_bad_configs() {
    assert!(SolverConfig::default().validate().is_ok());
    let cases = [
        SolverConfig { n: 3, sigma: 0.8, ..Default::default() },
        SolverConfig { sigma: 0.5, ..Default::default() },
        SolverConfig { schedule: vec![16, 16], ..Default::default() },
        SolverConfig { schedule: vec![], ..Default::default() },
        SolverConfig { pin_height: 4.0, ..Default::default() },
        SolverConfig { dilation_period: 0, ..Default::default() },
        SolverConfig { backtrack: 1.0, ..Default::default() },
    ];
    for c in cases {
        assert!(matches!(solve_halfspace(&c), Err(Error::InvalidParams(_))), "{c:?}");
    }
}

#[test]
fn config_hash_tracks_content() {
    let a = SolverConfig::default();
    assert_eq!(a.hash(), SolverConfig::default().hash());
    assert_ne!(a.hash(), SolverConfig { seed: 2, ..Default::default() }.hash());
}

#[test]
fn unit_dilation_is_identity() {
    let f = envelope_field(1.0, 12);
    assert_eq!(scale_field(&f, 1.0).unwrap(), f);
    assert!(scale_field(&f, 0.0).is_err());
}

#[test]
fn dilation_preserves_the_critical_norm() {
    let g = make_grid(4, 8.0, 32, 32, Grading::default()).unwrap();
    let f = RadialField::from_regular_fn(g, 0.75, |r, z| (1.0 + r * r + z * z).powf(-1.75)).unwrap().with_tail(TailModel::Zero);
    let p = critical_exponent(4, 0.75);
    let base = lp_norm(&f, p);
    for lambda in [0.8, 1.25] {
        let g = scale_field(&f, lambda).unwrap();
        // resampling onto the same grid costs a few tenths of a percent
        assert_relative_eq!(lp_norm(&g, p), base, max_relative = 5e-3);
    }
}

#[test]
fn envelope_peaks_where_expected() {
    // e/z = d z/(ℓ²+z²) gives z = ℓ √(e/(d-e)) = ℓ/√6; the interpolant
    // shifts the maximum by a fraction of the local cell
    let l = 2.0;
    let f = envelope_field(l, 48);
    assert_relative_eq!(axis_peak(&f), l / 6f64.sqrt(), max_relative = 2e-2);
}

#[test]
fn envelope_passes_its_own_check() {
    let f = envelope_field(1.0, 48);
    let rep = envelope_check(&f).unwrap();
    assert_relative_eq!(rep.scale, 1.0, max_relative = 2e-2);
    assert!(rep.far_field.within(3.5, 0.02), "{:?}", rep.far_field);
    assert!(rep.boundary.within(0.5, 0.02), "{:?}", rep.boundary);
    assert!(rep.ratio_min > 0.95 && rep.ratio_max < 1.02, "{rep:?}");
}

#[test]
fn exact_dilation_keeps_quadratures() {
    let g = make_grid(4, 3.0, 10, 10, Grading::default()).unwrap();
    let f = synthesize_profile("compact-bump", &g, 0.75).unwrap();
    let ctx = EnergyContext::new(&f.grid, KernelParams::energy(4, 0.75).unwrap()).unwrap();
    let q = rayleigh_quotient(&f, &ctx).unwrap();
    let d = dilate_grid(&f, 1.7).unwrap();
    let ctx_d = EnergyContext::new(&d.grid, KernelParams::energy(4, 0.75).unwrap()).unwrap();
    assert_relative_eq!(rayleigh_quotient(&d, &ctx_d).unwrap(), q, max_relative = 1e-9);
    let p = critical_exponent(4, 0.75);
    assert_relative_eq!(lp_norm(&d, p), lp_norm(&f, p), max_relative = 1e-12);
}

#[test]
fn short_run_descends_and_pins() {
    let cfg = quick();
    let res = solve_halfspace(&cfg).unwrap();
    assert!(res.theta.regular_values.iter().all(|&v| v >= 0.0));
    for level in 0..cfg.schedule.len() {
        let qs: Vec<f64> = res.trace.iter().filter(|t| t.level == level).map(|t| t.quotient).collect();
        for w in qs.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "level {level}: {} -> {}", w[0], w[1]);
        }
    }
    assert_relative_eq!(axis_peak(&res.theta), cfg.pin_height, max_relative = 1e-6);
    assert_relative_eq!(lp_norm(&res.theta, critical_exponent(4, 0.75)), 1.0, max_relative = 1e-9);
    // the last level's quotient is reproduced by the pinned field
    let ctx = EnergyContext::new(&res.theta.grid, KernelParams::energy(4, 0.75).unwrap()).unwrap();
    assert_relative_eq!(rayleigh_quotient(&res.theta, &ctx).unwrap(), res.s_estimate, max_relative = 1e-8);
    assert_eq!(res.levels.len(), 2);
    assert!(res.s_estimate < res.trace[0].quotient);
    // the closing rearrangement moves the quotient only at quadrature level
    for (k, l) in res.levels.iter().enumerate() {
        let last = res.trace.iter().filter(|t| t.level == k).last().unwrap().quotient;
        assert!((l.s_estimate - last).abs() <= 1e-4 * last, "level {k}: {last} -> {}", l.s_estimate);
    }
}

#[test]
fn results_round_trip_through_files() {
    let res = solve_halfspace(&SolverConfig { schedule: vec![8], max_iterations: 10, ..quick() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let [field, json] = save_result(&res, dir.path(), "theta").unwrap();
    let back = crate::field::load_field(&field).unwrap();
    assert_eq!(back.regular_values, res.theta.regular_values);
    let side = load_sidecar(&json).unwrap();
    assert_eq!(side.s_estimate, res.s_estimate);
    assert_eq!(side.config_hash, res.config.hash());
    assert_eq!(side.trace.len(), res.trace.len());
}
