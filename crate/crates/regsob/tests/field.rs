use proptest::prelude::*;

use regsob::field::{eval_u, field_from_bytes, field_to_bytes, make_grid, Grading, RadialField};

fn grid_strategy() -> impl Strategy<Value = (usize, usize, usize, f64, f64)> {
    (2usize..6, 4usize..10, 4usize..10, 1.0f64..3.0, 0.5f64..8.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn persistence_is_bit_exact((n, nr, nz, beta, r_max) in grid_strategy(), seed in any::<u64>()) {
        let g = make_grid(n, r_max, nr, nz, Grading { beta_r: beta, beta_z: beta }).unwrap();
        let vals: Vec<f64> = (0..g.len()).map(|k| ((k as u64).wrapping_mul(seed | 1) % 1000) as f64 / 7.0 - 50.0).collect();
        let f = RadialField::from_regular(g, 0.75, vals).unwrap();
        let back = field_from_bytes(&field_to_bytes(&f).unwrap()).unwrap();
        prop_assert_eq!(back.regular_values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        f.regular_values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back.grid, f.grid);
    }

    #[test]
    fn weights_integrate_linear_functions((n, nr, nz, beta, r_max) in grid_strategy(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let g = make_grid(n, r_max, nr, nz, Grading { beta_r: beta, beta_z: beta }).unwrap();
        let m = (n - 2) as i32;
        let sum_r: f64 = g.r_nodes.iter().zip(&g.r_weights).map(|(r, w)| w * (a + b * r)).sum();
        let want_r = a * r_max.powi(m + 1) / (m + 1) as f64 + b * r_max.powi(m + 2) / (m + 2) as f64;
        prop_assert!((sum_r - want_r).abs() <= 1e-10 * (1.0 + want_r.abs()));
        let sum_z: f64 = g.z_nodes.iter().zip(&g.z_weights).map(|(z, w)| w * (a + b * z)).sum();
        let want_z = a * r_max + b * r_max * r_max / 2.0;
        prop_assert!((sum_z - want_z).abs() <= 1e-10 * (1.0 + want_z.abs()));
    }

    #[test]
    fn interpolant_is_exact_at_nodes_and_continuous((n, nr, nz, beta, r_max) in grid_strategy(), i in 0usize..4, j in 1usize..4) {
        let g = make_grid(n, r_max, nr, nz, Grading { beta_r: beta, beta_z: beta }).unwrap();
        let f = RadialField::from_regular_fn(g.clone(), 0.75, |r, z| (1.0 + r * r + z).recip()).unwrap();
        let (r, z) = (g.r_nodes[i], g.z_nodes[j]);
        let want = z.sqrt() * f.regular_values[g.idx(i, j)];
        prop_assert!((eval_u(&f, r, z) - want).abs() <= 1e-14 * want.abs().max(1e-300));
        // a node is shared by four cells: approach it from each side
        let h = 1e-9 * r_max;
        for (dr, dz) in [(h, h), (-h, h), (h, -h), (-h, -h)] {
            let v = eval_u(&f, (r + dr).max(0.0), z + dz);
            prop_assert!((v - want).abs() <= 1e-6 * want.abs());
        }
    }
}
