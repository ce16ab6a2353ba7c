#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;

use fdspde::field::Coefficient;
use fdspde::grid::{apply_lh, GridFunction, TorusGrid};
use fdspde::noise::{coarsen_path, sample_path};
use fdspde::richardson::{extrapolate, vandermonde_weights};
use fdspde::stencil::{
    build_diagdom_stencil, check_nonnegativity, reconstruct_pde, validate_stencil, DiagDomShifts,
    Sample,
};
use fdspde::weights::{transform_stencil, WeightSpec};

/// Symmetric diagonally dominant matrix from off-diagonal entries and
/// diagonal slack.
fn dominant(d: usize, off: &[f64], slack: &[f64]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; d]; d];
    let mut k = 0;
    for i in 0..d {
        for j in (i + 1)..d {
            a[i][j] = off[k];
            a[j][i] = off[k];
            k += 1;
        }
    }
    for i in 0..d {
        a[i][i] = (0..d)
            .filter(|&j| j != i)
            .map(|j| a[i][j].abs())
            .sum::<f64>()
            + slack[i];
    }
    a
}

fn matrix_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..=5).prop_flat_map(|d| {
        (
            prop::collection::vec(-2.0f64..2.0, d * (d - 1) / 2),
            prop::collection::vec(0.0f64..1.0, d),
        )
            .prop_map(move |(off, slack)| dominant(d, &off, &slack))
    })
}

fn constant_matrix(a: &[Vec<f64>]) -> Vec<Vec<Coefficient>> {
    a.iter()
        .map(|row| row.iter().map(|&v| Coefficient::Constant(v)).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diagdom_stencils_round_trip(a in matrix_strategy(), b_scale in -1.0f64..1.0) {
        let d = a.len();
        let b: Vec<f64> = (0..d).map(|i| b_scale * (i as f64 + 1.0)).collect();
        let b_sup: Vec<f64> = b.iter().map(|v| v.abs()).collect();
        let spec = build_diagdom_stencil(
            constant_matrix(&a),
            b.iter().map(|&v| Coefficient::Constant(v)).collect(),
            Coefficient::Constant(-0.5),
            &DiagDomShifts::minimal(0.0, &b_sup),
            &[],
        )
        .unwrap();
        let x = vec![0.0; d];
        let samples = [Sample::new(0.0, x.clone(), 0.1)];
        prop_assert!(validate_stencil(&spec, &samples).is_clean());
        prop_assert!(check_nonnegativity(&spec, &samples).is_clean());
        let got = reconstruct_pde(&spec, 0.0, &x);
        for i in 0..d {
            prop_assert!((got.b[i] - b[i]).abs() <= 1e-12);
            for j in 0..d {
                prop_assert!((got.a[i][j] - a[i][j]).abs() <= 1e-12);
            }
        }
        prop_assert!((got.c + 0.5).abs() <= 1e-15);
    }

    #[test]
    fn conjugation_holds_for_random_weights(
        values in prop::collection::vec(-1.0f64..1.0, 144),
        s_bar in 0.5f64..4.0,
        epsilon in 0.05f64..2.0,
        cross in -0.3f64..0.3,
    ) {
        let grid = TorusGrid::new(2, 12, 1.5).unwrap();
        let a = dominant(2, &[cross], &[0.4, 0.2]);
        let spec = build_diagdom_stencil(
            constant_matrix(&a),
            vec![Coefficient::spatial(|x, _| x[1].sin()), Coefficient::Constant(0.2)],
            Coefficient::zero(),
            &DiagDomShifts::minimal(0.1, &[1.0, 0.2]),
            &[],
        )
        .unwrap();
        let w = WeightSpec::new(s_bar, epsilon).unwrap();
        let hat = transform_stencil(&spec, &w, &grid).unwrap();
        let rho = GridFunction::from_fn(&grid, |x| w.rho_periodic(x, 1.5));
        let u = GridFunction::from_values(&grid, values).unwrap();
        let lhs = apply_lh(&hat, 0.0, &(&u * &rho)).unwrap();
        let rhs = &apply_lh(&spec, 0.0, &u).unwrap() * &rho;
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-11 * rhs.sup_norm().max(1.0));
    }

    #[test]
    fn extrapolation_removes_polynomial_error(
        coeffs in prop::collection::vec(-5.0f64..5.0, 3),
        k in 1usize..=3,
    ) {
        // u^h = u + sum_j c_j h^j e_j exactly; k = 3 removes every term
        let coarse = TorusGrid::new(1, 8, 1.0).unwrap();
        let plan = vandermonde_weights(k, None).unwrap();
        let exact = |x: &[f64]| (std::f64::consts::TAU * x[0]).cos();
        let solutions: Vec<GridFunction> = plan
            .ratios()
            .iter()
            .map(|&r| {
                let grid = coarse.refined(r as usize).unwrap();
                let h = grid.h();
                GridFunction::from_fn(&grid, |x| {
                    exact(x)
                        + coeffs
                            .iter()
                            .enumerate()
                            .take(k)
                            .map(|(j, c)| c * h.powi(j as i32 + 1) * (x[0] + j as f64))
                            .sum::<f64>()
                })
            })
            .collect();
        let v = extrapolate(&plan, &solutions).unwrap();
        let want = GridFunction::from_fn(&coarse, exact);
        prop_assert!(v.max_abs_diff(&want).unwrap() <= 1e-12);
    }

    #[test]
    fn coarsening_preserves_the_path(seed in any::<u64>(), factor in 1usize..=8) {
        let fine = sample_path(seed, 1.0, 8 * factor, 2).unwrap();
        let coarse = coarsen_path(&fine, factor).unwrap();
        prop_assert_eq!(coarse.steps(), 8);
        for n in 0..=8 {
            for r in 0..2 {
                let a = coarse.value(n, r);
                let b = fine.value(n * factor, r);
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}
