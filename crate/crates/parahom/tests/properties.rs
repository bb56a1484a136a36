use proptest::prelude::*;

use parahom::coefficients::{builtin_field, rescale_lambda};
use parahom::effective::ellipticity_certificate;
use parahom::mesh::{FieldOnMesh, SpaceTimeMesh};
use parahom::rates::{fit_rate, predicted_h1_exponent, predicted_l2_exponent};
use parahom::smoothing::{smooth, MollifierSpec};
use parahom::torus::{cell_mean, discrete_gradient, poisson_spacetime, spacetime_laplacian, CellField, CellGrid};

fn cell_field(grid: CellGrid, values: &[f64]) -> CellField {
    let n = grid.n_space() * grid.n_s;
    let data: Vec<f64> = (0..n).map(|i| values[i % values.len()] * (1.0 + (i / values.len()) as f64 * 0.1)).collect();
    CellField::from_vec(grid, grid.n_s, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn l2_exponent_is_continuous_off_two(k in prop_oneof![0.02f64..1.98, 2.02f64..8.0]) {
        let a = predicted_l2_exponent(k).unwrap();
        let b = predicted_l2_exponent(k + 1e-9).unwrap();
        prop_assert!((a - b).abs() <= 1e-6);
    }

    #[test]
    fn h1_exponent_is_continuous_off_two(k in prop_oneof![0.02f64..1.98, 2.02f64..8.0]) {
        let a = predicted_h1_exponent(k).unwrap();
        let b = predicted_h1_exponent(k + 1e-9).unwrap();
        prop_assert!((a - b).abs() <= 1e-6);
    }

    #[test]
    fn relaxing_the_tolerance_never_fails_a_pass(
        errors in prop::collection::vec(1e-6f64..1.0, 3..7),
        predicted in 0.1f64..1.5,
        tol in 0.0f64..0.5,
        extra in 0.0f64..0.5,
    ) {
        let samples: Vec<(f64, f64)> = errors.iter().enumerate().map(|(i, &e)| (0.5f64.powi(i as i32 + 2), e)).collect();
        let strict = fit_rate(&samples, predicted, tol).unwrap();
        let loose = fit_rate(&samples, predicted, tol + extra).unwrap();
        prop_assert!(!strict.pass || loose.pass);
    }

    #[test]
    fn smoothing_is_linear_positive_and_contractive(
        a in prop::collection::vec(0.0f64..1.0, 8),
        b in prop::collection::vec(-1.0f64..1.0, 8),
        alpha in -2.0f64..2.0,
    ) {
        let mesh = SpaceTimeMesh::new(1, 40, 100, 0.4).unwrap();
        let spec = MollifierSpec::new(0.1).unwrap();
        let f = FieldOnMesh::from_fn(mesh, |x, t| a.iter().enumerate().map(|(i, c)| c * ((i as f64 + 1.0) * x[0] + t).cos().powi(2)).sum());
        let g = FieldOnMesh::from_fn(mesh, |x, t| b.iter().enumerate().map(|(i, c)| c * ((i as f64) * (x[0] - t)).sin()).sum());
        let combo = f.zip_with(&g, |u, v| u + alpha * v).unwrap();
        let (sf, sg, sc) = (smooth(&f, &spec).unwrap(), smooth(&g, &spec).unwrap(), smooth(&combo, &spec).unwrap());
        let lin = sf.zip_with(&sg, |u, v| u + alpha * v).unwrap();
        prop_assert!(sc.sub(&lin).unwrap().max_abs() <= 1e-12 * (1.0 + combo.max_abs()));
        prop_assert!(sf.values().iter().all(|&v| v >= 0.0));
        prop_assert!(sc.max_abs() <= combo.max_abs() * (1.0 + 1e-14));
    }

    #[test]
    fn interpolation_is_periodic(y0 in 0.0f64..1.0, y1 in 0.0f64..1.0, s in 0.0f64..4.0, lambda in 0.25f64..4.0, shift in -3i32..3) {
        let grid = CellGrid::new(2, 8, 8, lambda).unwrap();
        let f = CellField::from_fn(grid, |y, s| (6.0 * y[0]).sin() + y[1] * (1.0 - y[1]) + (s / lambda).cos());
        let base = f.interpolate([y0, y1], s);
        let moved = f.interpolate([y0 + shift as f64, y1 - shift as f64], s + shift as f64 * lambda);
        prop_assert!((base - moved).abs() <= 1e-12);
    }

    #[test]
    fn poisson_inverts_the_laplacian(values in prop::collection::vec(-1.0f64..1.0, 5..20), lambda in 0.25f64..4.0, d in 1usize..3) {
        let grid = CellGrid::new(d, 8, 8, lambda).unwrap();
        let mut f = cell_field(grid, &values);
        let m = cell_mean(&f);
        f = f.map(|v| v - m);
        let back = poisson_spacetime(&spacetime_laplacian(&f)).unwrap();
        let err = (&back - &f).max_abs();
        prop_assert!(err <= 1e-12 * f.max_abs().max(1e-300), "{}", err);
    }

    #[test]
    fn gradients_have_zero_mean(values in prop::collection::vec(-1.0f64..1.0, 3..20), d in 1usize..3) {
        let grid = CellGrid::new(d, 8, 4, 1.0).unwrap();
        let f = cell_field(grid, &values);
        for g in discrete_gradient(&f) {
            prop_assert!(cell_mean(&g).abs() <= 1e-14);
        }
    }

    #[test]
    fn rescaling_stretches_time(y in 0.0f64..1.0, s in 0.0f64..2.0, lambda in 0.1f64..10.0, c in 0.05f64..0.9) {
        let field = builtin_field(1, "sep-trig", &[c]).unwrap();
        let stretched = rescale_lambda(&field, lambda).unwrap();
        let a = stretched.diagonal([y, 0.0], lambda * s, 0);
        let b = field.diagonal([y, 0.0], s, 0);
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn builtins_honor_their_ellipticity_constant(
        c1 in -0.9f64..0.9,
        c2 in -0.9f64..0.9,
        y0 in 0.0f64..1.0,
        y1 in 0.0f64..1.0,
        s in 0.0f64..1.0,
        d in 1usize..3,
    ) {
        for (name, params) in [
            ("time-only", vec![c1]),
            ("space-only", vec![c1]),
            ("sep-trig", vec![c1]),
            ("prod-trig", vec![c1, c2]),
            ("checkerboard-smooth", vec![c1, 0.1]),
        ] {
            let field = builtin_field(d, name, &params).unwrap();
            let a = field.eval([y0, y1], s);
            prop_assert!(ellipticity_certificate(&a) >= field.mu() - 1e-12, "{}", name);
            prop_assert!(a.operator_norm() <= 1.0 / field.mu() + 1e-12, "{}", name);
        }
    }
}
