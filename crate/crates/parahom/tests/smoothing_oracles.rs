//! Brute-force oracles and decay properties of the smoothing operators.

use parahom::fit::ols;
use parahom::mesh::{l2_norm, FieldOnMesh, Integrand, SpaceTimeMesh};
use parahom::smoothing::{
    build_cutoff, cutoff_value, k_eps, k_eps_tilde, layer_norm, smooth, smooth_space_only, smooth_time_only,
    MollifierSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bump(r2: f64) -> f64 {
    if r2 < 1.0 {
        (-1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

/// Direct double sum over every mesh point, weights recomputed from the
/// kernel formulas and normalized over the integer lattice.
fn brute_force(f: &FieldOnMesh, delta: f64, with_time: bool) -> FieldOnMesh {
    let mesh = *f.mesh();
    let h = mesh.h();
    let dt = mesh.stored_tau();
    let reach = (delta / h).ceil() as i64 + 1;
    let jr = if mesh.d == 2 { reach } else { 0 };
    let mut space_mass = 0.0;
    for j in -jr..=jr {
        for i in -reach..=reach {
            space_mass += bump(((i * i + j * j) as f64) * h * h / (delta * delta));
        }
    }
    let time_kernel = |m: i64| -> f64 {
        if m < 1 {
            return 0.0;
        }
        let s = -(m as f64) * dt / (delta * delta);
        if s <= -1.0 {
            return 0.0;
        }
        let z = 2.0 * s + 1.0;
        bump(z * z)
    };
    let time_mass: f64 = (1..10_000).map(time_kernel).sum();
    FieldOnMesh::from_fn(mesh, |x, t| {
        let n = (t / dt).round() as i64;
        let i = (x[0] / h).round() as i64;
        let j = (x[1] / h).round() as i64;
        let mut acc = 0.0;
        for m in 0..mesh.n_levels() as i64 {
            let wt = if with_time {
                time_kernel(n - m) / time_mass
            } else if m == n {
                1.0
            } else {
                0.0
            };
            if wt == 0.0 {
                continue;
            }
            for p in 0..mesh.n_nodes() {
                let [a, b] = mesh.multi_index(p);
                let (di, dj) = (i - a as i64, j - b as i64);
                let ws = bump(((di * di + dj * dj) as f64) * h * h / (delta * delta)) / space_mass;
                if ws != 0.0 {
                    acc += wt * ws * f.get(m as usize, p);
                }
            }
        }
        acc
    })
}

#[test]
fn spike_matches_brute_force() {
    for d in [1, 2] {
        let mesh = SpaceTimeMesh::new(d, 20, 60, 1.0).unwrap();
        let spec = MollifierSpec::new(0.2).unwrap();
        let target = mesh.index(9, if d == 2 { 11 } else { 0 });
        let mut spike = FieldOnMesh::zeros(mesh);
        spike.level_mut(17)[target] = 1.0;
        for with_time in [true, false] {
            let fast = if with_time { smooth(&spike, &spec) } else { smooth_space_only(&spike, &spec) }.unwrap();
            let slow = brute_force(&spike, 0.2, with_time);
            let diff = fast.sub(&slow).unwrap().max_abs();
            assert!(diff <= 1e-14, "d = {d}, time = {with_time}: {diff:e}");
        }
    }
}

#[test]
fn random_field_through_the_cutoff_matches_brute_force() {
    let mesh = SpaceTimeMesh::new(1, 64, 100, 0.5).unwrap();
    let delta = 0.1;
    let spec = MollifierSpec::new(delta).unwrap();
    let cutoff = build_cutoff(&mesh, delta).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise: Vec<f64> = (0..mesh.n_nodes() * mesh.n_levels()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = FieldOnMesh::from_vec(mesh, noise).unwrap();
    let cut = FieldOnMesh::from_fn(mesh, |x, t| cutoff_value(1, delta, x, t)).zip_with(&f, |a, b| a * b).unwrap();
    let fast = k_eps(&f, &spec, &cutoff).unwrap();
    assert!(fast.sub(&brute_force(&cut, delta, true)).unwrap().max_abs() <= 1e-14);
    let fast = k_eps_tilde(&f, &spec, &cutoff).unwrap();
    assert!(fast.sub(&brute_force(&cut, delta, false)).unwrap().max_abs() <= 1e-14);
}

#[test]
fn splitting_commutes_and_is_contractive() {
    let mesh = SpaceTimeMesh::new(2, 24, 60, 0.5).unwrap();
    let spec = MollifierSpec::new(0.15).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let values: Vec<f64> = (0..mesh.n_nodes() * mesh.n_levels()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let f = FieldOnMesh::from_vec(mesh, values).unwrap();
    let full = smooth(&f, &spec).unwrap();
    let a = smooth_space_only(&smooth_time_only(&f, &spec).unwrap(), &spec).unwrap();
    let b = smooth_time_only(&smooth_space_only(&f, &spec).unwrap(), &spec).unwrap();
    assert!(full.sub(&a).unwrap().max_abs() <= 1e-14);
    assert!(full.sub(&b).unwrap().max_abs() <= 1e-14);
    assert!(full.values().iter().all(|&v| v >= 0.0));
    assert!(full.max_abs() <= f.max_abs());
}

#[test]
fn deep_interior_values_of_k_eps_equal_the_mollified_field() {
    let mesh = SpaceTimeMesh::new(1, 200, 800, 1.0).unwrap();
    let delta = 0.05;
    let spec = MollifierSpec::new(delta).unwrap();
    let cutoff = build_cutoff(&mesh, delta).unwrap();
    let one = FieldOnMesh::from_fn(mesh, |_, _| 1.0);
    let k = k_eps(&one, &spec, &cutoff).unwrap();
    // x = 0.5, t = 1
    assert!((k.get(mesh.n_levels() - 1, 100) - 1.0).abs() < 1e-14);
    // supported inside the 2δ layer: annihilated
    let layer = FieldOnMesh::from_fn(mesh, |x, _| if x[0] < 2.0 * delta { 1.0 } else { 0.0 });
    assert_eq!(k_eps(&layer, &spec, &cutoff).unwrap().max_abs(), 0.0);
}

#[test]
fn commutator_decays_in_delta() {
    // g ∇f with f compactly supported in space-time
    let mesh = SpaceTimeMesh::new(1, 320, 4096, 0.2).unwrap();
    let f_bump = |x: f64, t: f64| {
        let z = (x - 0.5) / 0.3;
        let s = (t - 0.12) / 0.07;
        bump(z * z) * bump(s * s)
    };
    let f = FieldOnMesh::from_fn(mesh, |x, t| f_bump(x[0], t));
    let g = FieldOnMesh::from_fn(mesh, |x, t| 1.0 + x[0] * t);
    let product = g.zip_with(&f.node_gradient(0), |a, b| a * b).unwrap();
    let mut pts = Vec::new();
    for delta in [0.1, 0.05, 0.025, 0.0125] {
        let smoothed = smooth(&product, &MollifierSpec::new(delta).unwrap()).unwrap();
        let err = l2_norm(&product.sub(&smoothed).unwrap(), Integrand::Value);
        pts.push((f64::ln(delta), err.ln()));
    }
    let slope = ols(&pts).slope;
    assert!(slope >= 0.9, "slope {slope}");
}

#[test]
fn layer_gradient_norm_scales_like_root_rho() {
    let mesh = SpaceTimeMesh::new(1, 400, 1600, 1.0).unwrap();
    let g = FieldOnMesh::from_fn(mesh, |x, t| (std::f64::consts::PI * x[0]).sin() * (1.0 + t));
    let pts: Vec<(f64, f64)> = [0.2, 0.1, 0.05, 0.025]
        .iter()
        .map(|&rho| (f64::ln(rho), layer_norm(&g, rho, Integrand::Gradient).ln()))
        .collect();
    let slope = ols(&pts).slope;
    assert!(slope >= 0.45, "slope {slope}");
}
