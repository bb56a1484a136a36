//! Small linear solvers: (cyclic) tridiagonal elimination and Jacobi
//! preconditioned conjugate gradients.

use crate::error::{Error, Result};

/// Thomas algorithm for `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]`.
/// `lower[0]` and `upper[n-1]` are ignored.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    solve_tridiagonal_into(lower, diag, upper, rhs, &mut c, &mut x);
    x
}

/// [`solve_tridiagonal`] writing into `x`, with `scratch` of the same length.
pub fn solve_tridiagonal_into(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
    scratch: &mut [f64],
    x: &mut [f64],
) {
    let n = diag.len();
    let c = scratch;
    let mut inv = 1.0 / diag[0];
    x[0] = rhs[0] * inv;
    for i in 1..n {
        c[i] = upper[i - 1] * inv;
        inv = 1.0 / (diag[i] - lower[i] * c[i]);
        x[i] = (rhs[i] - lower[i] * x[i - 1]) * inv;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i + 1] * x[i + 1];
    }
}

/// Periodic tridiagonal system: the corner entries are `lower[0]` (row 0,
/// column n−1) and `upper[n-1]` (row n−1, column 0). Sherman–Morrison on
/// top of the Thomas algorithm.
pub fn solve_cyclic_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    assert!(n >= 3);
    let alpha = upper[n - 1];
    let beta = lower[0];
    let gamma = -diag[0];
    let mut d = diag.to_vec();
    d[0] -= gamma;
    d[n - 1] -= alpha * beta / gamma;
    let x = solve_tridiagonal(lower, &d, upper, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(lower, &d, upper, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

/// Outcome of a CG solve.
#[derive(Debug, Clone, Copy)]
pub struct CgStats {
    pub iterations: usize,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Jacobi-preconditioned CG for a symmetric positive (semi)definite
/// operator. With `zero_mean` the iteration runs in the mean-zero subspace,
/// which makes singular periodic operators with consistent data solvable.
/// Stops when `‖r‖ ≤ tol·‖b‖`.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    rhs: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    zero_mean: bool,
) -> Result<CgStats> {
    let n = rhs.len();
    let mut b = rhs.to_vec();
    if zero_mean {
        remove_mean(&mut b);
        remove_mean(x);
    }
    let b_norm = dot(&b, &b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats { iterations: 0, residual: 0.0 });
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    if zero_mean {
        remove_mean(&mut r);
    }
    let precond = |r: &[f64], z: &mut [f64]| {
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        if zero_mean {
            remove_mean(z);
        }
    };
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..=max_iter {
        let res = dot(&r, &r).sqrt() / b_norm;
        if res <= tol {
            return Ok(CgStats { iterations: it, residual: res });
        }
        if it == max_iter {
            return Err(Error::LinearSolveFailed { iterations: it, residual: res });
        }
        apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if zero_mean {
            remove_mean(&mut r);
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    unreachable!()
}
