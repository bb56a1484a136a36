//! Cell problems: the parabolic corrector `χ^λ`, the elliptic correctors
//! `χ^∞` and `χ^0`, the flux `B_λ`, dual correctors and second-order
//! correctors.
//!
//! Discretization: `χ` lives at nodes and integer time levels, fluxes live
//! at faces and at the time where the scheme samples the coefficient
//! (`(j + θ)·tau` for step `j`). One step of the march reads
//!
//! ```text
//! (χ^{j+1} − χ^j)/tau = Σ_k D_k^−( a_k (D_k^+ χ̄ + g_k) ) + r,   χ̄ = θχ^{j+1} + (1−θ)χ^j
//! ```
//!
//! so the discrete divergence identity `Σ_i D_i^− b_ij = D_s^+ χ_j` holds to
//! solver precision.

mod dual;
mod second;

pub use dual::{solve_dual_correctors, DualCorrectors, DualDiagnostics};
pub use second::{lemma51_residual, solve_second_correctors, PairResidual, SecondCorrectorSet};

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientField, Tensor};
use crate::effective::{EffectiveTensor, Provenance};
use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, solve_cyclic_tridiagonal};
use crate::torus::{cell_mean, Axis, CellField, CellGrid};

/// Time discretization of the cell march.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeScheme {
    ImplicitEuler,
    CrankNicolson,
}

impl TimeScheme {
    pub fn theta(self) -> f64 {
        match self {
            TimeScheme::ImplicitEuler => 1.0,
            TimeScheme::CrankNicolson => 0.5,
        }
    }
}

/// Tolerances of the cell solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSettings {
    /// Period-map stopping tolerance on `‖χ^(n+1)(·,0) − χ^(n)(·,0)‖_∞`.
    pub tol: f64,
    pub max_periods: usize,
    pub cg_tol: f64,
    pub scheme: TimeScheme,
}

impl Default for CellSettings {
    fn default() -> Self {
        Self { tol: 1e-10, max_periods: 200, cg_tol: 1e-11, scheme: TimeScheme::CrankNicolson }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectorKind {
    Parabolic,
    EllipticInfinity,
    EllipticZero,
}

/// Correctors `χ_j`, their face gradients and fluxes.
#[derive(Debug, Clone)]
pub struct CorrectorSet {
    pub grid: CellGrid,
    pub kind: CorrectorKind,
    pub scheme: TimeScheme,
    /// `chi[j]`.
    pub chi: Vec<CellField>,
    /// `grad_chi[j][i] = D_i^+ χ̄_j`, on faces `i` at flux times.
    pub grad_chi: Vec<Vec<CellField>>,
    /// `flux[i][j] = a_ik (δ_kj + D_k^+ χ̄_j)`, on faces `i` at flux times.
    pub flux: Vec<Vec<CellField>>,
    /// RMS of the discrete equation residual.
    pub residual_norm: f64,
    /// Period-map increments, one per period (parabolic kind only).
    pub increments: Vec<f64>,
    /// `⨍|∇χ_j|²` per `j`.
    pub energy: Vec<f64>,
}

impl CorrectorSet {
    /// `⨍(A + A∇χ)`.
    pub fn averaged_flux(&self) -> Tensor {
        let d = self.grid.d;
        let mut t = Tensor::scalar(d, 0.0);
        for i in 0..d {
            for j in 0..d {
                t.m[i][j] = cell_mean(&self.flux[i][j]);
            }
        }
        t
    }

    /// Largest slice mean of any `χ_j`.
    pub fn max_slice_mean(&self) -> f64 {
        self.chi.iter().flat_map(|c| c.slice_means()).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max_j (⨍|∇χ_j|²)^(1/2)`.
    pub fn energy_bound(&self) -> f64 {
        self.energy.iter().fold(0.0f64, |m, &e| m.max(e)).sqrt()
    }

    /// Whether the period-map increments did not grow over the final three
    /// periods.
    pub fn monotone_tail(&self) -> bool {
        let n = self.increments.len();
        n < 4 || self.increments[n - 4..].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-15)
    }
}

/// Face samples `a_kk(y_p + h e_k/2, s)` at the flux times of a grid.
pub(crate) struct Faces {
    /// `[level][axis][p]`.
    pub levels: Vec<Vec<Vec<f64>>>,
}

impl Faces {
    pub fn sample(field: &CoefficientField, grid: &CellGrid, offset: f64) -> Self {
        let times: Vec<f64> = (0..grid.n_s).map(|j| (j as f64 + offset) * grid.tau()).collect();
        Self::sample_at(field, grid, &times)
    }

    pub fn sample_at(field: &CoefficientField, grid: &CellGrid, times: &[f64]) -> Self {
        let h = grid.h();
        let levels = times
            .iter()
            .map(|&s| {
                (0..grid.d)
                    .map(|k| {
                        (0..grid.n_space())
                            .map(|p| {
                                let mut y = grid.node(p);
                                y[k] += 0.5 * h;
                                field.diagonal(y, s, k)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { levels }
    }

    /// Time average of all levels, as a single level.
    pub fn averaged(&self) -> Self {
        let n = self.levels.len() as f64;
        let mut avg = self.levels[0].clone();
        for lvl in &self.levels[1..] {
            for (a, b) in avg.iter_mut().zip(lvl) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
        }
        avg.iter_mut().flatten().for_each(|v| *v /= n);
        Self { levels: vec![avg] }
    }
}

/// `K x = −Σ_k D_k^−(a_k D_k^+ x)`.
pub(crate) fn apply_cell_operator(grid: &CellGrid, faces: &[Vec<f64>], x: &[f64], out: &mut [f64]) {
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    for (p, o) in out.iter_mut().enumerate() {
        let mut v = 0.0;
        for (k, a) in faces.iter().enumerate() {
            let q_up = grid.shift(p, k, 1);
            let q_dn = grid.shift(p, k, -1);
            v -= a[p] * (x[q_up] - x[p]) - a[q_dn] * (x[p] - x[q_dn]);
        }
        *o = v * inv_h2;
    }
}

/// `Σ_k D_k^− G_k` for face vectors `G`.
pub(crate) fn face_divergence(grid: &CellGrid, g: &[Vec<f64>], out: &mut [f64]) {
    let inv_h = 1.0 / grid.h();
    for (p, o) in out.iter_mut().enumerate() {
        let mut v = 0.0;
        for (k, gk) in g.iter().enumerate() {
            v += gk[p] - gk[grid.shift(p, k, -1)];
        }
        *o = v * inv_h;
    }
}

/// Result of a periodic march.
pub(crate) struct March {
    pub levels: Vec<Vec<f64>>,
    pub increments: Vec<f64>,
    pub residual_norm: f64,
}

/// Finds the time-periodic solution of
/// `(x^{j+1} − x^j)/tau + K_j(θx^{j+1} + (1−θ)x^j) = q_j` by iterating the
/// period map from zero.
pub(crate) fn periodic_march(
    grid: &CellGrid,
    faces: &Faces,
    forcing: &[Vec<f64>],
    settings: &CellSettings,
) -> Result<March> {
    let n = grid.n_space();
    let ns = grid.n_s;
    let theta = settings.scheme.theta();
    let tau = grid.tau();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut x0 = vec![0.0; n];
    let mut increments = Vec::new();
    let mut levels = vec![vec![0.0; n]; ns];
    let mut kx = vec![0.0; n];
    let mut rhs = vec![0.0; n];

    let step = |j: usize, x: &[f64], kx: &mut Vec<f64>, rhs: &mut Vec<f64>| -> Result<Vec<f64>> {
        let a = &faces.levels[j];
        apply_cell_operator(grid, a, x, kx);
        for p in 0..n {
            rhs[p] = x[p] / tau - (1.0 - theta) * kx[p] + forcing[j][p];
        }
        if grid.d == 1 {
            let a0 = &a[0];
            let mut lower = vec![0.0; n];
            let mut diag = vec![0.0; n];
            let mut upper = vec![0.0; n];
            for p in 0..n {
                let left = a0[(p + n - 1) % n];
                lower[p] = -theta * left * inv_h2;
                upper[p] = -theta * a0[p] * inv_h2;
                diag[p] = 1.0 / tau + theta * (a0[p] + left) * inv_h2;
            }
            Ok(solve_cyclic_tridiagonal(&lower, &diag, &upper, rhs))
        } else {
            let diag: Vec<f64> = (0..n)
                .map(|p| {
                    let mut v = 1.0 / tau;
                    for (k, ak) in a.iter().enumerate() {
                        v += theta * (ak[p] + ak[grid.shift(p, k, -1)]) * inv_h2;
                    }
                    v
                })
                .collect();
            let apply = |v: &[f64], out: &mut [f64]| {
                apply_cell_operator(grid, a, v, out);
                for p in 0..n {
                    out[p] = v[p] / tau + theta * out[p];
                }
            };
            let mut y = x.to_vec();
            conjugate_gradient(apply, &diag, rhs, &mut y, 1e-14, 10 * n, false)?;
            Ok(y)
        }
    };

    // start from the steady state of the first slice, which is the fixed
    // point when the faces do not change in time
    {
        let a = &faces.levels[0];
        let diag: Vec<f64> =
            (0..n).map(|p| (0..grid.d).map(|k| (a[k][p] + a[k][grid.shift(p, k, -1)]) * inv_h2).sum()).collect();
        conjugate_gradient(
            |v, out| apply_cell_operator(grid, a, v, out),
            &diag,
            &forcing[0],
            &mut x0,
            settings.cg_tol,
            20 * n + 100,
            true,
        )?;
    }
    let mut converged = false;
    for _ in 0..settings.max_periods {
        let mut x = x0.clone();
        for j in 0..ns {
            levels[j].copy_from_slice(&x);
            x = step(j, &x, &mut kx, &mut rhs)?;
        }
        let inc = x.iter().zip(&x0).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        increments.push(inc);
        x0 = x;
        if inc < settings.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            max_periods: settings.max_periods,
            last_increment: increments.last().copied().unwrap_or(f64::NAN),
        });
    }
    // one more period from the converged state so the stored cycle closes
    // up to the contraction of the last increment
    let mut x = x0.clone();
    for j in 0..ns {
        levels[j].copy_from_slice(&x);
        x = step(j, &x, &mut kx, &mut rhs)?;
    }
    increments.push(x.iter().zip(&x0).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())));

    let residual_norm = march_residual(grid, faces, forcing, &levels, theta);
    Ok(March { levels, increments, residual_norm })
}

/// RMS residual of the step equations for a stored periodic cycle.
pub(crate) fn march_residual(
    grid: &CellGrid,
    faces: &Faces,
    forcing: &[Vec<f64>],
    levels: &[Vec<f64>],
    theta: f64,
) -> f64 {
    let n = grid.n_space();
    let ns = levels.len();
    let tau = grid.tau();
    let mut k_now = vec![0.0; n];
    let mut k_next = vec![0.0; n];
    let mut sum = 0.0;
    for j in 0..ns {
        let a = &faces.levels[j];
        let now = &levels[j];
        let next = &levels[(j + 1) % ns];
        apply_cell_operator(grid, a, now, &mut k_now);
        apply_cell_operator(grid, a, next, &mut k_next);
        for p in 0..n {
            let r = (next[p] - now[p]) / tau + theta * k_next[p] + (1.0 - theta) * k_now[p] - forcing[j][p];
            sum += r * r;
        }
    }
    (sum / (n * ns) as f64).sqrt()
}

fn require_supported(field: &CoefficientField, grid: &CellGrid) -> Result<()> {
    if field.d() != grid.d {
        return Err(Error::Invalid(format!("field has d = {}, grid has d = {}", field.d(), grid.d)));
    }
    if !field.is_diagonal() && !field.is_constant() {
        return Err(Error::UnsupportedCoefficient(
            "variable coefficients must be diagonal; full matrices are supported when constant".into(),
        ));
    }
    Ok(())
}

/// Correctors of a constant field: zero, with constant fluxes.
fn constant_set(field: &CoefficientField, grid: &CellGrid, kind: CorrectorKind, scheme: TimeScheme) -> CorrectorSet {
    let d = grid.d;
    let t = field.eval([0.0, 0.0], 0.0);
    let offset = scheme.theta();
    let make = |v: f64| match kind {
        CorrectorKind::EllipticZero => CellField::zeros_static(*grid).map(|_| v),
        _ => CellField::zeros(*grid).map(|_| v).with_offset(offset),
    };
    let chi_offset = if kind == CorrectorKind::EllipticInfinity { offset } else { 0.0 };
    CorrectorSet {
        grid: *grid,
        kind,
        scheme,
        chi: (0..d).map(|_| make(0.0).with_offset(chi_offset)).collect(),
        grad_chi: (0..d).map(|_| (0..d).map(|_| make(0.0)).collect()).collect(),
        flux: (0..d).map(|i| (0..d).map(|j| make(t.m[i][j])).collect()).collect(),
        residual_norm: 0.0,
        increments: Vec::new(),
        energy: vec![0.0; d],
    }
}

/// Gradients, fluxes and energies from time-averaged correctors `chi_bar`
/// (at flux times) and the matching face samples.
fn assemble(
    grid: &CellGrid,
    faces: &Faces,
    chi_bar: &[CellField],
) -> (Vec<Vec<CellField>>, Vec<Vec<CellField>>, Vec<f64>) {
    let d = grid.d;
    let n = grid.n_space();
    let grad: Vec<Vec<CellField>> =
        chi_bar.iter().map(|c| (0..d).map(|i| c.forward_diff(Axis::Space(i))).collect()).collect();
    let mut flux = vec![Vec::new(); d];
    for (i, row) in flux.iter_mut().enumerate() {
        for j in 0..d {
            let mut f = grad[j][i].clone();
            for lvl in 0..f.levels() {
                let a = &faces.levels[lvl][i];
                let dst = f.level_mut(lvl);
                for p in 0..n {
                    dst[p] = a[p] * (if i == j { 1.0 } else { 0.0 } + dst[p]);
                }
            }
            row.push(f);
        }
    }
    let energy = grad.iter().map(|g| g.iter().map(|c| cell_mean(&c.map(|v| v * v))).sum()).collect();
    (grad, flux, energy)
}

/// The `(1, λ)`-periodic corrector of `A_λ`. `field` is the base field
/// (period 1); it is rescaled to the grid's λ internally.
pub fn solve_parabolic_corrector(
    field: &CoefficientField,
    grid: &CellGrid,
    settings: &CellSettings,
) -> Result<CorrectorSet> {
    require_supported(field, grid)?;
    if field.is_constant() {
        return Ok(constant_set(field, grid, CorrectorKind::Parabolic, settings.scheme));
    }
    let field = crate::coefficients::rescale_lambda(field, grid.lambda / field.period())?;
    let theta = settings.scheme.theta();
    let faces = Faces::sample(&field, grid, theta);
    let d = grid.d;
    let n = grid.n_space();
    let mut chi = Vec::with_capacity(d);
    let mut chi_bar = Vec::with_capacity(d);
    let mut increments = Vec::new();
    let mut residual = 0.0f64;
    for j in 0..d {
        let forcing: Vec<Vec<f64>> = faces
            .levels
            .iter()
            .map(|lvl| {
                let mut g = vec![vec![0.0; n]; d];
                g[j].copy_from_slice(&lvl[j]);
                let mut q = vec![0.0; n];
                face_divergence(grid, &g, &mut q);
                q
            })
            .collect();
        let march = periodic_march(grid, &faces, &forcing, settings)?;
        residual = residual.max(march.residual_norm);
        if increments.len() < march.increments.len() {
            increments = march.increments.clone();
        }
        let mut c = CellField::from_vec(*grid, grid.n_s, march.levels.concat())?;
        for lvl in 0..grid.n_s {
            let m = c.level(lvl).iter().sum::<f64>() / n as f64;
            c.level_mut(lvl).iter_mut().for_each(|v| *v -= m);
        }
        chi_bar.push(theta_average(&c, theta));
        chi.push(c);
    }
    let (grad_chi, flux, energy) = assemble(grid, &faces, &chi_bar);
    Ok(CorrectorSet {
        grid: *grid,
        kind: CorrectorKind::Parabolic,
        scheme: settings.scheme,
        chi,
        grad_chi,
        flux,
        residual_norm: residual,
        increments,
        energy,
    })
}

/// `θ χ^{j+1} + (1−θ) χ^j`, placed at flux times.
pub(crate) fn theta_average(c: &CellField, theta: f64) -> CellField {
    let g = *c.grid();
    let n = g.n_space();
    let mut out = c.clone().with_offset(theta);
    for j in 0..g.n_s {
        let next = (j + 1) % g.n_s;
        for p in 0..n {
            out.level_mut(j)[p] = theta * c.get(next, p) + (1.0 - theta) * c.get(j, p);
        }
    }
    out
}

/// Solves `−div(a ∇χ_j) = div(a e_j)` for one set of face coefficients.
fn elliptic_slice(grid: &CellGrid, a: &[Vec<f64>], j: usize, warm: &mut [f64], cg_tol: f64) -> Result<f64> {
    let n = grid.n_space();
    let mut g = vec![vec![0.0; n]; grid.d];
    g[j].copy_from_slice(&a[j]);
    let mut rhs = vec![0.0; n];
    face_divergence(grid, &g, &mut rhs);
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let diag: Vec<f64> =
        (0..n).map(|p| (0..grid.d).map(|k| (a[k][p] + a[k][grid.shift(p, k, -1)]) * inv_h2).sum()).collect();
    let stats =
        conjugate_gradient(|x, y| apply_cell_operator(grid, a, x, y), &diag, &rhs, warm, cg_tol, 20 * n + 100, true)?;
    Ok(stats.residual)
}

/// Slice-wise elliptic correctors `χ^∞(·, s)` at the flux times of the
/// grid's scheme.
pub fn solve_elliptic_corrector_infty(
    field: &CoefficientField,
    grid: &CellGrid,
    settings: &CellSettings,
) -> Result<CorrectorSet> {
    require_supported(field, grid)?;
    if field.is_constant() {
        return Ok(constant_set(field, grid, CorrectorKind::EllipticInfinity, settings.scheme));
    }
    let field = crate::coefficients::rescale_lambda(field, grid.lambda / field.period())?;
    let theta = settings.scheme.theta();
    let faces = Faces::sample(&field, grid, theta);
    let n = grid.n_space();
    let mut chi = Vec::new();
    let mut residual = 0.0f64;
    for j in 0..grid.d {
        let mut data = Vec::with_capacity(n * grid.n_s);
        let mut warm = vec![0.0; n];
        for lvl in &faces.levels {
            residual = residual.max(elliptic_slice(grid, lvl, j, &mut warm, settings.cg_tol)?);
            data.extend_from_slice(&warm);
        }
        chi.push(CellField::from_vec(*grid, grid.n_s, data)?.with_offset(theta));
    }
    let (grad_chi, flux, energy) = assemble(grid, &faces, &chi);
    Ok(CorrectorSet {
        grid: *grid,
        kind: CorrectorKind::EllipticInfinity,
        scheme: settings.scheme,
        chi,
        grad_chi,
        flux,
        residual_norm: residual,
        increments: Vec::new(),
        energy,
    })
}

/// The corrector `χ^0` of the time-averaged field `Ā`, averaged over the
/// same flux times the parabolic solver uses.
pub fn solve_elliptic_corrector_zero(
    field: &CoefficientField,
    grid: &CellGrid,
    settings: &CellSettings,
) -> Result<CorrectorSet> {
    require_supported(field, grid)?;
    if field.is_constant() {
        return Ok(constant_set(field, grid, CorrectorKind::EllipticZero, settings.scheme));
    }
    let field = crate::coefficients::rescale_lambda(field, grid.lambda / field.period())?;
    let faces = Faces::sample(&field, grid, settings.scheme.theta()).averaged();
    let n = grid.n_space();
    let mut chi = Vec::new();
    let mut residual = 0.0f64;
    for j in 0..grid.d {
        let mut x = vec![0.0; n];
        residual = residual.max(elliptic_slice(grid, &faces.levels[0], j, &mut x, settings.cg_tol)?);
        chi.push(CellField::from_vec(*grid, 1, x)?);
    }
    let (grad_chi, flux, energy) = assemble(grid, &faces, &chi);
    Ok(CorrectorSet {
        grid: *grid,
        kind: CorrectorKind::EllipticZero,
        scheme: settings.scheme,
        chi,
        grad_chi,
        flux,
        residual_norm: residual,
        increments: Vec::new(),
        energy,
    })
}

/// `B = A + A∇χ − Â` on faces and flux times.
#[derive(Debug, Clone)]
pub struct FluxField {
    /// `b[i][j]`.
    pub b: Vec<Vec<CellField>>,
}

impl FluxField {
    pub fn rms(&self) -> f64 {
        let sq: f64 = self.b.iter().flatten().map(|c| c.rms().powi(2)).sum();
        sq.sqrt()
    }
}

/// Tolerance on `⨍B`.
pub const FLUX_MEAN_TOL: f64 = 1e-9;

/// Assembles `B_λ` from a parabolic corrector and its tensor.
pub fn compute_flux(correctors: &CorrectorSet, ahat: &EffectiveTensor) -> Result<FluxField> {
    if correctors.kind != CorrectorKind::Parabolic {
        return Err(Error::Invalid("compute_flux needs parabolic correctors".into()));
    }
    match ahat.provenance {
        Provenance::Lambda { lambda } if (lambda - correctors.grid.lambda).abs() <= 1e-12 * lambda => {}
        _ => return Err(Error::Invalid("tensor provenance does not match the correctors".into())),
    }
    let d = correctors.grid.d;
    let mut b = Vec::with_capacity(d);
    for i in 0..d {
        let mut row = Vec::with_capacity(d);
        for j in 0..d {
            let a = ahat.matrix.m[i][j];
            let f = correctors.flux[i][j].map(|v| v - a);
            let mean = cell_mean(&f);
            if mean.abs() > FLUX_MEAN_TOL * (1.0 + a.abs()) {
                return Err(Error::MeanNotZero(mean));
            }
            row.push(f);
        }
        b.push(row);
    }
    Ok(FluxField { b })
}

/// `(⨍ Σ_ij |∇_i χ_j^a − ∇_i χ_j^b|²)^(1/2)`; static fields broadcast over
/// time.
pub fn gradient_distance(a: &CorrectorSet, b: &CorrectorSet) -> f64 {
    let grid = a.grid;
    let n = grid.n_space();
    let levels = grid.n_s;
    let mut sum = 0.0;
    for j in 0..grid.d {
        for i in 0..grid.d {
            let ga = &a.grad_chi[j][i];
            let gb = &b.grad_chi[j][i];
            for lvl in 0..levels {
                let la = ga.level(if ga.is_static() { 0 } else { lvl });
                let lb = gb.level(if gb.is_static() { 0 } else { lvl });
                for p in 0..n {
                    sum += (la[p] - lb[p]).powi(2);
                }
            }
        }
    }
    (sum / (n * levels) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::builtin_field;
    use std::f64::consts::PI;

    #[test]
    fn constant_and_time_only_fields_have_zero_correctors() {
        let grid = CellGrid::new(1, 16, 16, 1.0).unwrap();
        let s = CellSettings::default();
        let c = builtin_field(1, "constant", &[2.0]).unwrap();
        let set = solve_parabolic_corrector(&c, &grid, &s).unwrap();
        assert_eq!(set.chi[0].max_abs(), 0.0);
        assert_eq!(set.residual_norm, 0.0);

        let t = builtin_field(1, "time-only", &[0.5]).unwrap();
        let set = solve_parabolic_corrector(&t, &grid, &s).unwrap();
        assert!(set.chi[0].max_abs() < 1e-14);
        let inf = solve_elliptic_corrector_infty(&t, &grid, &s).unwrap();
        assert!(inf.chi[0].max_abs() < 1e-14);
    }

    #[test]
    fn space_only_corrector_matches_closed_form() {
        // χ' = ⟨1/a⟩⁻¹/a − 1 with a = 1/(1 + 0.5 sin 2πy) gives χ = −cos(2πy)/(4π)
        let field = builtin_field(1, "space-only", &[0.5]).unwrap();
        let mut last = f64::INFINITY;
        for n in [32, 64, 128] {
            let grid = CellGrid::new(1, n, 8, 1.0).unwrap();
            let set = solve_parabolic_corrector(&field, &grid, &CellSettings::default()).unwrap();
            let exact = CellField::from_fn(grid, |y, _| -(2.0 * PI * y[0]).cos() / (4.0 * PI));
            let err = (&set.chi[0] - &exact).max_abs();
            assert!(err < last);
            last = err;
        }
        assert!(last < 1e-4, "error {last}");
    }

    #[test]
    fn period_map_contracts_and_cycle_closes() {
        let field = builtin_field(1, "sep-trig", &[0.5]).unwrap();
        let grid = CellGrid::new(1, 32, 32, 1.0).unwrap();
        let set = solve_parabolic_corrector(&field, &grid, &CellSettings::default()).unwrap();
        assert!(set.monotone_tail(), "{:?}", set.increments);
        assert!(set.max_slice_mean() < 1e-12);
        assert!(set.residual_norm < 1e-8);
    }

    #[test]
    fn two_dimensional_corrector_runs() {
        let field = builtin_field(2, "sep-trig", &[0.5]).unwrap();
        let grid = CellGrid::new(2, 16, 16, 1.0).unwrap();
        let set = solve_parabolic_corrector(&field, &grid, &CellSettings::default()).unwrap();
        let t = set.averaged_flux();
        assert!((t.m[0][1]).abs() < 1e-10);
        assert!((t.m[0][0] - t.m[1][1]).abs() < 1e-10);
        assert!(t.m[0][0] < 1.0 && t.m[0][0] > 0.5);
    }

    #[test]
    fn rejects_variable_full_matrices() {
        let f = crate::coefficients::CoefficientField::from_fn(2, 0.3, None, |y, _| {
            let c = 0.2 * (2.0 * PI * y[0]).sin();
            Tensor { d: 2, m: [[1.0, c], [c, 1.0]] }
        })
        .unwrap();
        let grid = CellGrid::new(2, 8, 8, 1.0).unwrap();
        assert!(matches!(
            solve_parabolic_corrector(&f, &grid, &CellSettings::default()),
            Err(Error::UnsupportedCoefficient(_))
        ));
    }
}
