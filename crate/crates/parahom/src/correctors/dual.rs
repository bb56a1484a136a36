//! Dual correctors: antisymmetric potentials writing the flux in divergence
//! form.
//!
//! With `Δ = Σ_k D_k^− D_k^+ + D_s^− D_s^+` and potentials `Δ f_ij = b_ij`,
//! `Δ f_tj = −χ_j`, set
//!
//! ```text
//! φ_kij = D_k^+ f_ij − D_i^+ f_kj
//! φ_ktj = D_k^+ f_tj − D_s^− f_kj
//! ```
//!
//! Then `b_ij = Σ_k D_k^− φ_kij − D_s^+ φ_itj` and `−χ_j = Σ_k D_k^− φ_ktj`
//! exactly, given the discrete divergence identity.

use crate::error::{Error, Result};
use crate::torus::{poisson_spacetime_scaled, Axis, CellField};

use super::{CorrectorKind, CorrectorSet, FluxField};

/// Tolerance of the two potential identities, relative.
pub const IDENTITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct DualCorrectors {
    /// `phi[k][i][j] = φ_kij`, spatial indices only.
    pub phi: Vec<Vec<Vec<CellField>>>,
    /// `phi_time[k][j] = φ_{k(d+1)j}`.
    pub phi_time: Vec<Vec<CellField>>,
    /// `f[i][j]`.
    pub potentials: Vec<Vec<CellField>>,
    /// `f_{(d+1)j}`.
    pub time_potentials: Vec<CellField>,
    pub diagnostics: DualDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DualDiagnostics {
    /// `‖b − (Σ D^−φ − D_s^+φ_t)‖ / ‖B‖`.
    pub flux_identity: f64,
    /// `‖χ + Σ D^−φ_t‖ / ‖χ‖`.
    pub chi_identity: f64,
    /// `‖Σ_i D_i^− b_ij − D_s^+ χ_j‖` relative to the size of either side.
    pub divergence_identity: f64,
    /// Largest `|φ_kij + φ_ikj|`.
    pub antisymmetry: f64,
    /// `max |φ_{k(d+1)j}|`, to compare against the `(1+λ)` growth allowance.
    pub phi_time_max: f64,
}

fn relative(res: f64, norm: f64) -> f64 {
    if norm > 0.0 {
        res / norm
    } else {
        res
    }
}

fn rms_all<'a>(fields: impl Iterator<Item = &'a CellField>) -> f64 {
    fields.map(|f| f.rms().powi(2)).sum::<f64>().sqrt()
}

/// Builds the dual correctors and checks both potential identities and the
/// divergence identity.
pub fn solve_dual_correctors(flux: &FluxField, chi: &CorrectorSet) -> Result<DualCorrectors> {
    if chi.kind != CorrectorKind::Parabolic {
        return Err(Error::Invalid("dual correctors need parabolic correctors".into()));
    }
    let d = chi.grid.d;
    let b = &flux.b;
    // B and χ are built from quantities of the size of A
    let scale = chi.averaged_flux().operator_norm();
    let potentials: Vec<Vec<CellField>> = b
        .iter()
        .map(|row| row.iter().map(|g| poisson_spacetime_scaled(g, scale)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let time_potentials: Vec<CellField> =
        chi.chi.iter().map(|c| poisson_spacetime_scaled(&c.map(|v| -v), scale)).collect::<Result<_>>()?;

    let mut phi = vec![vec![Vec::with_capacity(d); d]; d];
    let mut antisymmetry = 0.0f64;
    for k in 0..d {
        for i in 0..d {
            for j in 0..d {
                let f = &potentials[i][j].forward_diff(Axis::Space(k)) - &potentials[k][j].forward_diff(Axis::Space(i));
                phi[k][i].push(f);
            }
        }
    }
    for k in 0..d {
        for i in 0..d {
            for j in 0..d {
                antisymmetry = antisymmetry.max((&phi[k][i][j] + &phi[i][k][j]).max_abs());
            }
        }
    }
    let phi_time: Vec<Vec<CellField>> = (0..d)
        .map(|k| {
            (0..d)
                .map(|j| {
                    let mut dt = potentials[k][j].backward_diff(Axis::Time);
                    dt = dt.with_offset(0.0);
                    &time_potentials[j].forward_diff(Axis::Space(k)) - &dt
                })
                .collect()
        })
        .collect();

    // b_ij = Σ_k D_k^− φ_kij − D_s^+ φ_itj
    let mut flux_res = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mut rebuilt = phi_time[i][j].forward_diff(Axis::Time).map(|v| -v);
            for k in 0..d {
                rebuilt = &rebuilt + &phi[k][i][j].backward_diff(Axis::Space(k));
            }
            flux_res += (&rebuilt - &b[i][j]).rms().powi(2);
        }
    }
    // below this size a field carries only the cell solver's error, and the
    // identity tolerance then bounds an absolute error of the size of cg_tol
    let floor = 1e-3 * scale;
    let flux_identity = relative(flux_res.sqrt(), flux.rms().max(floor));

    // −χ_j = Σ_k D_k^− φ_ktj
    let mut chi_res = 0.0;
    for j in 0..d {
        let mut rebuilt = chi.chi[j].clone();
        for k in 0..d {
            rebuilt = &rebuilt + &phi_time[k][j].backward_diff(Axis::Space(k));
        }
        chi_res += rebuilt.rms().powi(2);
    }
    let chi_identity = relative(chi_res.sqrt(), rms_all(chi.chi.iter()).max(floor));

    // Σ_i D_i^− b_ij = D_s^+ χ_j
    let mut div_res = 0.0;
    let mut div_scale = 0.0;
    for j in 0..d {
        let dt = chi.chi[j].forward_diff(Axis::Time);
        let mut div = b[0][j].backward_diff(Axis::Space(0));
        for i in 1..d {
            div = &div + &b[i][j].backward_diff(Axis::Space(i));
        }
        div_res += (&div - &dt).rms().powi(2);
        div_scale += div.rms().powi(2).max(dt.rms().powi(2));
    }
    let divergence_identity = relative(div_res.sqrt(), div_scale.sqrt().max(floor));

    let phi_time_max = phi_time.iter().flatten().fold(0.0f64, |m, f| m.max(f.max_abs()));
    let diagnostics = DualDiagnostics { flux_identity, chi_identity, divergence_identity, antisymmetry, phi_time_max };
    if flux_identity > IDENTITY_TOL {
        return Err(Error::IdentityCheckFailed {
            identity: "flux potential".into(),
            residual: flux_identity,
            tolerance: IDENTITY_TOL,
        });
    }
    if chi_identity > IDENTITY_TOL {
        return Err(Error::IdentityCheckFailed {
            identity: "corrector potential".into(),
            residual: chi_identity,
            tolerance: IDENTITY_TOL,
        });
    }
    Ok(DualCorrectors { phi, phi_time, potentials, time_potentials, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::builtin_field;
    use crate::correctors::{compute_flux, solve_parabolic_corrector, CellSettings};
    use crate::effective::EffectiveTensor;
    use crate::torus::CellGrid;
    use std::f64::consts::PI;

    fn duals(family: &str, params: &[f64], lambda: f64, n: usize) -> DualCorrectors {
        let field = builtin_field(1, family, params).unwrap();
        let grid = CellGrid::new(1, n, n, lambda).unwrap();
        let s = CellSettings::default();
        let set = solve_parabolic_corrector(&field, &grid, &s).unwrap();
        let ahat = EffectiveTensor::from_correctors(&field, &set, &s).unwrap();
        let b = compute_flux(&set, &ahat).unwrap();
        solve_dual_correctors(&b, &set).unwrap()
    }

    #[test]
    fn constant_field_has_zero_duals() {
        let d = duals("constant", &[2.0], 1.0, 8);
        assert_eq!(d.phi_time[0][0].max_abs(), 0.0);
        assert_eq!(d.phi[0][0][0].max_abs(), 0.0);
    }

    #[test]
    fn time_only_field_matches_antiderivative() {
        // φ_{1(2)1}(s) → −(λ/4π) sin(2πs/λ)
        let lambda = 2.0;
        let d = duals("time-only", &[0.5], lambda, 256);
        let phi = &d.phi_time[0][0];
        let grid = *phi.grid();
        let exact = CellField::from_fn(grid, |_, s| -(lambda / (4.0 * PI)) * (2.0 * PI * s / lambda).sin());
        assert!((phi - &exact).max_abs() < 1e-3, "{}", (phi - &exact).max_abs());
        assert_eq!(d.phi[0][0][0].max_abs(), 0.0);
    }

    #[test]
    fn sep_trig_identities_hold() {
        let d = duals("sep-trig", &[0.5], 1.0, 64);
        assert!(d.diagnostics.flux_identity <= 1e-8);
        assert!(d.diagnostics.chi_identity <= 1e-8);
        assert_eq!(d.diagnostics.antisymmetry, 0.0);
    }
}
