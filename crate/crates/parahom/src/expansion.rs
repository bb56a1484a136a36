//! Two-scale expansions of a homogenized solution `u_0`.
//!
//! * `WTilde`: `u_0 + ε χ_j^λ(x/ε, t/ε²) K_ε(∂_j u_0)`
//! * `VEps`: `u_0 + ε χ_j(x/ε, t/ε^k) K̃_ε(∂_j u_0)` with `χ^∞` or `χ^0`
//! * `WFull`: `WTilde − ε² φ_{i(d+1)j}(x/ε, t/ε²) ∂_i K_ε(∂_j u_0)`
//!
//! Correctors are evaluated by periodic multilinear interpolation of the
//! cell fields.

use serde::{Deserialize, Serialize};

use crate::coefficients::ScaleParams;
use crate::correctors::{CorrectorKind, CorrectorSet, DualCorrectors};
use crate::error::{Error, Result};
use crate::mesh::FieldOnMesh;
use crate::smoothing::{k_eps, k_eps_tilde, CutoffField, MollifierSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpansionVariant {
    WTilde,
    VEps,
    WFull,
}

/// Cell time corresponding to physical time `t` for a corrector set.
fn cell_time(kind: CorrectorKind, scale: &ScaleParams, t: f64) -> f64 {
    match kind {
        CorrectorKind::Parabolic => t / (scale.epsilon() * scale.epsilon()),
        _ => t / scale.time_period(),
    }
}

/// Returns the corrected approximation; subtract it from `u_ε` to get the
/// remainder.
pub fn two_scale_expansion(
    u0: &FieldOnMesh,
    correctors: &CorrectorSet,
    dual: Option<&DualCorrectors>,
    scale: &ScaleParams,
    spec: &MollifierSpec,
    cutoff: &CutoffField,
    variant: ExpansionVariant,
) -> Result<FieldOnMesh> {
    let mesh = *u0.mesh();
    if correctors.grid.d != mesh.d {
        return Err(Error::MeshMismatch(format!("cell d = {}, mesh d = {}", correctors.grid.d, mesh.d)));
    }
    let parabolic = correctors.kind == CorrectorKind::Parabolic;
    match variant {
        ExpansionVariant::WTilde | ExpansionVariant::WFull if !parabolic => {
            return Err(Error::Invalid(format!("{variant:?} needs parabolic correctors")));
        }
        ExpansionVariant::VEps if parabolic => {
            return Err(Error::Invalid("v-eps needs the elliptic correctors".into()));
        }
        _ => {}
    }
    if parabolic && (correctors.grid.lambda - scale.lambda()).abs() > 1e-9 * scale.lambda() {
        return Err(Error::Invalid(format!(
            "correctors were computed for λ = {}, the scale needs λ = {}",
            correctors.grid.lambda,
            scale.lambda()
        )));
    }
    let dual = match variant {
        ExpansionVariant::WFull => Some(dual.ok_or_else(|| Error::Invalid("w-full needs dual correctors".into()))?),
        _ => None,
    };
    let d = mesh.d;
    let eps = scale.epsilon();
    let smoothed: Vec<FieldOnMesh> = (0..d)
        .map(|j| {
            let g = u0.node_gradient(j);
            match variant {
                ExpansionVariant::VEps => k_eps_tilde(&g, spec, cutoff),
                _ => k_eps(&g, spec, cutoff),
            }
        })
        .collect::<Result<_>>()?;
    let smoothed_grad: Vec<Vec<FieldOnMesh>> = match dual {
        Some(_) => smoothed.iter().map(|k| (0..d).map(|i| k.node_gradient(i)).collect()).collect(),
        None => Vec::new(),
    };
    let mut out = u0.clone();
    for n in 0..mesh.n_levels() {
        let s = cell_time(correctors.kind, scale, mesh.time(n));
        let level = out.level_mut(n);
        for (p, slot) in level.iter_mut().enumerate() {
            let x = mesh.node(p);
            let y = [x[0] / eps, x[1] / eps];
            let mut v = 0.0;
            for j in 0..d {
                v += eps * correctors.chi[j].interpolate(y, s) * smoothed[j].get(n, p);
            }
            if let Some(dual) = dual {
                for i in 0..d {
                    let mut stagger = [0.0; 2];
                    stagger[i] = 0.5;
                    for j in 0..d {
                        let phi = dual.phi_time[i][j].interpolate_staggered(y, s, stagger);
                        v -= eps * eps * phi * smoothed_grad[j][i].get(n, p);
                    }
                }
            }
            *slot += v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::builtin_field;
    use crate::correctors::{solve_parabolic_corrector, CellSettings};
    use crate::mesh::SpaceTimeMesh;
    use crate::smoothing::build_cutoff;
    use crate::torus::CellGrid;

    #[test]
    fn constant_coefficients_leave_u0_unchanged() {
        let field = builtin_field(1, "constant", &[1.3]).unwrap();
        let grid = CellGrid::new(1, 8, 8, 1.0).unwrap();
        let chi = solve_parabolic_corrector(&field, &grid, &CellSettings::default()).unwrap();
        let mesh = SpaceTimeMesh::new(1, 64, 64, 0.5).unwrap();
        let scale = ScaleParams::new(0.125, 2.0).unwrap();
        let u0 = FieldOnMesh::from_fn(mesh, |x, t| x[0] * (1.0 - x[0]) * (1.0 + t));
        let spec = MollifierSpec::new(scale.delta()).unwrap();
        let cutoff = build_cutoff(&mesh, scale.delta() / 2.0).unwrap();
        let w = two_scale_expansion(&u0, &chi, None, &scale, &spec, &cutoff, ExpansionVariant::WTilde).unwrap();
        assert_eq!(w, u0);
    }
}
