//! Parabolic mollification `S_δ`, its spatial part, the boundary-layer
//! cutoff `η_δ`, and the smoothing operators `K_ε = S_δ(η_δ ·)`,
//! `K̃_ε = S¹_δ(η_δ ·)`.
//!
//! The time kernel looks backward: the smoothed value at `t` averages
//! samples from `(t − δ², t)`. Fields are extended by zero outside the mesh;
//! callers multiply by `η_δ` first so the extension is never reached.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{masked_integral, FieldOnMesh, Integrand, SpaceTimeMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialProfile {
    /// `θ₁(y) ∝ exp(−1/(1−|y|²))` on the unit ball.
    Bump,
    /// `θ₁ = θ₁₁ * θ₁₁` with `θ₁₁` the bump of radius `1/2`.
    SelfConvolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    pub delta: f64,
    pub profile: SpatialProfile,
}

impl MollifierSpec {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Invalid(format!("delta = {delta} must be positive")));
        }
        Ok(Self { delta, profile: SpatialProfile::Bump })
    }

    pub fn self_convolved(delta: f64) -> Result<Self> {
        Ok(Self { profile: SpatialProfile::SelfConvolved, ..Self::new(delta)? })
    }

    fn check_resolution(&self, mesh: &SpaceTimeMesh, with_time: bool) -> Result<()> {
        if mesh.h() > 0.5 * self.delta {
            return Err(Error::UnderResolvedMollifier(format!("h = {} > δ/2 = {}", mesh.h(), 0.5 * self.delta)));
        }
        let dt = mesh.stored_tau();
        if with_time && dt > 0.5 * self.delta * self.delta {
            return Err(Error::UnderResolvedMollifier(format!(
                "stored time step {dt} > δ²/2 = {}",
                0.5 * self.delta * self.delta
            )));
        }
        Ok(())
    }

    /// Spatial weights on the mesh as `(offset, weight)`, summing to one.
    pub fn space_weights(&self, d: usize, h: f64) -> Vec<([isize; 2], f64)> {
        match self.profile {
            SpatialProfile::Bump => bump_weights(d, h, self.delta),
            SpatialProfile::SelfConvolved => {
                let half = bump_weights(d, h, 0.5 * self.delta);
                let mut acc: std::collections::BTreeMap<[isize; 2], f64> = Default::default();
                for (a, wa) in &half {
                    for (b, wb) in &half {
                        *acc.entry([a[0] + b[0], a[1] + b[1]]).or_insert(0.0) += wa * wb;
                    }
                }
                normalize(acc.into_iter().collect())
            }
        }
    }

    /// Time weights `(m, w)` for samples at `t − m·dt`, `m ≥ 1`.
    pub fn time_weights(&self, dt: f64) -> Vec<(usize, f64)> {
        let d2 = self.delta * self.delta;
        let mut out = Vec::new();
        let mut m = 1usize;
        loop {
            let s = -(m as f64) * dt / d2;
            if s <= -1.0 {
                break;
            }
            let z = 2.0 * s + 1.0;
            out.push((m, (-1.0 / (1.0 - z * z)).exp()));
            m += 1;
        }
        let total: f64 = out.iter().map(|p| p.1).sum();
        out.into_iter().map(|(m, w)| (m, w / total)).collect()
    }
}

fn normalize(mut w: Vec<([isize; 2], f64)>) -> Vec<([isize; 2], f64)> {
    let total: f64 = w.iter().map(|p| p.1).sum();
    w.iter_mut().for_each(|p| p.1 /= total);
    w
}

fn bump_weights(d: usize, h: f64, radius: f64) -> Vec<([isize; 2], f64)> {
    let reach = (radius / h).ceil() as isize;
    let mut out = Vec::new();
    let jr = if d == 2 { reach } else { 0 };
    for j in -jr..=jr {
        for i in -reach..=reach {
            let r2 = ((i * i + j * j) as f64) * h * h / (radius * radius);
            if r2 < 1.0 {
                out.push(([i, j], (-1.0 / (1.0 - r2)).exp()));
            }
        }
    }
    normalize(out)
}

fn convolve_space(f: &FieldOnMesh, weights: &[([isize; 2], f64)]) -> FieldOnMesh {
    let mesh = *f.mesh();
    let np = mesh.n_nodes();
    let n = mesh.nx as isize;
    let row = (n + 1) as usize;
    let rows = if mesh.d == 2 { n } else { 0 };
    let mut data = vec![0.0; f.values().len()];
    data.par_chunks_mut(np).enumerate().for_each(|(level, dst)| {
        let src = f.level(level);
        // one shifted axpy per tap: out(i, j) += w f(i − o_0, j − o_1)
        for &([o0, o1], w) in weights {
            let (i_lo, i_hi) = (o0.max(0), n.min(n + o0));
            let (j_lo, j_hi) = (o1.max(0), rows.min(rows + o1));
            if i_lo > i_hi || j_lo > j_hi {
                continue;
            }
            let len = (i_hi - i_lo + 1) as usize;
            for j in j_lo..=j_hi {
                let out_start = j as usize * row + i_lo as usize;
                let in_start = (j - o1) as usize * row + (i_lo - o0) as usize;
                let out = &mut dst[out_start..out_start + len];
                let inp = &src[in_start..in_start + len];
                for (o, v) in out.iter_mut().zip(inp) {
                    *o += w * v;
                }
            }
        }
    });
    FieldOnMesh::from_vec(mesh, data).expect("same shape")
}

fn convolve_time(f: &FieldOnMesh, weights: &[(usize, f64)]) -> FieldOnMesh {
    let mesh = *f.mesh();
    let np = mesh.n_nodes();
    let mut data = vec![0.0; f.values().len()];
    data.par_chunks_mut(np).enumerate().for_each(|(level, dst)| {
        for &(m, w) in weights {
            if m > level {
                break;
            }
            let src = f.level(level - m);
            for (o, s) in dst.iter_mut().zip(src) {
                *o += w * s;
            }
        }
    });
    FieldOnMesh::from_vec(mesh, data).expect("same shape")
}

/// `S_δ(f)`: space-time convolution with the product mollifier.
pub fn smooth(f: &FieldOnMesh, spec: &MollifierSpec) -> Result<FieldOnMesh> {
    let mesh = f.mesh();
    spec.check_resolution(mesh, true)?;
    let space = convolve_space(f, &spec.space_weights(mesh.d, mesh.h()));
    Ok(convolve_time(&space, &spec.time_weights(mesh.stored_tau())))
}

/// `S¹_δ(f)`: convolution in `x` only.
pub fn smooth_space_only(f: &FieldOnMesh, spec: &MollifierSpec) -> Result<FieldOnMesh> {
    let mesh = f.mesh();
    spec.check_resolution(mesh, false)?;
    Ok(convolve_space(f, &spec.space_weights(mesh.d, mesh.h())))
}

/// `S²_δ(f)`: convolution in `t` only.
pub fn smooth_time_only(f: &FieldOnMesh, spec: &MollifierSpec) -> Result<FieldOnMesh> {
    let mesh = f.mesh();
    spec.check_resolution(mesh, true)?;
    Ok(convolve_time(f, &spec.time_weights(mesh.stored_tau())))
}

/// The cutoff `η_δ` sampled on a mesh.
#[derive(Debug, Clone)]
pub struct CutoffField {
    pub values: FieldOnMesh,
    pub delta: f64,
    /// `δ · max |∇η|` measured on the mesh edges.
    pub gradient_constant: f64,
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Distance of a point of the unit cube to its boundary.
pub fn boundary_distance(d: usize, x: [f64; 2]) -> f64 {
    let mut dist = x[0].min(1.0 - x[0]);
    if d == 2 {
        dist = dist.min(x[1].min(1.0 - x[1]));
    }
    dist
}

/// `η_δ(x, t) = Π_k r(min(x_k, 1 − x_k)) · r(√t)`, with `r` the cubic
/// smoothstep rising from `2δ` to `3δ`.
pub fn cutoff_value(d: usize, delta: f64, x: [f64; 2], t: f64) -> f64 {
    let ramp = |dist: f64| smoothstep((dist - 2.0 * delta) / delta);
    let mut eta = ramp(x[0].min(1.0 - x[0]));
    if d == 2 {
        eta *= ramp(x[1].min(1.0 - x[1]));
    }
    eta * ramp(t.max(0.0).sqrt())
}

pub fn build_cutoff(mesh: &SpaceTimeMesh, delta: f64) -> Result<CutoffField> {
    if !(delta > 0.0) || 3.0 * delta >= 0.5 || 9.0 * delta * delta >= mesh.t_final {
        return Err(Error::DeltaTooLarge(format!("δ = {delta}: need 3δ < 1/2 and 9δ² < T = {}", mesh.t_final)));
    }
    let values = FieldOnMesh::from_fn(*mesh, |x, t| cutoff_value(mesh.d, delta, x, t));
    let h = mesh.h();
    let mut grad_max = 0.0f64;
    for n in 0..mesh.n_levels() {
        let lvl = values.level(n);
        for p in 0..mesh.n_nodes() {
            let idx = mesh.multi_index(p);
            let mut g2 = 0.0;
            for axis in 0..mesh.d {
                if idx[axis] < mesh.nx {
                    let mut q = idx;
                    q[axis] += 1;
                    g2 += ((lvl[mesh.index(q[0], q[1])] - lvl[p]) / h).powi(2);
                }
            }
            grad_max = grad_max.max(g2.sqrt());
        }
    }
    Ok(CutoffField { values, delta, gradient_constant: grad_max * delta })
}

fn cut(f: &FieldOnMesh, cutoff: &CutoffField) -> Result<FieldOnMesh> {
    f.zip_with(&cutoff.values, |a, b| a * b)
}

/// `K_ε(f) = S_δ(η_δ f)`.
pub fn k_eps(f: &FieldOnMesh, spec: &MollifierSpec, cutoff: &CutoffField) -> Result<FieldOnMesh> {
    smooth(&cut(f, cutoff)?, spec)
}

/// `K̃_ε(f) = S¹_δ(η_δ f)`.
pub fn k_eps_tilde(f: &FieldOnMesh, spec: &MollifierSpec, cutoff: &CutoffField) -> Result<FieldOnMesh> {
    smooth_space_only(&cut(f, cutoff)?, spec)
}

/// `L²` norm over the boundary layer `{dist(x, ∂Ω) < ρ} ∪ {t < ρ²}`.
///
/// # Panics
/// If `ρ` is not in `(0, 1/2]`.
pub fn layer_norm(g: &FieldOnMesh, rho: f64, which: Integrand) -> f64 {
    assert!(rho > 0.0 && rho <= 0.5, "rho = {rho} outside (0, 1/2]");
    let d = g.mesh().d;
    masked_integral(g, which, 2.0, |x, t| boundary_distance(d, x) < rho || t < rho * rho).integral.sqrt()
}
