//! The initial-Dirichlet problem `(∂_t − div(A∇))u = F` on
//! `(0,1)^d × (0,T)`, with oscillating, rescaled, or homogenized
//! coefficients.
//!
//! Space: the conservative five-point (three-point in 1D) stencil with the
//! coefficient sampled at faces. Time: the θ-scheme with coefficient and
//! source sampled at `t_n + θ·tau`. Constant full tensors in 2D add the
//! centered cross-derivative stencil.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{rescale_lambda, CoefficientField, PointSampler, ScaleParams, Tensor};
use crate::correctors::TimeScheme;
use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, solve_tridiagonal_into};
use crate::mesh::{FieldOnMesh, SpaceTimeMesh};

/// A scalar function of `(x, t)`.
pub type PointFn = Arc<dyn Fn([f64; 2], f64) -> f64 + Send + Sync>;

#[derive(Clone, Debug)]
pub enum IvpCoefficient {
    /// `A(x/ε, t/ε^k)`.
    Oscillating { field: CoefficientField, scale: ScaleParams },
    /// `A_λ(x/ε, t/ε²)` with `λ = ε^(k−2)`.
    Rescaled { field: CoefficientField, scale: ScaleParams },
    /// A constant effective tensor.
    Homogenized(Tensor),
}

impl IvpCoefficient {
    fn scale(&self) -> Option<(&CoefficientField, ScaleParams)> {
        match self {
            IvpCoefficient::Oscillating { field, scale } | IvpCoefficient::Rescaled { field, scale } => {
                Some((field, *scale))
            }
            IvpCoefficient::Homogenized(_) => None,
        }
    }
}

#[derive(Clone)]
pub struct IVProblem {
    pub coefficient: IvpCoefficient,
    /// `F`; `None` means `F = 0`.
    pub source: Option<PointFn>,
    /// `f` on the parabolic boundary: the initial slice and the lateral
    /// Dirichlet values.
    pub data: PointFn,
}

impl IVProblem {
    pub fn new(
        coefficient: IvpCoefficient,
        source: Option<PointFn>,
        data: impl Fn([f64; 2], f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { coefficient, source, data: Arc::new(data) }
    }

    /// The same data with another coefficient.
    pub fn with_coefficient(&self, coefficient: IvpCoefficient) -> Self {
        Self { coefficient, ..self.clone() }
    }
}

/// `h ≤ ε/space` and `tau ≤ min(ε², ε^k)/time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionPolicy {
    pub space: f64,
    pub time: f64,
}

impl Default for ResolutionPolicy {
    fn default() -> Self {
        Self { space: 16.0, time: 8.0 }
    }
}

impl ResolutionPolicy {
    pub fn max_h(&self, scale: &ScaleParams) -> f64 {
        scale.epsilon() / self.space
    }

    pub fn max_tau(&self, scale: &ScaleParams) -> f64 {
        let e = scale.epsilon();
        (e * e).min(scale.time_period()) / self.time
    }

    pub fn check(&self, mesh: &SpaceTimeMesh, scale: &ScaleParams) -> Result<()> {
        let slack = 1.0 + 1e-12;
        if mesh.h() > self.max_h(scale) * slack {
            return Err(Error::ResolutionPolicyViolated(format!(
                "h = {} > ε/{} = {}",
                mesh.h(),
                self.space,
                self.max_h(scale)
            )));
        }
        if mesh.tau() > self.max_tau(scale) * slack {
            return Err(Error::ResolutionPolicyViolated(format!(
                "tau = {} > min(ε², ε^k)/{} = {}",
                mesh.tau(),
                self.time,
                self.max_tau(scale)
            )));
        }
        Ok(())
    }

    /// Smallest `(nx, nt)` meeting the policy, with `nt` a multiple of
    /// `nt_multiple`.
    pub fn sizes(&self, scale: &ScaleParams, t_final: f64, nt_multiple: usize) -> (usize, usize) {
        let nx = (1.0 / self.max_h(scale) - 1e-9).ceil() as usize;
        let nt = (t_final / self.max_tau(scale) - 1e-9).ceil() as usize;
        let m = nt_multiple.max(1);
        (nx.max(4), nt.div_ceil(m).max(1) * m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvpSettings {
    pub scheme: TimeScheme,
    pub cg_tol: f64,
    pub policy: ResolutionPolicy,
}

impl Default for IvpSettings {
    fn default() -> Self {
        Self { scheme: TimeScheme::CrankNicolson, cg_tol: 1e-11, policy: ResolutionPolicy::default() }
    }
}

#[derive(Debug, Clone)]
pub struct IvpSolution {
    pub u: FieldOnMesh,
    /// For implicit Euler with `F = 0`: whether every value stayed within
    /// the range of the boundary data.
    pub max_principle: Option<bool>,
    pub cg_iterations: usize,
}

/// Face coefficients `a_k` between node `p` and `p + e_k`, indexed by `p`.
struct FaceCoefficients {
    samplers: Vec<PointSampler>,
    /// Lower node of each sampled face, per axis.
    owners: Vec<Vec<usize>>,
    time_scale: f64,
    values: Vec<Vec<f64>>,
    constant: Option<Tensor>,
}

impl FaceCoefficients {
    fn new(coefficient: &IvpCoefficient, mesh: &SpaceTimeMesh) -> Result<Self> {
        let np = mesh.n_nodes();
        let (field, eps, time_scale) = match coefficient {
            IvpCoefficient::Homogenized(t) => {
                let values = (0..mesh.d).map(|k| vec![t.m[k][k]; np]).collect();
                return Ok(Self { samplers: vec![], owners: vec![], time_scale: 0.0, values, constant: Some(*t) });
            }
            IvpCoefficient::Oscillating { field, scale } => (field.clone(), scale.epsilon(), 1.0 / scale.time_period()),
            IvpCoefficient::Rescaled { field, scale } => {
                let e = scale.epsilon();
                (rescale_lambda(field, scale.lambda())?, e, 1.0 / (e * e))
            }
        };
        if let Some(t) = field.is_constant().then(|| field.eval([0.0, 0.0], 0.0)) {
            return Self::new(&IvpCoefficient::Homogenized(t), mesh);
        }
        if !field.is_diagonal() {
            return Err(Error::UnsupportedCoefficient(
                "variable coefficients must be diagonal; full tensors are supported when constant".into(),
            ));
        }
        let h = mesh.h();
        let mut samplers = Vec::new();
        let mut owners = Vec::new();
        for axis in 0..mesh.d {
            let mut pts = Vec::new();
            let mut own = Vec::new();
            for p in 0..np {
                let idx = mesh.multi_index(p);
                if idx[axis] == mesh.nx {
                    continue;
                }
                let mut x = mesh.node(p);
                x[axis] += 0.5 * h;
                pts.push([x[0] / eps, x[1] / eps]);
                own.push(p);
            }
            samplers.push(PointSampler::new(&field, pts, axis));
            owners.push(own);
        }
        Ok(Self { samplers, owners, time_scale, values: vec![vec![0.0; np]; mesh.d], constant: None })
    }

    fn update(&mut self, t: f64, scratch: &mut Vec<f64>) {
        if self.constant.is_some() {
            return;
        }
        let s = t * self.time_scale;
        for (axis, sampler) in self.samplers.iter().enumerate() {
            scratch.resize(sampler.len(), 0.0);
            sampler.sample(s, scratch);
            for (&p, &v) in self.owners[axis].iter().zip(scratch.iter()) {
                self.values[axis][p] = v;
            }
        }
    }

    /// Symmetric off-diagonal part of a constant tensor.
    fn cross(&self) -> f64 {
        match self.constant {
            Some(t) if t.d == 2 => 0.5 * (t.m[0][1] + t.m[1][0]),
            _ => 0.0,
        }
    }
}

/// `(L u)(p) = −Σ_k D_k^−(a_k D_k^+ u) − 2b ∂_1∂_2 u` at interior nodes.
fn apply_operator(mesh: &SpaceTimeMesh, faces: &FaceCoefficients, u: &[f64], out: &mut [f64]) {
    let inv_h2 = 1.0 / (mesh.h() * mesh.h());
    let nx = mesh.nx;
    let s = nx + 1;
    let cross = faces.cross();
    out.iter_mut().for_each(|o| *o = 0.0);
    let a0 = &faces.values[0];
    if mesh.d == 1 {
        for p in 1..nx {
            out[p] = -(a0[p] * (u[p + 1] - u[p]) - a0[p - 1] * (u[p] - u[p - 1])) * inv_h2;
        }
        return;
    }
    let a1 = &faces.values[1];
    for j in 1..nx {
        for i in 1..nx {
            let p = i + j * s;
            let mut acc = -(a0[p] * (u[p + 1] - u[p]) - a0[p - 1] * (u[p] - u[p - 1]));
            acc -= a1[p] * (u[p + s] - u[p]) - a1[p - s] * (u[p] - u[p - s]);
            if cross != 0.0 {
                acc -= 0.5 * cross * (u[p + 1 + s] - u[p + 1 - s] - u[p - 1 + s] + u[p - 1 - s]);
            }
            out[p] = acc * inv_h2;
        }
    }
}

/// Solves the problem; boundary and initial values come from `problem.data`.
pub fn solve_ivp(problem: &IVProblem, mesh: &SpaceTimeMesh, settings: &IvpSettings) -> Result<IvpSolution> {
    if let Some((field, scale)) = problem.coefficient.scale() {
        if !field.is_constant() {
            settings.policy.check(mesh, &scale)?;
        }
    }
    let theta = settings.scheme.theta();
    let tau = mesh.tau();
    let np = mesh.n_nodes();
    let d = mesh.d;
    let nx = mesh.nx;
    let inv_h2 = 1.0 / (mesh.h() * mesh.h());
    let mut faces = FaceCoefficients::new(&problem.coefficient, mesh)?;
    let mut out = FieldOnMesh::zeros(*mesh);
    let nodes: Vec<[f64; 2]> = (0..np).map(|p| mesh.node(p)).collect();
    let boundary: Vec<usize> = (0..np).filter(|&p| mesh.is_boundary(p)).collect();
    let interior: Vec<usize> = (0..np).filter(|&p| !mesh.is_boundary(p)).collect();

    let mut u: Vec<f64> = nodes.iter().map(|&x| (problem.data)(x, 0.0)).collect();
    out.level_mut(0).copy_from_slice(&u);
    let (mut lo, mut hi) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let track = settings.scheme == TimeScheme::ImplicitEuler && problem.source.is_none();
    let mut in_range = true;

    let mut scratch = Vec::new();
    let mut lu = vec![0.0; np];
    let mut next = vec![0.0; np];
    let mut rhs = vec![0.0; np];
    let mut cg_iterations = 0;
    let stride = [1usize, nx + 1];
    let m = if d == 1 { nx - 1 } else { 0 };
    let (mut tri_lower, mut tri_diag, mut tri_upper, mut tri_scratch) =
        (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for step in 0..mesh.nt {
        let t_n = step as f64 * tau;
        let t_next = if step + 1 == mesh.nt { mesh.t_final } else { (step + 1) as f64 * tau };
        let t_theta = t_n + theta * tau;
        faces.update(t_theta, &mut scratch);

        // explicit part
        apply_operator(mesh, &faces, &u, &mut lu);
        match &problem.source {
            Some(source) => {
                for &p in &interior {
                    rhs[p] = u[p] / tau - (1.0 - theta) * lu[p] + source(nodes[p], t_theta);
                }
            }
            None => {
                for &p in &interior {
                    rhs[p] = u[p] / tau - (1.0 - theta) * lu[p];
                }
            }
        }
        // boundary values of the new level, moved to the right-hand side
        if d == 1 {
            let a = &faces.values[0];
            let (g0, g1) = ((problem.data)(nodes[0], t_next), (problem.data)(nodes[nx], t_next));
            next[0] = g0;
            next[nx] = g1;
            if track {
                lo = lo.min(g0.min(g1));
                hi = hi.max(g0.max(g1));
            }
            rhs[1] += theta * a[0] * g0 * inv_h2;
            rhs[nx - 1] += theta * a[nx - 1] * g1 * inv_h2;
        } else {
            next.iter_mut().for_each(|v| *v = 0.0);
            for &p in &boundary {
                let g = (problem.data)(nodes[p], t_next);
                next[p] = g;
                if track {
                    lo = lo.min(g);
                    hi = hi.max(g);
                }
            }
            apply_operator(mesh, &faces, &next, &mut lu);
            for &p in &interior {
                rhs[p] -= theta * lu[p];
            }
        }

        if d == 1 {
            let a = &faces.values[0];
            for q in 0..nx - 1 {
                let p = q + 1;
                let (am, ap) = (a[p - 1], a[p]);
                tri_diag[q] = 1.0 / tau + theta * (am + ap) * inv_h2;
                tri_lower[q] = if q > 0 { -theta * am * inv_h2 } else { 0.0 };
                tri_upper[q] = if q + 2 < nx { -theta * ap * inv_h2 } else { 0.0 };
            }
            solve_tridiagonal_into(&tri_lower, &tri_diag, &tri_upper, &rhs[1..nx], &mut tri_scratch, &mut next[1..nx]);
        } else {
            let n_in = interior.len();
            let b: Vec<f64> = interior.iter().map(|&p| rhs[p]).collect();
            let diag: Vec<f64> = interior
                .iter()
                .map(|&p| {
                    let mut s = 0.0;
                    for axis in 0..d {
                        s += faces.values[axis][p] + faces.values[axis][p - stride[axis]];
                    }
                    1.0 / tau + theta * s * inv_h2
                })
                .collect();
            let mut x: Vec<f64> = interior.iter().map(|&p| u[p]).collect();
            let full = std::cell::RefCell::new((vec![0.0; np], vec![0.0; np]));
            let apply = |v: &[f64], y: &mut [f64]| {
                let mut bufs = full.borrow_mut();
                let (buf, res) = &mut *bufs;
                for (k, &p) in interior.iter().enumerate() {
                    buf[p] = v[k];
                }
                apply_operator(mesh, &faces, buf, res);
                for (k, &p) in interior.iter().enumerate() {
                    y[k] = v[k] / tau + theta * res[p];
                }
            };
            let stats = conjugate_gradient(apply, &diag, &b, &mut x, settings.cg_tol, 20 * n_in + 100, false)?;
            cg_iterations += stats.iterations;
            for (k, &p) in interior.iter().enumerate() {
                next[p] = x[k];
            }
        }
        std::mem::swap(&mut u, &mut next);
        if track {
            let tol = 1e-10 * (1.0 + hi.abs().max(lo.abs()));
            in_range &= u.iter().all(|&v| v >= lo - tol && v <= hi + tol);
        }
        if (step + 1) % mesh.stride == 0 {
            out.level_mut((step + 1) / mesh.stride).copy_from_slice(&u);
        }
    }
    Ok(IvpSolution { u: out, max_principle: track.then_some(in_range), cg_iterations })
}

/// Solves the problem with its homogenized tensor.
pub fn solve_homogenized(problem: &IVProblem, mesh: &SpaceTimeMesh, settings: &IvpSettings) -> Result<IvpSolution> {
    if !matches!(problem.coefficient, IvpCoefficient::Homogenized(_)) {
        return Err(Error::Invalid("solve_homogenized needs an effective tensor".into()));
    }
    solve_ivp(problem, mesh, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::builtin_field;
    use std::f64::consts::PI;

    fn heat_problem(a: f64) -> IVProblem {
        IVProblem::new(IvpCoefficient::Homogenized(Tensor::scalar(1, a)), None, move |x, t| {
            (-PI * PI * a * t).exp() * (PI * x[0]).sin()
        })
    }

    #[test]
    fn heat_mode_midpoint_value() {
        let mesh = SpaceTimeMesh::new(1, 64, 512, 0.1).unwrap();
        let sol = solve_ivp(&heat_problem(1.0), &mesh, &IvpSettings::default()).unwrap();
        let v = sol.u.get(mesh.n_levels() - 1, 32);
        assert!((v - 0.37268).abs() < 2e-3, "{v}");
    }

    #[test]
    fn affine_data_is_reproduced() {
        for d in [1, 2] {
            let t = if d == 1 { Tensor::scalar(1, 1.7) } else { Tensor { d: 2, m: [[2.0, 0.3], [0.3, 1.0]] } };
            let p = IVProblem::new(IvpCoefficient::Homogenized(t), None, |x, _| 0.3 + 2.0 * x[0] - x[1]);
            let mesh = SpaceTimeMesh::new(d, 8, 8, 0.5).unwrap();
            let sol = solve_ivp(&p, &mesh, &IvpSettings::default()).unwrap();
            let exact = FieldOnMesh::from_fn(mesh, |x, _| 0.3 + 2.0 * x[0] - x[1]);
            assert!(sol.u.sub(&exact).unwrap().max_abs() < 1e-10);
        }
    }

    #[test]
    fn policy_is_enforced() {
        let field = builtin_field(1, "sep-trig", &[0.5]).unwrap();
        let scale = ScaleParams::new(0.125, 2.0).unwrap();
        let p = IVProblem::new(IvpCoefficient::Oscillating { field, scale }, None, |x, _| x[0]);
        let coarse = SpaceTimeMesh::new(1, 64, 64, 0.1).unwrap();
        assert!(matches!(solve_ivp(&p, &coarse, &IvpSettings::default()), Err(Error::ResolutionPolicyViolated(_))));
        let (nx, nt) = ResolutionPolicy::default().sizes(&scale, 0.1, 4);
        assert_eq!(nx, 128);
        assert_eq!(nt % 4, 0);
        let ok = SpaceTimeMesh::new(1, nx, nt, 0.1).unwrap();
        assert!(solve_ivp(&p, &ok, &IvpSettings::default()).is_ok());
    }

    #[test]
    fn implicit_euler_respects_the_maximum_principle() {
        let field = builtin_field(2, "sep-trig", &[0.5]).unwrap();
        let scale = ScaleParams::new(0.25, 2.0).unwrap();
        let p = IVProblem::new(IvpCoefficient::Oscillating { field, scale }, None, |x, _| {
            (PI * x[0]).sin() * (PI * x[1]).sin()
        });
        let mesh = SpaceTimeMesh::new(2, 64, 80, 0.05).unwrap();
        let s = IvpSettings { scheme: TimeScheme::ImplicitEuler, ..Default::default() };
        let sol = solve_ivp(&p, &mesh, &s).unwrap();
        assert_eq!(sol.max_principle, Some(true));
    }
}
