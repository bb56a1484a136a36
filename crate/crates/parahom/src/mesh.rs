//! Space-time meshes on `Ω_T = (0,1)^d × (0,T)`, fields stored on them, and
//! the quadratures behind every norm the harness reports.
//!
//! A mesh advances with `nt` steps of size `tau` but may keep only every
//! `stride`-th level. Norms integrate over the stored levels with the
//! trapezoid rule in time; spatial values use trapezoid node weights and
//! gradients use forward differences on edges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeMesh {
    pub d: usize,
    pub nx: usize,
    pub nt: usize,
    pub t_final: f64,
    /// Only levels `0, stride, 2·stride, …` are stored.
    pub stride: usize,
}

impl SpaceTimeMesh {
    pub fn new(d: usize, nx: usize, nt: usize, t_final: f64) -> Result<Self> {
        if d != 1 && d != 2 {
            return Err(Error::InvalidGrid(format!("d = {d}, expected 1 or 2")));
        }
        if nx < 4 || nt < 4 {
            return Err(Error::InvalidGrid(format!("nx = {nx}, nt = {nt}; both must be at least 4")));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidGrid(format!("T = {t_final}")));
        }
        Ok(Self { d, nx, nt, t_final, stride: 1 })
    }

    pub fn with_stride(mut self, stride: usize) -> Result<Self> {
        if stride == 0 || self.nt % stride != 0 {
            return Err(Error::InvalidGrid(format!("stride {stride} does not divide nt = {}", self.nt)));
        }
        self.stride = stride;
        Ok(self)
    }

    pub fn h(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    /// Spacing of the stored levels.
    pub fn stored_tau(&self) -> f64 {
        self.tau() * self.stride as f64
    }

    pub fn n_levels(&self) -> usize {
        self.nt / self.stride + 1
    }

    /// Nodes per level, `(nx+1)^d`.
    pub fn n_nodes(&self) -> usize {
        (self.nx + 1).pow(self.d as u32)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + (self.nx + 1) * j
    }

    pub fn multi_index(&self, p: usize) -> [usize; 2] {
        [p % (self.nx + 1), p / (self.nx + 1)]
    }

    pub fn node(&self, p: usize) -> [f64; 2] {
        let [i, j] = self.multi_index(p);
        [i as f64 * self.h(), j as f64 * self.h()]
    }

    /// Time of stored level `n`.
    pub fn time(&self, n: usize) -> f64 {
        if n + 1 == self.n_levels() {
            self.t_final
        } else {
            (n * self.stride) as f64 * self.tau()
        }
    }

    pub fn is_boundary(&self, p: usize) -> bool {
        let [i, j] = self.multi_index(p);
        i == 0 || i == self.nx || (self.d == 2 && (j == 0 || j == self.nx))
    }
}

/// Node values at every stored level. Layout: `level·n_nodes + p`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldOnMesh {
    mesh: SpaceTimeMesh,
    data: Vec<f64>,
}

impl FieldOnMesh {
    pub fn zeros(mesh: SpaceTimeMesh) -> Self {
        Self { mesh, data: vec![0.0; mesh.n_nodes() * mesh.n_levels()] }
    }

    pub fn from_fn(mesh: SpaceTimeMesh, f: impl Fn([f64; 2], f64) -> f64) -> Self {
        let np = mesh.n_nodes();
        let mut data = Vec::with_capacity(np * mesh.n_levels());
        for n in 0..mesh.n_levels() {
            let t = mesh.time(n);
            data.extend((0..np).map(|p| f(mesh.node(p), t)));
        }
        Self { mesh, data }
    }

    pub fn from_vec(mesh: SpaceTimeMesh, data: Vec<f64>) -> Result<Self> {
        if data.len() != mesh.n_nodes() * mesh.n_levels() {
            return Err(Error::MeshMismatch(format!(
                "{} samples for {} levels of {} nodes",
                data.len(),
                mesh.n_levels(),
                mesh.n_nodes()
            )));
        }
        Ok(Self { mesh, data })
    }

    pub fn mesh(&self) -> &SpaceTimeMesh {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn level(&self, n: usize) -> &[f64] {
        let np = self.mesh.n_nodes();
        &self.data[n * np..(n + 1) * np]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut [f64] {
        let np = self.mesh.n_nodes();
        &mut self.data[n * np..(n + 1) * np]
    }

    pub fn get(&self, n: usize, p: usize) -> f64 {
        self.data[n * self.mesh.n_nodes() + p]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { mesh: self.mesh, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_same_mesh(self, other)?;
        Ok(Self { mesh: self.mesh, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Centered difference along `axis` at interior nodes, one-sided on the
    /// boundary.
    pub fn node_gradient(&self, axis: usize) -> Self {
        let m = self.mesh;
        let nx = m.nx;
        let inv = 1.0 / m.h();
        let mut out = Self::zeros(m);
        for n in 0..m.n_levels() {
            let src = self.level(n);
            let dst = out.level_mut(n);
            for (p, slot) in dst.iter_mut().enumerate() {
                let idx = m.multi_index(p);
                let at = |k: usize| {
                    let mut q = idx;
                    q[axis] = k;
                    src[m.index(q[0], q[1])]
                };
                let i = idx[axis];
                *slot = if i == 0 {
                    (at(1) - at(0)) * inv
                } else if i == nx {
                    (at(nx) - at(nx - 1)) * inv
                } else {
                    0.5 * (at(i + 1) - at(i - 1)) * inv
                };
            }
        }
        out
    }
}

fn check_same_mesh(a: &FieldOnMesh, b: &FieldOnMesh) -> Result<()> {
    if a.mesh != b.mesh {
        return Err(Error::MeshMismatch(format!("{:?} vs {:?}", a.mesh, b.mesh)));
    }
    Ok(())
}

/// What a masked norm integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrand {
    Value,
    Gradient,
}

/// Integral and measure of a masked quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedIntegral {
    pub integral: f64,
    pub measure: f64,
}

impl MaskedIntegral {
    /// `⨍` of the integrand, zero when the mask is empty.
    pub fn average(&self) -> f64 {
        if self.measure > 0.0 {
            self.integral / self.measure
        } else {
            0.0
        }
    }
}

fn trapezoid_weight(i: usize, n: usize, h: f64) -> f64 {
    if i == 0 || i == n {
        0.5 * h
    } else {
        h
    }
}

/// Spatial quadrature points of one integrand, each with its weight and the
/// point at which the mask is evaluated.
struct SpatialRule {
    /// (weight, mask point, node a, node b): value samples use `a == b`;
    /// gradient samples are `(u[b] − u[a])/h`.
    points: Vec<(f64, [f64; 2], usize, usize)>,
    gradient: bool,
}

impl SpatialRule {
    fn new(mesh: &SpaceTimeMesh, which: Integrand) -> Self {
        let nx = mesh.nx;
        let h = mesh.h();
        let mut points = Vec::new();
        match which {
            Integrand::Value => {
                for p in 0..mesh.n_nodes() {
                    let [i, j] = mesh.multi_index(p);
                    let mut w = trapezoid_weight(i, nx, h);
                    if mesh.d == 2 {
                        w *= trapezoid_weight(j, nx, h);
                    }
                    points.push((w, mesh.node(p), p, p));
                }
            }
            Integrand::Gradient => {
                for axis in 0..mesh.d {
                    for p in 0..mesh.n_nodes() {
                        let idx = mesh.multi_index(p);
                        if idx[axis] == nx {
                            continue;
                        }
                        let mut next = idx;
                        next[axis] += 1;
                        let q = mesh.index(next[0], next[1]);
                        let mut x = mesh.node(p);
                        x[axis] += 0.5 * h;
                        let mut w = h;
                        if mesh.d == 2 {
                            w *= trapezoid_weight(idx[1 - axis], nx, h);
                        }
                        points.push((w, x, p, q));
                    }
                }
            }
        }
        Self { points, gradient: which == Integrand::Gradient }
    }

    fn sample(&self, level: &[f64], a: usize, b: usize, inv_h: f64) -> f64 {
        if self.gradient {
            (level[b] - level[a]) * inv_h
        } else {
            level[a]
        }
    }
}

/// `∫ |g|^power` (or `|∇g|^2`, with `power = 2`) over the stored levels,
/// restricted to points where `mask(x, t_mid)` holds. Time cells contribute
/// with trapezoid weights; the mask is evaluated at the cell midpoint.
///
/// The measure uses the same weights with the integrand replaced by one,
/// counted once per spatial axis for gradients and then divided by `d`.
pub fn masked_integral(
    g: &FieldOnMesh,
    which: Integrand,
    power: f64,
    mask: impl Fn([f64; 2], f64) -> bool,
) -> MaskedIntegral {
    let mesh = g.mesh;
    let rule = SpatialRule::new(&mesh, which);
    let inv_h = 1.0 / mesh.h();
    let mut integral = 0.0;
    let mut measure = 0.0;
    for n in 0..mesh.n_levels() - 1 {
        let (t0, t1) = (mesh.time(n), mesh.time(n + 1));
        let dt = t1 - t0;
        let tm = 0.5 * (t0 + t1);
        let (lo, hi) = (g.level(n), g.level(n + 1));
        for &(w, x, a, b) in &rule.points {
            if !mask(x, tm) {
                continue;
            }
            let v0 = rule.sample(lo, a, b, inv_h).abs().powf(power);
            let v1 = rule.sample(hi, a, b, inv_h).abs().powf(power);
            integral += w * 0.5 * dt * (v0 + v1);
            measure += w * dt;
        }
    }
    if rule.gradient {
        measure /= mesh.d as f64;
    }
    MaskedIntegral { integral, measure }
}

/// Masked Gram matrix `∫ ∇f_a·∇f_b` of several fields on one mesh, with the
/// quadrature of [`masked_integral`], and the measure of the mask.
pub fn masked_gradient_gram(
    fields: &[&FieldOnMesh],
    mask: impl Fn([f64; 2], f64) -> bool,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let first = fields.first().ok_or_else(|| Error::Invalid("no fields".into()))?;
    for f in fields {
        check_same_mesh(first, f)?;
    }
    let mesh = first.mesh;
    let rule = SpatialRule::new(&mesh, Integrand::Gradient);
    let inv_h = 1.0 / mesh.h();
    let m = fields.len();
    let mut gram = vec![vec![0.0; m]; m];
    let mut measure = 0.0;
    let mut lo = vec![0.0; m];
    let mut hi = vec![0.0; m];
    for n in 0..mesh.n_levels() - 1 {
        let (t0, t1) = (mesh.time(n), mesh.time(n + 1));
        let dt = t1 - t0;
        let tm = 0.5 * (t0 + t1);
        for &(w, x, a, b) in &rule.points {
            if !mask(x, tm) {
                continue;
            }
            for (k, f) in fields.iter().enumerate() {
                lo[k] = rule.sample(f.level(n), a, b, inv_h);
                hi[k] = rule.sample(f.level(n + 1), a, b, inv_h);
            }
            let c = 0.5 * w * dt;
            for i in 0..m {
                for j in i..m {
                    gram[i][j] += c * (lo[i] * lo[j] + hi[i] * hi[j]);
                }
            }
            measure += w * dt;
        }
    }
    for i in 0..m {
        for j in 0..i {
            gram[i][j] = gram[j][i];
        }
    }
    Ok((gram, measure / mesh.d as f64))
}

/// `L²(Ω_T)` norm of values or of the gradient.
pub fn l2_norm(g: &FieldOnMesh, which: Integrand) -> f64 {
    masked_integral(g, which, 2.0, |_, _| true).integral.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    /// `‖a − b‖_{L²(Ω_T)}`.
    pub l2: f64,
    /// `‖∇(a − b)‖_{L²(Ω_T)}`.
    pub l2h1: f64,
}

pub fn discrepancy_norms(a: &FieldOnMesh, b: &FieldOnMesh) -> Result<Discrepancy> {
    let diff = a.sub(b)?;
    Ok(Discrepancy { l2: l2_norm(&diff, Integrand::Value), l2h1: l2_norm(&diff, Integrand::Gradient) })
}
