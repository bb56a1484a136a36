//! Uniform grids on the space-time torus `T^d × [0, λ)` and the discrete
//! calculus shared by every cell computation.
//!
//! Two families of difference operators live here. The staggered pair
//! [`CellField::forward_diff`] / [`CellField::backward_diff`] maps nodes to
//! faces and back; their composition is the compact three-point Laplacian,
//! whose Fourier symbol vanishes only at the zero mode, so
//! [`poisson_spacetime`] inverts it exactly. The centered
//! [`discrete_gradient`] is kept for diagnostics.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Periodic grid on `T^d × [0, λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub d: usize,
    pub n_y: usize,
    pub n_s: usize,
    pub lambda: f64,
}

impl CellGrid {
    pub fn new(d: usize, n_y: usize, n_s: usize, lambda: f64) -> Result<Self> {
        if d != 1 && d != 2 {
            return Err(Error::InvalidGrid(format!("d = {d}, expected 1 or 2")));
        }
        if n_y < 4 || n_s < 4 || n_y % 2 != 0 || n_s % 2 != 0 {
            return Err(Error::InvalidGrid(format!("n_y = {n_y}, n_s = {n_s}; both must be even and at least 4")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::NonPositiveLambda(lambda));
        }
        Ok(Self { d, n_y, n_s, lambda })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_y as f64
    }

    pub fn tau(&self) -> f64 {
        self.lambda / self.n_s as f64
    }

    /// Number of spatial nodes, `n_y^d`.
    pub fn n_space(&self) -> usize {
        self.n_y.pow(self.d as u32)
    }

    /// Spatial multi-index of a flat spatial index.
    pub fn multi_index(&self, p: usize) -> [usize; 2] {
        [p % self.n_y, p / self.n_y]
    }

    /// Spatial coordinates of a node.
    pub fn node(&self, p: usize) -> [f64; 2] {
        let [i, j] = self.multi_index(p);
        [i as f64 * self.h(), j as f64 * self.h()]
    }

    /// Flat index of the periodic neighbour `p + step·e_axis`.
    pub fn shift(&self, p: usize, axis: usize, step: isize) -> usize {
        let n = self.n_y as isize;
        let mut idx = self.multi_index(p);
        idx[axis] = (idx[axis] as isize + step).rem_euclid(n) as usize;
        idx[0] + self.n_y * idx[1]
    }
}

/// Direction of a difference operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Space(usize),
    Time,
}

/// Scalar samples on a [`CellGrid`].
///
/// A field holds either `n_s` time levels or a single time-independent
/// level. Level `n` sits at time `(n + offset)·tau`; fluxes produced by the
/// Crank–Nicolson march live at half levels (`offset = 0.5`).
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    grid: CellGrid,
    levels: usize,
    offset: f64,
    data: Vec<f64>,
}

impl CellField {
    pub fn zeros(grid: CellGrid) -> Self {
        Self { grid, levels: grid.n_s, offset: 0.0, data: vec![0.0; grid.n_space() * grid.n_s] }
    }

    pub fn zeros_static(grid: CellGrid) -> Self {
        Self { grid, levels: 1, offset: 0.0, data: vec![0.0; grid.n_space()] }
    }

    pub fn from_vec(grid: CellGrid, levels: usize, data: Vec<f64>) -> Result<Self> {
        if levels != 1 && levels != grid.n_s {
            return Err(Error::InvalidGrid(format!("{levels} levels on a grid with n_s = {}", grid.n_s)));
        }
        if data.len() != levels * grid.n_space() {
            return Err(Error::InvalidGrid(format!("{} samples for {levels} levels", data.len())));
        }
        Ok(Self { grid, levels, offset: 0.0, data })
    }

    /// Samples `f(y, s)` at nodes and level times.
    pub fn from_fn(grid: CellGrid, f: impl Fn([f64; 2], f64) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        let ns = grid.n_space();
        for n in 0..grid.n_s {
            let s = n as f64 * grid.tau();
            for p in 0..ns {
                out.data[n * ns + p] = f(grid.node(p), s);
            }
        }
        out
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn is_static(&self) -> bool {
        self.levels == 1
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn level(&self, n: usize) -> &[f64] {
        let ns = self.grid.n_space();
        &self.data[n * ns..(n + 1) * ns]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut [f64] {
        let ns = self.grid.n_space();
        &mut self.data[n * ns..(n + 1) * ns]
    }

    pub fn get(&self, n: usize, p: usize) -> f64 {
        self.data[n * self.grid.n_space() + p]
    }

    /// Root-mean-square of the samples.
    pub fn rms(&self) -> f64 {
        (self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { data: self.data.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.data.len(), other.data.len(), "field shapes differ");
        Self { data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(), ..self.clone() }
    }

    /// Mean over space of each level.
    pub fn slice_means(&self) -> Vec<f64> {
        (0..self.levels).map(|n| self.level(n).iter().sum::<f64>() / self.grid.n_space() as f64).collect()
    }

    /// Forward difference `(f(i+1) − f(i))/h`; in time it maps level `n` to
    /// `(f(n+1) − f(n))/tau`.
    pub fn forward_diff(&self, axis: Axis) -> Self {
        self.difference(axis, 1)
    }

    /// Backward difference `(f(i) − f(i−1))/h`.
    pub fn backward_diff(&self, axis: Axis) -> Self {
        self.difference(axis, -1)
    }

    fn difference(&self, axis: Axis, dir: isize) -> Self {
        let g = self.grid;
        let ns = g.n_space();
        let mut out = self.clone();
        match axis {
            Axis::Space(k) => {
                assert!(k < g.d, "axis {k} out of range");
                let inv_h = 1.0 / g.h();
                for n in 0..self.levels {
                    let lvl = self.level(n);
                    let dst = &mut out.data[n * ns..(n + 1) * ns];
                    for p in 0..ns {
                        let q = g.shift(p, k, dir);
                        dst[p] = dir as f64 * (lvl[q] - lvl[p]) * inv_h;
                    }
                }
                out.offset = self.offset;
            }
            Axis::Time => {
                if self.levels == 1 {
                    out.data.iter_mut().for_each(|v| *v = 0.0);
                    return out;
                }
                let inv_tau = 1.0 / g.tau();
                let nt = self.levels as isize;
                for n in 0..self.levels {
                    let m = (n as isize + dir).rem_euclid(nt) as usize;
                    for p in 0..ns {
                        out.data[n * ns + p] = dir as f64 * (self.data[m * ns + p] - self.data[n * ns + p]) * inv_tau;
                    }
                }
                out.offset = self.offset + 0.5 * dir as f64;
            }
        }
        out
    }

    /// Periodic multilinear interpolation at `(y, s)`, with `s` in cell time
    /// units (period `λ`). Static fields ignore `s`.
    pub fn interpolate(&self, y: [f64; 2], s: f64) -> f64 {
        self.interpolate_staggered(y, s, [0.0, 0.0])
    }

    /// As [`CellField::interpolate`] for samples displaced by `stagger·h`
    /// (face-centred quantities use a half-cell stagger along their axis).
    pub fn interpolate_staggered(&self, y: [f64; 2], s: f64, stagger: [f64; 2]) -> f64 {
        let g = self.grid;
        let n = g.n_y as f64;
        let mut lo = [0usize; 2];
        let mut frac = [0.0; 2];
        for k in 0..g.d {
            let u = (y[k] * n - stagger[k]).rem_euclid(n);
            let f = u.floor();
            lo[k] = (f as usize) % g.n_y;
            frac[k] = u - f;
        }
        let (t_lo, t_hi, t_frac) = if self.levels == 1 {
            (0, 0, 0.0)
        } else {
            let m = self.levels as f64;
            let u = (s / g.tau() - self.offset).rem_euclid(m);
            let f = u.floor();
            let a = (f as usize) % self.levels;
            (a, (a + 1) % self.levels, u - f)
        };
        let spatial = |level: usize| -> f64 {
            let lvl = self.level(level);
            let i1 = (lo[0] + 1) % g.n_y;
            if g.d == 1 {
                return lvl[lo[0]] * (1.0 - frac[0]) + lvl[i1] * frac[0];
            }
            let j1 = (lo[1] + 1) % g.n_y;
            let at = |i: usize, j: usize| lvl[i + g.n_y * j];
            let bottom = at(lo[0], lo[1]) * (1.0 - frac[0]) + at(i1, lo[1]) * frac[0];
            let top = at(lo[0], j1) * (1.0 - frac[0]) + at(i1, j1) * frac[0];
            bottom * (1.0 - frac[1]) + top * frac[1]
        };
        if t_frac == 0.0 {
            spatial(t_lo)
        } else {
            spatial(t_lo) * (1.0 - t_frac) + spatial(t_hi) * t_frac
        }
    }

    /// Centered difference `(f(i+1) − f(i−1))/(2h)` along a spatial axis.
    pub fn centered_diff(&self, k: usize) -> Self {
        let g = self.grid;
        let ns = g.n_space();
        let inv = 0.5 / g.h();
        let mut out = self.clone();
        for n in 0..self.levels {
            let lvl = self.level(n);
            for p in 0..ns {
                out.data[n * ns + p] = (lvl[g.shift(p, k, 1)] - lvl[g.shift(p, k, -1)]) * inv;
            }
        }
        out
    }

    /// Average onto the faces `i + 1/2` along `k`.
    pub fn face_average(&self, k: usize) -> Self {
        self.average(k, 1)
    }

    /// Average of the faces on either side of each node along `k`.
    pub fn node_average(&self, k: usize) -> Self {
        self.average(k, -1)
    }

    fn average(&self, k: usize, dir: isize) -> Self {
        let g = self.grid;
        let ns = g.n_space();
        let mut out = self.clone();
        for n in 0..self.levels {
            let lvl = self.level(n);
            for p in 0..ns {
                out.data[n * ns + p] = 0.5 * (lvl[p] + lvl[g.shift(p, k, dir)]);
            }
        }
        out
    }
}

impl std::ops::Add<&CellField> for &CellField {
    type Output = CellField;
    fn add(self, rhs: &CellField) -> CellField {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl std::ops::Sub<&CellField> for &CellField {
    type Output = CellField;
    fn sub(self, rhs: &CellField) -> CellField {
        self.zip_with(rhs, |a, b| a - b)
    }
}

/// Uniform average of the samples (all quadrature weights are equal on a
/// periodic grid).
pub fn cell_mean(f: &CellField) -> f64 {
    f.data.iter().sum::<f64>() / f.data.len() as f64
}

/// Centered gradient, one component per spatial axis.
pub fn discrete_gradient(f: &CellField) -> Vec<CellField> {
    (0..f.grid.d).map(|k| f.centered_diff(k)).collect()
}

/// Compact space-time Laplacian `Σ_k D_k^− D_k^+ + D_s^− D_s^+`.
pub fn spacetime_laplacian(f: &CellField) -> CellField {
    let mut out = f.forward_diff(Axis::Time).backward_diff(Axis::Time);
    out.offset = f.offset;
    for k in 0..f.grid.d {
        let term = f.forward_diff(Axis::Space(k)).backward_diff(Axis::Space(k));
        out = &out + &term;
    }
    out
}

/// Fourier multipliers of [`spacetime_laplacian`].
#[derive(Debug, Clone)]
pub struct SpectralSymbol {
    space: Vec<f64>,
    time: Vec<f64>,
    grid: CellGrid,
}

impl SpectralSymbol {
    pub fn new(grid: &CellGrid) -> Self {
        let one = |m: usize, n: usize, step: f64| {
            let s = (std::f64::consts::PI * m as f64 / n as f64).sin();
            -4.0 * s * s / (step * step)
        };
        Self {
            space: (0..grid.n_y).map(|m| one(m, grid.n_y, grid.h())).collect(),
            time: (0..grid.n_s).map(|m| one(m, grid.n_s, grid.tau())).collect(),
            grid: *grid,
        }
    }

    /// Symbol at spatial modes `m` and temporal mode `mt`.
    pub fn at(&self, m: [usize; 2], mt: usize) -> f64 {
        let mut v = self.time[mt] + self.space[m[0]];
        if self.grid.d == 2 {
            v += self.space[m[1]];
        }
        v
    }
}

fn fft_all_axes(data: &mut [Complex64], grid: &CellGrid, inverse: bool) {
    let mut planner = FftPlanner::new();
    let mut dims = vec![(grid.n_y, 1usize)];
    if grid.d == 2 {
        dims.push((grid.n_y, grid.n_y));
    }
    dims.push((grid.n_s, grid.n_space()));
    let total = data.len();
    let mut line = Vec::new();
    for &(len, stride) in &dims {
        let fft = if inverse { planner.plan_fft_inverse(len) } else { planner.plan_fft_forward(len) };
        line.resize(len, Complex64::new(0.0, 0.0));
        let block = len * stride;
        for start in (0..total).step_by(block) {
            for off in 0..stride {
                let base = start + off;
                for (i, v) in line.iter_mut().enumerate() {
                    *v = data[base + i * stride];
                }
                fft.process(&mut line);
                for (i, v) in line.iter().enumerate() {
                    data[base + i * stride] = *v;
                }
            }
        }
    }
}

/// Default relative tolerance on the mean of a Poisson right-hand side.
pub const TOL_MEAN: f64 = 1e-10;

/// Solves `spacetime_laplacian(f) = g` in the zero-mean gauge by exact
/// Fourier diagonalization of the stencil.
pub fn poisson_spacetime(g: &CellField) -> Result<CellField> {
    poisson_spacetime_scaled(g, 0.0)
}

/// As [`poisson_spacetime`], with the mean tolerance taken relative to
/// `max(‖g‖, scale)`. Right-hand sides that are differences of `O(scale)`
/// quantities can be pure round-off, and their mean is then as large as
/// their norm.
pub fn poisson_spacetime_scaled(g: &CellField, scale: f64) -> Result<CellField> {
    let grid = g.grid;
    if g.levels != grid.n_s {
        return Err(Error::Invalid("poisson_spacetime needs a time-dependent field".into()));
    }
    let mean = cell_mean(g);
    let norm = g.rms().max(scale);
    if mean.abs() > TOL_MEAN * norm.max(f64::MIN_POSITIVE) && mean != 0.0 {
        return Err(Error::NonZeroMean { mean, tol: TOL_MEAN });
    }
    let mut data: Vec<Complex64> = g.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_all_axes(&mut data, &grid, false);
    let symbol = SpectralSymbol::new(&grid);
    let ns = grid.n_space();
    for mt in 0..grid.n_s {
        for p in 0..ns {
            let idx = mt * ns + p;
            let sigma = symbol.at(grid.multi_index(p), mt);
            data[idx] = if idx == 0 { Complex64::new(0.0, 0.0) } else { data[idx] / sigma };
        }
    }
    fft_all_axes(&mut data, &grid, true);
    let scale = 1.0 / data.len() as f64;
    Ok(CellField { grid, levels: grid.n_s, offset: g.offset, data: data.iter().map(|c| c.re * scale).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid1(n: usize, ns: usize, lambda: f64) -> CellGrid {
        CellGrid::new(1, n, ns, lambda).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(CellGrid::new(1, 3, 8, 1.0).is_err());
        assert!(CellGrid::new(1, 8, 7, 1.0).is_err());
        assert!(CellGrid::new(3, 8, 8, 1.0).is_err());
        assert!(matches!(CellGrid::new(1, 8, 8, 0.0), Err(Error::NonPositiveLambda(_))));
        let g = grid1(8, 16, 2.0);
        assert_eq!(g.h() * 8.0, 1.0);
        assert_eq!(g.tau() * 16.0, 2.0);
    }

    #[test]
    fn mean_examples() {
        let g = grid1(64, 4, 1.0);
        assert_eq!(cell_mean(&CellField::from_fn(g, |_, _| 3.0)), 3.0);
        assert!(cell_mean(&CellField::from_fn(g, |y, _| (2.0 * PI * y[0]).sin())).abs() < 1e-15);
        let sq = CellField::from_fn(g, |y, _| (2.0 * PI * y[0]).sin().powi(2));
        assert!((cell_mean(&sq) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn centered_gradient_eigenfunction() {
        let g = grid1(64, 4, 1.0);
        let h = g.h();
        let f = CellField::from_fn(g, |y, _| (2.0 * PI * y[0]).sin());
        let df = &discrete_gradient(&f)[0];
        let factor = (2.0 * PI * h).sin() / (2.0 * PI * h);
        let expect = CellField::from_fn(g, |y, _| 2.0 * PI * (2.0 * PI * y[0]).cos() * factor);
        assert!((df - &expect).max_abs() < 1e-12);
        let c = CellField::from_fn(g, |_, _| 1.7);
        assert!(discrete_gradient(&c)[0].values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centered_gradient_second_order() {
        let f = |y: [f64; 2]| (2.0 * PI * y[0]).sin().exp() * (2.0 * PI * y[1]).cos();
        let df =
            |y: [f64; 2]| 2.0 * PI * (2.0 * PI * y[0]).cos() * (2.0 * PI * y[0]).sin().exp() * (2.0 * PI * y[1]).cos();
        let err = |n: usize| {
            let g = CellGrid::new(2, n, 4, 1.0).unwrap();
            let d = &discrete_gradient(&CellField::from_fn(g, |y, _| f(y)))[0];
            (d - &CellField::from_fn(g, |y, _| df(y))).max_abs()
        };
        let order = (err(32) / err(64)).log2();
        assert!(order >= 1.9, "observed order {order}");
    }

    #[test]
    fn poisson_single_modes() {
        let g = grid1(32, 16, 1.0);
        let zero = poisson_spacetime(&CellField::zeros(g)).unwrap();
        assert_eq!(zero.max_abs(), 0.0);

        let rhs = CellField::from_fn(g, |y, _| (2.0 * PI * y[0]).cos());
        let sol = poisson_spacetime(&rhs).unwrap();
        let sigma = SpectralSymbol::new(&g).at([1, 0], 0);
        let expect = rhs.map(|v| v / sigma);
        assert!((&sol - &expect).max_abs() < 1e-14);
        assert!((sigma + 4.0 * PI * PI).abs() < 0.2);

        // temporal mode with λ = 2: f → −λ² cos(2πs/λ)/(4π²) as τ → 0
        let g2 = grid1(8, 256, 2.0);
        let rhs = CellField::from_fn(g2, |_, s| (PI * s).cos());
        let sol = poisson_spacetime(&rhs).unwrap();
        let limit = CellField::from_fn(g2, |_, s| -(PI * s).cos() / (PI * PI));
        assert!((&sol - &limit).max_abs() < 1e-3);
    }

    #[test]
    fn poisson_rejects_nonzero_mean() {
        let g = grid1(8, 8, 1.0);
        let rhs = CellField::from_fn(g, |y, _| 1.0 + y[0]);
        assert!(matches!(poisson_spacetime(&rhs), Err(Error::NonZeroMean { .. })));
    }

    #[test]
    fn staggered_pair_composes_to_laplacian_symbol() {
        let g = CellGrid::new(2, 8, 8, 0.5).unwrap();
        let symbol = SpectralSymbol::new(&g);
        assert_eq!(symbol.at([0, 0], 0), 0.0);
        for m0 in 0..8 {
            for m1 in 0..8 {
                for mt in 0..8 {
                    if m0 + m1 + mt > 0 {
                        assert!(symbol.at([m0, m1], mt) < 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn interpolation_reproduces_nodes_and_bilinear_data() {
        let g = CellGrid::new(2, 8, 8, 2.0).unwrap();
        let f = CellField::from_fn(g, |y, s| y[0] + 2.0 * y[1] + 0.25 * s);
        // nodes are exact
        assert!((f.interpolate([0.25, 0.5], 0.5) - f.get(2, 2 + 8 * 4)).abs() < 1e-15);
        // affine data away from the periodic seam is reproduced
        let v = f.interpolate([0.3, 0.41], 0.9);
        assert!((v - (0.3 + 0.82 + 0.225)).abs() < 1e-13);
        // periodic in y and in s
        let w = f.interpolate([1.3, -0.59], 0.9 + 2.0);
        assert!((w - v).abs() < 1e-13);
        let staggered = f.forward_diff(Axis::Space(0));
        assert!((staggered.interpolate_staggered([0.33, 0.4], 0.5, [0.5, 0.0]) - 1.0).abs() < 1e-12);
    }
}
