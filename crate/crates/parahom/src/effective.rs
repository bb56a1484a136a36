//! Effective tensors `Â_λ`, `Â_∞`, `Â_0`, their ellipticity certificates,
//! and λ-sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coefficients::{CoefficientField, Tensor};
use crate::correctors::{
    gradient_distance, solve_elliptic_corrector_infty, solve_elliptic_corrector_zero, solve_parabolic_corrector,
    CellSettings, CorrectorKind, CorrectorSet,
};
use crate::error::{Error, Result};
use crate::fit::{ols, LineFit};
use crate::torus::CellGrid;

/// Seed of the random probe directions.
pub const PROBE_SEED: u64 = 0x5eed_2024;

/// Allowed shortfall of the certificate below μ.
pub const TOL_ELL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    Lambda { lambda: f64 },
    Infinity,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveTensor {
    pub matrix: Tensor,
    pub provenance: Provenance,
    pub mu_cert: f64,
    pub inputs_digest: String,
    /// `max_j (⨍|∇χ_j|²)^(1/2)`.
    pub corrector_energy: f64,
    pub probe_seed: u64,
}

fn probe_directions(d: usize) -> Vec<[f64; 2]> {
    if d == 1 {
        return vec![[1.0, 0.0], [-1.0, 0.0]];
    }
    let r2 = 0.5f64.sqrt();
    let mut dirs = vec![[1.0, 0.0], [0.0, 1.0], [r2, r2], [r2, -r2]];
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    for _ in 0..16 {
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        dirs.push([phi.cos(), phi.sin()]);
    }
    dirs
}

/// Smallest Rayleigh quotient of `t` over the probe set.
pub fn ellipticity_certificate(t: &Tensor) -> f64 {
    probe_directions(t.d)
        .iter()
        .map(|xi| t.quadratic(xi) / (xi[0] * xi[0] + xi[1] * xi[1]))
        .fold(f64::INFINITY, f64::min)
}

fn digest(field: &CoefficientField, grid: &CellGrid, settings: &CellSettings, tag: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("{}|{:?}|{:?}|{tag}", field.label(), grid, settings).as_bytes());
    hex::encode(h.finalize())
}

impl EffectiveTensor {
    /// Averages a corrector set into a certified tensor.
    pub fn from_correctors(field: &CoefficientField, set: &CorrectorSet, settings: &CellSettings) -> Result<Self> {
        let matrix = set.averaged_flux();
        let provenance = match set.kind {
            CorrectorKind::Parabolic => Provenance::Lambda { lambda: set.grid.lambda },
            CorrectorKind::EllipticInfinity => Provenance::Infinity,
            CorrectorKind::EllipticZero => Provenance::Zero,
        };
        let mu = field.mu();
        let mu_cert = ellipticity_certificate(&matrix);
        if mu_cert < mu - TOL_ELL {
            return Err(Error::EllipticityCertFailed { cert: mu_cert, mu });
        }
        let energy = set.energy_bound();
        let bound = (1.0 + energy) / mu * (1.0 + 1e-9);
        if matrix.m.iter().flatten().any(|v| v.abs() > bound) {
            return Err(Error::EllipticityCertFailed { cert: mu_cert, mu });
        }
        Ok(Self {
            matrix,
            provenance,
            mu_cert,
            inputs_digest: digest(field, &set.grid, settings, &format!("{provenance:?}")),
            corrector_energy: energy,
            probe_seed: PROBE_SEED,
        })
    }

    /// A tensor given directly (for homogenized problems with a known matrix).
    pub fn given(matrix: Tensor, provenance: Provenance) -> Self {
        Self {
            matrix,
            provenance,
            mu_cert: ellipticity_certificate(&matrix),
            inputs_digest: String::new(),
            corrector_energy: 0.0,
            probe_seed: PROBE_SEED,
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix.m[i][j]
    }

    pub fn distance(&self, other: &EffectiveTensor) -> f64 {
        self.matrix.distance(&other.matrix)
    }
}

/// `Â_λ` on a grid with `grid.lambda = λ`.
pub fn effective_lambda(field: &CoefficientField, grid: &CellGrid, settings: &CellSettings) -> Result<EffectiveTensor> {
    let set = solve_parabolic_corrector(field, grid, settings)?;
    EffectiveTensor::from_correctors(field, &set, settings)
}

/// `Â_∞`.
pub fn effective_infinity(
    field: &CoefficientField,
    grid: &CellGrid,
    settings: &CellSettings,
) -> Result<EffectiveTensor> {
    let set = solve_elliptic_corrector_infty(field, grid, settings)?;
    EffectiveTensor::from_correctors(field, &set, settings)
}

/// `Â_0`.
pub fn effective_zero(field: &CoefficientField, grid: &CellGrid, settings: &CellSettings) -> Result<EffectiveTensor> {
    let set = solve_elliptic_corrector_zero(field, grid, settings)?;
    EffectiveTensor::from_correctors(field, &set, settings)
}

/// Grid sizes used for each λ of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPolicy {
    pub d: usize,
    pub n_y: usize,
    pub n_s_base: usize,
}

impl GridPolicy {
    /// `n_s = max(λ, 1)·n_s_base`, rounded up to an even count.
    pub fn grid(&self, lambda: f64) -> Result<CellGrid> {
        let ns = (lambda.max(1.0) * self.n_s_base as f64).round() as usize;
        CellGrid::new(self.d, self.n_y, ns + ns % 2, lambda)
    }

    pub fn reference_grid(&self) -> Result<CellGrid> {
        CellGrid::new(self.d, self.n_y, self.n_s_base, 1.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub tensor: EffectiveTensor,
    pub dist_inf: f64,
    pub dist_zero: f64,
    /// `‖∇χ^λ − ∇χ^∞‖` over the λ-cell.
    pub corrector_dist_inf: f64,
    /// `‖∇χ^λ − ∇χ^0‖` over the λ-cell.
    pub corrector_dist_zero: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaSweepReport {
    pub lambdas: Vec<f64>,
    pub distances_to_infinity: Vec<f64>,
    pub distances_to_zero: Vec<f64>,
    pub slope_high: Option<f64>,
    pub slope_low: Option<f64>,
    pub fit_high: Option<LineFit>,
    pub fit_low: Option<LineFit>,
    pub corrector_slope_high: Option<f64>,
    pub corrector_slope_low: Option<f64>,
    pub a_infinity: EffectiveTensor,
    pub a_zero: EffectiveTensor,
    pub points: Vec<SweepPoint>,
    /// Every distance is below the floor, so no slope is defined.
    pub exact_degenerate: bool,
}

/// Distances below this count as exact.
pub const SWEEP_FLOOR: f64 = 1e-12;

fn ladder_slope(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let pts: Vec<(f64, f64)> =
        xs.iter().zip(ys).filter(|(_, &y)| y > SWEEP_FLOOR).map(|(&x, &y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    Some(ols(&pts))
}

/// Computes `Â_λ` along a ladder and fits the high-λ and low-λ rates.
/// The high ladder is `λ ≥ 4`, the low ladder `λ ≤ 1/4`.
pub fn sweep_lambda(
    field: &CoefficientField,
    lambdas: &[f64],
    policy: &GridPolicy,
    settings: &CellSettings,
) -> Result<LambdaSweepReport> {
    if !field.is_smooth() {
        return Err(Error::RoughCoefficientRejected(field.label()));
    }
    if lambdas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid("lambdas must be strictly increasing".into()));
    }
    let reference = policy.reference_grid()?;
    let a_inf = effective_infinity(field, &reference, settings)?;
    let a_zero = effective_zero(field, &reference, settings)?;
    let solved: Vec<Result<(EffectiveTensor, f64, f64)>> = lambdas
        .par_iter()
        .map(|&l| {
            let grid = policy.grid(l)?;
            let set = solve_parabolic_corrector(field, &grid, settings)?;
            let tensor = EffectiveTensor::from_correctors(field, &set, settings)?;
            let inf = solve_elliptic_corrector_infty(field, &grid, settings)?;
            let zero = solve_elliptic_corrector_zero(field, &grid, settings)?;
            Ok((tensor, gradient_distance(&set, &inf), gradient_distance(&set, &zero)))
        })
        .collect();
    let mut points = Vec::with_capacity(lambdas.len());
    for (&lambda, t) in lambdas.iter().zip(solved) {
        let (tensor, corrector_dist_inf, corrector_dist_zero) = t?;
        points.push(SweepPoint {
            lambda,
            dist_inf: tensor.distance(&a_inf),
            dist_zero: tensor.distance(&a_zero),
            corrector_dist_inf,
            corrector_dist_zero,
            tensor,
        });
    }
    let (hi_x, hi_y): (Vec<f64>, Vec<f64>) =
        points.iter().filter(|p| p.lambda >= 4.0).map(|p| (p.lambda, p.dist_inf)).unzip();
    let (lo_x, lo_y): (Vec<f64>, Vec<f64>) =
        points.iter().filter(|p| p.lambda <= 0.25).map(|p| (p.lambda, p.dist_zero)).unzip();
    let fit_high = ladder_slope(&hi_x, &hi_y);
    let fit_low = ladder_slope(&lo_x, &lo_y);
    let hi_c: Vec<f64> = points.iter().filter(|p| p.lambda >= 4.0).map(|p| p.corrector_dist_inf).collect();
    let lo_c: Vec<f64> = points.iter().filter(|p| p.lambda <= 0.25).map(|p| p.corrector_dist_zero).collect();
    let corrector_slope_high = ladder_slope(&hi_x, &hi_c).map(|f| f.slope);
    let corrector_slope_low = ladder_slope(&lo_x, &lo_c).map(|f| f.slope);
    let exact_degenerate = points.iter().all(|p| p.dist_inf <= SWEEP_FLOOR && p.dist_zero <= SWEEP_FLOOR);
    Ok(LambdaSweepReport {
        lambdas: lambdas.to_vec(),
        distances_to_infinity: points.iter().map(|p| p.dist_inf).collect(),
        distances_to_zero: points.iter().map(|p| p.dist_zero).collect(),
        slope_high: fit_high.map(|f| f.slope),
        slope_low: fit_low.map(|f| f.slope),
        fit_high,
        fit_low,
        corrector_slope_high,
        corrector_slope_low,
        a_infinity: a_inf,
        a_zero,
        points,
        exact_degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::builtin_field;

    #[test]
    fn constant_tensor_is_reproduced() {
        let c = builtin_field(2, "constant", &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let grid = CellGrid::new(2, 8, 8, 1.0).unwrap();
        let s = CellSettings::default();
        for t in [
            effective_lambda(&c, &grid, &s).unwrap(),
            effective_infinity(&c, &grid, &s).unwrap(),
            effective_zero(&c, &grid, &s).unwrap(),
        ] {
            assert_eq!(t.matrix, c.eval([0.0, 0.0], 0.0));
        }
    }

    #[test]
    fn certificate_uses_probes() {
        let t = Tensor { d: 2, m: [[2.0, 0.0], [0.0, 0.5]] };
        assert!((ellipticity_certificate(&t) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_sweep_is_degenerate() {
        let c = builtin_field(1, "constant", &[1.5]).unwrap();
        let policy = GridPolicy { d: 1, n_y: 8, n_s_base: 8 };
        let r = sweep_lambda(&c, &[0.125, 0.25, 4.0, 8.0], &policy, &CellSettings::default()).unwrap();
        assert!(r.exact_degenerate);
        assert!(r.slope_high.is_none());
    }

    #[test]
    fn rough_fields_are_rejected() {
        let c = builtin_field(1, "checkerboard-smooth", &[0.5, 0.1]).unwrap();
        let policy = GridPolicy { d: 1, n_y: 8, n_s_base: 8 };
        assert!(matches!(
            sweep_lambda(&c, &[4.0, 8.0], &policy, &CellSettings::default()),
            Err(Error::RoughCoefficientRejected(_))
        ));
    }
}
