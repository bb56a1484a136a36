//! Periodic coefficient fields `A(y, s)`, their rescalings, and the
//! scale bookkeeping `λ = ε^(k−2)`, `δ = ε + ε^(k/2)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `d × d` matrix with `d ≤ 2`, stored in a fixed 2×2 block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub d: usize,
    pub m: [[f64; 2]; 2],
}

impl Tensor {
    pub fn scalar(d: usize, a: f64) -> Self {
        let mut m = [[0.0; 2]; 2];
        for (i, row) in m.iter_mut().enumerate().take(d) {
            row[i] = a;
        }
        Self { d, m }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if !(1..=2).contains(&d) || rows.iter().any(|r| r.len() != d) {
            return Err(Error::Invalid(format!("expected a square 1x1 or 2x2 matrix, got {rows:?}")));
        }
        let mut m = [[0.0; 2]; 2];
        for i in 0..d {
            for j in 0..d {
                m[i][j] = rows[i][j];
            }
        }
        Ok(Self { d, m })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.d).map(|i| self.m[i][..self.d].to_vec()).collect()
    }

    /// `ξ·Aξ`.
    pub fn quadratic(&self, xi: &[f64]) -> f64 {
        let mut q = 0.0;
        for i in 0..self.d {
            for j in 0..self.d {
                q += xi[i] * self.m[i][j] * xi[j];
            }
        }
        q
    }

    /// Smallest eigenvalue of the symmetric part.
    pub fn min_sym_eigen(&self) -> f64 {
        if self.d == 1 {
            return self.m[0][0];
        }
        let a = self.m[0][0];
        let c = self.m[1][1];
        let b = 0.5 * (self.m[0][1] + self.m[1][0]);
        0.5 * (a + c) - (0.25 * (a - c) * (a - c) + b * b).sqrt()
    }

    /// Spectral norm.
    pub fn operator_norm(&self) -> f64 {
        if self.d == 1 {
            return self.m[0][0].abs();
        }
        // largest singular value from the Gram matrix AᵀA
        let [[a, b], [c, e]] = self.m;
        let g11 = a * a + c * c;
        let g22 = b * b + e * e;
        let g12 = a * b + c * e;
        (0.5 * (g11 + g22) + (0.25 * (g11 - g22) * (g11 - g22) + g12 * g12).sqrt()).sqrt()
    }

    pub fn is_diagonal(&self) -> bool {
        self.d == 1 || (self.m[0][1] == 0.0 && self.m[1][0] == 0.0)
    }

    /// Frobenius distance.
    pub fn distance(&self, other: &Tensor) -> f64 {
        let mut s = 0.0;
        for i in 0..self.d {
            for j in 0..self.d {
                s += (self.m[i][j] - other.m[i][j]).powi(2);
            }
        }
        s.sqrt()
    }
}

/// Known bounds on derivatives of a smooth field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seminorms {
    pub time: f64,
    pub grad: f64,
    pub hessian: f64,
}

/// The built-in families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Constant,
    TimeOnly,
    SpaceOnly,
    SepTrig,
    ProdTrig,
    CheckerboardSmooth,
    Custom,
}

impl Family {
    pub const BUILTIN: [Family; 6] = [
        Family::Constant,
        Family::TimeOnly,
        Family::SpaceOnly,
        Family::SepTrig,
        Family::ProdTrig,
        Family::CheckerboardSmooth,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Constant => "constant",
            Family::TimeOnly => "time-only",
            Family::SpaceOnly => "space-only",
            Family::SepTrig => "sep-trig",
            Family::ProdTrig => "prod-trig",
            Family::CheckerboardSmooth => "checkerboard-smooth",
            Family::Custom => "custom",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Family::BUILTIN.into_iter().find(|f| f.name() == name).ok_or_else(|| Error::UnknownFamily(name.to_string()))
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

type Evaluator = Arc<dyn Fn([f64; 2], f64) -> Tensor + Send + Sync>;

/// A 1-periodic (in `y` and in `s/period`) uniformly elliptic field.
#[derive(Clone)]
pub struct CoefficientField {
    d: usize,
    family: Family,
    params: Vec<f64>,
    mu: f64,
    seminorms: Option<Seminorms>,
    period: f64,
    constant: Option<Tensor>,
    custom: Option<Evaluator>,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("d", &self.d)
            .field("family", &self.family)
            .field("params", &self.params)
            .field("mu", &self.mu)
            .field("period", &self.period)
            .finish()
    }
}

fn check_amplitude(family: Family, c: f64) -> Result<()> {
    if !c.is_finite() || c.abs() >= 1.0 {
        return Err(Error::EllipticityViolated(format!("{family}: amplitude {c} must satisfy |c| < 1")));
    }
    Ok(())
}

fn expect_params(family: Family, params: &[f64], n: usize) -> Result<()> {
    if params.len() != n {
        return Err(Error::InvalidParameters {
            family: family.name().into(),
            reason: format!("expected {n} parameter(s), got {}", params.len()),
        });
    }
    Ok(())
}

fn sin_product(d: usize, y: [f64; 2]) -> f64 {
    let mut p = (2.0 * PI * y[0]).sin();
    if d == 2 {
        p *= (2.0 * PI * y[1]).sin();
    }
    p
}

/// Builds one of the built-in families.
pub fn builtin_field(d: usize, name: &str, params: &[f64]) -> Result<CoefficientField> {
    if d != 1 && d != 2 {
        return Err(Error::Invalid(format!("d = {d}, expected 1 or 2")));
    }
    let family = Family::parse(name)?;
    let df = d as f64;
    let (mu, seminorms, constant) = match family {
        Family::Constant => {
            let t = if params.len() == 1 {
                Tensor::scalar(d, params[0])
            } else if params.len() == d * d {
                let rows: Vec<Vec<f64>> = params.chunks(d).map(|c| c.to_vec()).collect();
                Tensor::from_rows(&rows)?
            } else {
                return Err(Error::InvalidParameters {
                    family: name.into(),
                    reason: format!("expected 1 or {} parameters", d * d),
                });
            };
            let lo = t.min_sym_eigen();
            if !(lo > 0.0) {
                return Err(Error::EllipticityViolated(format!("constant tensor has symmetric eigenvalue {lo}")));
            }
            let mu = lo.min(1.0 / t.operator_norm());
            (mu, Some(Seminorms { time: 0.0, grad: 0.0, hessian: 0.0 }), Some(t))
        }
        Family::TimeOnly => {
            expect_params(family, params, 1)?;
            let c = params[0];
            check_amplitude(family, c)?;
            let s = Seminorms { time: 2.0 * PI * c.abs(), grad: 0.0, hessian: 0.0 };
            ((1.0 - c.abs()).min(1.0 / (1.0 + c.abs())), Some(s), None)
        }
        Family::SpaceOnly => {
            expect_params(family, params, 1)?;
            let c = params[0].abs();
            check_amplitude(family, c)?;
            let s = Seminorms {
                time: 0.0,
                grad: 2.0 * PI * c / (1.0 - c).powi(2),
                hessian: 4.0 * PI * PI * c * (1.0 + 3.0 * c) / (1.0 - c).powi(3),
            };
            ((1.0 - c).min(1.0 / (1.0 + c)), Some(s), None)
        }
        Family::SepTrig => {
            expect_params(family, params, 1)?;
            let c = params[0].abs();
            check_amplitude(family, c)?;
            let s = Seminorms { time: 2.0 * PI * c, grad: 2.0 * PI * c * df.sqrt(), hessian: 4.0 * PI * PI * c * df };
            ((1.0 - c).min(1.0 / (1.0 + c)), Some(s), None)
        }
        Family::ProdTrig => {
            expect_params(family, params, 2)?;
            let (c1, c2) = (params[0].abs(), params[1].abs());
            check_amplitude(family, c1)?;
            check_amplitude(family, c2)?;
            let s = Seminorms {
                time: 2.0 * PI * c2 * (1.0 + c1),
                grad: 2.0 * PI * c1 * df.sqrt() * (1.0 + c2),
                hessian: 4.0 * PI * PI * c1 * df * (1.0 + c2),
            };
            let mu = ((1.0 - c1) * (1.0 - c2)).min(1.0 / ((1.0 + c1) * (1.0 + c2)));
            (mu, Some(s), None)
        }
        Family::CheckerboardSmooth => {
            expect_params(family, params, 2)?;
            let (c, w) = (params[0], params[1]);
            check_amplitude(family, c)?;
            if !(w > 0.0) {
                return Err(Error::InvalidParameters { family: name.into(), reason: "width must be positive".into() });
            }
            ((1.0 - c.abs()).min(1.0 / (1.0 + c.abs())), None, None)
        }
        Family::Custom => unreachable!(),
    };
    let field =
        CoefficientField { d, family, params: params.to_vec(), mu, seminorms, period: 1.0, constant, custom: None };
    field.validate()?;
    Ok(field)
}

impl CoefficientField {
    /// A user-supplied field. `evaluator` must be 1-periodic in every
    /// argument; it is checked by sampling.
    pub fn from_fn(
        d: usize,
        mu: f64,
        seminorms: Option<Seminorms>,
        evaluator: impl Fn([f64; 2], f64) -> Tensor + Send + Sync + 'static,
    ) -> Result<Self> {
        let field = CoefficientField {
            d,
            family: Family::Custom,
            params: Vec::new(),
            mu,
            seminorms,
            period: 1.0,
            constant: None,
            custom: Some(Arc::new(evaluator)),
        };
        field.validate()?;
        Ok(field)
    }

    fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::EllipticityViolated(format!("mu = {}", self.mu)));
        }
        let probes: Vec<[f64; 2]> = if self.d == 1 {
            vec![[1.0, 0.0], [-1.0, 0.0], [0.5, 0.0], [2.0, 0.0]]
        } else {
            let r2 = 0.5f64.sqrt();
            let r5 = 0.2f64.sqrt();
            vec![[1.0, 0.0], [0.0, 1.0], [r2, r2], [r2, -r2], [r5, 2.0 * r5], [2.0 * r5, -r5]]
        };
        let n = 12;
        let slack = 1e-12;
        for a in 0..n {
            for b in 0..if self.d == 2 { n } else { 1 } {
                for c in 0..n {
                    let y = [(a as f64 + 0.37) / n as f64, (b as f64 + 0.61) / n as f64];
                    let s = (c as f64 + 0.23) / n as f64 * self.period;
                    let t = self.eval(y, s);
                    if !t.m.iter().flatten().all(|v| v.is_finite()) {
                        return Err(Error::EllipticityViolated(format!("non-finite value at {y:?}, {s}")));
                    }
                    for xi in &probes {
                        let norm2 = xi[0] * xi[0] + xi[1] * xi[1];
                        if t.quadratic(xi) < self.mu * norm2 * (1.0 - slack) {
                            return Err(Error::EllipticityViolated(format!("ξ·Aξ < μ|ξ|² at y = {y:?}, s = {s}")));
                        }
                    }
                    if t.operator_norm() > (1.0 + slack) / self.mu {
                        return Err(Error::EllipticityViolated(format!("‖A‖ > 1/μ at y = {y:?}, s = {s}")));
                    }
                    let shifted = self.eval([y[0] + 1.0, y[1] - 1.0], s + self.period);
                    if shifted.distance(&t) > 1e-10 * (1.0 + t.operator_norm()) {
                        return Err(Error::Invalid(format!("field is not periodic at y = {y:?}, s = {s}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn seminorms(&self) -> Option<Seminorms> {
        self.seminorms
    }

    /// Temporal period (1 for a base field, λ after rescaling).
    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn is_smooth(&self) -> bool {
        self.seminorms.is_some()
    }

    pub fn is_constant(&self) -> bool {
        self.constant.is_some()
    }

    /// Whether the field never couples different directions.
    pub fn is_diagonal(&self) -> bool {
        match (&self.constant, self.family) {
            (Some(t), _) => t.is_diagonal(),
            (None, Family::Custom) => false,
            _ => true,
        }
    }

    pub fn is_time_independent(&self) -> bool {
        matches!(self.family, Family::Constant | Family::SpaceOnly | Family::CheckerboardSmooth)
    }

    /// Short provenance label such as `sep-trig[0.5]`.
    pub fn label(&self) -> String {
        let p: Vec<String> = self.params.iter().map(|v| format!("{v}")).collect();
        format!("{}[{}]@{}", self.family, p.join(","), self.period)
    }

    /// Value of an isotropic built-in at `(y, s)` in base time units.
    fn scalar(&self, y: [f64; 2], s: f64) -> f64 {
        let p = &self.params;
        match self.family {
            Family::TimeOnly => 1.0 + p[0] * (2.0 * PI * s).cos(),
            Family::SpaceOnly => 1.0 / (1.0 + p[0] * (2.0 * PI * y[0]).sin()),
            Family::SepTrig => 1.0 + p[0] * (2.0 * PI * s).cos() * sin_product(self.d, y),
            Family::ProdTrig => (1.0 + p[0] * sin_product(self.d, y)) * (1.0 + p[1] * (2.0 * PI * s).cos()),
            Family::CheckerboardSmooth => 1.0 + p[0] * (sin_product(self.d, y) / p[1]).tanh(),
            Family::Constant | Family::Custom => unreachable!(),
        }
    }

    /// `A(y, s)`.
    pub fn eval(&self, y: [f64; 2], s: f64) -> Tensor {
        if let Some(t) = self.constant {
            return t;
        }
        let s = s / self.period;
        if let Some(f) = &self.custom {
            return f(y, s);
        }
        Tensor::scalar(self.d, self.scalar(y, s))
    }

    /// Diagonal entry `a_kk(y, s)`; the hot path of every solver.
    pub fn diagonal(&self, y: [f64; 2], s: f64, k: usize) -> f64 {
        if let Some(t) = self.constant {
            return t.m[k][k];
        }
        if self.custom.is_some() {
            return self.eval(y, s).m[k][k];
        }
        self.scalar(y, s / self.period)
    }
}

/// Repeated evaluation of `a_kk` at a fixed set of points, caching the
/// spatial factor of separable built-ins.
#[derive(Clone)]
pub struct PointSampler {
    field: CoefficientField,
    axis: usize,
    points: Vec<[f64; 2]>,
    cached: Vec<f64>,
}

impl PointSampler {
    pub fn new(field: &CoefficientField, points: Vec<[f64; 2]>, axis: usize) -> Self {
        let d = field.d;
        let p = &field.params;
        let cached = match (field.family, field.custom.is_some()) {
            (_, true) | (Family::Constant, _) | (Family::TimeOnly, _) => Vec::new(),
            (Family::SpaceOnly, _) | (Family::CheckerboardSmooth, _) => {
                points.iter().map(|&y| field.scalar(y, 0.0)).collect()
            }
            (Family::SepTrig, _) => points.iter().map(|&y| p[0] * sin_product(d, y)).collect(),
            (Family::ProdTrig, _) => points.iter().map(|&y| 1.0 + p[0] * sin_product(d, y)).collect(),
            (Family::Custom, _) => Vec::new(),
        };
        Self { field: field.clone(), axis, points, cached }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Writes `a_kk(y_i, s)` for every point.
    pub fn sample(&self, s: f64, out: &mut [f64]) {
        let f = &self.field;
        if f.custom.is_some() {
            for (o, &y) in out.iter_mut().zip(&self.points) {
                *o = f.diagonal(y, s, self.axis);
            }
            return;
        }
        let phase = (2.0 * PI * s / f.period).cos();
        match f.family {
            Family::Constant => {
                let v = f.constant.expect("constant tensor").m[self.axis][self.axis];
                out.iter_mut().for_each(|o| *o = v);
            }
            Family::TimeOnly => {
                let v = 1.0 + f.params[0] * phase;
                out.iter_mut().for_each(|o| *o = v);
            }
            Family::SpaceOnly | Family::CheckerboardSmooth => out.copy_from_slice(&self.cached),
            Family::SepTrig => {
                for (o, c) in out.iter_mut().zip(&self.cached) {
                    *o = 1.0 + c * phase;
                }
            }
            Family::ProdTrig => {
                let t = 1.0 + f.params[1] * phase;
                for (o, c) in out.iter_mut().zip(&self.cached) {
                    *o = c * t;
                }
            }
            Family::Custom => unreachable!(),
        }
    }
}

/// `A_λ(y, s) = A(y, s/λ)`.
pub fn rescale_lambda(field: &CoefficientField, lambda: f64) -> Result<CoefficientField> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::NonPositiveLambda(lambda));
    }
    let mut out = field.clone();
    out.period = field.period * lambda;
    Ok(out)
}

/// The pair `(ε, k)` with its derived `λ` and `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    epsilon: f64,
    k: f64,
}

impl ScaleParams {
    pub fn new(epsilon: f64, k: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::Invalid(format!("epsilon = {epsilon} must lie in (0, 1]")));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::NonPositiveK(k));
        }
        Ok(Self { epsilon, k })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// `λ = ε^(k−2)`.
    pub fn lambda(&self) -> f64 {
        self.epsilon.powf(self.k - 2.0)
    }

    /// `δ = ε + ε^(k/2)`.
    pub fn delta(&self) -> f64 {
        self.epsilon + self.epsilon.powf(0.5 * self.k)
    }

    /// Temporal period of the coefficient in physical time, `ε^k`.
    pub fn time_period(&self) -> f64 {
        self.epsilon.powf(self.k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_examples() {
        let c = builtin_field(1, "constant", &[2.0]).unwrap();
        assert_eq!(c.eval([0.3, 0.0], 0.7).m[0][0], 2.0);
        assert_eq!(c.mu(), 0.5);

        let s = builtin_field(1, "sep-trig", &[0.5]).unwrap();
        assert_eq!(s.mu(), 0.5);
        let y = 0.25;
        assert!((s.eval([y, 0.0], 0.0).m[0][0] - 1.5).abs() < 1e-15);

        assert!(matches!(builtin_field(1, "sep-trig", &[1.5]), Err(Error::EllipticityViolated(_))));
        assert!(matches!(builtin_field(1, "plaid", &[0.5]), Err(Error::UnknownFamily(_))));
        let p = builtin_field(2, "prod-trig", &[0.5, 0.25]).unwrap();
        assert!((p.mu() - 0.375).abs() < 1e-15);
        assert!(builtin_field(2, "checkerboard-smooth", &[0.5, 0.1]).unwrap().seminorms().is_none());
    }

    #[test]
    fn full_constant_matrix() {
        let c = builtin_field(2, "constant", &[2.0, 0.5, 0.5, 1.0]).unwrap();
        assert!(!c.is_diagonal());
        assert!(c.mu() > 0.0);
        assert!(builtin_field(2, "constant", &[1.0, 2.0, 2.0, 1.0]).is_err());
    }

    #[test]
    fn rescaling_examples() {
        let s = builtin_field(1, "sep-trig", &[0.5]).unwrap();
        let r = rescale_lambda(&s, 2.0).unwrap();
        assert!((r.eval([0.25, 0.0], 1.0).m[0][0] - 0.5).abs() < 1e-15);
        let same = rescale_lambda(&s, 1.0).unwrap();
        assert_eq!(same.eval([0.1, 0.0], 0.3), s.eval([0.1, 0.0], 0.3));
        let c = builtin_field(1, "constant", &[1.5]).unwrap();
        assert_eq!(rescale_lambda(&c, 7.0).unwrap().eval([0.2, 0.0], 0.4), c.eval([0.2, 0.0], 0.4));
        assert!(matches!(rescale_lambda(&s, -1.0), Err(Error::NonPositiveLambda(_))));
    }

    #[test]
    fn sampler_matches_direct_evaluation() {
        for (name, params) in [
            ("constant", vec![2.0]),
            ("time-only", vec![0.3]),
            ("space-only", vec![0.4]),
            ("sep-trig", vec![0.5]),
            ("prod-trig", vec![0.5, 0.25]),
            ("checkerboard-smooth", vec![0.5, 0.2]),
        ] {
            let f = rescale_lambda(&builtin_field(2, name, &params).unwrap(), 3.0).unwrap();
            let pts: Vec<[f64; 2]> = (0..7).map(|i| [0.13 * i as f64, 0.71 - 0.05 * i as f64]).collect();
            let sampler = PointSampler::new(&f, pts.clone(), 1);
            let mut out = vec![0.0; pts.len()];
            sampler.sample(1.37, &mut out);
            for (o, y) in out.iter().zip(&pts) {
                assert!((o - f.diagonal(*y, 1.37, 1)).abs() < 1e-14, "{name}");
            }
        }
    }

    #[test]
    fn scale_params() {
        let p = ScaleParams::new(0.25, 3.0).unwrap();
        assert!((p.lambda() - 0.25).abs() < 1e-15);
        assert!((p.delta() - (0.25 + 0.125)).abs() < 1e-15);
        assert!((p.delta() - (1.0 + p.lambda().sqrt()) * p.epsilon()).abs() < 1e-15);
        assert!(ScaleParams::new(0.5, 0.0).is_err());
    }

    #[test]
    fn custom_field_is_validated() {
        let ok = CoefficientField::from_fn(1, 0.5, None, |y, _| Tensor::scalar(1, 1.0 + 0.5 * (2.0 * PI * y[0]).cos()));
        assert!(ok.is_ok());
        let aperiodic = CoefficientField::from_fn(1, 0.5, None, |y, _| Tensor::scalar(1, 1.0 + 0.1 * y[0].min(5.0)));
        assert!(aperiodic.is_err());
    }
}
