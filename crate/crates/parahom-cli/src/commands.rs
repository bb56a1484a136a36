//! The subcommands. Each one solves what the config declares, compares the
//! results with the verdict bounds and writes its artifacts.

use std::f64::consts::PI;
use std::io;
use std::path::Path;

use parahom::coefficients::{CoefficientField, Family, ScaleParams, Tensor};
use parahom::correctors::{
    compute_flux, gradient_distance, lemma51_residual, solve_dual_correctors, solve_elliptic_corrector_infty,
    solve_elliptic_corrector_zero, solve_parabolic_corrector, solve_second_correctors, CorrectorKind, CorrectorSet,
};
use parahom::effective::{ellipticity_certificate, sweep_lambda, EffectiveTensor, GridPolicy, TOL_ELL};
use parahom::fit::ols;
use parahom::ivp::{solve_homogenized, solve_ivp, IVProblem, IvpCoefficient, ResolutionPolicy};
use parahom::mesh::{FieldOnMesh, SpaceTimeMesh};
use parahom::rates::{
    corrected_class_correctors, excess_profile, lipschitz_profile, policy_mesh, run_h1_twoscale_rate, run_l2_rate,
    Anchor, ExcessOrder, RateRun,
};
use parahom::torus::{CellField, CellGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::report::{binary, csv, rate_plot, to_json, write_atomic, Check, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorMode {
    Lambda,
    Infinity,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Correctors,
    Tensor(TensorMode),
    SweepLambda,
    RateL2,
    RateH1,
    Lipschitz,
    Excess,
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Correctors => "correctors",
            Command::Tensor(_) => "tensor",
            Command::SweepLambda => "sweep-lambda",
            Command::RateL2 => "rate-l2",
            Command::RateH1 => "rate-h1",
            Command::Lipschitz => "lipschitz",
            Command::Excess => "excess",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// The library refused the experiment as declared.
    #[error("rejected: {0}")]
    Rejected(parahom::Error),
    /// An invariant the library checks internally failed.
    #[error("invariant failed: {0}")]
    Invariant(parahom::Error),
    #[error("numerical failure: {0}")]
    Numerical(parahom::Error),
    #[error("output: {0}")]
    Io(#[from] io::Error),
}

impl From<parahom::Error> for CliError {
    fn from(e: parahom::Error) -> Self {
        use parahom::Error::*;
        match e {
            NoConvergence { .. } | LinearSolveFailed { .. } | SingularLeastSquares(_) => CliError::Numerical(e),
            NonZeroMean { .. } | MeanNotZero(_) | IdentityCheckFailed { .. } | EllipticityCertFailed { .. } => {
                CliError::Invariant(e)
            }
            _ => CliError::Rejected(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invariant(_) => 1,
            CliError::Config(_) | CliError::Rejected(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

type Res<T> = Result<T, CliError>;

/// Runs `command` in a pool of `harness.threads` workers, writes
/// `report.json` (and `failure.json` when something fails) under `out`,
/// and returns the exit status.
pub fn execute(command: Command, config: &ExperimentConfig, out: &Path) -> (i32, Option<Report>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.harness.threads).build();
    let result = match pool {
        Ok(pool) => pool.install(|| run_command(command, config, out)),
        Err(e) => Err(CliError::Io(io::Error::other(e.to_string()))),
    };
    match result {
        Ok(report) => {
            if let Some(check) = report.first_failure() {
                let record = json!({"command": command.name(), "exit_code": 1, "check": check});
                let _ = write_atomic(&out.join("failure.json"), &to_json(&record, true));
                (1, Some(report))
            } else {
                (0, Some(report))
            }
        }
        Err(e) => {
            let code = e.exit_code();
            let record = json!({"command": command.name(), "exit_code": code, "error": e.to_string()});
            let _ = write_atomic(&out.join("failure.json"), &to_json(&record, true));
            eprintln!("parahom {}: {e}", command.name());
            (code, None)
        }
    }
}

/// Runs `command` in the current pool and writes its artifacts.
pub fn run_command(command: Command, config: &ExperimentConfig, out: &Path) -> Res<Report> {
    config.validate()?;
    let report = match command {
        Command::Correctors => correctors(config, out)?,
        Command::Tensor(mode) => tensor(config, mode)?,
        Command::SweepLambda => sweep(config, out)?,
        Command::RateL2 => rates(config, out, false)?,
        Command::RateH1 => rates(config, out, true)?,
        Command::Lipschitz => lipschitz(config, out)?,
        Command::Excess => excess(config)?,
        Command::Verify => verify(config)?,
    };
    write_atomic(&out.join("report.json"), &to_json(&report, true))?;
    Ok(report)
}

fn grid_value(g: &CellGrid) -> Value {
    json!({"kind": "cell", "d": g.d, "n_y": g.n_y, "n_s": g.n_s, "lambda": g.lambda})
}

fn mesh_value(m: &SpaceTimeMesh) -> Value {
    json!({"kind": "mesh", "d": m.d, "nx": m.nx, "nt": m.nt, "t_final": m.t_final, "stride": m.stride})
}

fn policy(config: &ExperimentConfig) -> GridPolicy {
    GridPolicy { d: config.problem.d, n_y: config.cell.n_y, n_s_base: config.cell.n_s_base }
}

fn kind_name(kind: CorrectorKind) -> &'static str {
    match kind {
        CorrectorKind::Parabolic => "parabolic",
        CorrectorKind::EllipticInfinity => "infinity",
        CorrectorKind::EllipticZero => "zero",
    }
}

fn max_abs(fields: &[CellField]) -> f64 {
    fields.iter().map(CellField::max_abs).fold(0.0, f64::max)
}

/// Rows `s, y_1[, y_2], χ_1[, χ_2]`, time slowest.
fn corrector_rows(set: &CorrectorSet) -> Vec<Vec<f64>> {
    let grid = set.grid;
    let levels = set.chi[0].levels();
    let mut rows = Vec::with_capacity(levels * grid.n_space());
    for n in 0..levels {
        let s = if set.chi[0].is_static() { 0.0 } else { n as f64 * grid.tau() };
        for p in 0..grid.n_space() {
            let y = grid.node(p);
            let mut row = vec![s];
            row.extend_from_slice(&y[..grid.d]);
            row.extend(set.chi.iter().map(|c| c.get(n, p)));
            rows.push(row);
        }
    }
    rows
}

fn correctors(config: &ExperimentConfig, out: &Path) -> Res<Report> {
    let field = config.field()?;
    let settings = config.cell_settings();
    let grid = policy(config).grid(config.cell.lambda)?;
    let sets = [
        solve_parabolic_corrector(&field, &grid, &settings)?,
        solve_elliptic_corrector_infty(&field, &grid, &settings)?,
        solve_elliptic_corrector_zero(&field, &grid, &settings)?,
    ];
    let d = grid.d;
    let mut header = vec!["s", "y1"];
    if d == 2 {
        header.push("y2");
    }
    header.push("chi1");
    if d == 2 {
        header.push("chi2");
    }
    let mut checks = Vec::new();
    let mut entries = Vec::new();
    for set in &sets {
        let name = kind_name(set.kind);
        let tensor = EffectiveTensor::from_correctors(&field, set, &settings)?;
        checks.push(Check::at_most(format!("{name}.slice_mean"), set.max_slice_mean(), 1e-9));
        checks.push(Check::at_least(format!("{name}.monotone_tail"), set.monotone_tail() as u8 as f64, 1.0));
        entries.push(json!({
            "kind": name,
            "residual_norm": set.residual_norm,
            "increments": set.increments,
            "energy": set.energy,
            "energy_bound": set.energy_bound(),
            "max_slice_mean": set.max_slice_mean(),
            "tensor": tensor,
        }));
        if config.wants("csv") {
            write_atomic(&out.join(format!("chi-{name}.csv")), &csv(&header, corrector_rows(set)))?;
        }
        if config.wants("bin") {
            for (j, c) in set.chi.iter().enumerate() {
                let stem = format!("chi-{name}-{}", j + 1);
                write_atomic(&out.join(format!("{stem}.bin")), &binary(c.values()))?;
                let head = json!({
                    "dtype": "f64-le",
                    "layout": "level-major; within a level y1 fastest",
                    "levels": c.levels(),
                    "grid": grid_value(&grid),
                    "static": c.is_static(),
                });
                write_atomic(&out.join(format!("{stem}.json")), &to_json(&head, true))?;
            }
        }
    }
    Ok(Report::new("correctors", config, vec![grid_value(&grid)], checks, json!({ "correctors": entries })))
}

fn tensor(config: &ExperimentConfig, mode: TensorMode) -> Res<Report> {
    let field = config.field()?;
    let settings = config.cell_settings();
    let policy = policy(config);
    let (grid, set, name) = match mode {
        TensorMode::Lambda => {
            let g = policy.grid(config.cell.lambda)?;
            (g, solve_parabolic_corrector(&field, &g, &settings)?, "lambda")
        }
        TensorMode::Infinity => {
            let g = policy.reference_grid()?;
            (g, solve_elliptic_corrector_infty(&field, &g, &settings)?, "infinity")
        }
        TensorMode::Zero => {
            let g = policy.reference_grid()?;
            (g, solve_elliptic_corrector_zero(&field, &g, &settings)?, "zero")
        }
    };
    let t = EffectiveTensor::from_correctors(&field, &set, &settings)?;
    let checks = vec![Check::at_least("tensor.ellipticity", t.mu_cert, field.mu() - TOL_ELL)];
    let result = json!({"mode": name, "matrix": t.matrix.rows(), "tensor": t});
    Ok(Report::new("tensor", config, vec![grid_value(&grid)], checks, result))
}

/// Largest relative rise between consecutive entries.
fn worst_rise(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]) / w[0].abs().max(f64::MIN_POSITIVE)).fold(f64::NEG_INFINITY, f64::max)
}

fn sweep(config: &ExperimentConfig, out: &Path) -> Res<Report> {
    let field = config.field()?;
    let policy = policy(config);
    let lambdas: Vec<f64> = config.ladders.lambda_low.iter().chain(&config.ladders.lambda_high).copied().collect();
    let r = sweep_lambda(&field, &lambdas, &policy, &config.cell_settings())?;
    let bound = config.harness.sweep_slope;
    let mut checks = Vec::new();
    if r.exact_degenerate {
        checks.push(Check::exact("sweep.degenerate"));
    } else {
        let nan = f64::NAN;
        checks.push(Check::at_most("slope_high", r.slope_high.unwrap_or(nan), -bound));
        checks.push(Check::at_least("slope_low", r.slope_low.unwrap_or(nan), bound));
        checks.push(Check::at_most("corrector_slope_high", r.corrector_slope_high.unwrap_or(nan), -bound));
        checks.push(Check::at_least("corrector_slope_low", r.corrector_slope_low.unwrap_or(nan), bound));
        checks.push(Check::at_most("dist_inf.rise", worst_rise(&r.distances_to_infinity), 1e-6));
    }
    if config.wants("csv") {
        let rows = r.points.iter().map(|p| vec![p.lambda, p.dist_inf, p.dist_zero]);
        write_atomic(&out.join("sweep.csv"), &csv(&["lambda", "dist_inf", "dist_zero"], rows))?;
        let rows = r.points.iter().map(|p| vec![p.lambda, p.corrector_dist_inf, p.corrector_dist_zero]);
        write_atomic(
            &out.join("sweep-correctors.csv"),
            &csv(&["lambda", "corrector_dist_inf", "corrector_dist_zero"], rows),
        )?;
    }
    let mut grids = vec![grid_value(&policy.reference_grid()?)];
    for &l in &lambdas {
        grids.push(grid_value(&policy.grid(l)?));
    }
    Ok(Report::new("sweep-lambda", config, grids, checks, serde_json::to_value(&r).expect("serializable")))
}

fn k_label(k: f64) -> String {
    format!("{k}")
}

fn rates(config: &ExperimentConfig, out: &Path, h1: bool) -> Res<Report> {
    let field = config.field()?;
    let rc = config.rate_config();
    let stem = if h1 { "rate-h1" } else { "rate-l2" };
    let mut runs: Vec<RateRun> = Vec::new();
    let mut checks = Vec::new();
    let mut grids = vec![grid_value(&CellGrid::new(rc.d, rc.n_y, rc.n_s_base, 1.0)?)];
    for &k in &config.problem.k {
        let run = if h1 {
            run_h1_twoscale_rate(&field, k, &config.ladders.eps, &rc)?
        } else {
            run_l2_rate(&field, k, &config.ladders.eps, &rc)?
        };
        let rep = &run.report;
        let name = format!("k={}.slope", k_label(k));
        checks.push(match rep.slope {
            _ if rep.degenerate => Check::exact(name),
            Some(s) => Check::at_least(name, s, rep.predicted_exponent - rep.slope_tol),
            None => Check::at_least(name, f64::NAN, rep.predicted_exponent - rep.slope_tol),
        });
        grids.extend(run.meshes.iter().map(mesh_value));
        let samples: Vec<(f64, f64)> = rep.samples.iter().map(|s| (s.param, s.error)).collect();
        let file = format!("{stem}-k{}", k_label(k));
        if config.wants("csv") {
            let rows = samples.iter().map(|&(p, e)| vec![p, e, p.ln(), e.ln()]);
            write_atomic(&out.join(format!("{file}.csv")), &csv(&["param", "error", "log_param", "log_error"], rows))?;
        }
        if config.wants("svg") {
            let fit = rep.refit.or(rep.fit).map(|f| (f.slope, f.intercept));
            let title = format!("{stem}, k = {k}");
            write_atomic(&out.join(format!("{file}.svg")), &rate_plot(&samples, fit, rep.predicted_exponent, &title))?;
        }
        runs.push(run);
    }
    let result = json!({ "runs": runs });
    Ok(Report::new(stem, config, grids, checks, result))
}

fn anchor(config: &ExperimentConfig) -> Anchor {
    Anchor { x: [config.monitor.anchor[0], config.monitor.anchor[1]], t: config.problem.t_final }
}

/// Solution of the oscillating problem with the configured data. The
/// monitors only need some right-hand side, so the localized source is
/// manufactured for the identity tensor.
fn oscillating(
    config: &ExperimentConfig,
    field: &CoefficientField,
    scale: ScaleParams,
    policy: ResolutionPolicy,
    max_dt: f64,
    max_levels: usize,
) -> Res<(FieldOnMesh, Option<parahom::ivp::PointFn>)> {
    let d = config.problem.d;
    let t = config.problem.t_final;
    let settings = parahom::ivp::IvpSettings { policy, ..config.ivp_settings() };
    let mesh = policy_mesh(d, &scale, t, &settings, max_dt, max_levels)?;
    let dataset: parahom::rates::Dataset = config.problem.dataset.into();
    let (source, data) = dataset.functions(d, t, &Tensor::scalar(d, 1.0));
    let problem = IVProblem { coefficient: IvpCoefficient::Oscillating { field: field.clone(), scale }, source, data };
    let u = solve_ivp(&problem, &mesh, &settings)?.u;
    Ok((u, problem.source))
}

fn corrected_affine(mesh: SpaceTimeMesh, chi: &CorrectorSet, eps: f64) -> FieldOnMesh {
    FieldOnMesh::from_fn(mesh, |x, t| x[0] + eps * chi.chi[0].interpolate([x[0] / eps, x[1] / eps], t / (eps * eps)))
}

fn lipschitz(config: &ExperimentConfig, out: &Path) -> Res<Report> {
    let field = config.field()?;
    let m = &config.monitor;
    let policy = config.ivp_settings().policy;
    let mut checks = Vec::new();
    let mut grids = Vec::new();
    let mut per_k = Vec::new();
    for &k in &config.problem.k {
        let profiles: Vec<Res<_>> = config
            .ladders
            .eps
            .par_iter()
            .enumerate()
            .map(|(i, &eps)| {
                let scale = ScaleParams::new(eps, k)?;
                let (u, source) = oscillating(config, &field, scale, policy, m.max_stored_dt, m.max_levels)?;
                if config.wants("bin") {
                    let stem = format!("u-k{}-{i}", k_label(k));
                    write_atomic(&out.join(format!("{stem}.bin")), &binary(u.values()))?;
                    let head = json!({
                        "dtype": "f64-le",
                        "layout": "level-major; within a level x1 fastest",
                        "epsilon": eps,
                        "k": k,
                        "mesh": mesh_value(u.mesh()),
                    });
                    write_atomic(&out.join(format!("{stem}.json")), &to_json(&head, true))?;
                }
                let profile = lipschitz_profile(&u, source.as_ref(), &scale, anchor(config), m.radius, m.p, m.ratio)?;
                Ok((*u.mesh(), profile))
            })
            .collect();
        let mut maxima = Vec::new();
        let mut list = Vec::new();
        for (eps, p) in config.ladders.eps.iter().zip(profiles) {
            let (mesh, profile) = p?;
            grids.push(mesh_value(&mesh));
            maxima.push(profile.max_ratio);
            list.push(json!({"epsilon": eps, "profile": profile}));
        }
        let hi = maxima.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = maxima.iter().copied().fold(f64::INFINITY, f64::min);
        let spread = (hi - lo) / lo;
        checks.push(Check::at_most(format!("k={}.spread", k_label(k)), spread, config.harness.lipschitz_spread));
        per_k.push(json!({"k": k, "profiles": list, "spread": spread}));
    }
    // the exact corrected affine function should give a flat profile
    let scale = ScaleParams::new(m.flat_eps, m.flat_k)?;
    let (chi, _, _) = corrected_class_correctors(
        &field,
        &scale,
        config.cell.n_y,
        config.cell.n_s_base,
        &config.cell_settings(),
        false,
    )?;
    let mesh = SpaceTimeMesh::new(config.problem.d, m.flat_nx, m.flat_nt, config.problem.t_final)?;
    grids.push(grid_value(&chi.grid));
    grids.push(mesh_value(&mesh));
    let u = corrected_affine(mesh, &chi, m.flat_eps);
    let flat = lipschitz_profile(&u, None, &scale, anchor(config), m.radius, m.p, m.flat_ratio)?;
    checks.push(Check::at_most("corrected_affine.flatness", flat.flatness, config.harness.flatness));
    let result = json!({"runs": per_k, "corrected_affine": flat});
    Ok(Report::new("lipschitz", config, grids, checks, result))
}

/// A first- and a second-order member of the corrected class.
fn members(
    mesh: SpaceTimeMesh,
    chi: &CorrectorSet,
    chi2: &parahom::correctors::SecondCorrectorSet,
    eps: f64,
) -> [FieldOnMesh; 2] {
    let d = mesh.d;
    let l = d - 1;
    let y = move |x: [f64; 2]| [x[0] / eps, x[1] / eps];
    let s = move |t: f64| t / (eps * eps);
    let first = FieldOnMesh::from_fn(mesh, |x, t| {
        let c = |j: usize| x[j] + eps * chi.chi[j].interpolate(y(x), s(t));
        let mut v = 0.7 * c(0) + 2.0;
        if d == 2 {
            v -= 1.3 * c(1);
        }
        v
    });
    let second = FieldOnMesh::from_fn(mesh, |x, t| {
        let c = |j: usize| chi.chi[j].interpolate(y(x), s(t));
        x[0] * x[l]
            + eps * x[0] * c(l)
            + eps * x[l] * c(0)
            + eps * eps * chi2.chi2[0][l].interpolate(y(x), s(t))
            + 0.5 * (x[0] + eps * c(0))
    });
    [first, second]
}

fn excess(config: &ExperimentConfig) -> Res<Report> {
    let field = config.field()?;
    let m = &config.monitor;
    let settings = config.cell_settings();
    let mut checks = Vec::new();
    let mut grids = Vec::new();
    let mut per_k = Vec::new();
    for &k in &config.problem.k {
        let label = k_label(k);
        let mut entry = serde_json::Map::new();
        entry.insert("k".into(), json!(k));
        if m.excess_decay {
            let scale = ScaleParams::new(m.excess_eps, k)?;
            let policy = ResolutionPolicy { time: m.excess_time, ..config.ivp_settings().policy };
            let (u, _) = oscillating(config, &field, scale, policy, m.excess_dt, m.excess_levels)?;
            let (chi, _, _) =
                corrected_class_correctors(&field, &scale, config.cell.n_y, config.cell.n_s_base, &settings, false)?;
            grids.push(mesh_value(u.mesh()));
            grids.push(grid_value(&chi.grid));
            let profile = excess_profile(
                &u,
                &chi,
                None,
                &scale,
                anchor(config),
                m.excess_radius,
                ExcessOrder::First,
                m.excess_ratio,
            )?;
            let slope = profile.fit.map_or(f64::NAN, |f| f.slope);
            checks.push(Check::at_least(format!("k={label}.excess_slope"), slope, config.harness.excess_slope));
            entry.insert("decay".into(), json!(profile));
        }
        let scale = ScaleParams::new(m.member_eps, k)?;
        let (chi, chi2, _) = corrected_class_correctors(&field, &scale, m.member_n_y, m.member_n_y, &settings, true)?;
        let chi2 = chi2.expect("requested");
        let mesh = SpaceTimeMesh::new(config.problem.d, m.member_nx, m.member_nt, config.problem.t_final)?;
        grids.push(grid_value(&chi.grid));
        grids.push(mesh_value(&mesh));
        let mut member_profiles = Vec::new();
        for (u, order, name) in members(mesh, &chi, &chi2, m.member_eps)
            .iter()
            .zip([ExcessOrder::First, ExcessOrder::Second])
            .map(|(u, o)| (u, o, if o == ExcessOrder::First { "first" } else { "second" }))
        {
            let p = excess_profile(u, &chi, Some(&chi2), &scale, anchor(config), m.member_radius, order, 2.0)?;
            let worst = p.excess.iter().zip(&p.energies).map(|(e, g)| e / g).fold(0.0, f64::max);
            checks.push(Check::at_most(format!("k={label}.{name}_order_member"), worst, 1e-6));
            member_profiles.push(json!({"order": name, "profile": p}));
        }
        entry.insert("members".into(), Value::Array(member_profiles));
        per_k.push(Value::Object(entry));
    }
    Ok(Report::new("excess", config, grids, checks, json!({ "runs": per_k })))
}

fn midpoint(n: usize, f: impl Fn(f64) -> f64) -> f64 {
    (0..n).map(|i| f((i as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Exact-solution checks and quadrature oracles for the fields that have
/// them.
fn oracle_checks(
    config: &ExperimentConfig,
    field: &CoefficientField,
    sets: &[CorrectorSet; 3],
    tensors: &[EffectiveTensor; 3],
    checks: &mut Vec<Check>,
    oracles: &mut serde_json::Map<String, Value>,
) -> Res<()> {
    let d = field.d();
    let n_y = config.cell.n_y as f64;
    let exact = 1e-10;
    if field.is_constant() {
        let a = field.eval([0.0, 0.0], 0.0);
        for (set, t) in sets.iter().zip(tensors) {
            let name = kind_name(set.kind);
            checks.push(Check::at_most(format!("constant.{name}.chi"), max_abs(&set.chi), exact));
            checks.push(Check::at_most(
                format!("constant.{name}.tensor"),
                t.matrix.distance(&a) / a.operator_norm(),
                exact,
            ));
        }
        // u_ε = u_0 on a small problem
        let k = config.problem.k[0];
        let scale = ScaleParams::new(0.125, k)?;
        let nx = if d == 1 { 128 } else { 32 };
        let mesh = SpaceTimeMesh::new(d, nx, 4 * nx, config.problem.t_final)?;
        let settings = config.ivp_settings();
        let problem = IVProblem::new(IvpCoefficient::Oscillating { field: field.clone(), scale }, None, |x, t| {
            x[0] + (PI * x[0]).sin() * (1.0 + t)
        });
        let u_eps = solve_ivp(&problem, &mesh, &settings)?.u;
        let u0 = solve_homogenized(&problem.with_coefficient(IvpCoefficient::Homogenized(a)), &mesh, &settings)?.u;
        checks.push(Check::at_most("constant.solution", u_eps.sub(&u0)?.max_abs() / u0.max_abs(), exact));
        oracles.insert("solution_mesh".into(), mesh_value(&mesh));
    }
    if field.is_time_independent() {
        let spread = gradient_distance(&sets[0], &sets[1]).max(gradient_distance(&sets[0], &sets[2]));
        checks.push(Check::at_most("static.kinds_agree", spread, 1e-8));
    }
    if field.family() == Family::TimeOnly {
        checks.push(Check::at_most("time_only.chi", max_abs(&sets[0].chi), exact));
        let mean = midpoint(4096, |s| field.diagonal([0.0, 0.0], s * field.period(), 0));
        oracles.insert("time_mean".into(), json!(mean));
        checks.push(Check::at_most("time_only.tensor", rel(tensors[0].entry(0, 0), mean), 1e-9));
    }
    if d == 1 && field.is_smooth() && !field.is_constant() {
        let n = 2000;
        let period = field.period();
        let a = |y: f64, s: f64| field.diagonal([y, 0.0], s * period, 0);
        let inf = midpoint(n, |s| 1.0 / midpoint(n, |y| 1.0 / a(y, s)));
        let zero = 1.0 / midpoint(n, |y| 1.0 / midpoint(n, |s| a(y, s)));
        oracles.insert("infinity".into(), json!(inf));
        oracles.insert("zero".into(), json!(zero));
        let budget = 1e-3 * (128.0 / n_y).powi(2).max(1.0);
        checks.push(Check::at_most("oracle.infinity", (tensors[1].entry(0, 0) - inf).abs(), budget));
        checks.push(Check::at_most("oracle.zero", (tensors[2].entry(0, 0) - zero).abs(), budget));
        if field.is_time_independent() {
            let budget = 1e-4 * (256.0 / n_y).powi(2).max(1.0);
            checks.push(Check::at_most("oracle.harmonic_mean", rel(tensors[0].entry(0, 0), inf), budget));
        }
    }
    Ok(())
}

fn verify(config: &ExperimentConfig) -> Res<Report> {
    let field = config.field()?;
    let settings = config.cell_settings();
    let policy = policy(config);
    let grid = policy.grid(config.cell.lambda)?;
    let h = &config.harness;
    let mut checks = Vec::new();
    let mut grids = vec![grid_value(&grid)];

    // pointwise ellipticity at random samples
    let mut rng = ChaCha8Rng::seed_from_u64(h.seed);
    let (mut cert, mut norm) = (f64::INFINITY, 0.0f64);
    for _ in 0..256 {
        let y = [rng.gen::<f64>(), rng.gen::<f64>()];
        let a = field.eval(y, rng.gen::<f64>() * field.period());
        cert = cert.min(ellipticity_certificate(&a));
        norm = norm.max(a.operator_norm());
    }
    checks.push(Check::at_least("coefficient.ellipticity", cert, field.mu() - 1e-12));
    checks.push(Check::at_most("coefficient.bound", norm, 1.0 / field.mu() + 1e-12));

    let sets = [
        solve_parabolic_corrector(&field, &grid, &settings)?,
        solve_elliptic_corrector_infty(&field, &policy.reference_grid()?, &settings)?,
        solve_elliptic_corrector_zero(&field, &policy.reference_grid()?, &settings)?,
    ];
    let tensors = [
        EffectiveTensor::from_correctors(&field, &sets[0], &settings)?,
        EffectiveTensor::from_correctors(&field, &sets[1], &settings)?,
        EffectiveTensor::from_correctors(&field, &sets[2], &settings)?,
    ];
    let chi = &sets[0];
    let ahat = &tensors[0];
    checks.push(Check::at_most("corrector.slice_mean", chi.max_slice_mean(), 1e-9));
    checks.push(Check::at_least("corrector.monotone_tail", chi.monotone_tail() as u8 as f64, 1.0));
    checks.push(Check::at_least("tensor.ellipticity", ahat.mu_cert, field.mu() - TOL_ELL));

    let flux = compute_flux(chi, ahat)?;
    let dual = solve_dual_correctors(&flux, chi)?;
    let diag = dual.diagnostics;
    checks.push(Check::at_most("dual.flux_identity", diag.flux_identity, h.identity_tol));
    checks.push(Check::at_most("dual.chi_identity", diag.chi_identity, h.identity_tol));
    checks.push(Check::at_most("dual.antisymmetry", diag.antisymmetry, 0.0));
    let budget = h.divergence_factor * (grid.h().powi(2) + grid.tau());
    checks.push(Check::at_most("dual.divergence_identity", diag.divergence_identity, budget));

    // second correctors along a refinement ladder
    let n_y = config.cell.n_y;
    let sizes = if n_y >= 16 { [n_y / 4, n_y / 2, n_y] } else { [n_y, 2 * n_y, 4 * n_y] };
    let mut residuals = Vec::new();
    let mut chi2_max = 0.0f64;
    for &n in &sizes {
        let g = GridPolicy { d: grid.d, n_y: n, n_s_base: (config.cell.n_s_base * n / n_y).max(2) }
            .grid(config.cell.lambda)?;
        let set = solve_parabolic_corrector(&field, &g, &settings)?;
        let t = EffectiveTensor::from_correctors(&field, &set, &settings)?;
        let f = compute_flux(&set, &t)?;
        let chi2 = solve_second_correctors(&field, &set, &f, &settings)?;
        let r = lemma51_residual(&field, &set, &chi2, &t)?;
        let worst = r.iter().map(|p| p.relative).fold(0.0, f64::max);
        chi2_max = chi2.chi2.iter().flatten().map(CellField::max_abs).fold(0.0, f64::max);
        grids.push(grid_value(&g));
        residuals.push(json!({"n_y": n, "n_s": g.n_s, "pairs": r, "worst": worst}));
    }
    let worst: Vec<f64> = residuals.iter().map(|r| r["worst"].as_f64().unwrap_or(f64::NAN)).collect();
    let mut chi2_order = None;
    if worst.iter().all(|&r| r <= 1e-10) {
        checks.push(Check::at_most("chi2.residual", worst.iter().copied().fold(0.0, f64::max), 1e-10));
    } else {
        let pts: Vec<(f64, f64)> = sizes.iter().zip(&worst).map(|(&n, &r)| ((1.0 / n as f64).ln(), r.ln())).collect();
        let order = ols(&pts).slope;
        chi2_order = Some(order);
        checks.push(Check::at_least("chi2.order", order, h.chi2_order));
    }

    let mut oracles = serde_json::Map::new();
    if field.is_constant() {
        checks.push(Check::at_most("constant.flux", flux.rms(), 1e-10));
        let phi = dual.phi.iter().flatten().flatten().chain(dual.phi_time.iter().flatten());
        checks.push(Check::at_most("constant.phi", phi.map(CellField::max_abs).fold(0.0, f64::max), 1e-10));
        checks.push(Check::at_most("constant.chi2", chi2_max, 1e-10));
    }
    oracle_checks(config, &field, &sets, &tensors, &mut checks, &mut oracles)?;

    let result = json!({
        "corrector": {
            "residual_norm": chi.residual_norm,
            "increments": chi.increments,
            "energy": chi.energy,
            "max_slice_mean": chi.max_slice_mean(),
        },
        "tensors": {"lambda": tensors[0], "infinity": tensors[1], "zero": tensors[2]},
        "dual": diag,
        "chi2_residual": {"ladder": residuals, "order": chi2_order},
        "oracles": oracles,
    });
    Ok(Report::new("verify", config, grids, checks, result))
}
