//! Experiment configuration.
//!
//! The text format is sectioned `key = value`:
//!
//! ```text
//! # comments run to the end of the line
//! [problem]
//! k = [1, 1.6, 2]          # scalar or list
//! t_final = 1/2            # rationals are accepted anywhere a number is
//!
//! [ladders]
//! eps = geom(1/8, 1/64, 4) # n points log-spaced from the first to the last
//! ```
//!
//! Keys may also be written dotted at the top level (`problem.k = 2`).
//! Values are numbers, `true`/`false`, quoted or bare strings, single-line
//! lists of those, and `geom(a, b, n)`. A document whose first
//! non-blank character is `{` is read as JSON of the same schema.

use std::fmt::Write as _;

use parahom::coefficients::{builtin_field, CoefficientField};
use parahom::correctors::{CellSettings, TimeScheme};
use parahom::ivp::{IvpSettings, ResolutionPolicy};
use parahom::rates::{Dataset, RateConfig, FLOOR_TOL};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Number, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid `{key}`: {reason}")]
    Validation { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Validation { key: key.into(), reason: reason.into() }
}

#[derive(Default, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub coefficient: Coefficient,
    pub cell: Cell,
    pub ivp: Ivp,
    pub ladders: Ladders,
    pub harness: Harness,
    pub monitor: Monitor,
    pub output: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    SineAffine,
    Localized,
}

impl From<DatasetName> for Dataset {
    fn from(d: DatasetName) -> Self {
        match d {
            DatasetName::SineAffine => Dataset::SineAffine,
            DatasetName::Localized => Dataset::Localized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Problem {
    pub d: usize,
    #[serde(deserialize_with = "one_or_many")]
    pub k: Vec<f64>,
    pub t_final: f64,
    pub dataset: DatasetName,
}

impl Default for Problem {
    fn default() -> Self {
        Self { d: 1, k: vec![2.0], t_final: 0.5, dataset: DatasetName::SineAffine }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Coefficient {
    pub family: String,
    pub params: Vec<f64>,
}

impl Default for Coefficient {
    fn default() -> Self {
        Self { family: "sep-trig".into(), params: vec![0.5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Cell {
    pub n_y: usize,
    /// Time points per unit of `λ` (never fewer than this).
    pub n_s_base: usize,
    /// `λ` used by `correctors`, `tensor --mode lambda` and `verify`.
    pub lambda: f64,
    pub tol: f64,
    pub max_periods: usize,
    pub cg_tol: f64,
    pub scheme: TimeScheme,
}

impl Default for Cell {
    fn default() -> Self {
        let s = CellSettings::default();
        Self {
            n_y: 64,
            n_s_base: 64,
            lambda: 1.0,
            tol: s.tol,
            max_periods: s.max_periods,
            cg_tol: s.cg_tol,
            scheme: s.scheme,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ivp {
    pub scheme: TimeScheme,
    pub cg_tol: f64,
    /// `h ≤ ε / space`.
    pub space: f64,
    /// `τ ≤ min(ε², ε^k) / time`.
    pub time: f64,
    /// Upper bound on stored time levels per solve.
    pub max_levels: usize,
}

impl Default for Ivp {
    fn default() -> Self {
        let s = IvpSettings::default();
        Self { scheme: s.scheme, cg_tol: s.cg_tol, space: s.policy.space, time: s.policy.time, max_levels: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ladders {
    /// Strictly decreasing, geometric.
    pub eps: Vec<f64>,
    /// Strictly increasing, geometric, all `≤ 1/4`.
    pub lambda_low: Vec<f64>,
    /// Strictly increasing, geometric, all `≥ 4`.
    pub lambda_high: Vec<f64>,
}

impl Default for Ladders {
    fn default() -> Self {
        Self {
            eps: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
            lambda_low: vec![1.0 / 64.0, 1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0],
            lambda_high: vec![4.0, 8.0, 16.0, 32.0, 64.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Harness {
    /// One-sided rate tolerance; unset means 0.15, or 0.2 for `k > 2`.
    pub slope_tol: Option<f64>,
    pub floor_tol: f64,
    /// Worker threads. Not part of the config digest: results do not
    /// depend on it.
    pub threads: usize,
    /// Seed of the random probes in `verify`.
    pub seed: u64,
    pub sweep_slope: f64,
    pub lipschitz_spread: f64,
    pub flatness: f64,
    pub excess_slope: f64,
    pub chi2_order: f64,
    pub identity_tol: f64,
    /// The divergence identity may be off by this times `h² + τ`.
    pub divergence_factor: f64,
}

impl Default for Harness {
    fn default() -> Self {
        Self {
            slope_tol: None,
            floor_tol: FLOOR_TOL,
            threads: 1,
            seed: 0,
            sweep_slope: 0.8,
            lipschitz_spread: 0.25,
            flatness: 0.05,
            excess_slope: 0.3,
            chi2_order: 1.9,
            identity_tol: 1e-8,
            divergence_factor: 5.0,
        }
    }
}

/// Settings of the `lipschitz` and `excess` monitors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Monitor {
    /// Spatial anchor; the time anchor is `t_final`.
    pub anchor: Vec<f64>,
    pub radius: f64,
    pub p: f64,
    pub ratio: f64,
    pub max_stored_dt: f64,
    pub max_levels: usize,
    pub flat_eps: f64,
    pub flat_k: f64,
    pub flat_nx: usize,
    pub flat_nt: usize,
    pub flat_ratio: f64,
    pub excess_decay: bool,
    pub excess_eps: f64,
    pub excess_radius: f64,
    pub excess_ratio: f64,
    /// IVP steps per time period in the excess run.
    pub excess_time: f64,
    pub excess_dt: f64,
    pub excess_levels: usize,
    pub member_eps: f64,
    pub member_n_y: usize,
    pub member_nx: usize,
    pub member_nt: usize,
    pub member_radius: f64,
}

impl Default for Monitor {
    fn default() -> Self {
        Self {
            anchor: vec![0.5, 0.5],
            radius: 0.5,
            p: 5.0,
            ratio: std::f64::consts::SQRT_2,
            max_stored_dt: 1e-3,
            max_levels: 1024,
            flat_eps: 1.0 / 32.0,
            flat_k: 2.0,
            flat_nx: 2048,
            flat_nt: 4096,
            flat_ratio: 2.0,
            excess_decay: true,
            excess_eps: 1.0 / 128.0,
            excess_radius: 0.48,
            excess_ratio: 2f64.powf(0.25),
            excess_time: 32.0,
            excess_dt: 1.25e-4,
            excess_levels: 4096,
            member_eps: 0.125,
            member_n_y: 16,
            member_nx: 64,
            member_nt: 64,
            member_radius: 0.45,
        }
    }
}

pub const FORMATS: [&str; 3] = ["csv", "bin", "svg"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Output {
    /// Not part of the config digest.
    pub directory: String,
    /// Extra artifacts next to `report.json`: `csv`, `bin`, `svg`.
    pub formats: Vec<String>,
}

impl Default for Output {
    fn default() -> Self {
        Self { directory: "out".into(), formats: vec!["csv".into()] }
    }
}

fn one_or_many<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(f64),
        Many(Vec<f64>),
    }
    Ok(match OneOrMany::deserialize(de)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

impl ExperimentConfig {
    pub fn field(&self) -> Result<CoefficientField, ConfigError> {
        builtin_field(self.problem.d, &self.coefficient.family, &self.coefficient.params)
            .map_err(|e| invalid("coefficient", e.to_string()))
    }

    pub fn cell_settings(&self) -> CellSettings {
        CellSettings {
            tol: self.cell.tol,
            max_periods: self.cell.max_periods,
            cg_tol: self.cell.cg_tol,
            scheme: self.cell.scheme,
        }
    }

    pub fn ivp_settings(&self) -> IvpSettings {
        IvpSettings {
            scheme: self.ivp.scheme,
            cg_tol: self.ivp.cg_tol,
            policy: ResolutionPolicy { space: self.ivp.space, time: self.ivp.time },
        }
    }

    pub fn rate_config(&self) -> RateConfig {
        RateConfig {
            d: self.problem.d,
            t_final: self.problem.t_final,
            dataset: self.problem.dataset.into(),
            n_y: self.cell.n_y,
            n_s_base: self.cell.n_s_base,
            cell: self.cell_settings(),
            ivp: self.ivp_settings(),
            slope_tol: self.harness.slope_tol,
            floor_tol: self.harness.floor_tol,
            max_levels: self.ivp.max_levels,
        }
    }

    /// Everything that determines the results: the config without the
    /// thread count and the output directory.
    pub fn digest_value(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(h) = v.get_mut("harness").and_then(Value::as_object_mut) {
            h.remove("threads");
        }
        if let Some(o) = v.get_mut("output").and_then(Value::as_object_mut) {
            o.remove("directory");
        }
        v
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.problem;
        if p.d != 1 && p.d != 2 {
            return Err(invalid("problem.d", format!("{} is not 1 or 2", p.d)));
        }
        if p.k.is_empty() {
            return Err(invalid("problem.k", "empty"));
        }
        if let Some(k) = p.k.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
            return Err(invalid("problem.k", format!("{k} is not positive")));
        }
        positive("problem.t_final", p.t_final)?;
        self.field()?;
        let c = &self.cell;
        if c.n_y < 4 || c.n_y % 2 != 0 {
            return Err(invalid("cell.n_y", "must be even and at least 4"));
        }
        if c.n_s_base < 2 {
            return Err(invalid("cell.n_s_base", "must be at least 2"));
        }
        positive("cell.lambda", c.lambda)?;
        positive("cell.tol", c.tol)?;
        positive("cell.cg_tol", c.cg_tol)?;
        if c.max_periods == 0 {
            return Err(invalid("cell.max_periods", "must be at least 1"));
        }
        positive("ivp.cg_tol", self.ivp.cg_tol)?;
        at_least("ivp.space", self.ivp.space, 1.0)?;
        at_least("ivp.time", self.ivp.time, 1.0)?;
        if self.ivp.max_levels < 2 {
            return Err(invalid("ivp.max_levels", "must be at least 2"));
        }
        let l = &self.ladders;
        geometric("ladders.eps", &l.eps, false)?;
        if let Some(e) = l.eps.iter().find(|e| **e >= 1.0) {
            return Err(invalid("ladders.eps", format!("{e} is not below 1")));
        }
        geometric("ladders.lambda_low", &l.lambda_low, true)?;
        geometric("ladders.lambda_high", &l.lambda_high, true)?;
        if l.lambda_low.iter().any(|&v| v > 0.25) {
            return Err(invalid("ladders.lambda_low", "entries must be at most 1/4"));
        }
        if l.lambda_high.iter().any(|&v| v < 4.0) {
            return Err(invalid("ladders.lambda_high", "entries must be at least 4"));
        }
        let h = &self.harness;
        if h.threads == 0 {
            return Err(invalid("harness.threads", "must be at least 1"));
        }
        if let Some(t) = h.slope_tol {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(invalid("harness.slope_tol", "must be non-negative"));
            }
        }
        for (key, v) in [
            ("harness.floor_tol", h.floor_tol),
            ("harness.lipschitz_spread", h.lipschitz_spread),
            ("harness.flatness", h.flatness),
            ("harness.identity_tol", h.identity_tol),
            ("harness.divergence_factor", h.divergence_factor),
        ] {
            positive(key, v)?;
        }
        let m = &self.monitor;
        if m.anchor.len() != 2 || m.anchor.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(invalid("monitor.anchor", "expected two coordinates in [0, 1]"));
        }
        positive("monitor.radius", m.radius)?;
        if !(m.p > (p.d + 2) as f64) {
            return Err(invalid("monitor.p", format!("must exceed d + 2 = {}", p.d + 2)));
        }
        for (key, v) in
            [("monitor.ratio", m.ratio), ("monitor.flat_ratio", m.flat_ratio), ("monitor.excess_ratio", m.excess_ratio)]
        {
            if !(v > 1.0 && v.is_finite()) {
                return Err(invalid(key, "must exceed 1"));
            }
        }
        for (key, v) in [
            ("monitor.max_stored_dt", m.max_stored_dt),
            ("monitor.flat_k", m.flat_k),
            ("monitor.excess_radius", m.excess_radius),
            ("monitor.excess_dt", m.excess_dt),
            ("monitor.member_radius", m.member_radius),
        ] {
            positive(key, v)?;
        }
        at_least("monitor.excess_time", m.excess_time, 1.0)?;
        for (key, v) in [
            ("monitor.flat_eps", m.flat_eps),
            ("monitor.excess_eps", m.excess_eps),
            ("monitor.member_eps", m.member_eps),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(invalid(key, "must lie in (0, 1)"));
            }
        }
        for (key, v) in [
            ("monitor.max_levels", m.max_levels),
            ("monitor.flat_nx", m.flat_nx),
            ("monitor.flat_nt", m.flat_nt),
            ("monitor.excess_levels", m.excess_levels),
            ("monitor.member_n_y", m.member_n_y),
            ("monitor.member_nx", m.member_nx),
            ("monitor.member_nt", m.member_nt),
        ] {
            if v < 2 {
                return Err(invalid(key, "must be at least 2"));
            }
        }
        if let Some(f) = self.output.formats.iter().find(|f| !FORMATS.contains(&f.as_str())) {
            return Err(invalid("output.formats", format!("unknown format `{f}` (known: csv, bin, svg)")));
        }
        Ok(())
    }

    pub fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }

    /// Re-emits the resolved config in the text format.
    pub fn to_text(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for (section, body) in v.as_object().expect("config is an object") {
            let _ = writeln!(out, "[{section}]");
            for (key, value) in body.as_object().expect("sections are objects") {
                if !value.is_null() {
                    let _ = writeln!(out, "{key} = {}", emit_value(value));
                }
            }
            out.push('\n');
        }
        out
    }
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("{v} is not positive")))
    }
}

fn at_least(key: &str, v: f64, min: f64) -> Result<(), ConfigError> {
    if v >= min && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("{v} is below {min}")))
    }
}

/// Ladders must be strictly monotone with a constant ratio.
fn geometric(key: &str, values: &[f64], increasing: bool) -> Result<(), ConfigError> {
    if values.is_empty() {
        return Err(invalid(key, "empty"));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(invalid(key, format!("{v} is not positive")));
    }
    let sorted = values.windows(2).all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] });
    if !sorted {
        let order = if increasing { "increasing" } else { "decreasing" };
        return Err(invalid(key, format!("must be strictly {order}")));
    }
    if values.len() >= 3 {
        let q = values[1] / values[0];
        if values.windows(2).any(|w| ((w[1] / w[0]) / q - 1.0).abs() > 1e-9) {
            return Err(invalid(key, "ratios between consecutive entries differ"));
        }
    }
    Ok(())
}

fn emit_value(v: &Value) -> String {
    match v {
        Value::String(s) => format!("{s:?}"),
        Value::Array(items) => format!("[{}]", items.iter().map(emit_value).collect::<Vec<_>>().join(", ")),
        // serde_json prints the shortest representation that reads back exactly
        other => other.to_string(),
    }
}

/// Parses and validates a config in either encoding.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let value = if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse { line: e.line(), reason: e.to_string() })?
    } else {
        parse_text(text)?
    };
    let config: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let key = e.path().to_string();
        invalid(&key, e.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

fn parse_text(text: &str) -> Result<Value, ConfigError> {
    let mut root = Map::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |reason: String| ConfigError::Parse { line: line_no, reason };
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| err("unterminated section header".into()))?.trim();
            if !is_key(name) {
                return Err(err(format!("bad section name `{name}`")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
        let key = key.trim();
        let mut path: Vec<&str> = section.as_deref().into_iter().collect();
        path.extend(key.split('.'));
        if path.iter().any(|p| !is_key(p)) {
            return Err(err(format!("bad key `{key}`")));
        }
        let value = parse_value(value.trim()).map_err(err)?;
        insert(&mut root, &path, value).map_err(err)?;
    }
    Ok(Value::Object(root))
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn is_key(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn insert(root: &mut Map<String, Value>, path: &[&str], value: Value) -> Result<(), String> {
    let (last, parents) = path.split_last().ok_or("empty key")?;
    let mut node = root;
    for p in parents {
        let entry = node.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
        node = entry.as_object_mut().ok_or_else(|| format!("`{p}` is both a value and a section"))?;
    }
    if node.insert(last.to_string(), value).is_some() {
        return Err(format!("`{}` is set twice", path.join(".")));
    }
    Ok(())
}

fn parse_value(s: &str) -> Result<Value, String> {
    if s.is_empty() {
        return Err("missing value".into());
    }
    if let Some(inner) = s.strip_prefix('[') {
        let inner = inner.strip_suffix(']').ok_or("unterminated list")?.trim();
        if inner.is_empty() {
            return Ok(Value::Array(Vec::new()));
        }
        return split_items(inner)?
            .into_iter()
            .map(|item| parse_value(item.trim()))
            .collect::<Result<_, _>>()
            .map(Value::Array);
    }
    if let Some(args) = s.strip_prefix("geom(") {
        let args = args.strip_suffix(')').ok_or("unterminated geom(...)")?;
        let parts = split_items(args)?;
        let [a, b, n] = parts.as_slice() else {
            return Err("geom takes (first, last, count)".into());
        };
        let (a, b) = (parse_number(a.trim())?, parse_number(b.trim())?);
        let n: usize = n.trim().parse().map_err(|_| format!("bad count `{}`", n.trim()))?;
        if !(a > 0.0 && b > 0.0) || n < 2 {
            return Err("geom needs positive endpoints and at least 2 points".into());
        }
        let q = (b / a).ln() / (n - 1) as f64;
        // endpoints exact, interior points by exponentiation
        let point = |i: usize| if i + 1 == n { b } else { a * (q * i as f64).exp() };
        return Ok(Value::Array((0..n).map(|i| float(point(i))).collect::<Result<_, _>>()?));
    }
    if let Some(inner) = s.strip_prefix('"') {
        let inner = inner.strip_suffix('"').ok_or("unterminated string")?;
        return Ok(Value::String(inner.replace("\\\"", "\"")));
    }
    match s {
        "true" => return Ok(Value::Bool(true)),
        "false" => return Ok(Value::Bool(false)),
        _ => {}
    }
    if let Ok(n) = s.parse::<u64>() {
        return Ok(Value::Number(n.into()));
    }
    if s.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+' || c == '.') {
        return float(parse_number(s)?);
    }
    if is_key(s) {
        return Ok(Value::String(s.to_string()));
    }
    Err(format!("cannot read `{s}`"))
}

fn split_items(s: &str) -> Result<Vec<&str>, String> {
    let mut items = Vec::new();
    let (mut depth, mut start, mut quoted) = (0i32, 0, false);
    for (i, c) in s.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '[' | '(' if !quoted => depth += 1,
            ']' | ')' if !quoted => depth -= 1,
            ',' if !quoted && depth == 0 => {
                items.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 || quoted {
        return Err("unbalanced brackets or quotes".into());
    }
    items.push(&s[start..]);
    Ok(items)
}

fn parse_number(s: &str) -> Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (
                a.trim().parse().map_err(|_| format!("bad numerator in `{s}`"))?,
                b.trim().parse().map_err(|_| format!("bad denominator in `{s}`"))?,
            );
            if b == 0.0 {
                return Err(format!("zero denominator in `{s}`"));
            }
            a / b
        }
        None => s.parse().map_err(|_| format!("bad number `{s}`"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn float(v: f64) -> Result<Value, String> {
    Number::from_f64(v).map(Value::Number).ok_or_else(|| format!("{v} is not finite"))
}
