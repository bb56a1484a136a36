//! Report assembly and atomic artifact writing.
//!
//! Floats in JSON and CSV are printed as `{:.16e}` (17 significant digits)
//! so that a report is a pure function of the config and the version.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const TOOL: &str = "parahom";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One verdict: `value` compared with `bound`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, relation: Relation::AtMost, bound, pass: value <= bound }
    }

    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, relation: Relation::AtLeast, bound, pass: value >= bound }
    }

    /// A check that holds by construction, e.g. when a fitted quantity is
    /// exactly zero and there is no slope to fit.
    pub fn exact(name: impl Into<String>) -> Self {
        Self { name: name.into(), value: 0.0, relation: Relation::AtMost, bound: 0.0, pass: true }
    }
}

/// Full report written to `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_digest: String,
    pub config: Value,
    pub grids: Vec<Value>,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub result: Value,
}

impl Report {
    pub fn new(command: &str, config: &ExperimentConfig, grids: Vec<Value>, checks: Vec<Check>, result: Value) -> Self {
        let cfg = config.digest_value();
        Self {
            tool: TOOL,
            version: VERSION,
            command: command.into(),
            config_digest: digest(&cfg),
            config: cfg,
            grids,
            pass: checks.iter().all(|c| c.pass),
            checks,
            result,
        }
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.pass)
    }
}

/// SHA-256 of the compact fixed-precision encoding.
pub fn digest(v: &Value) -> String {
    hex::encode(Sha256::digest(to_json(v, false)))
}

struct Fixed<F>(F);

macro_rules! forward {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
            self.0.$name(w $(, $arg)*)
        })*
    };
}

impl<F: Formatter> Formatter for Fixed<F> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    forward! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        end_object_key();
        begin_object_value();
        end_object_value();
    }
}

/// Serializes with every float in fixed 17-digit form.
pub fn to_json<T: Serialize + ?Sized>(value: &T, pretty: bool) -> Vec<u8> {
    let mut buf = Vec::new();
    let result = if pretty {
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, Fixed(PrettyFormatter::with_indent(b"  ")));
        value.serialize(&mut ser)
    } else {
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, Fixed(CompactFormatter));
        value.serialize(&mut ser)
    };
    result.expect("in-memory serialization");
    if pretty {
        buf.push(b'\n');
    }
    buf
}

/// Writes through a temporary file in the same directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no file name"))?;
    let tmp: PathBuf = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// CSV with a header row; floats in fixed 17-digit form.
pub fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Vec<u8> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

/// Little-endian `f64` payload plus its JSON header.
pub fn binary(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Log-log scatter of `(param, error)`, the fitted line and a guide of the
/// predicted slope through the first point.
pub fn rate_plot(samples: &[(f64, f64)], fit: Option<(f64, f64)>, predicted: f64, title: &str) -> Vec<u8> {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const M: f64 = 48.0;
    let pts: Vec<(f64, f64)> =
        samples.iter().filter(|s| s.0 > 0.0 && s.1 > 0.0).map(|s| (s.0.ln(), s.1.ln())).collect();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <text x=\"{M}\" y=\"20\">{title}</text>\n"
    );
    if pts.len() >= 2 {
        let (x0, x1) = bounds(pts.iter().map(|p| p.0));
        let (y0, y1) = bounds(pts.iter().map(|p| p.1));
        let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
        let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
        let line = |a: f64, b: f64, color: &str, dash: &str| {
            format!(
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-dasharray=\"{dash}\"/>\n",
                sx(x0),
                sy(a + b * x0),
                sx(x1),
                sy(a + b * x1)
            )
        };
        svg += &format!(
            "<rect x=\"{M}\" y=\"{M}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>\n",
            W - 2.0 * M,
            H - 2.0 * M
        );
        if let Some((slope, intercept)) = fit {
            svg += &line(intercept, slope, "#1f77b4", "none");
        }
        let (px, py) = pts[0];
        svg += &line(py - predicted * px, predicted, "#d62728", "6 4");
        for (x, y) in &pts {
            svg += &format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"#333\"/>\n", sx(*x), sy(*y));
        }
        svg += &format!(
            "<text x=\"{M}\" y=\"{}\">log param vs log error; fit solid, predicted slope {predicted:.3} dashed</text>\n",
            H - 12.0
        );
    }
    svg += "</svg>\n";
    svg.into_bytes()
}

fn bounds(it: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let pad = ((hi - lo) * 0.08).max(1e-3);
    (lo - pad, hi + pad)
}
