//! Named field profiles and CSV readers.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use chbc_core::{Dimension, Discretization, Field, SpaceTimeControl, TimeGrid};

use crate::error::{CliError, CliResult};

/// A bulk field given by name or by a nodal CSV file.
#[derive(Debug, Clone, PartialEq)]
pub enum BulkProfile {
    Zero,
    Constant(f64),
    /// `A cos(kπx)` in 1D, `A cos(kπx) cos(kπy)` in 2D.
    Cosine { k: f64, amplitude: f64 },
    /// Only meaningful as a tracking target.
    Uncontrolled,
    File(PathBuf),
}

/// Parses `name(a, b, ...)`. `None` if `s` is not a call of `name`.
pub fn parse_call(s: &str, name: &str) -> Option<CliResult<Vec<f64>>> {
    let rest = s.trim().strip_prefix(name)?.trim_start();
    let inner = rest.strip_prefix('(')?.strip_suffix(')')?;
    Some(
        inner
            .split(',')
            .map(|a| {
                a.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Config(format!("bad argument '{}' in '{s}'", a.trim())))
            })
            .collect(),
    )
}

impl BulkProfile {
    pub fn parse(spec: &str, base: &Path) -> CliResult<Self> {
        let s = spec.trim();
        match s {
            "zero" => return Ok(BulkProfile::Zero),
            "uncontrolled" => return Ok(BulkProfile::Uncontrolled),
            _ => {}
        }
        if let Some(args) = parse_call(s, "constant") {
            return match args?.as_slice() {
                [c] => Ok(BulkProfile::Constant(*c)),
                _ => Err(CliError::Config(format!("constant(c) takes one argument: '{s}'"))),
            };
        }
        if let Some(args) = parse_call(s, "cosine") {
            return match args?.as_slice() {
                [k, a] => Ok(BulkProfile::Cosine { k: *k, amplitude: *a }),
                _ => Err(CliError::Config(format!("cosine(k, amplitude) takes two arguments: '{s}'"))),
            };
        }
        if s.is_empty() {
            return Err(CliError::Config("empty profile".into()));
        }
        Ok(BulkProfile::File(base.join(s)))
    }

    pub fn is_named(&self) -> bool {
        !matches!(self, BulkProfile::File(_) | BulkProfile::Uncontrolled)
    }

    pub fn sample(&self, d: &Discretization) -> CliResult<Field> {
        let two_d = d.dimension() == Dimension::Two;
        match self {
            BulkProfile::Zero => Ok(Field::zeros(d.bulk_nodes())),
            BulkProfile::Constant(c) => Ok(Field::constant(d.bulk_nodes(), *c)),
            BulkProfile::Cosine { k, amplitude } => Ok(d.sample(|x, y| {
                let cy = if two_d { (k * PI * y).cos() } else { 1.0 };
                amplitude * (k * PI * x).cos() * cy
            })),
            BulkProfile::Uncontrolled => Err(CliError::Config(
                "\"uncontrolled\" is only valid as a tracking target".into(),
            )),
            BulkProfile::File(path) => read_field_csv(path, d.bulk_nodes()),
        }
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Rows of comma-separated numbers; a non-numeric first row is a header.
fn numeric_rows(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if rows.is_empty() && i == 0 => {}
            Err(_) => {
                return Err(CliError::Config(format!("{}:{}: non-numeric entry", path.display(), i + 1)));
            }
        }
    }
    Ok(rows)
}

/// One value per bulk node, taken from the last column.
pub fn read_field_csv(path: &Path, nodes: usize) -> CliResult<Field> {
    let rows = numeric_rows(path)?;
    if rows.len() != nodes {
        return Err(CliError::Config(format!(
            "{}: expected {nodes} nodal values, found {}",
            path.display(),
            rows.len()
        )));
    }
    let v: Vec<f64> = rows.iter().map(|r| *r.last().expect("non-empty row")).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Config(format!("{}: non-finite nodal value", path.display())));
    }
    Ok(Field(v))
}

/// `boundary_node,t,value` rows covering every node and time level once.
pub fn read_control_csv(path: &Path, d: &Discretization, grid: &TimeGrid) -> CliResult<SpaceTimeControl> {
    let rows = numeric_rows(path)?;
    let nb = d.boundary_nodes();
    let levels = grid.steps() + 1;
    let mut u = SpaceTimeControl::zeros(d, grid);
    let mut seen = vec![false; nb * levels];
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    for r in &rows {
        let [b, t, v] = r.as_slice() else {
            return Err(bad(format!("expected 3 columns, found {}", r.len())));
        };
        let kf = t / grid.tau();
        let k = kf.round();
        if *b < 0.0 || b.fract() != 0.0 || *b as usize >= nb || k < 0.0 || k as usize >= levels || (kf - k).abs() > 1e-6 {
            return Err(bad(format!("entry ({b}, {t}) is not a boundary node and time level")));
        }
        let (b, k) = (*b as usize, k as usize);
        if std::mem::replace(&mut seen[k * nb + b], true) {
            return Err(bad(format!("duplicate entry for node {b} at level {k}")));
        }
        u.values[k][b] = *v;
    }
    if seen.iter().any(|s| !s) {
        return Err(bad(format!("expected {} entries, found {}", nb * levels, rows.len())));
    }
    Ok(u)
}
