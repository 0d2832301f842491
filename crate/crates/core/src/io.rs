//! File formats: structured-text (JSON) documents for spaces, potentials and
//! fields, and the versioned CSV schema for time fields and kernels.
//!
//! CSV bodies are written with shortest round-trip float formatting and no
//! timestamps, so identical inputs produce byte-identical files.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::heat::KernelMatrix;
use crate::potential::{Envelope, Potential, PotentialKind};
use crate::space::{shortest_path_metric, Field, Space};
use crate::timefield::{TimeField, TimeGrid};

pub const CSV_SCHEMA_HEADER: &str = "# hjbd-schema v1";

#[derive(Serialize, Deserialize)]
struct SpaceDoc {
    points: Vec<String>,
    m: Vec<f64>,
    edges: Vec<(usize, usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coords: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metric: Option<Vec<Vec<f64>>>,
}

/// Reads a space document. Value-level invariants are not enforced here;
/// run [`crate::space::validate_space`] on the result (the `space validate`
/// command does exactly that).
pub fn load_space(path: impl AsRef<Path>) -> Result<Space> {
    let text = std::fs::read_to_string(path)?;
    space_from_json(&text)
}

pub fn space_from_json(text: &str) -> Result<Space> {
    let doc: SpaceDoc = serde_json::from_str(text).map_err(|e| CoreError::Parse(e.to_string()))?;
    let n = doc.points.len();
    if doc.m.len() != n {
        return Err(CoreError::Parse(format!(
            "{} measure entries for {} points",
            doc.m.len(),
            n
        )));
    }
    let mut conductance = DMatrix::zeros(n, n);
    for &(i, j, c) in &doc.edges {
        if i >= n || j >= n {
            return Err(CoreError::Parse(format!("edge ({i}, {j}) out of range")));
        }
        conductance[(i, j)] = c;
        conductance[(j, i)] = c;
    }
    let metric = match doc.metric {
        Some(rows) => {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(CoreError::Parse("metric must be an n x n matrix".into()));
            }
            DMatrix::from_fn(n, n, |i, j| rows[i][j])
        }
        None => shortest_path_metric(&conductance, 1.0)?,
    };
    Ok(Space::new_unchecked(doc.points, doc.coords, metric, doc.m, conductance))
}

pub fn save_space(space: &Space, path: impl AsRef<Path>) -> Result<()> {
    let text = space_to_json(space)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn space_to_json(space: &Space) -> Result<String> {
    let doc = SpaceDoc {
        points: space.points().to_vec(),
        m: space.measure().to_vec(),
        edges: space.edges().to_vec(),
        coords: space.coords().map(|c| c.to_vec()),
        metric: Some(
            (0..space.n())
                .map(|i| (0..space.n()).map(|j| space.distance(i, j)).collect())
                .collect(),
        ),
    };
    serde_json::to_string_pretty(&doc).map_err(|e| CoreError::Parse(e.to_string()))
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum EnvelopeDoc {
    One,
    Exp { rate: f64 },
    Cos { omega: f64, phase: f64 },
}

impl From<EnvelopeDoc> for Envelope {
    fn from(doc: EnvelopeDoc) -> Self {
        match doc {
            EnvelopeDoc::One => Envelope::One,
            EnvelopeDoc::Exp { rate } => Envelope::Exp { rate },
            EnvelopeDoc::Cos { omega, phase } => Envelope::Cos { omega, phase },
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum PotentialDoc {
    Constant { value: f64 },
    Separable { envelope: EnvelopeDoc, profile: Vec<f64> },
    Tabulated { t_start: f64, t_end: f64, frames: Vec<Vec<f64>> },
}

/// Reads a potential document and measures its bounds on `[t_min, 0]`.
pub fn load_potential(path: impl AsRef<Path>, space: &Space, t_min: f64) -> Result<Potential> {
    let text = std::fs::read_to_string(path)?;
    potential_from_json(&text, space, t_min)
}

pub fn potential_from_json(text: &str, space: &Space, t_min: f64) -> Result<Potential> {
    let doc: PotentialDoc =
        serde_json::from_str(text).map_err(|e| CoreError::Parse(e.to_string()))?;
    let kind = match doc {
        PotentialDoc::Constant { value } => return Ok(Potential::constant(value)),
        PotentialDoc::Separable { envelope, profile } => PotentialKind::Separable {
            envelope: envelope.into(),
            profile: Field::new(profile)?,
        },
        PotentialDoc::Tabulated { t_start, t_end, frames } => {
            let grid = TimeGrid::new(t_start, t_end, frames.len().saturating_sub(1).max(1))?;
            let frames = frames.into_iter().map(Field::new).collect::<Result<Vec<_>>>()?;
            PotentialKind::Tabulated(TimeField::new(grid, frames)?)
        }
    };
    Potential::for_space(kind, space, t_min)
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FieldDoc {
    Wrapped { values: Vec<f64> },
    Bare(Vec<f64>),
}

pub fn load_field(path: impl AsRef<Path>, n: usize) -> Result<Field> {
    let text = std::fs::read_to_string(path)?;
    field_from_json(&text, n)
}

pub fn field_from_json(text: &str, n: usize) -> Result<Field> {
    let doc: FieldDoc = serde_json::from_str(text).map_err(|e| CoreError::Parse(e.to_string()))?;
    let values = match doc {
        FieldDoc::Wrapped { values } => values,
        FieldDoc::Bare(values) => values,
    };
    if values.len() != n {
        return Err(CoreError::FieldLength { expected: n, found: values.len() });
    }
    Field::new(values)
}

pub fn save_field(field: &Field, path: impl AsRef<Path>) -> Result<()> {
    let doc = FieldDoc::Wrapped { values: field.values().to_vec() };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CoreError::Parse(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Time field as CSV rows `(time, point_id, value)`.
pub fn timefield_to_csv(tf: &TimeField, points: &[String]) -> String {
    let mut out = String::new();
    out.push_str(CSV_SCHEMA_HEADER);
    out.push('\n');
    out.push_str("time,point_id,value\n");
    for (j, frame) in tf.frames().iter().enumerate() {
        let t = tf.grid().time(j);
        for (x, id) in points.iter().enumerate() {
            out.push_str(&format!("{t},{id},{}\n", frame.get(x)));
        }
    }
    out
}

pub fn write_timefield_csv(
    tf: &TimeField,
    points: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    std::fs::write(path, timefield_to_csv(tf, points))?;
    Ok(())
}

/// Reads the CSV written by [`timefield_to_csv`]. Point order follows first
/// appearance, which matches the writer's space order.
pub fn read_timefield_csv(path: impl AsRef<Path>) -> Result<(TimeField, Vec<String>)> {
    let text = std::fs::read_to_string(path)?;
    timefield_from_csv(&text)
}

pub fn timefield_from_csv(text: &str) -> Result<(TimeField, Vec<String>)> {
    let mut times: Vec<f64> = Vec::new();
    let mut points: Vec<String> = Vec::new();
    let mut rows: Vec<(usize, usize, f64)> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("time,") {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let (Some(t), Some(id), Some(v)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(CoreError::Parse(format!("bad csv row: {line}")));
        };
        let t: f64 = t.parse().map_err(|_| CoreError::Parse(format!("bad time: {t}")))?;
        let v: f64 = v.parse().map_err(|_| CoreError::Parse(format!("bad value: {v}")))?;
        let ti = match times.iter().position(|&u| u == t) {
            Some(i) => i,
            None => {
                times.push(t);
                times.len() - 1
            }
        };
        let xi = match points.iter().position(|p| p == id) {
            Some(i) => i,
            None => {
                points.push(id.to_string());
                points.len() - 1
            }
        };
        rows.push((ti, xi, v));
    }
    if times.len() < 2 || points.is_empty() {
        return Err(CoreError::Parse("csv holds fewer than two frames".into()));
    }
    let n = points.len();
    let grid = TimeGrid::new(times[0], *times.last().unwrap(), times.len() - 1)?;
    // check uniformity against the reconstructed grid
    for (j, &t) in times.iter().enumerate() {
        if (grid.time(j) - t).abs() > 1e-9 * grid.dt().abs() {
            return Err(CoreError::Parse("csv time grid is not uniform".into()));
        }
    }
    let mut frames = vec![vec![f64::NAN; n]; times.len()];
    for (ti, xi, v) in rows {
        frames[ti][xi] = v;
    }
    let frames = frames
        .into_iter()
        .map(|vals| {
            if vals.iter().any(|v| v.is_nan()) {
                Err(CoreError::Parse("csv is missing entries".into()))
            } else {
                Field::new(vals)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((TimeField::new(grid, frames)?, points))
}

/// Kernel as dense CSV, row-major, with a header row of point ids.
pub fn kernel_to_csv(kernel: &KernelMatrix, points: &[String]) -> String {
    let mut out = String::new();
    out.push_str(CSV_SCHEMA_HEADER);
    out.push('\n');
    out.push_str(&points.join(","));
    out.push('\n');
    for x in 0..kernel.n() {
        let row: Vec<String> = (0..kernel.n()).map(|y| kernel.get(x, y).to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_kernel_csv(
    kernel: &KernelMatrix,
    points: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    std::fs::write(path, kernel_to_csv(kernel, points))?;
    Ok(())
}
