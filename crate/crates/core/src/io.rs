// SPDX-License-Identifier: Apache-2.0
//! CSV and JSON file formats.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so every
//! `f64` reads back bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{EquivalenceClass, ExactOptimum, MinimalClass};
use crate::graph::{Cpdag, DagStructure};
use crate::sem::{Dataset, SemParams};

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn csv_bytes(
    header: Option<&[String]>,
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    if let Some(h) = header {
        w.write_record(h)?;
    }
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn matrix_rows(m: &DMatrix<f64>) -> impl Iterator<Item = Vec<String>> + '_ {
    (0..m.nrows()).map(move |i| (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect())
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_atomic(path, &csv_bytes(None, matrix_rows(m))?)
}

fn parse_cell(path: &Path, row: usize, col: usize, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| {
        Error::InvalidData(format!(
            "{}: line {}, column {}: cannot parse {:?} as a number",
            path.display(),
            row,
            col + 1,
            s
        ))
    })
}

/// Rows of a numeric CSV and the header, if the first row is not numeric.
fn read_numeric_csv(path: &Path) -> Result<(Option<Vec<String>>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(idx + 1, |p| p.line() as usize);
        if idx == 0 && rec.iter().any(|c| c.parse::<f64>().is_err()) {
            header = Some(rec.iter().map(str::to_string).collect());
            continue;
        }
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, s)| parse_cell(path, line, c, s))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != vals.len() {
                return Err(Error::InvalidData(format!(
                    "{}: line {line} has {} fields, expected {}",
                    path.display(),
                    vals.len(),
                    first.len()
                )));
            }
        }
        rows.push(vals);
    }
    Ok((header, rows))
}

fn to_matrix(path: &Path, rows: Vec<Vec<f64>>) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::InvalidData(format!(
            "{}: no numeric rows",
            path.display()
        )));
    }
    let (r, c) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let (_, rows) = read_numeric_csv(path)?;
    to_matrix(path, rows)
}

pub fn read_square_csv(path: &Path) -> Result<DMatrix<f64>> {
    let m = read_matrix_csv(path)?;
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.ncols(),
            got: m.nrows(),
        });
    }
    Ok(m)
}

/// One value per line.
pub fn write_vector_csv(path: &Path, v: &DVector<f64>) -> Result<()> {
    write_atomic(
        path,
        &csv_bytes(None, v.iter().map(|x| vec![x.to_string()]))?,
    )
}

pub fn read_vector_csv(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix_csv(path)?;
    if m.ncols() != 1 && m.nrows() != 1 {
        return Err(Error::InvalidData(format!(
            "{}: expected a single row or column",
            path.display()
        )));
    }
    Ok(DVector::from_iterator(m.len(), m.iter().copied()))
}

/// Samples with a header row (the dataset's names, or `X0, X1, ...`).
pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let header: Vec<String> = (0..data.p()).map(|j| data.column_name(j)).collect();
    write_atomic(path, &csv_bytes(Some(&header), matrix_rows(data.x()))?)
}

/// Reads samples; a non-numeric first row is taken as the header.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let (header, rows) = read_numeric_csv(path)?;
    let x = to_matrix(path, rows)?;
    if let Some(h) = &header {
        if h.len() != x.ncols() {
            return Err(Error::InvalidData(format!(
                "{}: header has {} names for {} columns",
                path.display(),
                h.len(),
                x.ncols()
            )));
        }
    }
    Dataset::new(x, header)
}

pub fn write_params_csv(b_path: &Path, omega_path: &Path, params: &SemParams) -> Result<()> {
    write_matrix_csv(b_path, params.b())?;
    write_vector_csv(omega_path, params.omega())
}

pub fn read_params_csv(b_path: &Path, omega_path: &Path) -> Result<SemParams> {
    SemParams::new(read_square_csv(b_path)?, read_vector_csv(omega_path)?)
}

fn adjacency_bytes(m: &DMatrix<f64>) -> Result<Vec<u8>> {
    csv_bytes(
        None,
        (0..m.nrows()).map(|i| {
            (0..m.ncols())
                .map(|j| if m[(i, j)] != 0.0 { "1" } else { "0" }.to_string())
                .collect()
        }),
    )
}

/// 0/1 adjacency, `1` at `(i, j)` for `i -> j`.
pub fn write_dag_csv(path: &Path, g: &DagStructure) -> Result<()> {
    write_atomic(path, &adjacency_bytes(&g.to_matrix())?)
}

/// 0/1 adjacency with mutual ones for undirected edges.
pub fn write_cpdag_csv(path: &Path, c: &Cpdag) -> Result<()> {
    write_atomic(path, &adjacency_bytes(&c.to_matrix())?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let txt = fs::read_to_string(path)?;
    serde_json::from_str(&txt).map_err(|e| {
        Error::Config(format!(
            "{}: line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberDump {
    pub orderings: Vec<Vec<usize>>,
    pub b: Vec<Vec<f64>>,
    pub omega: Vec<f64>,
    pub edge_count: usize,
    pub nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumDump {
    pub b: Vec<Vec<f64>>,
    pub omega: Vec<f64>,
    pub edge_count: usize,
    pub nll: f64,
    pub penalty: f64,
    pub score: f64,
}

/// JSON layout of an exact-search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDump {
    pub p: usize,
    pub eps: f64,
    pub members: Vec<MemberDump>,
    /// Indices into `members`.
    pub minimal: Vec<usize>,
    pub min_edges: usize,
    /// `null` when no minimal member has an edge.
    pub tau: Option<f64>,
    pub delta0: Option<f64>,
    pub optimum: Option<Vec<OptimumDump>>,
}

impl ClassDump {
    pub fn new(ec: &EquivalenceClass, mc: &MinimalClass, opt: Option<&ExactOptimum>) -> Self {
        let members = ec
            .members
            .iter()
            .map(|m| MemberDump {
                orderings: m.orderings.clone(),
                b: rows_of(m.params.b()),
                omega: m.params.omega().iter().copied().collect(),
                edge_count: m.edge_count,
                nll: m.nll,
            })
            .collect();
        let minimal = ec
            .members
            .iter()
            .enumerate()
            .filter(|(_, m)| m.edge_count == mc.min_edges)
            .map(|(i, _)| i)
            .collect();
        let finite = |v: f64| v.is_finite().then_some(v);
        Self {
            p: ec.p,
            eps: ec.eps,
            members,
            minimal,
            min_edges: mc.min_edges,
            tau: finite(mc.tau),
            delta0: finite(mc.delta0),
            optimum: opt.map(|o| {
                o.members
                    .iter()
                    .map(|m| OptimumDump {
                        b: rows_of(m.params.b()),
                        omega: m.params.omega().iter().copied().collect(),
                        edge_count: m.edge_count,
                        nll: m.nll,
                        penalty: m.penalty,
                        score: m.score,
                    })
                    .collect()
            }),
        }
    }
}
