//! CSV reading and writing for point clouds, plus the JSON metadata sidecar.
//!
//! Rows are samples, numeric columns are dimensions. A header row is optional;
//! when present and its last column is named `label`, that column holds
//! 1-based integer labels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{CloudMeta, PointCloud};
use crate::error::{Error, Result};

/// Writes `cloud` with a header `x1,…,xD[,label]`. Values use the shortest
/// round-trip representation, so reading back is exact.
pub fn write_csv(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let dim = cloud.dim();
    let mut header: Vec<String> = (1..=dim).map(|j| format!("x{j}")).collect();
    if cloud.labels.is_some() {
        header.push("label".into());
    }
    writeln!(w, "{}", header.join(","))?;
    write_rows(&mut w, &cloud.points, cloud.labels.as_deref())?;
    w.flush()?;
    Ok(())
}

/// Writes a bare matrix with the given column names.
pub fn write_matrix_csv(m: &DMatrix<f64>, columns: &[String], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if !columns.is_empty() {
        writeln!(w, "{}", columns.join(","))?;
    }
    write_rows(&mut w, m, None)?;
    w.flush()?;
    Ok(())
}

fn write_rows(w: &mut impl Write, m: &DMatrix<f64>, labels: Option<&[u32]>) -> Result<()> {
    let mut line = String::new();
    for i in 0..m.nrows() {
        line.clear();
        for j in 0..m.ncols() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&m[(i, j)].to_string());
        }
        if let Some(l) = labels {
            line.push(',');
            line.push_str(&l[i].to_string());
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Reads a point cloud. Format errors carry the 1-based line number.
pub fn read_csv(path: impl AsRef<Path>) -> Result<PointCloud> {
    let (header, rows) = read_table(path)?;
    let has_label = header
        .as_ref()
        .and_then(|h| h.last())
        .is_some_and(|c| c.trim().eq_ignore_ascii_case("label"));
    let first_line = if header.is_some() { 2 } else { 1 };
    let width = rows.first().map_or(0, |(_, r)| r.len());
    let dim = if has_label { width.saturating_sub(1) } else { width };
    if dim == 0 {
        return Err(Error::Format {
            row: first_line,
            message: "no numeric columns".into(),
        });
    }
    let mut labels = has_label.then(|| Vec::with_capacity(rows.len()));
    for (line, r) in &rows {
        if let Some(labels) = labels.as_mut() {
            let v = r[dim];
            if v.fract() != 0.0 || v < 1.0 || v > u32::MAX as f64 {
                return Err(Error::Format {
                    row: *line,
                    message: format!("label {v} is not a positive integer"),
                });
            }
            labels.push(v as u32);
        }
    }
    let points = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i].1[j]);
    PointCloud::new(points, labels)
}

/// Reads a numeric matrix, ignoring any header.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<(Option<Vec<String>>, DMatrix<f64>)> {
    let (header, rows) = read_table(path)?;
    let width = rows
        .first()
        .map_or_else(|| header.as_ref().map_or(0, Vec::len), |(_, r)| r.len());
    let m = DMatrix::from_fn(rows.len(), width, |i, j| rows[i].1[j]);
    Ok((header, m))
}

type Table = (Option<Vec<String>>, Vec<(usize, Vec<f64>)>);

fn read_table(path: impl AsRef<Path>) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(File::open(path)?));
    let mut header = None;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let line = k + 1;
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Vec<Option<f64>> = rec.iter().map(|c| c.parse::<f64>().ok()).collect();
        if k == 0 && parsed.iter().any(Option::is_none) {
            header = Some(rec.iter().map(str::to_owned).collect());
            continue;
        }
        let mut values = Vec::with_capacity(parsed.len());
        for (j, v) in parsed.into_iter().enumerate() {
            match v {
                Some(v) if v.is_finite() => values.push(v),
                Some(v) => {
                    return Err(Error::Format {
                        row: line,
                        message: format!("non-finite value {v} in column {}", j + 1),
                    })
                }
                None => {
                    return Err(Error::Format {
                        row: line,
                        message: format!("unparseable cell '{}' in column {}", &rec[j], j + 1),
                    })
                }
            }
        }
        let expected = rows.first().map(|(_, r)| r.len()).or(header.as_ref().map(Vec::len));
        if let Some(w) = expected {
            if values.len() != w {
                return Err(Error::Format {
                    row: line,
                    message: format!("expected {w} columns, found {}", values.len()),
                });
            }
        }
        rows.push((line, values));
    }
    if rows.is_empty() && header.is_none() {
        return Err(Error::Format {
            row: 1,
            message: "empty file".into(),
        });
    }
    Ok((header, rows))
}

/// Scene metadata stored next to a generated CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub seed: u64,
    pub n: usize,
    pub dim: usize,
    #[serde(flatten)]
    pub meta: CloudMeta,
}

pub fn write_sidecar(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let side = Sidecar {
        seed: cloud.seed,
        n: cloud.len(),
        dim: cloud.dim(),
        meta: cloud.meta.clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &side)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<Sidecar> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
