//! Evaluation metrics: Procrustes error, clustering accuracy and stream
//! scaling timings.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::datasets::PointCloud;
use crate::error::{Error, Result};
use crate::linalg::column_means;
use crate::pipeline::{map_stream, FittedModel};

/// Optimal similarity alignment of `Y` onto `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct Procrustes {
    /// Residual `‖X′ − s Y′ Q‖²` divided by `‖X′‖²` (primes denote centering).
    pub error: f64,
    pub scale: f64,
    pub rotation: DMatrix<f64>,
    /// One of the point sets has no spread; the error is a convention then.
    pub degenerate: bool,
}

fn pad_columns(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), d, |r, c| if c < m.ncols() { m[(r, c)] } else { 0.0 })
}

/// Aligns `y` to `x` by rotation/reflection, uniform scale and translation.
/// When the widths differ, the narrower set is padded with zero columns.
pub fn procrustes(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Procrustes> {
    if x.nrows() != y.nrows() {
        return Err(Error::contract(format!("shapes {:?} and {:?} differ", x.shape(), y.shape())));
    }
    let d = x.ncols().max(y.ncols());
    let (x, y) = (&pad_columns(x, d), &pad_columns(y, d));
    let n = x.nrows();
    if n < d || n == 0 {
        return Err(Error::param(format!("need at least as many points as dimensions, got {n}x{d}")));
    }
    let center = |m: &DMatrix<f64>| {
        let mu = column_means(m);
        DMatrix::from_fn(n, d, |r, c| m[(r, c)] - mu[c])
    };
    let (x0, y0) = (center(x), center(y));
    let (sx, sy) = (x0.norm_squared(), y0.norm_squared());
    let tiny = 1e-300;
    if sx <= tiny || sy <= tiny {
        return Ok(Procrustes {
            error: if sx <= tiny { 0.0 } else { 1.0 },
            scale: 0.0,
            rotation: DMatrix::identity(d, d),
            degenerate: true,
        });
    }
    let svd = (y0.transpose() * &x0).svd(true, true);
    let trace: f64 = svd.singular_values.iter().sum();
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let error = (1.0 - trace * trace / (sx * sy)).clamp(0.0, 1.0);
    Ok(Procrustes {
        error,
        scale: trace / sy,
        rotation: u * vt,
        degenerate: false,
    })
}

pub fn procrustes_error(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    procrustes(x, y).map(|p| p.error)
}

/// Fraction of samples correctly labeled under the best one-to-one matching
/// of predicted to true clusters.
pub fn clustering_accuracy(pred: &[u32], truth: &[u32]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::contract(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Ok(1.0);
    }
    let index = |labels: &[u32]| {
        let mut ids: Vec<u32> = labels.to_vec();
        ids.sort_unstable();
        ids.dedup();
        ids
    };
    let (pi, ti) = (index(pred), index(truth));
    let mut counts = vec![vec![0i64; ti.len()]; pi.len()];
    for (p, t) in pred.iter().zip(truth) {
        let r = pi.binary_search(p).expect("label indexed");
        let c = ti.binary_search(t).expect("label indexed");
        counts[r][c] += 1;
    }
    let rows = if pi.len() <= ti.len() {
        counts
    } else {
        (0..ti.len()).map(|c| counts.iter().map(|row| row[c]).collect()).collect()
    };
    let weights = Matrix::from_rows(rows).map_err(|e| Error::contract(e.to_string()))?;
    let (matched, _) = kuhn_munkres(&weights);
    Ok(matched as f64 / pred.len() as f64)
}

/// Least-squares line through `(x, y)` and its coefficient of determination.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { 1.0 - (syy - slope * sxy) / syy } else { 1.0 };
    (slope, intercept, r2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub size: usize,
    pub seconds: f64,
    pub per_sample: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    #[serde(default)]
    pub details: BTreeMap<String, f64>,
    #[serde(default)]
    pub timings: Vec<TimingRow>,
}

impl EvalReport {
    pub fn new(metric: impl Into<String>, value: f64) -> Self {
        EvalReport {
            metric: metric.into(),
            value,
            details: BTreeMap::new(),
            timings: Vec::new(),
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Timing rows as CSV: `size,seconds,per_sample`.
    pub fn write_timings_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.timings {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Times [`map_stream`] on the first `m` stream rows for every requested size.
/// The value is the per-sample latency of the largest size over the smallest
/// non-empty one; `r2` is the linear fit of total time against size.
pub fn bench_stream_scaling(fitted: &FittedModel, stream: &PointCloud, sizes: &[usize]) -> Result<EvalReport> {
    let mut timings = Vec::with_capacity(sizes.len());
    for &m in sizes {
        if m > stream.len() {
            return Err(Error::param(format!("stream has {} samples, size {m} requested", stream.len())));
        }
        if m == 0 {
            timings.push(TimingRow {
                size: 0,
                seconds: 0.0,
                per_sample: 0.0,
            });
            continue;
        }
        let part = stream.select(&(0..m).collect::<Vec<_>>());
        let start = Instant::now();
        map_stream(&part, fitted)?;
        let seconds = start.elapsed().as_secs_f64();
        timings.push(TimingRow {
            size: m,
            seconds,
            per_sample: seconds / m as f64,
        });
    }
    let nonzero: Vec<&TimingRow> = timings.iter().filter(|t| t.size > 0).collect();
    let ratio = match (
        nonzero.iter().min_by_key(|t| t.size),
        nonzero.iter().max_by_key(|t| t.size),
    ) {
        (Some(lo), Some(hi)) if lo.per_sample > 0.0 => hi.per_sample / lo.per_sample,
        _ => 0.0,
    };
    let xs: Vec<f64> = timings.iter().map(|t| t.size as f64).collect();
    let ys: Vec<f64> = timings.iter().map(|t| t.seconds).collect();
    let mut report = EvalReport::new("stream_latency_ratio", ratio);
    if timings.len() >= 2 {
        let (slope, _, r2) = linear_fit(&xs, &ys);
        report.details.insert("slope".into(), slope);
        report.details.insert("r2".into(), r2);
    }
    report.details.insert("threads".into(), rayon::current_num_threads() as f64);
    report.timings = timings;
    Ok(report)
}
