//! Point clouds, synthetic scene generators and batch/stream splitting.

mod io;
mod scenes;

pub use io::{read_csv, read_matrix_csv, read_sidecar, write_csv, write_matrix_csv, write_sidecar, Sidecar};
pub use scenes::{gen_scene, intersection_distances, Scene, SwissRollGeometry};

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Provenance attached to a cloud: the generating scene and any derived
/// geometric constants (plane offsets, intersection locations).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CloudMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<Scene>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    /// Row indices into the parent cloud when this cloud came out of a split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_rows: Option<Vec<usize>>,
}

/// An `n × D` matrix of samples with optional 1-based ground-truth labels and
/// optional generating coordinates (one row per sample).
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: DMatrix<f64>,
    pub labels: Option<Vec<u32>>,
    pub truth: Option<DMatrix<f64>>,
    pub seed: u64,
    pub meta: CloudMeta,
}

impl PointCloud {
    /// Builds a cloud and checks its invariants.
    pub fn new(points: DMatrix<f64>, labels: Option<Vec<u32>>) -> Result<Self> {
        let cloud = PointCloud {
            points,
            labels,
            truth: None,
            seed: 0,
            meta: CloudMeta::default(),
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::param("ragged rows"));
        }
        Self::new(DMatrix::from_fn(n, dim, |i, j| rows[i][j]), None)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, dim) = self.points.shape();
        if n == 0 || dim == 0 {
            return Err(Error::param(format!("point cloud must be non-empty, got {n}x{dim}")));
        }
        if let Some((i, _)) = self
            .points
            .row_iter()
            .enumerate()
            .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Format {
                row: i,
                message: "non-finite coordinate".into(),
            });
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::param(format!("{} labels for {n} points", labels.len())));
            }
            if labels.contains(&0) {
                return Err(Error::param("labels must be >= 1"));
            }
        }
        if let Some(t) = &self.truth {
            if t.nrows() != n {
                return Err(Error::param("truth coordinates must have one row per point"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Copy of rows `idx` (labels and truth carried along).
    pub fn select(&self, idx: &[usize]) -> PointCloud {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)]);
        PointCloud {
            points: pick(&self.points),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            truth: self.truth.as_ref().map(pick),
            seed: self.seed,
            meta: CloudMeta {
                source_rows: Some(idx.to_vec()),
                ..self.meta.clone()
            },
        }
    }
}

/// Uniformly random disjoint split into a batch of `batch_size` rows and a
/// stream holding the rest, in shuffled order.
pub fn split_batch_stream(cloud: &PointCloud, batch_size: usize, seed: u64) -> Result<(PointCloud, PointCloud)> {
    let n = cloud.len();
    if batch_size == 0 || batch_size >= n {
        return Err(Error::param(format!("batch size {batch_size} must lie in [1, {})", n)));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (b, s) = order.split_at(batch_size);
    Ok((cloud.select(b), cloud.select(s)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> PointCloud {
        let mut c = PointCloud::new(
            DMatrix::from_fn(n, 2, |i, j| (i * 2 + j) as f64),
            Some((0..n).map(|i| 1 + (i % 2) as u32).collect()),
        )
        .unwrap();
        c.seed = 9;
        c
    }

    #[test]
    fn split_sizes_match_stream_experiment() {
        let c = toy(6000);
        let (b, s) = split_batch_stream(&c, 2000, 1).unwrap();
        assert_eq!((b.len(), s.len()), (2000, 4000));
    }

    #[test]
    fn split_is_a_partition_and_carries_labels() {
        let c = toy(50);
        let (b, s) = split_batch_stream(&c, 49, 4).unwrap();
        assert_eq!(s.len(), 1);
        let mut rows: Vec<usize> = b.meta.source_rows.clone().unwrap();
        rows.extend(s.meta.source_rows.clone().unwrap());
        rows.sort_unstable();
        assert_eq!(rows, (0..50).collect::<Vec<_>>());
        for (k, &r) in b.meta.source_rows.as_ref().unwrap().iter().enumerate() {
            assert_eq!(b.points.row(k), c.points.row(r));
            assert_eq!(b.labels.as_ref().unwrap()[k], c.labels.as_ref().unwrap()[r]);
        }
    }

    #[test]
    fn split_is_deterministic() {
        let c = toy(100);
        let a = split_batch_stream(&c, 30, 77).unwrap();
        let b = split_batch_stream(&c, 30, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_rejects_out_of_range_batch() {
        let c = toy(10);
        assert!(matches!(split_batch_stream(&c, 10, 0), Err(Error::Parameter(_))));
        assert!(matches!(split_batch_stream(&c, 0, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn rejects_zero_label_and_nan() {
        assert!(PointCloud::new(DMatrix::zeros(2, 2), Some(vec![1, 0])).is_err());
        let mut m = DMatrix::zeros(2, 2);
        m[(1, 0)] = f64::NAN;
        assert!(matches!(PointCloud::new(m, None), Err(Error::Format { row: 1, .. })));
    }
}
