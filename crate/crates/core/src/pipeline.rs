//! Batch fitting and stream mapping.
//!
//! [`fit_batch`] clusters the batch by tangent similarity, runs Isomap on every
//! cluster and stitches the results into one global space. [`map_stream`] then
//! places each stream sample on every cluster, picks the cluster whose global
//! mean is closest, and reports both local and global coordinates.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{read_matrix_csv, write_matrix_csv, PointCloud};
use crate::error::{Error, Result, StageExt};
use crate::geometry::{geodesic_distances, isomap, ManifoldModel, ModelReport, NeighborGraph};
use crate::msvd::MsvdParams;
use crate::stitching::{align, apply_transform, GlobalAlignment, StitchParams};
use crate::stream_map::embed_sample;
use crate::tangent_cluster::{find_clusters, ClusterAssignment, ClusterParams, SimMode};

pub const MODEL_FORMAT: &str = "manistream-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitParams {
    pub epsilon: f64,
    pub sim_mode: SimMode,
    /// Neighbors used for tangent clustering, the Isomap graph and stream mapping.
    pub knn: usize,
    /// Nearest cross-cluster pairs in the support set.
    pub k: usize,
    /// Farthest cross-cluster pairs in the support set.
    pub l: usize,
    pub lambda: f64,
    pub levels: usize,
    pub gap_ratio: f64,
    pub d_global: Option<usize>,
    /// Fixed per-cluster embedding dimension instead of the spectral estimate.
    pub dim: Option<usize>,
    pub min_cluster_size: Option<usize>,
    pub seed: u64,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            epsilon: SimMode::L1.default_epsilon(),
            sim_mode: SimMode::L1,
            knn: 8,
            k: 8,
            l: 1,
            lambda: 0.01,
            levels: 12,
            gap_ratio: 5.0,
            d_global: None,
            dim: None,
            min_cluster_size: None,
            seed: 0,
        }
    }
}

impl FitParams {
    pub fn cluster_params(&self) -> ClusterParams {
        ClusterParams {
            epsilon: self.epsilon,
            knn: self.knn,
            mode: self.sim_mode,
            msvd: MsvdParams {
                levels: self.levels,
                gap_ratio: self.gap_ratio,
                ..MsvdParams::default()
            },
            seed: self.seed,
            min_size: self.min_cluster_size,
        }
    }

    pub fn stitch_params(&self) -> StitchParams {
        StitchParams {
            k: self.k,
            l: self.l,
            lambda: self.lambda,
            d_global: self.d_global,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cluster_params().validate()?;
        if self.k + self.l == 0 {
            return Err(Error::param("k + l must be >= 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.d_global == Some(0) || self.dim == Some(0) {
            return Err(Error::param("dimensions must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub p: usize,
    pub dims: Vec<usize>,
    pub sizes: Vec<usize>,
    pub raw_clusters: usize,
    pub scale: f64,
    pub support_size: usize,
    pub clusters: Vec<ModelReport>,
    pub clean: bool,
    /// Seconds spent per stage; not persisted.
    #[serde(skip)]
    pub timings: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub params: FitParams,
    pub assignment: ClusterAssignment,
    pub models: Vec<ManifoldModel>,
    pub alignment: GlobalAlignment,
    pub report: FitReport,
}

impl FittedModel {
    pub fn p(&self) -> usize {
        self.models.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.models[0].points.ncols()
    }

    pub fn d_global(&self) -> usize {
        self.alignment.d_global
    }

    /// Global coordinates of every batch sample, in batch order.
    pub fn batch_embedding(&self) -> DMatrix<f64> {
        let n = self.assignment.labels.len();
        let mut out = DMatrix::zeros(n, self.d_global());
        for (model, tr) in self.models.iter().zip(&self.alignment.transforms) {
            let global = &model.embedding * tr.rotation.transpose();
            for (r, &b) in model.batch_indices.iter().enumerate() {
                for c in 0..self.d_global() {
                    out[(b, c)] = global[(r, c)] + tr.translation[c];
                }
            }
        }
        out
    }
}

fn timed<T>(timings: &mut BTreeMap<String, f64>, stage: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    timings.insert(stage.to_string(), start.elapsed().as_secs_f64());
    out
}

/// Batch phase: clustering, per-cluster Isomap, stitching.
pub fn fit_batch(batch: &PointCloud, params: &FitParams) -> Result<FittedModel> {
    params.validate()?;
    batch.validate()?;
    let n = batch.len();
    if n < 10 * params.knn {
        return Err(Error::param(format!(
            "batch of {n} samples is too small for knn = {} (need >= {})",
            params.knn,
            10 * params.knn
        )));
    }
    let mut timings = BTreeMap::new();
    let assignment = timed(&mut timings, "clustering", || find_clusters(batch, &params.cluster_params())).stage("clustering")?;
    log::info!("clustering found {} cluster(s) ({} before merging)", assignment.p, assignment.raw_clusters);

    let models = timed(&mut timings, "isomap", || {
        assignment
            .members
            .par_iter()
            .map(|members| isomap(&batch.select(members).points, members.clone(), params.knn, params.dim))
            .collect::<Result<Vec<_>>>()
    })
    .stage("isomap")?;

    let alignment = timed(&mut timings, "stitching", || align(&models, &params.stitch_params())).stage("stitching")?;

    let clusters: Vec<ModelReport> = models.iter().map(|m| m.report.clone()).collect();
    let report = FitReport {
        p: models.len(),
        dims: models.iter().map(|m| m.dim).collect(),
        sizes: models.iter().map(ManifoldModel::len).collect(),
        raw_clusters: assignment.raw_clusters,
        scale: assignment.scale,
        support_size: alignment.support.as_ref().map_or(0, |s| s.members.len()),
        clean: clusters.iter().all(ModelReport::clean),
        clusters,
        timings,
    };
    Ok(FittedModel {
        params: params.clone(),
        assignment,
        models,
        alignment,
        report,
    })
}

/// Mapping of one stream sample. `index` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSample {
    pub index: usize,
    pub y_local: DVector<f64>,
    pub y_global: DVector<f64>,
}

/// Stream phase for one sample: embed on every cluster, map to the global
/// space and keep the cluster whose global mean is nearest (ties to the lower index).
pub fn map_stream_sample(sample: &[f64], fitted: &FittedModel) -> Result<StreamSample> {
    let mut best: Option<(f64, StreamSample)> = None;
    for (i, (model, tr)) in fitted.models.iter().zip(&fitted.alignment.transforms).enumerate() {
        let y_local = embed_sample(sample, model, fitted.params.knn)?;
        let y_global = apply_transform(&y_local, &tr.rotation, &tr.translation)?;
        let d = (&y_global - &tr.mean).norm();
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((
                d,
                StreamSample {
                    index: i + 1,
                    y_local,
                    y_global,
                },
            ));
        }
    }
    best.map(|(_, s)| s).ok_or_else(|| Error::contract("fitted model has no clusters"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamResult {
    pub d_global: usize,
    pub samples: Vec<StreamSample>,
}

impl StreamResult {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn indices(&self) -> Vec<u32> {
        self.samples.iter().map(|s| s.index as u32).collect()
    }

    /// `m × d_global` matrix of global coordinates.
    pub fn global(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.samples.len(), self.d_global, |r, c| self.samples[r].y_global[c])
    }

    /// CSV with columns `index,g1..gd`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["index".to_string()];
        header.extend((1..=self.d_global).map(|i| format!("g{i}")));
        w.write_record(&header)?;
        for s in &self.samples {
            let mut rec = vec![s.index.to_string()];
            rec.extend(s.y_global.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Maps every row of `stream`; output order follows input order.
pub fn map_stream(stream: &PointCloud, fitted: &FittedModel) -> Result<StreamResult> {
    if stream.is_empty() {
        return Ok(StreamResult {
            d_global: fitted.d_global(),
            samples: Vec::new(),
        });
    }
    if stream.dim() != fitted.ambient_dim() {
        return Err(Error::contract(format!(
            "stream has {} coordinates, model was fitted on {}",
            stream.dim(),
            fitted.ambient_dim()
        )));
    }
    let samples = (0..stream.len())
        .into_par_iter()
        .map(|r| {
            let row: Vec<f64> = stream.points.row(r).iter().copied().collect();
            map_stream_sample(&row, fitted)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StreamResult {
        d_global: fitted.d_global(),
        samples,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ClusterEntry {
    batch_indices: Vec<usize>,
    dim: usize,
    eigenvalues: Vec<f64>,
    col_mean_sq: Vec<f64>,
    floored_edges: usize,
    repair_edges: usize,
    report: ModelReport,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    params: FitParams,
    assignment: ClusterAssignment,
    alignment: GlobalAlignment,
    report: FitReport,
    clusters: Vec<ClusterEntry>,
}

fn columns(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn write_graph(graph: &NeighborGraph, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["from", "to", "weight"])?;
    for (i, adj) in graph.adjacency.iter().enumerate() {
        for &(j, wt) in adj {
            w.write_record([i.to_string(), j.to_string(), wt.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_graph(path: &Path, n: usize, floored_edges: usize, repair_edges: usize) -> Result<NeighborGraph> {
    let mut r = csv::Reader::from_path(path)?;
    let mut adjacency = vec![Vec::new(); n];
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |m: &str| Error::Format {
            row: line + 2,
            message: m.to_string(),
        };
        if rec.len() != 3 {
            return Err(bad("expected from,to,weight"));
        }
        let i: usize = rec[0].parse().map_err(|_| bad("bad node index"))?;
        let j: usize = rec[1].parse().map_err(|_| bad("bad node index"))?;
        let w: f64 = rec[2].parse().map_err(|_| bad("bad weight"))?;
        if i >= n || j >= n {
            return Err(bad("node index out of range"));
        }
        adjacency[i].push((j, w));
    }
    Ok(NeighborGraph {
        n,
        adjacency,
        floored_edges,
        repair_edges,
    })
}

impl FittedModel {
    /// Writes `manifest.json` plus per-cluster CSV matrices into `dir`.
    /// Geodesic matrices are rebuilt from the stored graphs on load.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut clusters = Vec::with_capacity(self.p());
        for (c, m) in self.models.iter().enumerate() {
            let id = c + 1;
            write_matrix_csv(&m.points, &columns("x", m.points.ncols()), dir.join(format!("cluster{id}_points.csv")))?;
            write_matrix_csv(&m.embedding, &columns("y", m.dim), dir.join(format!("cluster{id}_embedding.csv")))?;
            write_matrix_csv(&m.eigenvectors, &columns("v", m.dim), dir.join(format!("cluster{id}_eigenvectors.csv")))?;
            write_graph(&m.graph, &dir.join(format!("cluster{id}_graph.csv")))?;
            clusters.push(ClusterEntry {
                batch_indices: m.batch_indices.clone(),
                dim: m.dim,
                eigenvalues: m.eigenvalues.clone(),
                col_mean_sq: m.col_mean_sq.iter().copied().collect(),
                floored_edges: m.graph.floored_edges,
                repair_edges: m.graph.repair_edges,
                report: m.report.clone(),
            });
        }
        let manifest = Manifest {
            format: MODEL_FORMAT.to_string(),
            params: self.params.clone(),
            assignment: self.assignment.clone(),
            alignment: self.alignment.clone(),
            report: self.report.clone(),
            clusters,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format != MODEL_FORMAT {
            return Err(Error::Format {
                row: 0,
                message: format!("unsupported model format {:?}", manifest.format),
            });
        }
        let models = manifest
            .clusters
            .into_iter()
            .enumerate()
            .map(|(c, e)| {
                let id = c + 1;
                let (_, points) = read_matrix_csv(dir.join(format!("cluster{id}_points.csv")))?;
                let n = points.nrows();
                let read_cols = |name: &str| -> Result<DMatrix<f64>> {
                    let (_, m) = read_matrix_csv(dir.join(format!("cluster{id}_{name}.csv")))?;
                    if m.shape() != (n, e.dim) {
                        return Err(Error::contract(format!("cluster {id} {name} matrix has shape {:?}", m.shape())));
                    }
                    Ok(m)
                };
                let embedding = read_cols("embedding")?;
                let eigenvectors = read_cols("eigenvectors")?;
                let graph = read_graph(&dir.join(format!("cluster{id}_graph.csv")), n, e.floored_edges, e.repair_edges)?;
                let geodesics = geodesic_distances(&graph)?;
                ManifoldModel::from_parts(
                    e.batch_indices,
                    points,
                    graph,
                    geodesics,
                    embedding,
                    e.eigenvalues,
                    eigenvectors,
                    DVector::from_vec(e.col_mean_sq),
                    e.report,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        if models.len() != manifest.alignment.transforms.len() || models.len() != manifest.assignment.p {
            return Err(Error::contract("manifest cluster count does not match the alignment"));
        }
        Ok(FittedModel {
            params: manifest.params,
            assignment: manifest.assignment,
            models,
            alignment: manifest.alignment,
            report: manifest.report,
        })
    }
}
