//! Tangent-plane similarity and breadth-first region growing: samples join a
//! cluster through nearest-neighbor links whose tangent planes agree.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::PointCloud;
use crate::error::{Error, Result};
use crate::linalg::{knn_lists, sq_dist, Rows};
use crate::msvd::{msvd, MsvdParams, TangentBasis};

/// Similarities within this slack of the threshold still pass it.
const SIM_SLACK: f64 = 1e-9;
const ORTHONORMAL_TOL: f64 = 1e-6;

/// How two tangent planes are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimMode {
    /// Mean cosine of the principal angles between the two planes.
    L1,
    /// Root-mean-square cosine of the principal angles.
    L2,
    /// Basis-free cosine of the angle between subspaces (determinant form).
    HG,
}

impl SimMode {
    pub const ALL: [SimMode; 3] = [SimMode::L1, SimMode::L2, SimMode::HG];

    /// Default threshold for this mode.
    pub fn default_epsilon(self) -> f64 {
        match self {
            SimMode::L1 | SimMode::L2 => 0.989,
            SimMode::HG => 0.978,
        }
    }
}

impl fmt::Display for SimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimMode::L1 => "L1",
            SimMode::L2 => "L2",
            SimMode::HG => "HG",
        })
    }
}

impl FromStr for SimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "L1" => Ok(SimMode::L1),
            "L2" => Ok(SimMode::L2),
            "HG" => Ok(SimMode::HG),
            _ => Err(Error::param(format!("unknown similarity mode '{s}' (expected L1, L2 or HG)"))),
        }
    }
}

fn check_orthonormal(b: &DMatrix<f64>) -> Result<()> {
    let g = b.transpose() * b;
    let err = (g - DMatrix::identity(b.ncols(), b.ncols())).amax();
    if err > ORTHONORMAL_TOL {
        return Err(Error::contract(format!("tangent basis is not orthonormal (error {err:.2e})")));
    }
    Ok(())
}

/// Similarity of two tangent planes given as `D × d` orthonormal bases.
pub fn sim(a: &TangentBasis, b: &TangentBasis, mode: SimMode) -> Result<f64> {
    sim_bases(&a.basis, &b.basis, mode)
}

/// [`sim`] on raw basis matrices.
pub fn sim_bases(a: &DMatrix<f64>, b: &DMatrix<f64>, mode: SimMode) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::contract(format!(
            "bases live in R^{} and R^{}",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.ncols() == 0 || b.ncols() == 0 {
        return Err(Error::contract("empty tangent basis"));
    }
    check_orthonormal(a)?;
    check_orthonormal(b)?;
    Ok(sim_unchecked(a, b, mode))
}

pub(crate) fn sim_unchecked(a: &DMatrix<f64>, b: &DMatrix<f64>, mode: SimMode) -> f64 {
    match mode {
        SimMode::L1 | SimMode::L2 => {
            // leading min(d_i, d_j) vectors, paired along the principal
            // vectors of the two planes: the paired cosines are the singular
            // values of aᵀb
            let k = a.ncols().min(b.ncols());
            let sv = (a.columns(0, k).transpose() * b.columns(0, k)).singular_values();
            match mode {
                SimMode::L1 => sv.sum() / k as f64,
                _ => (sv.norm_squared() / k as f64).sqrt(),
            }
        }
        SimMode::HG => {
            let (small, big) = if a.ncols() <= b.ncols() { (a, b) } else { (b, a) };
            let n = small.transpose() * big;
            if n.is_square() {
                n.determinant().abs()
            } else {
                (&n * n.transpose()).determinant().max(0.0).sqrt()
            }
        }
    }
}

/// Final clustering: labels are 1-based and `members[c]` lists the samples of
/// cluster `c + 1` in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<u32>,
    pub p: usize,
    pub members: Vec<Vec<usize>>,
    /// Clusters produced by region growing before small ones were merged.
    pub raw_clusters: usize,
    /// Shared tangent-estimation radius.
    pub scale: f64,
}

impl ClusterAssignment {
    /// Builds the assignment from final 1-based labels.
    pub fn from_labels(labels: Vec<u32>) -> Result<Self> {
        if labels.contains(&0) {
            return Err(Error::contract("unassigned sample in final labels"));
        }
        let p = labels.iter().copied().max().unwrap_or(0) as usize;
        let mut members = vec![Vec::new(); p];
        for (i, &l) in labels.iter().enumerate() {
            members[l as usize - 1].push(i);
        }
        if members.iter().any(Vec::is_empty) {
            return Err(Error::contract("cluster labels are not contiguous"));
        }
        Ok(ClusterAssignment {
            labels,
            p,
            members,
            raw_clusters: p,
            scale: 0.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub epsilon: f64,
    pub knn: usize,
    pub mode: SimMode,
    pub msvd: MsvdParams,
    pub seed: u64,
    /// Clusters smaller than this are merged; `None` means `max(10, n / 100)`.
    pub min_size: Option<usize>,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            epsilon: SimMode::L1.default_epsilon(),
            knn: 8,
            mode: SimMode::L1,
            msvd: MsvdParams::default(),
            seed: 0,
            min_size: None,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::param(format!("epsilon must lie in (0, 1], got {}", self.epsilon)));
        }
        if self.knn == 0 {
            return Err(Error::param("knn must be >= 1"));
        }
        self.msvd.validate()
    }

    pub fn min_size_for(&self, n: usize) -> usize {
        self.min_size.unwrap_or_else(|| (n / 100).max(10))
    }
}

/// Neighbor lists and tangent bases that region growing walks over.
#[derive(Debug, Clone)]
pub struct TangentGraph {
    pub neighbors: Vec<Vec<usize>>,
    pub bases: Vec<TangentBasis>,
}

impl TangentGraph {
    pub fn new(batch: &PointCloud, bases: Vec<TangentBasis>, knn: usize) -> Result<Self> {
        if bases.len() != batch.len() {
            return Err(Error::contract(format!(
                "{} tangent bases for {} samples",
                bases.len(),
                batch.len()
            )));
        }
        let rows = Rows::from_matrix(&batch.points);
        let neighbors = knn_lists(&rows, knn)
            .into_iter()
            .map(|l| l.into_iter().map(|p| p.0).collect())
            .collect();
        Ok(TangentGraph { neighbors, bases })
    }
}

/// Grows cluster `index` from a random unlabeled seed. A neighbor joins when
/// it is unlabeled and its tangent plane scores at least `epsilon` against
/// the frontier sample it was reached from. Returns the members in the
/// order they joined.
pub fn grow_cluster(
    graph: &TangentGraph,
    labels: &mut [u32],
    index: u32,
    epsilon: f64,
    mode: SimMode,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if labels.len() != graph.bases.len() {
        return Err(Error::contract("labels and bases differ in length"));
    }
    if index == 0 {
        return Err(Error::contract("cluster index must be >= 1"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::param(format!("epsilon must be positive, got {epsilon}")));
    }
    let unlabeled: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if unlabeled.is_empty() {
        return Err(Error::contract("no unlabeled samples left to seed a cluster"));
    }
    let seed = unlabeled[rng.random_range(0..unlabeled.len())];
    labels[seed] = index;
    let mut cluster = vec![seed];
    let mut frontier = vec![seed];
    while !frontier.is_empty() {
        let mut fresh = Vec::new();
        for &i in &frontier {
            for &j in &graph.neighbors[i] {
                if labels[j] != 0 {
                    continue;
                }
                let s = sim_unchecked(&graph.bases[i].basis, &graph.bases[j].basis, mode);
                if s >= epsilon - SIM_SLACK {
                    labels[j] = index;
                    fresh.push(j);
                }
            }
        }
        cluster.extend_from_slice(&fresh);
        frontier = fresh;
    }
    Ok(cluster)
}

/// Full tangent manifold clustering of a batch: tangent bases, repeated
/// region growing until every sample is labeled, then merging of clusters
/// below the minimum size into the nearest larger one (by centroid).
pub fn find_clusters(batch: &PointCloud, params: &ClusterParams) -> Result<ClusterAssignment> {
    params.validate()?;
    let ms = msvd(batch, &params.msvd)?;
    let graph = TangentGraph::new(batch, ms.bases, params.knn)?;
    let mut assignment = cluster_graph(batch, &graph, params)?;
    assignment.scale = ms.scale;
    Ok(assignment)
}

/// Region growing and merging on precomputed bases.
pub fn cluster_graph(batch: &PointCloud, graph: &TangentGraph, params: &ClusterParams) -> Result<ClusterAssignment> {
    let n = batch.len();
    let mut labels = vec![0u32; n];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    while labels.contains(&0) {
        let index = clusters.len() as u32 + 1;
        clusters.push(grow_cluster(graph, &mut labels, index, params.epsilon, params.mode, &mut rng)?);
    }
    let raw = clusters.len();
    let merged = merge_small(batch, clusters, params.min_size_for(n));
    let mut assignment = ClusterAssignment::from_labels(merged)?;
    assignment.raw_clusters = raw;
    Ok(assignment)
}

/// Folds every cluster smaller than `min_size` into the large cluster with
/// the nearest centroid and renumbers the survivors in creation order.
fn merge_small(batch: &PointCloud, clusters: Vec<Vec<usize>>, min_size: usize) -> Vec<u32> {
    let rows = Rows::from_matrix(&batch.points);
    let dim = rows.dim();
    let centroid = |members: &[usize]| {
        let mut c = vec![0.0; dim];
        for &i in members {
            for (a, v) in c.iter_mut().zip(rows.row(i)) {
                *a += v;
            }
        }
        c.iter_mut().for_each(|v| *v /= members.len() as f64);
        c
    };
    let mut large: Vec<usize> = (0..clusters.len()).filter(|&c| clusters[c].len() >= min_size).collect();
    if large.is_empty() {
        let biggest = (0..clusters.len())
            .max_by(|&a, &b| clusters[a].len().cmp(&clusters[b].len()).then(b.cmp(&a)))
            .expect("at least one cluster");
        large.push(biggest);
    }
    let centroids: Vec<Vec<f64>> = large.iter().map(|&c| centroid(&clusters[c])).collect();
    let mut labels = vec![0u32; rows.len()];
    for (c, members) in clusters.iter().enumerate() {
        let target = match large.iter().position(|&l| l == c) {
            Some(pos) => pos,
            None => {
                let mine = centroid(members);
                (0..large.len())
                    .min_by(|&a, &b| {
                        sq_dist(&mine, &centroids[a])
                            .total_cmp(&sq_dist(&mine, &centroids[b]))
                            .then(a.cmp(&b))
                    })
                    .expect("non-empty")
            }
        };
        for &i in members {
            labels[i] = target as u32 + 1;
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use std::f64::consts::PI;

    fn e(dim: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(dim);
        v[i] = 1.0;
        v
    }

    fn basis(cols: &[DVector<f64>]) -> DMatrix<f64> {
        DMatrix::from_columns(cols)
    }

    #[test]
    fn identical_subspaces_score_one() {
        let a = basis(&[e(3, 0), e(3, 1)]);
        for mode in SimMode::ALL {
            assert!((sim_bases(&a, &a, mode).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_subspaces_score_zero() {
        let a = basis(&[e(4, 0), e(4, 1)]);
        let b = basis(&[e(4, 2), e(4, 3)]);
        for mode in SimMode::ALL {
            assert!(sim_bases(&a, &b, mode).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn sixty_degree_tilt() {
        let th = PI / 3.0;
        let a = basis(&[e(3, 0), e(3, 1)]);
        let b = basis(&[e(3, 0), e(3, 1) * th.cos() + e(3, 2) * th.sin()]);
        assert!((sim_bases(&a, &b, SimMode::HG).unwrap() - 0.5).abs() < 1e-12);
        assert!((sim_bases(&a, &b, SimMode::L1).unwrap() - 0.75).abs() < 1e-12);
        assert!((sim_bases(&a, &b, SimMode::L2).unwrap() - 0.625f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mixed_dimensions_use_the_smaller_subspace() {
        let line = basis(&[e(3, 0)]);
        let plane = basis(&[e(3, 0), e(3, 1)]);
        let hg = sim_bases(&line, &plane, SimMode::HG).unwrap();
        assert!((hg - 1.0).abs() < 1e-12);
        assert_eq!(hg, sim_bases(&plane, &line, SimMode::HG).unwrap());
        assert!((sim_bases(&line, &plane, SimMode::L1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_orthonormal_basis_is_rejected() {
        let a = basis(&[e(3, 0) * 2.0]);
        assert!(matches!(sim_bases(&a, &a, SimMode::L1), Err(Error::Contract(_))));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("l1".parse::<SimMode>().unwrap(), SimMode::L1);
        assert_eq!("HG".parse::<SimMode>().unwrap(), SimMode::HG);
        assert!("L3".parse::<SimMode>().is_err());
    }

    fn flat_graph(n: usize, seed: u64) -> (PointCloud, TangentGraph) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), 0.0])
            .collect();
        let batch = PointCloud::from_rows(&rows).unwrap();
        let ms = msvd(&batch, &MsvdParams::default()).unwrap();
        let graph = TangentGraph::new(&batch, ms.bases, 8).unwrap();
        (batch, graph)
    }

    #[test]
    fn one_plane_is_labelled_by_a_single_growth() {
        let (_, graph) = flat_graph(200, 1);
        let mut labels = vec![0; 200];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let members = grow_cluster(&graph, &mut labels, 1, 0.5, SimMode::HG, &mut rng).unwrap();
        assert_eq!(members.len(), 200);
        assert!(labels.iter().all(|&l| l == 1));
        assert!(matches!(
            grow_cluster(&graph, &mut labels, 2, 0.5, SimMode::HG, &mut rng),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn unreachable_threshold_keeps_only_the_seed() {
        let (_, graph) = flat_graph(60, 2);
        let mut labels = vec![0; 60];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let members = grow_cluster(&graph, &mut labels, 1, 1.5, SimMode::HG, &mut rng).unwrap();
        assert_eq!(members.len(), 1);
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 1);
    }

    #[test]
    fn single_plane_is_one_cluster() {
        let (batch, _) = flat_graph(300, 3);
        let params = ClusterParams {
            mode: SimMode::HG,
            epsilon: 0.9,
            ..Default::default()
        };
        let a = find_clusters(&batch, &params).unwrap();
        assert_eq!(a.p, 1);
        assert_eq!(a.members[0].len(), 300);
    }

    #[test]
    fn separated_planes_are_two_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for k in 0..2 {
            for _ in 0..150 {
                let (a, b) = (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
                rows.push(if k == 0 { vec![a, b, 0.0] } else { vec![a + 20.0, 3.0, b] });
                truth.push(k as u32 + 1);
            }
        }
        let batch = PointCloud::from_rows(&rows).unwrap();
        for eps in [0.3, 0.8, 1.0] {
            let params = ClusterParams {
                mode: SimMode::HG,
                epsilon: eps,
                knn: 5,
                ..Default::default()
            };
            let a = find_clusters(&batch, &params).unwrap();
            assert_eq!(a.p, 2, "epsilon {eps}");
            let first = a.labels[0];
            for (l, t) in a.labels.iter().zip(&truth) {
                assert_eq!(*l == first, *t == 1);
            }
        }
    }

    #[test]
    fn clustering_is_deterministic_and_a_partition() {
        let (batch, _) = flat_graph(250, 9);
        let params = ClusterParams {
            seed: 17,
            ..Default::default()
        };
        let a = find_clusters(&batch, &params).unwrap();
        let b = find_clusters(&batch, &params).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.members.concat();
        all.sort_unstable();
        assert_eq!(all, (0..250).collect::<Vec<_>>());
        assert!(a.labels.iter().all(|&l| l >= 1 && l as usize <= a.p));
    }

    #[test]
    fn params_validation() {
        let bad = ClusterParams {
            epsilon: 1.5,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Parameter(_))));
    }
}
