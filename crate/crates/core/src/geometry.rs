//! Isomap building blocks: kNN graph, all-pairs geodesics, classical MDS and
//! spectral intrinsic-dimension estimation.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist, nearest_k, top_eigenpairs, Rows};

/// Edge weights between coincident samples are raised to this floor.
pub const MIN_EDGE_WEIGHT: f64 = 1e-12;
/// Eigenvalues below this fraction of the largest are treated as zero.
pub const EIGEN_ZERO: f64 = 1e-10;

/// Undirected weighted neighbor graph; `adjacency[i]` is sorted by neighbor index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub n: usize,
    pub adjacency: Vec<Vec<(usize, f64)>>,
    /// Edges whose Euclidean length was zero and got floored.
    pub floored_edges: usize,
    /// Edges added to join disconnected components.
    pub repair_edges: usize,
}

impl NeighborGraph {
    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    fn add_edge(&mut self, i: usize, j: usize, w: f64) {
        for (a, b) in [(i, j), (j, i)] {
            let list = &mut self.adjacency[a];
            match list.binary_search_by(|e| e.0.cmp(&b)) {
                Ok(pos) => list[pos].1 = w,
                Err(pos) => list.insert(pos, (b, w)),
            }
        }
    }

    /// Connected components (each sorted), largest first; ties by lowest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n];
        let mut comps = Vec::new();
        for s in 0..self.n {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            let mut comp = vec![s];
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        comps
    }
}

/// Directed kNN graph symmetrised by union; ties resolved towards lower indices.
pub fn knn_graph(points: &Rows, k: usize) -> Result<NeighborGraph> {
    let n = points.len();
    if k == 0 {
        return Err(Error::param("k must be >= 1"));
    }
    if n <= k {
        return Err(Error::param(format!("need more than k = {k} points, got {n}")));
    }
    let lists: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| nearest_k(points, points.row(i), k, Some(i)))
        .collect();
    let mut g = NeighborGraph {
        n,
        adjacency: vec![Vec::new(); n],
        floored_edges: 0,
        repair_edges: 0,
    };
    for (i, list) in lists.into_iter().enumerate() {
        for (j, d) in list {
            g.add_edge(i, j, d);
        }
    }
    for i in 0..n {
        for e in g.adjacency[i].iter_mut() {
            if e.1 < MIN_EDGE_WEIGHT {
                e.1 = MIN_EDGE_WEIGHT;
                if i < e.0 {
                    g.floored_edges += 1;
                }
            }
        }
    }
    Ok(g)
}

/// Joins components by their shortest inter-component Euclidean edge until
/// the graph is connected. Returns the number of edges added.
pub fn repair_connectivity(graph: &mut NeighborGraph, points: &Rows) -> usize {
    let mut added = 0;
    loop {
        let comps = graph.components();
        if comps.len() <= 1 {
            break;
        }
        let main = &comps[0];
        let mut in_main = vec![false; graph.n];
        main.iter().for_each(|&i| in_main[i] = true);
        let outside: Vec<usize> = (0..graph.n).filter(|&j| !in_main[j]).collect();
        let (i, j, d) = main
            .par_iter()
            .map(|&i| {
                outside
                    .iter()
                    .map(|&j| (i, j, dist(points.row(i), points.row(j))))
                    .min_by(|a, b| a.2.total_cmp(&b.2).then(a.1.cmp(&b.1)))
                    .expect("non-empty")
            })
            .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)))
            .expect("non-empty");
        graph.add_edge(i, j, d.max(MIN_EDGE_WEIGHT));
        added += 1;
    }
    graph.repair_edges += added;
    added
}

#[derive(Copy, Clone, PartialEq)]
struct Frontier {
    cost: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(graph: &NeighborGraph, source: usize) -> Vec<f64> {
    let mut best = vec![f64::INFINITY; graph.n];
    let mut heap = BinaryHeap::new();
    best[source] = 0.0;
    heap.push(Frontier { cost: 0.0, node: source });
    while let Some(Frontier { cost, node }) = heap.pop() {
        if cost > best[node] {
            continue;
        }
        for &(next, w) in &graph.adjacency[node] {
            let c = cost + w;
            if c < best[next] {
                best[next] = c;
                heap.push(Frontier { cost: c, node: next });
            }
        }
    }
    best
}

/// Exact all-pairs shortest paths (one Dijkstra run per source).
pub fn geodesic_distances(graph: &NeighborGraph) -> Result<DMatrix<f64>> {
    let comps = graph.components();
    if comps.len() > 1 {
        return Err(Error::Disconnected {
            sizes: comps.iter().map(Vec::len).collect(),
        });
    }
    let n = graph.n;
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|s| dijkstra(graph, s)).collect();
    // the two directions can differ in the last ulp; keep the smaller
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j].min(rows[j][i])))
}

/// Classical MDS result, with everything needed for out-of-sample projection.
#[derive(Debug, Clone)]
pub struct MdsFit {
    /// `n × d`, columns scaled by `√λ`.
    pub embedding: DMatrix<f64>,
    /// `d` eigenvalues, descending, negatives clipped to zero.
    pub eigenvalues: Vec<f64>,
    /// `n × d` unit eigenvectors of the centred Gram matrix.
    pub eigenvectors: DMatrix<f64>,
    /// Column means of the squared distance matrix.
    pub col_mean_sq: DVector<f64>,
    /// Number of requested dimensions without a positive eigenvalue (filled with zeros).
    pub zero_dims: usize,
}

fn check_distance_matrix(d: &DMatrix<f64>) -> Result<()> {
    if !d.is_square() {
        return Err(Error::contract("distance matrix must be square"));
    }
    let scale = d.amax().max(1.0);
    for i in 0..d.nrows() {
        if d[(i, i)].abs() > 1e-12 * scale {
            return Err(Error::contract(format!("non-zero diagonal at {i}")));
        }
        for j in 0..i {
            if (d[(i, j)] - d[(j, i)]).abs() > 1e-9 * scale || !d[(i, j)].is_finite() {
                return Err(Error::contract(format!("distance matrix not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Double-centred Gram matrix `B = −½ J D∘² J` and the column means of `D∘²`.
pub fn centered_gram(d: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = d.nrows();
    let sq = d.map(|v| v * v);
    let means = DVector::from_iterator(n, sq.column_iter().map(|c| c.mean()));
    let total = means.mean();
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - means[i] - means[j] + total));
    (b, means)
}

fn mds_from_pairs(values: &[f64], vectors: &DMatrix<f64>, means: DVector<f64>, dim: usize) -> MdsFit {
    let n = vectors.nrows();
    let lmax = values.first().copied().unwrap_or(0.0).max(0.0);
    let mut eigenvalues = Vec::with_capacity(dim);
    let mut eigenvectors = DMatrix::zeros(n, dim);
    let mut embedding = DMatrix::zeros(n, dim);
    let mut zero_dims = 0;
    for a in 0..dim {
        let lambda = values.get(a).copied().unwrap_or(0.0);
        if a < vectors.ncols() && lambda > EIGEN_ZERO * lmax && lambda > 0.0 {
            eigenvalues.push(lambda);
            eigenvectors.set_column(a, &vectors.column(a));
            embedding.set_column(a, &(vectors.column(a) * lambda.sqrt()));
        } else {
            eigenvalues.push(0.0);
            zero_dims += 1;
        }
    }
    MdsFit {
        embedding,
        eigenvalues,
        eigenvectors,
        col_mean_sq: means,
        zero_dims,
    }
}

/// Embeds a distance matrix into `dim` dimensions with classical MDS.
pub fn classical_mds(d: &DMatrix<f64>, dim: usize) -> Result<MdsFit> {
    if dim == 0 {
        return Err(Error::param("embedding dimension must be >= 1"));
    }
    check_distance_matrix(d)?;
    let (b, means) = centered_gram(d);
    let pairs = top_eigenpairs(&b, dim);
    let fit = mds_from_pairs(&pairs.values, &pairs.vectors, means, dim);
    if fit.zero_dims > 0 {
        log::warn!("classical MDS: {} of {dim} dimensions have no positive eigenvalue", fit.zero_dims);
    }
    Ok(fit)
}

/// Dimension at the largest ratio between consecutive positive eigenvalues
/// (an exact drop to zero counts as an infinite ratio), capped at `max_dim`.
pub fn dim_from_spectrum(values: &[f64], max_dim: usize) -> usize {
    let lmax = values.first().copied().unwrap_or(0.0);
    if lmax <= 0.0 {
        return 1;
    }
    let positive: Vec<f64> = values.iter().copied().take_while(|&l| l > EIGEN_ZERO * lmax).collect();
    let q = positive.len();
    let mut best = (1usize, 0.0f64);
    for i in 1..=q {
        let ratio = if i < q {
            positive[i - 1] / positive[i]
        } else if q < values.len() {
            f64::INFINITY
        } else {
            // the next eigenvalue was not computed
            continue;
        };
        if ratio > best.1 {
            best = (i, ratio);
        }
    }
    best.0.clamp(1, max_dim.max(1))
}

/// Estimates intrinsic dimension from the spectrum of the centred Gram matrix
/// of a geodesic distance matrix.
pub fn estimate_intrinsic_dim(g: &DMatrix<f64>, max_dim: usize) -> Result<usize> {
    check_distance_matrix(g)?;
    let (b, _) = centered_gram(g);
    let pairs = top_eigenpairs(&b, (max_dim + 1).min(g.nrows()));
    Ok(dim_from_spectrum(&pairs.values, max_dim))
}

/// Diagnostics gathered while fitting one manifold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub floored_edges: usize,
    pub repair_edges: usize,
    pub zero_dims: usize,
    /// Leading eigenvalues inspected by the dimension estimate.
    pub spectrum: Vec<f64>,
}

impl ModelReport {
    pub fn clean(&self) -> bool {
        self.floored_edges == 0 && self.repair_edges == 0 && self.zero_dims == 0
    }
}

/// One cluster's learned manifold.
#[derive(Debug, Clone)]
pub struct ManifoldModel {
    /// Row indices of the cluster's samples in the batch.
    pub batch_indices: Vec<usize>,
    /// `n_i × D` ambient coordinates.
    pub points: DMatrix<f64>,
    pub graph: NeighborGraph,
    /// `n_i × n_i` geodesic distances.
    pub geodesics: DMatrix<f64>,
    pub dim: usize,
    /// `n_i × dim` low-dimensional embedding.
    pub embedding: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub col_mean_sq: DVector<f64>,
    pub report: ModelReport,
    pub(crate) rows: Rows,
}

impl ManifoldModel {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn rows(&self) -> &Rows {
        &self.rows
    }

    /// Reassembles a model from stored parts (used when loading from disk).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        batch_indices: Vec<usize>,
        points: DMatrix<f64>,
        graph: NeighborGraph,
        geodesics: DMatrix<f64>,
        embedding: DMatrix<f64>,
        eigenvalues: Vec<f64>,
        eigenvectors: DMatrix<f64>,
        col_mean_sq: DVector<f64>,
        report: ModelReport,
    ) -> Result<Self> {
        let n = points.nrows();
        let dim = embedding.ncols();
        if batch_indices.len() != n
            || geodesics.shape() != (n, n)
            || embedding.nrows() != n
            || eigenvectors.shape() != (n, dim)
            || eigenvalues.len() != dim
            || col_mean_sq.len() != n
            || graph.n != n
        {
            return Err(Error::contract("inconsistent manifold model shapes"));
        }
        let rows = Rows::from_matrix(&points);
        Ok(ManifoldModel {
            batch_indices,
            points,
            graph,
            geodesics,
            dim,
            embedding,
            eigenvalues,
            eigenvectors,
            col_mean_sq,
            report,
            rows,
        })
    }
}

/// Upper bound on the number of eigenvalues inspected for dimension estimation.
pub const SPECTRUM_WINDOW: usize = 20;

/// Isomap on one cluster: kNN graph (repaired if disconnected), geodesics,
/// intrinsic dimension (unless overridden) and classical MDS.
pub fn isomap(points: &DMatrix<f64>, batch_indices: Vec<usize>, k: usize, dim_override: Option<usize>) -> Result<ManifoldModel> {
    let n = points.nrows();
    if batch_indices.len() != n {
        return Err(Error::contract("one batch index per cluster sample required"));
    }
    if n <= k {
        return Err(Error::param(format!("cluster of {n} samples is too small for k = {k}")));
    }
    if dim_override == Some(0) {
        return Err(Error::param("dimension override must be >= 1"));
    }
    let rows = Rows::from_matrix(points);
    let mut graph = knn_graph(&rows, k)?;
    let repairs = repair_connectivity(&mut graph, &rows);
    if repairs > 0 {
        log::warn!("neighbor graph of {n} samples needed {repairs} repair edge(s)");
    }
    let geodesics = geodesic_distances(&graph)?;
    let (b, means) = centered_gram(&geodesics);
    let window = points.ncols().min(SPECTRUM_WINDOW).min(n - 1);
    let want = (window + 1).max(dim_override.unwrap_or(0)).min(n);
    let pairs = top_eigenpairs(&b, want);
    let dim = dim_override.unwrap_or_else(|| dim_from_spectrum(&pairs.values, window.max(1)));
    let fit = mds_from_pairs(&pairs.values, &pairs.vectors, means, dim);
    let report = ModelReport {
        floored_edges: graph.floored_edges,
        repair_edges: graph.repair_edges,
        zero_dims: fit.zero_dims,
        spectrum: pairs.values.iter().take(window + 1).copied().collect(),
    };
    Ok(ManifoldModel {
        batch_indices,
        points: points.clone(),
        graph,
        geodesics,
        dim,
        embedding: fit.embedding,
        eigenvalues: fit.eigenvalues,
        eigenvectors: fit.eigenvectors,
        col_mean_sq: fit.col_mean_sq,
        report,
        rows,
    })
}
