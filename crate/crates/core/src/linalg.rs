//! Small dense linear-algebra and neighbor-search helpers shared by the
//! pipeline stages.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Row-major copy of an `n × D` sample matrix for cache-friendly distance loops.
#[derive(Debug, Clone)]
pub struct Rows {
    data: Vec<f64>,
    dim: usize,
}

impl Rows {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (n, dim) = m.shape();
        let mut data = Vec::with_capacity(n * dim);
        for i in 0..n {
            data.extend(m.row(i).iter());
        }
        Rows { data, dim }
    }

    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut data = Vec::new();
        for r in rows {
            debug_assert_eq!(r.len(), dim);
            data.extend_from_slice(r);
        }
        Rows { data, dim }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn subset(&self, idx: &[usize]) -> Rows {
        Rows::from_rows(idx.iter().map(|&i| self.row(i)), self.dim)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.data)
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Orders `(index, distance)` pairs by distance, then by index.
#[inline]
fn by_dist_then_index(a: &(usize, f64), b: &(usize, f64)) -> std::cmp::Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

/// The `k` nearest rows to `query` (Euclidean), nearest first; ties broken by
/// lower index. `exclude` removes one row from consideration.
pub fn nearest_k(rows: &Rows, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
    let mut cand: Vec<(usize, f64)> = (0..rows.len())
        .filter(|&j| Some(j) != exclude)
        .map(|j| (j, sq_dist(query, rows.row(j))))
        .collect();
    let k = k.min(cand.len());
    if k == 0 {
        return Vec::new();
    }
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, by_dist_then_index);
        cand.truncate(k);
    }
    cand.sort_by(by_dist_then_index);
    cand.into_iter().map(|(j, d2)| (j, d2.sqrt())).collect()
}

/// k-nearest-neighbor lists for every row (self excluded).
pub fn knn_lists(rows: &Rows, k: usize) -> Vec<Vec<(usize, f64)>> {
    (0..rows.len())
        .into_par_iter()
        .map(|i| nearest_k(rows, rows.row(i), k, Some(i)))
        .collect()
}

/// Full Euclidean distance matrix.
pub fn distance_matrix(rows: &Rows) -> DMatrix<f64> {
    let n = rows.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| (0..n).map(|i| dist(rows.row(i), rows.row(j))).collect())
        .collect();
    DMatrix::from_fn(n, n, |i, j| cols[j][i])
}

/// Leading eigenpairs of a symmetric matrix, ordered by descending eigenvalue.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    /// `n × k`, column `a` pairs with `values[a]`.
    pub vectors: DMatrix<f64>,
}

const DENSE_EIGEN_LIMIT: usize = 600;
const RESIDUAL_TOL: f64 = 1e-12;
const MAX_SUBSPACE_ITERS: usize = 3000;

/// Top-`k` eigenpairs (largest algebraic eigenvalues) of the symmetric matrix `a`.
///
/// Small matrices go through a full dense decomposition; larger ones use
/// block subspace iteration with Rayleigh-Ritz extraction, stopped when every
/// requested residual `‖A v − θ v‖` falls below `1e-12 · |θ_max|`.
pub fn top_eigenpairs(a: &DMatrix<f64>, k: usize) -> EigenPairs {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigenproblem needs a square matrix");
    let k = k.min(n);
    if k == 0 {
        return EigenPairs {
            values: Vec::new(),
            vectors: DMatrix::zeros(n, 0),
        };
    }
    if n <= DENSE_EIGEN_LIMIT {
        return dense_top(a, k);
    }
    let mut block = (2 * k).max(k + 12).min(n);
    loop {
        if let Some(pairs) = subspace_iteration(a, k, block) {
            return pairs;
        }
        if block >= n / 4 {
            log::warn!("subspace iteration did not converge (n = {n}); falling back to dense eigensolver");
            return dense_top(a, k);
        }
        block = (block * 2).min(n);
    }
}

fn dense_top(a: &DMatrix<f64>, k: usize) -> EigenPairs {
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    order.truncate(k);
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(a.nrows(), k, |r, c| eig.eigenvectors[(r, order[c])]);
    EigenPairs {
        values,
        vectors: canonical_signs(vectors),
    }
}

/// Flips each column so that its largest-magnitude entry is positive.
fn canonical_signs(mut v: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in v.column_iter_mut() {
        let mut best = 0.0f64;
        for x in col.iter() {
            if x.abs() > best.abs() + 1e-12 {
                best = *x;
            }
        }
        if best < 0.0 {
            col.neg_mut();
        }
    }
    v
}

fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

fn subspace_iteration(a: &DMatrix<f64>, k: usize, block: usize) -> Option<EigenPairs> {
    let n = a.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_e16e_u64 ^ n as u64);
    let start = DMatrix::from_fn(n, block, |_, _| rng.random::<f64>() - 0.5);
    let mut q = orthonormalize(start);
    for _ in 0..MAX_SUBSPACE_ITERS {
        let z = a * &q;
        let mut h = q.transpose() * &z;
        h = (&h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..block).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
        let w = DMatrix::from_fn(block, block, |r, c| eig.eigenvectors[(r, order[c])]);
        let theta: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let x = &q * &w;
        let ax = &z * &w;
        let scale = theta.iter().fold(0.0f64, |m, t| m.max(t.abs())).max(f64::MIN_POSITIVE);
        let converged = (0..k).all(|c| {
            let r = ax.column(c) - x.column(c) * theta[c];
            r.norm() <= RESIDUAL_TOL * scale
        });
        if converged {
            let vectors = x.columns(0, k).into_owned();
            return Some(EigenPairs {
                values: theta[..k].to_vec(),
                vectors: canonical_signs(vectors),
            });
        }
        q = orthonormalize(ax);
    }
    None
}

/// Column means of a matrix.
pub fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows().max(1) as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}
