//! Stitching per-cluster embeddings into one global space.
//!
//! Nearest and farthest cross-cluster pairs form a support set, the support
//! set is embedded with classical MDS, and each cluster gets a ridge-regularised
//! affine map `y ↦ R y + t` fitted on its support members.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{classical_mds, ManifoldModel};
use crate::linalg::{dist, distance_matrix, Rows};

/// One support point: which cluster, which row inside it, which batch row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportMember {
    pub cluster: usize,
    pub local: usize,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    pub members: Vec<SupportMember>,
    /// `|ξ| × D` ambient coordinates of the members.
    pub coords: DMatrix<f64>,
    /// For each cluster, positions in `members` belonging to it.
    pub per_cluster: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct CrossPair {
    d: f64,
    a: usize,
    b: usize,
}

fn ascending(x: &CrossPair, y: &CrossPair) -> std::cmp::Ordering {
    x.d.total_cmp(&y.d).then(x.a.cmp(&y.a)).then(x.b.cmp(&y.b))
}

fn descending(x: &CrossPair, y: &CrossPair) -> std::cmp::Ordering {
    y.d.total_cmp(&x.d).then(x.a.cmp(&y.a)).then(x.b.cmp(&y.b))
}

/// Keeps the first `count` pairs under `order` from a candidate list.
fn keep_best(mut v: Vec<CrossPair>, count: usize, order: fn(&CrossPair, &CrossPair) -> std::cmp::Ordering) -> Vec<CrossPair> {
    if count == 0 {
        return Vec::new();
    }
    if v.len() > count {
        v.select_nth_unstable_by(count - 1, order);
        v.truncate(count);
    }
    v.sort_by(order);
    v
}

/// `k` closest and `l` farthest pairs between two clusters, in that order.
fn extreme_pairs(a: &Rows, b: &Rows, k: usize, l: usize) -> (Vec<CrossPair>, Vec<CrossPair>) {
    let per_row: Vec<(Vec<CrossPair>, Vec<CrossPair>)> = (0..a.len())
        .into_par_iter()
        .map(|i| {
            let all: Vec<CrossPair> = (0..b.len())
                .map(|j| CrossPair {
                    d: dist(a.row(i), b.row(j)),
                    a: i,
                    b: j,
                })
                .collect();
            (keep_best(all.clone(), k, ascending), keep_best(all, l, descending))
        })
        .collect();
    let (near, far): (Vec<_>, Vec<_>) = per_row.into_iter().unzip();
    (
        keep_best(near.concat(), k, ascending),
        keep_best(far.concat(), l, descending),
    )
}

/// Support set from the `k` nearest and `l` farthest cross pairs of every
/// unordered cluster pair. Members are deduplicated, first occurrence kept.
pub fn support_set(models: &[ManifoldModel], k: usize, l: usize) -> Result<SupportSet> {
    let p = models.len();
    if p < 2 {
        return Err(Error::param("a support set needs at least two clusters"));
    }
    if k + l == 0 {
        return Err(Error::param("k + l must be >= 1"));
    }
    let mut members: Vec<SupportMember> = Vec::new();
    let mut push = |cluster: usize, local: usize| {
        if !members.iter().any(|m| m.cluster == cluster && m.local == local) {
            members.push(SupportMember {
                cluster,
                local,
                batch: models[cluster].batch_indices[local],
            });
        }
    };
    for i in 0..p {
        for j in i + 1..p {
            let (near, far) = extreme_pairs(models[i].rows(), models[j].rows(), k, l);
            for pair in near.iter().chain(&far) {
                push(i, pair.a);
                push(j, pair.b);
            }
        }
    }
    let dim = models[0].points.ncols();
    let coords = DMatrix::from_fn(members.len(), dim, |r, c| models[members[r].cluster].points[(members[r].local, c)]);
    let mut per_cluster = vec![Vec::new(); p];
    for (pos, m) in members.iter().enumerate() {
        per_cluster[m.cluster].push(pos);
    }
    Ok(SupportSet {
        members,
        coords,
        per_cluster,
    })
}

/// Classical MDS of the support members' ambient Euclidean distances.
pub fn global_embed_support(support: &SupportSet, d_global: usize) -> Result<DMatrix<f64>> {
    let m = support.members.len();
    if d_global == 0 {
        return Err(Error::param("global dimension must be >= 1"));
    }
    if m < d_global + 1 {
        return Err(Error::param(format!(
            "support set of {m} members cannot anchor a {d_global}-dimensional global space"
        )));
    }
    let d = distance_matrix(&Rows::from_matrix(&support.coords));
    Ok(classical_mds(&d, d_global)?.embedding)
}

/// Ridge least squares `[R | t] = GE Aᵀ (A Aᵀ + λI)⁻¹` with `A = [LDE; 1ᵀ]`.
///
/// `lde` is `d_j × m` (support members as columns), `ge` is `d_global × m`.
pub fn solve_transform(lde: &DMatrix<f64>, ge: &DMatrix<f64>, lambda: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (dj, m) = lde.shape();
    if m == 0 {
        return Err(Error::param("no support members for this cluster"));
    }
    if ge.ncols() != m {
        return Err(Error::contract(format!("{} targets for {m} support members", ge.ncols())));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param(format!("lambda must be >= 0, got {lambda}")));
    }
    let a = DMatrix::from_fn(dj + 1, m, |r, c| if r < dj { lde[(r, c)] } else { 1.0 });
    let mut s = &a * a.transpose();
    for i in 0..=dj {
        s[(i, i)] += lambda;
    }
    let rhs = &a * ge.transpose();
    let m_t = if lambda > 0.0 {
        s.clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .or_else(|| s.clone().lu().solve(&rhs))
    } else {
        let sv = s.singular_values();
        let (hi, lo) = (sv.max(), sv.min());
        if lo <= 1e-12 * hi.max(f64::MIN_POSITIVE) {
            None
        } else {
            s.clone().lu().solve(&rhs)
        }
    }
    .ok_or_else(|| Error::Singular("A Aᵀ is not invertible for this support slice; use lambda > 0".into()))?;
    let full = m_t.transpose();
    let r = full.columns(0, dj).into_owned();
    let t = full.column(dj).into_owned();
    Ok((r, t))
}

/// `R y + t`.
pub fn apply_transform(y: &DVector<f64>, r: &DMatrix<f64>, t: &DVector<f64>) -> Result<DVector<f64>> {
    if r.ncols() != y.len() || r.nrows() != t.len() {
        return Err(Error::contract(format!(
            "transform {}x{} with offset {} cannot map a {}-vector",
            r.nrows(),
            r.ncols(),
            t.len(),
            y.len()
        )));
    }
    Ok(r * y + t)
}

/// Mean of a cluster's embedding after mapping it into the global space.
pub fn manifold_mean(model: &ManifoldModel, r: &DMatrix<f64>, t: &DVector<f64>) -> Result<DVector<f64>> {
    if r.ncols() != model.dim || r.nrows() != t.len() {
        return Err(Error::contract("transform shape does not match the model"));
    }
    let n = model.len().max(1) as f64;
    let mean_local = DVector::from_iterator(model.dim, model.embedding.column_iter().map(|c| c.sum() / n));
    Ok(r * mean_local + t)
}

/// Affine map of one cluster into the global space, plus its global mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTransform {
    /// `d_global × d_j`.
    pub rotation: DMatrix<f64>,
    pub translation: DVector<f64>,
    pub mean: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalAlignment {
    pub d_global: usize,
    pub support: Option<SupportSet>,
    /// `|ξ| × d_global` global coordinates of the support members.
    pub support_embedding: DMatrix<f64>,
    pub transforms: Vec<ClusterTransform>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StitchParams {
    pub k: usize,
    pub l: usize,
    pub lambda: f64,
    /// Global dimension; `None` means the largest cluster dimension.
    pub d_global: Option<usize>,
}

impl Default for StitchParams {
    fn default() -> Self {
        StitchParams {
            k: 8,
            l: 1,
            lambda: 0.01,
            d_global: None,
        }
    }
}

/// Builds the global alignment of all cluster models. A single cluster maps
/// through the (padded) identity.
pub fn align(models: &[ManifoldModel], params: &StitchParams) -> Result<GlobalAlignment> {
    if models.is_empty() {
        return Err(Error::contract("no cluster models to align"));
    }
    let d_global = params
        .d_global
        .unwrap_or_else(|| models.iter().map(|m| m.dim).max().unwrap_or(1));
    if d_global == 0 {
        return Err(Error::param("global dimension must be >= 1"));
    }
    if models.len() == 1 {
        let m = &models[0];
        let r = DMatrix::from_fn(d_global, m.dim, |i, j| if i == j { 1.0 } else { 0.0 });
        let t = DVector::zeros(d_global);
        let mean = manifold_mean(m, &r, &t)?;
        return Ok(GlobalAlignment {
            d_global,
            support: None,
            support_embedding: DMatrix::zeros(0, d_global),
            transforms: vec![ClusterTransform {
                rotation: r,
                translation: t,
                mean,
            }],
        });
    }
    let support = support_set(models, params.k, params.l)?;
    let ge = global_embed_support(&support, d_global)?;
    let transforms = models
        .par_iter()
        .enumerate()
        .map(|(j, model)| {
            let idx = &support.per_cluster[j];
            let lde = DMatrix::from_fn(model.dim, idx.len(), |r, c| model.embedding[(support.members[idx[c]].local, r)]);
            let target = DMatrix::from_fn(d_global, idx.len(), |r, c| ge[(idx[c], r)]);
            let (rotation, translation) = solve_transform(&lde, &target, params.lambda)?;
            let mean = manifold_mean(model, &rotation, &translation)?;
            Ok(ClusterTransform {
                rotation,
                translation,
                mean,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GlobalAlignment {
        d_global,
        support: Some(support),
        support_embedding: ge,
        transforms,
    })
}
