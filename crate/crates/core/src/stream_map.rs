//! Out-of-sample embedding of a single stream sample onto a fitted manifold.
//!
//! Geodesic distances from the new sample to the cluster are approximated
//! through its nearest cluster samples, then projected with the landmark-MDS
//! (Nyström) formula `y_a = vₐᵀ(μ_sq − g∘²) / (2√λₐ)`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::ManifoldModel;
use crate::linalg::nearest_k;

/// Approximate geodesic distance from `sample` to every cluster sample:
/// `g[j] = min_m ‖s − x_m‖ + G[m][j]` over the `knn` nearest cluster samples `x_m`.
pub fn approx_geodesic_to_batch(sample: &[f64], model: &ManifoldModel, knn: usize) -> Result<DVector<f64>> {
    let n = model.len();
    if n == 0 {
        return Err(Error::contract("empty manifold model"));
    }
    if knn == 0 || knn > n {
        return Err(Error::param(format!("knn must lie in [1, {n}], got {knn}")));
    }
    if sample.len() != model.points.ncols() {
        return Err(Error::contract(format!(
            "sample has {} coordinates, model expects {}",
            sample.len(),
            model.points.ncols()
        )));
    }
    let nn = nearest_k(model.rows(), sample, knn, None);
    let mut g = DVector::from_element(n, f64::INFINITY);
    for (m, d) in nn {
        let row = model.geodesics.column(m);
        for (gj, &gm) in g.iter_mut().zip(row.iter()) {
            let c = d + gm;
            if c < *gj {
                *gj = c;
            }
        }
    }
    Ok(g)
}

/// Landmark-MDS projection of a geodesic-distance vector into the model's
/// embedding space. Dimensions with a zero eigenvalue map to 0.
pub fn out_of_sample_embed(g: &DVector<f64>, model: &ManifoldModel) -> Result<DVector<f64>> {
    if g.len() != model.len() {
        return Err(Error::contract(format!(
            "distance vector has {} entries, model has {} samples",
            g.len(),
            model.len()
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("non-finite geodesic distance"));
    }
    let diff: DVector<f64> = DVector::from_iterator(g.len(), model.col_mean_sq.iter().zip(g.iter()).map(|(m, v)| m - v * v));
    Ok(DVector::from_iterator(
        model.dim,
        (0..model.dim).map(|a| {
            let lambda = model.eigenvalues[a];
            if lambda <= 0.0 {
                0.0
            } else {
                model.eigenvectors.column(a).dot(&diff) / (2.0 * lambda.sqrt())
            }
        }),
    ))
}

/// Both steps: local embedding of `sample` on `model`.
pub fn embed_sample(sample: &[f64], model: &ManifoldModel, knn: usize) -> Result<DVector<f64>> {
    let g = approx_geodesic_to_batch(sample, model, knn.min(model.len()))?;
    out_of_sample_embed(&g, model)
}
