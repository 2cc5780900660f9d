//! Multiscale SVD: per-sample singular-value profiles over a grid of ball
//! radii, scale and intrinsic-dimension selection, and tangent bases.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::PointCloud;
use crate::error::{Error, Result};
use crate::linalg::{dist, Rows};

/// Singular values relative to the largest one below this are treated as zero.
const ZERO_SV: f64 = 1e-12;
/// Cumulative variance captured by the fallback dimension.
const FALLBACK_VARIANCE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsvdParams {
    /// Number of radii in the scale grid.
    pub levels: usize,
    /// Minimum ratio `σ_d / σ_{d+1}` accepted as a clear spectral gap.
    pub gap_ratio: f64,
    /// Largest tangent dimension considered; balls need `2 · min(max_dim, D)` points.
    pub max_dim: usize,
}

impl Default for MsvdParams {
    fn default() -> Self {
        MsvdParams {
            levels: 12,
            gap_ratio: 5.0,
            max_dim: 10,
        }
    }
}

impl MsvdParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::param(format!("levels must be >= 2, got {}", self.levels)));
        }
        if !(self.gap_ratio.is_finite() && self.gap_ratio >= 1.0) {
            return Err(Error::param(format!("gap ratio must be >= 1, got {}", self.gap_ratio)));
        }
        if self.max_dim == 0 {
            return Err(Error::param("max_dim must be >= 1"));
        }
        Ok(())
    }
}

/// Singular values of the centred ball around one sample, at every usable radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvProfile {
    pub point_index: usize,
    pub radii: Vec<f64>,
    /// `sv[r]` holds the `D` singular values at `radii[r]`, descending.
    pub sv: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

/// Orthonormal basis of the estimated tangent plane at one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentBasis {
    pub point_index: usize,
    pub scale: f64,
    pub dim: usize,
    /// `D × dim`; columns are the leading right singular vectors.
    pub basis: DMatrix<f64>,
}

impl TangentBasis {
    /// Largest deviation of `BᵀB` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.basis.transpose() * &self.basis;
        let mut worst = 0.0f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }
}

/// SVD of a centred neighborhood.
#[derive(Debug, Clone)]
pub struct LocalSvd {
    /// `D` singular values, descending (zero-padded past the rank).
    pub values: DVector<f64>,
    /// `D × D` orthonormal; column `i` pairs with `values[i]`.
    pub vectors: DMatrix<f64>,
    pub count: usize,
}

/// SVD of the mean-centred matrix of all samples within `radius` of `center`.
pub fn local_svd(cloud: &PointCloud, center: usize, radius: f64) -> Result<LocalSvd> {
    if center >= cloud.len() {
        return Err(Error::contract(format!("center {center} out of range")));
    }
    let rows = Rows::from_matrix(&cloud.points);
    let c = rows.row(center);
    let idx: Vec<usize> = (0..rows.len()).filter(|&j| dist(c, rows.row(j)) <= radius).collect();
    if idx.len() < 2 {
        return Err(Error::InsufficientNeighborhood {
            point: center,
            radius,
            count: idx.len(),
        });
    }
    Ok(svd_of(&rows, &idx))
}

fn centred(rows: &Rows, idx: &[usize]) -> DMatrix<f64> {
    let dim = rows.dim();
    let m = idx.len();
    let mut mean = vec![0.0; dim];
    for &i in idx {
        for (acc, v) in mean.iter_mut().zip(rows.row(i)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    DMatrix::from_fn(m, dim, |r, c| rows.row(idx[r])[c] - mean[c])
}

fn svd_of(rows: &Rows, idx: &[usize]) -> LocalSvd {
    let dim = rows.dim();
    let b = centred(rows, idx);
    let svd = b.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]).then(i.cmp(&j)));
    let mut values = DVector::zeros(dim);
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(dim);
    for (k, &i) in order.iter().enumerate() {
        values[k] = svd.singular_values[i];
        cols.push(v_t.row(i).transpose());
    }
    complete_basis(&mut cols, dim);
    LocalSvd {
        values,
        vectors: DMatrix::from_columns(&cols),
        count: idx.len(),
    }
}

/// Extends an orthonormal set to a basis of R^dim by Gram-Schmidt on the
/// standard basis.
fn complete_basis(cols: &mut Vec<DVector<f64>>, dim: usize) {
    let mut e = 0;
    while cols.len() < dim && e < dim {
        let mut v = DVector::zeros(dim);
        v[e] = 1.0;
        for _ in 0..2 {
            for c in cols.iter() {
                let p = c.dot(&v);
                v.axpy(-p, c, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            cols.push(v / norm);
        }
        e += 1;
    }
}

/// Singular values only, descending, padded with zeros to `D`.
fn spectrum(rows: &Rows, idx: &[usize]) -> Vec<f64> {
    let mut sv: Vec<f64> = centred(rows, idx).singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.resize(rows.dim(), 0.0);
    sv
}

/// Geometric grid from the median nearest-neighbor distance to half the
/// cloud's diameter, `levels` entries long.
pub fn scale_grid(cloud: &PointCloud, levels: usize) -> Result<Vec<f64>> {
    if levels < 2 {
        return Err(Error::param(format!("levels must be >= 2, got {levels}")));
    }
    let rows = Rows::from_matrix(&cloud.points);
    let n = rows.len();
    if n < 2 {
        return Err(Error::DegenerateGeometry("need at least two points".into()));
    }
    let per_point: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (mut nn, mut nn_pos, mut far) = (f64::INFINITY, f64::INFINITY, 0.0f64);
            for j in (0..n).filter(|&j| j != i) {
                let d = dist(rows.row(i), rows.row(j));
                nn = nn.min(d);
                if d > 0.0 {
                    nn_pos = nn_pos.min(d);
                }
                far = far.max(d);
            }
            (nn, nn_pos, far)
        })
        .collect();
    let diameter = per_point.iter().map(|p| p.2).fold(0.0, f64::max);
    if diameter <= 0.0 {
        return Err(Error::DegenerateGeometry("all points coincide".into()));
    }
    let mut nn: Vec<f64> = per_point.iter().map(|p| p.0).collect();
    nn.sort_by(f64::total_cmp);
    let mut r_min = if n % 2 == 1 {
        nn[n / 2]
    } else {
        0.5 * (nn[n / 2 - 1] + nn[n / 2])
    };
    if r_min <= 0.0 {
        r_min = per_point.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    }
    let r_max = 0.5 * diameter;
    let ratio = r_max / r_min;
    Ok((0..levels)
        .map(|i| {
            if i == 0 {
                r_min
            } else if i == levels - 1 {
                r_max
            } else {
                r_min * ratio.powf(i as f64 / (levels - 1) as f64)
            }
        })
        .collect())
}

/// Outcome of the scale/dimension selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleChoice {
    pub radius: f64,
    pub dim: usize,
    /// Best `σ_d / σ_{d+1}` found (infinite for an exact rank drop).
    pub gap: f64,
    /// True when no gap reached `gap_ratio` and the variance rule picked `dim`.
    pub fallback: bool,
}

/// Largest relative gap over candidate dimensions `1..=max_d` in one spectrum.
fn best_gap(sv: &[f64], max_d: usize) -> Option<(usize, f64)> {
    let top = *sv.first()?;
    if top <= 0.0 {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for d in 1..=max_d.min(sv.len().saturating_sub(1)) {
        let (hi, lo) = (sv[d - 1], sv[d]);
        if hi <= ZERO_SV * top {
            break;
        }
        let gap = if lo <= ZERO_SV * top { f64::INFINITY } else { hi / lo };
        if best.is_none_or(|(_, g)| gap > g) {
            best = Some((d, gap));
        }
    }
    best
}

/// Smallest `d` whose leading squared singular values hold 95% of the variance.
fn variance_dim(sv: &[f64]) -> usize {
    let total: f64 = sv.iter().map(|s| s * s).sum();
    let mut acc = 0.0;
    for (i, s) in sv.iter().enumerate() {
        acc += s * s;
        if acc >= FALLBACK_VARIANCE * total {
            return i + 1;
        }
    }
    sv.len().max(1)
}

/// Picks the radius with the clearest spectral gap and the dimension at which
/// it occurs. Ties go to the smaller radius. When the best gap is below
/// `gap_ratio`, the dimension falls back to the 95% cumulative-variance rule
/// at that radius.
pub fn estimate_scale_and_dim(profile: &SvProfile, gap_ratio: f64, max_dim: usize) -> Result<ScaleChoice> {
    let dim = profile.sv.first().map_or(0, Vec::len);
    let max_d = max_dim.min(dim.saturating_sub(1)).max(1);
    let mut best: Option<(usize, usize, f64)> = None;
    for (r, sv) in profile.sv.iter().enumerate() {
        if let Some((d, gap)) = best_gap(sv, max_d) {
            if best.is_none_or(|(_, _, g)| gap > g) {
                best = Some((r, d, gap));
            }
        }
    }
    let Some((r, d, gap)) = best else {
        // no usable radius or an all-zero spectrum
        let radius = profile.radii.first().copied().ok_or(Error::InsufficientNeighborhood {
            point: profile.point_index,
            radius: 0.0,
            count: 0,
        })?;
        return Ok(ScaleChoice {
            radius,
            dim: 1,
            gap: 0.0,
            fallback: true,
        });
    };
    if gap >= gap_ratio {
        Ok(ScaleChoice {
            radius: profile.radii[r],
            dim: d,
            gap,
            fallback: false,
        })
    } else {
        Ok(ScaleChoice {
            radius: profile.radii[r],
            dim: variance_dim(&profile.sv[r]).min(dim.max(1)),
            gap,
            fallback: true,
        })
    }
}

/// Sample indices ordered by distance from `center`, nearest first (self included).
fn sorted_neighbors(rows: &Rows, center: usize) -> Vec<(usize, f64)> {
    let c = rows.row(center);
    let mut all: Vec<(usize, f64)> = (0..rows.len()).map(|j| (j, dist(c, rows.row(j)))).collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all
}

fn min_ball_points(params: &MsvdParams, n: usize, dim: usize) -> usize {
    (2 * params.max_dim.min(dim)).clamp(2, n.max(2))
}

fn profile_from_sorted(rows: &Rows, center: usize, sorted: &[(usize, f64)], radii: &[f64], min_pts: usize) -> SvProfile {
    let mut prof = SvProfile {
        point_index: center,
        radii: Vec::new(),
        sv: Vec::new(),
        counts: Vec::new(),
    };
    for &r in radii {
        let count = sorted.partition_point(|p| p.1 <= r);
        if count < min_pts {
            continue;
        }
        let idx: Vec<usize> = sorted[..count].iter().map(|p| p.0).collect();
        prof.radii.push(r);
        prof.sv.push(spectrum(rows, &idx));
        prof.counts.push(count);
    }
    prof
}

/// Singular-value profile of one sample over `radii`; radii whose ball holds
/// fewer than `2 · min(max_dim, D)` samples are skipped.
pub fn sv_profile(cloud: &PointCloud, center: usize, radii: &[f64], params: &MsvdParams) -> Result<SvProfile> {
    if center >= cloud.len() {
        return Err(Error::contract(format!("center {center} out of range")));
    }
    let rows = Rows::from_matrix(&cloud.points);
    let mut radii = radii.to_vec();
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    let sorted = sorted_neighbors(&rows, center);
    let min_pts = min_ball_points(params, rows.len(), rows.dim());
    Ok(profile_from_sorted(&rows, center, &sorted, &radii, min_pts))
}

/// Tangent bases for the whole batch, all estimated at one shared scale.
#[derive(Debug, Clone)]
pub struct Msvd {
    /// Shared radius: the most frequent per-sample best scale.
    pub scale: f64,
    /// Shared tangent dimension: the most frequent per-sample estimate at `scale`.
    pub dim: usize,
    pub radii: Vec<f64>,
    pub bases: Vec<TangentBasis>,
    /// Samples whose ball at `scale` was too small and fell back to their nearest neighbors.
    pub expanded: usize,
}

/// Runs the multiscale analysis on every sample, selects the modal best
/// scale and extracts one tangent basis per sample at that scale, all of the
/// modal dimension.
pub fn msvd(batch: &PointCloud, params: &MsvdParams) -> Result<Msvd> {
    params.validate()?;
    let n = batch.len();
    if n < 3 {
        return Err(Error::param(format!("multiscale SVD needs at least 3 samples, got {n}")));
    }
    let mut radii = scale_grid(batch, params.levels)?;
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    let rows = Rows::from_matrix(&batch.points);
    let dim = rows.dim();
    let min_pts = min_ball_points(params, n, dim);

    let choices: Vec<(Vec<(usize, f64)>, Option<usize>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let sorted = sorted_neighbors(&rows, i);
            let prof = profile_from_sorted(&rows, i, &sorted, &radii, min_pts);
            let pick = estimate_scale_and_dim(&prof, params.gap_ratio, params.max_dim)
                .ok()
                .filter(|_| !prof.radii.is_empty())
                .and_then(|c| radii.iter().position(|&r| r == c.radius));
            (sorted, pick)
        })
        .collect();

    let mut votes = vec![0usize; radii.len()];
    for (_, pick) in &choices {
        if let Some(r) = pick {
            votes[*r] += 1;
        }
    }
    let (scale_idx, top_votes) = votes
        .iter()
        .enumerate()
        .fold((0, 0), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    if top_votes == 0 {
        return Err(Error::InsufficientNeighborhood {
            point: 0,
            radius: radii[radii.len() - 1],
            count: 0,
        });
    }
    let scale = radii[scale_idx];
    let max_d = params.max_dim.min(dim.saturating_sub(1)).max(1);

    let local: Vec<(LocalSvd, usize, bool)> = choices
        .par_iter()
        .map(|(sorted, _)| {
            let count = sorted.partition_point(|p| p.1 <= scale);
            let take = count.max(min_pts).min(n);
            let idx: Vec<usize> = sorted[..take].iter().map(|p| p.0).collect();
            let svd = svd_of(&rows, &idx);
            let sv: Vec<f64> = svd.values.iter().copied().collect();
            let d = match best_gap(&sv, max_d) {
                Some((d, gap)) if gap >= params.gap_ratio => d,
                _ => variance_dim(&sv).min(dim),
            }
            .max(1);
            (svd, d, count < min_pts)
        })
        .collect();

    // one dimension for every basis: the most common per-sample estimate
    let mut dim_votes = vec![0usize; dim + 1];
    for (_, d, _) in &local {
        dim_votes[*d] += 1;
    }
    let shared = (1..=dim).fold(1, |best, d| if dim_votes[d] > dim_votes[best] { d } else { best });

    let expanded = local.iter().filter(|l| l.2).count();
    let bases = local
        .into_iter()
        .enumerate()
        .map(|(i, (svd, _, _))| TangentBasis {
            point_index: i,
            scale,
            dim: shared,
            basis: svd.vectors.columns(0, shared).into_owned(),
        })
        .collect();
    Ok(Msvd {
        scale,
        dim: shared,
        radii,
        bases,
        expanded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rows: Vec<Vec<f64>>) -> PointCloud {
        PointCloud::from_rows(&rows).unwrap()
    }

    fn planar_in_r10(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = DVector::from_fn(10, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let v = DVector::from_fn(10, |i, _| if i == 3 { 0.6 } else if i == 7 { 0.8 } else { 0.0 });
        let rows = (0..n)
            .map(|_| {
                let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                (&u * a + &v * b).iter().copied().collect()
            })
            .collect();
        cloud(rows)
    }

    #[test]
    fn planar_data_has_rank_two() {
        let c = planar_in_r10(50, 1);
        let s = local_svd(&c, 0, 1.5).unwrap();
        assert!(s.values[1] > 1e-3);
        for k in 2..10 {
            assert!(s.values[k] < 1e-9, "σ_{} = {}", k + 1, s.values[k]);
        }
        let vtv = s.vectors.transpose() * &s.vectors;
        assert!((vtv - DMatrix::identity(10, 10)).amax() < 1e-9);
    }

    #[test]
    fn lonely_center_is_an_error() {
        let c = cloud(vec![vec![0.0, 0.0], vec![5.0, 0.0], vec![0.0, 5.0]]);
        assert!(matches!(
            local_svd(&c, 0, 1.0),
            Err(Error::InsufficientNeighborhood { count: 1, .. })
        ));
    }

    #[test]
    fn collinear_triple_has_zero_second_value() {
        let c = cloud(vec![vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]]);
        let s = local_svd(&c, 1, 10.0).unwrap();
        assert!(s.values[0] > 1.0);
        assert!(s.values[1] < 1e-12);
    }

    #[test]
    fn two_point_grid_has_forced_endpoints() {
        let c = cloud(vec![vec![0.0, 0.0], vec![3.0, 4.0]]);
        let g = scale_grid(&c, 2).unwrap();
        assert_eq!(g, vec![5.0, 2.5]);
    }

    #[test]
    fn grid_on_unit_cube_is_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows = (0..300).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let g = scale_grid(&cloud(rows), 10).unwrap();
        assert_eq!(g.len(), 10);
        assert!(g[0] > 0.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn identical_points_are_degenerate() {
        let c = cloud(vec![vec![1.0, 1.0]; 4]);
        assert!(matches!(scale_grid(&c, 4), Err(Error::DegenerateGeometry(_))));
        assert!(matches!(scale_grid(&c, 1), Err(Error::Parameter(_))));
    }

    #[test]
    fn exact_rank_picks_smallest_usable_radius() {
        let c = planar_in_r10(200, 4);
        let params = MsvdParams::default();
        let radii = scale_grid(&c, 8).unwrap();
        let prof = sv_profile(&c, 5, &radii, &params).unwrap();
        assert!(!prof.radii.is_empty());
        let choice = estimate_scale_and_dim(&prof, 5.0, 10).unwrap();
        assert_eq!(choice.dim, 2);
        assert_eq!(choice.radius, prof.radii[0]);
        assert!(choice.gap.is_infinite());
        assert!(prof.counts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn single_radius_with_gap_is_returned() {
        let prof = SvProfile {
            point_index: 0,
            radii: vec![0.7],
            sv: vec![vec![3.0, 2.5, 0.1, 0.09]],
            counts: vec![40],
        };
        let c = estimate_scale_and_dim(&prof, 5.0, 10).unwrap();
        assert_eq!((c.radius, c.dim, c.fallback), (0.7, 2, false));
    }

    #[test]
    fn weak_gap_falls_back_to_variance_rule() {
        let prof = SvProfile {
            point_index: 0,
            radii: vec![1.0, 2.0],
            sv: vec![vec![1.0, 0.9, 0.8, 0.7], vec![2.0, 1.0, 0.9, 0.8]],
            counts: vec![20, 40],
        };
        let c = estimate_scale_and_dim(&prof, 5.0, 10).unwrap();
        assert!(c.fallback);
        assert_eq!(c.radius, 2.0);
        // 4 + 1 + 0.81 + 0.64 = 6.45; 95% needs all four components
        assert_eq!(c.dim, 4);
    }

    #[test]
    fn flat_batch_gets_planar_bases() {
        let c = planar_in_r10(120, 8);
        let m = msvd(&c, &MsvdParams::default()).unwrap();
        assert_eq!(m.bases.len(), 120);
        for b in &m.bases {
            assert_eq!(b.dim, 2);
            assert!(b.orthonormality_error() < 1e-9);
        }
    }

    #[test]
    fn three_points_still_yield_bases() {
        let c = cloud(vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let m = msvd(&c, &MsvdParams::default()).unwrap();
        assert_eq!(m.bases.len(), 3);
        assert!(m.bases.iter().all(|b| b.dim == 2));
    }
}
