//! Synthetic scenes: isometric swiss roll, intersecting planes and spheres,
//! Gaussian patches and a noisy high-dimensional sphere.
//!
//! Every generator is a pure function of `(scene, seed)`. Ground-truth labels
//! are 1-based component ids; `truth` holds each sample's generating
//! coordinates in its own manifold's chart.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CloudMeta, PointCloud};
use crate::error::{Error, Result};

/// Scene description; the parameters fully determine the generator given a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scene {
    SwissRoll {
        n: usize,
        noise: f64,
    },
    SwissRollPlane {
        roll_n: usize,
        plane_n: usize,
        noise: f64,
    },
    SwissRollTwoPlanes {
        roll_n: usize,
        plane_n: usize,
        noise: f64,
    },
    SphereSphere {
        n_first: usize,
        n_second: usize,
        noise: f64,
    },
    SpherePlane {
        sphere_n: usize,
        plane_n: usize,
        noise: f64,
    },
    GaussianPatches {
        patches: usize,
        per_patch: usize,
        noise: f64,
    },
    NoisySphereHighdim {
        n: usize,
        intrinsic: usize,
        ambient: usize,
        noise: f64,
    },
    Plane {
        n: usize,
        noise: f64,
    },
}

impl Scene {
    pub const KINDS: [&'static str; 8] = [
        "swiss_roll",
        "swiss_roll_plane",
        "swiss_roll_two_planes",
        "sphere_sphere",
        "sphere_plane",
        "gaussian_patches",
        "noisy_sphere_highdim",
        "plane",
    ];

    /// The configuration used in the experiments for each scene kind.
    pub fn standard(kind: &str) -> Result<Scene> {
        Ok(match kind {
            "swiss_roll" => Scene::SwissRoll { n: 3000, noise: 0.0 },
            "swiss_roll_plane" => Scene::SwissRollPlane {
                roll_n: 3000,
                plane_n: 1500,
                noise: 0.0,
            },
            "swiss_roll_two_planes" => Scene::SwissRollTwoPlanes {
                roll_n: 3000,
                plane_n: 3000,
                noise: 0.0,
            },
            "sphere_sphere" => Scene::SphereSphere {
                n_first: 1000,
                n_second: 1000,
                noise: 0.0,
            },
            "sphere_plane" => Scene::SpherePlane {
                sphere_n: 1000,
                plane_n: 1000,
                noise: 0.0,
            },
            "gaussian_patches" => Scene::GaussianPatches {
                patches: 4,
                per_patch: 500,
                noise: 0.0,
            },
            "noisy_sphere_highdim" => Scene::NoisySphereHighdim {
                n: 1000,
                intrinsic: 5,
                ambient: 100,
                noise: 0.01,
            },
            "plane" => Scene::Plane { n: 1000, noise: 0.0 },
            other => return Err(Error::param(format!("unknown scene kind '{other}'"))),
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Scene::SwissRoll { .. } => "swiss_roll",
            Scene::SwissRollPlane { .. } => "swiss_roll_plane",
            Scene::SwissRollTwoPlanes { .. } => "swiss_roll_two_planes",
            Scene::SphereSphere { .. } => "sphere_sphere",
            Scene::SpherePlane { .. } => "sphere_plane",
            Scene::GaussianPatches { .. } => "gaussian_patches",
            Scene::NoisySphereHighdim { .. } => "noisy_sphere_highdim",
            Scene::Plane { .. } => "plane",
        }
    }

    pub fn noise(&self) -> f64 {
        match *self {
            Scene::SwissRoll { noise, .. }
            | Scene::SwissRollPlane { noise, .. }
            | Scene::SwissRollTwoPlanes { noise, .. }
            | Scene::SphereSphere { noise, .. }
            | Scene::SpherePlane { noise, .. }
            | Scene::GaussianPatches { noise, .. }
            | Scene::NoisySphereHighdim { noise, .. }
            | Scene::Plane { noise, .. } => noise,
        }
    }

    pub fn set_noise(&mut self, value: f64) {
        match self {
            Scene::SwissRoll { noise, .. }
            | Scene::SwissRollPlane { noise, .. }
            | Scene::SwissRollTwoPlanes { noise, .. }
            | Scene::SphereSphere { noise, .. }
            | Scene::SpherePlane { noise, .. }
            | Scene::GaussianPatches { noise, .. }
            | Scene::NoisySphereHighdim { noise, .. }
            | Scene::Plane { noise, .. } => *noise = value,
        }
    }

    /// Component sizes, in label order.
    pub fn sizes(&self) -> Vec<usize> {
        match *self {
            Scene::SwissRoll { n, .. } | Scene::Plane { n, .. } | Scene::NoisySphereHighdim { n, .. } => vec![n],
            Scene::SwissRollPlane { roll_n, plane_n, .. } => vec![roll_n, plane_n],
            Scene::SwissRollTwoPlanes { roll_n, plane_n, .. } => vec![roll_n, plane_n, plane_n],
            Scene::SphereSphere { n_first, n_second, .. } => vec![n_first, n_second],
            Scene::SpherePlane { sphere_n, plane_n, .. } => vec![sphere_n, plane_n],
            Scene::GaussianPatches { patches, per_patch, .. } => vec![per_patch; patches],
        }
    }

    /// Replaces the component sizes (same order as [`Scene::sizes`]).
    pub fn with_sizes(mut self, sizes: &[usize]) -> Result<Scene> {
        let want = self.sizes().len();
        let kind = self.kind();
        let bad = || Error::param(format!("scene '{kind}' takes {want} size(s)"));
        match &mut self {
            Scene::SwissRoll { n, .. } | Scene::Plane { n, .. } | Scene::NoisySphereHighdim { n, .. } => {
                let [a] = sizes else { return Err(bad()) };
                *n = *a;
            }
            Scene::SwissRollPlane { roll_n, plane_n, .. } | Scene::SpherePlane { sphere_n: roll_n, plane_n, .. } => {
                let [a, b] = sizes else { return Err(bad()) };
                (*roll_n, *plane_n) = (*a, *b);
            }
            Scene::SwissRollTwoPlanes { roll_n, plane_n, .. } => match sizes {
                [a, b] => (*roll_n, *plane_n) = (*a, *b),
                [a, b, c] if b == c => (*roll_n, *plane_n) = (*a, *b),
                _ => return Err(bad()),
            },
            Scene::SphereSphere { n_first, n_second, .. } => {
                let [a, b] = sizes else { return Err(bad()) };
                (*n_first, *n_second) = (*a, *b);
            }
            Scene::GaussianPatches { per_patch, .. } => {
                let [a] = sizes else { return Err(bad()) };
                *per_patch = *a;
            }
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let noise = self.noise();
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(Error::param(format!("noise standard deviation must be >= 0, got {noise}")));
        }
        if self.sizes().contains(&0) {
            return Err(Error::param("scene sizes must be positive"));
        }
        if let Scene::NoisySphereHighdim { intrinsic, ambient, .. } = *self {
            if intrinsic == 0 || intrinsic + 1 > ambient {
                return Err(Error::param(format!(
                    "sphere of intrinsic dimension {intrinsic} does not fit in R^{ambient}"
                )));
            }
        }
        if let Scene::GaussianPatches { patches, .. } = *self {
            if patches > PATCH_CENTERS.len() {
                return Err(Error::param(format!("at most {} patches supported", PATCH_CENTERS.len())));
            }
        }
        Ok(())
    }
}

/// Geometry of the isometric swiss roll `x = (t cos t, h, t sin t)` with `t`
/// reparameterised by arc length over `[3π/2, 9π/2]` and `h ∈ [0, HEIGHT]`.
#[derive(Debug, Clone, Copy)]
pub struct SwissRollGeometry;

impl SwissRollGeometry {
    pub const T_START: f64 = 1.5 * PI;
    pub const T_END: f64 = 4.5 * PI;
    pub const HEIGHT: f64 = 30.0;

    /// Arc length of the spiral `t ↦ (t cos t, t sin t)` measured from `t = 0`.
    pub fn arc_length(t: f64) -> f64 {
        0.5 * (t * (1.0 + t * t).sqrt() + t.asinh())
    }

    /// Total unrolled length of the roll.
    pub fn length() -> f64 {
        Self::arc_length(Self::T_END) - Self::arc_length(Self::T_START)
    }

    /// Inverts the arc length (measured from `T_START`) by Newton iteration.
    pub fn t_of(s: f64) -> f64 {
        let target = s + Self::arc_length(Self::T_START);
        let mut t = Self::T_START + s / Self::T_START.hypot(1.0);
        for _ in 0..50 {
            let step = (Self::arc_length(t) - target) / (1.0 + t * t).sqrt();
            t -= step;
            if step.abs() < 1e-14 * t.abs() {
                break;
            }
        }
        t
    }

    /// Lifts generating coordinates `(s, h)` into R^3.
    pub fn lift(s: f64, h: f64) -> [f64; 3] {
        let t = Self::t_of(s);
        [t * t.cos(), h, t * t.sin()]
    }

    /// Bounding box `(x_min, x_max, z_min, z_max)` of the roll.
    pub fn bounds() -> (f64, f64, f64, f64) {
        let steps = 20_000;
        let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..=steps {
            let t = Self::T_START + (Self::T_END - Self::T_START) * i as f64 / steps as f64;
            let (x, z) = (t * t.cos(), t * t.sin());
            b = (b.0.min(x), b.1.max(x), b.2.min(z), b.3.max(z));
        }
        b
    }

    /// Parameters `t` at which `f(t) = level`, located by bracketing and bisection.
    fn crossings(f: impl Fn(f64) -> f64, level: f64) -> Vec<f64> {
        let steps = 20_000;
        let at = |i: usize| Self::T_START + (Self::T_END - Self::T_START) * i as f64 / steps as f64;
        let mut roots = Vec::new();
        for i in 0..steps {
            let (mut a, mut b) = (at(i), at(i + 1));
            let (fa, fb) = (f(a) - level, f(b) - level);
            if fa == 0.0 {
                roots.push(a);
                continue;
            }
            if fa * fb < 0.0 {
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if (f(m) - level) * fa > 0.0 {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                roots.push(0.5 * (a + b));
            }
        }
        roots
    }
}

const PATCH_CENTERS: [(f64, f64); 6] = [(0.15, 0.3), (0.4, 0.7), (0.65, 0.3), (0.88, 0.65), (0.3, 0.15), (0.75, 0.85)];

/// Generates the scene deterministically from `seed`.
pub fn gen_scene(scene: &Scene, seed: u64) -> Result<PointCloud> {
    scene.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Builder::default();
    let roll_len = SwissRollGeometry::length();
    let (x_min, x_max, z_min, z_max) = SwissRollGeometry::bounds();
    let (x_mid, z_mid) = (0.5 * (x_min + x_max), 0.5 * (z_min + z_max));
    let height = SwissRollGeometry::HEIGHT;

    match *scene {
        Scene::SwissRoll { n, .. } => out.swiss_roll(&mut rng, n, 1),
        Scene::SwissRollPlane { roll_n, plane_n, .. } => {
            out.swiss_roll(&mut rng, roll_n, 1);
            out.plane_x(&mut rng, plane_n, 2, x_mid, (0.0, height), (z_min, z_max));
            out.params.insert("plane_x".into(), x_mid);
        }
        Scene::SwissRollTwoPlanes { roll_n, plane_n, .. } => {
            out.swiss_roll(&mut rng, roll_n, 1);
            out.plane_x(&mut rng, plane_n, 2, x_mid, (0.0, height), (z_min, z_max));
            out.plane_z(&mut rng, plane_n, 3, z_mid, (x_min, x_max), (0.0, height));
            out.params.insert("plane_x".into(), x_mid);
            out.params.insert("plane_z".into(), z_mid);
        }
        Scene::SphereSphere { n_first, n_second, .. } => {
            out.sphere(&mut rng, n_first, 1, [-0.5, 0.0, 0.0]);
            out.sphere(&mut rng, n_second, 2, [0.5, 0.0, 0.0]);
        }
        Scene::SpherePlane { sphere_n, plane_n, .. } => {
            out.sphere(&mut rng, sphere_n, 1, [0.0, 0.0, 0.0]);
            for _ in 0..plane_n {
                let (x, y) = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
                out.push(&[x, y, 0.0], 2, &[x, y]);
            }
        }
        Scene::GaussianPatches { patches, per_patch, .. } => {
            let (sd_s, sd_h) = (0.05 * roll_len, 0.08 * height);
            for (p, &(cs, ch)) in PATCH_CENTERS.iter().take(patches).enumerate() {
                let (mu_s, mu_h) = (cs * roll_len, ch * height);
                let mut count = 0;
                while count < per_patch {
                    let s = mu_s + sd_s * rng.sample::<f64, _>(StandardNormal);
                    let h = mu_h + sd_h * rng.sample::<f64, _>(StandardNormal);
                    if !(0.0..=roll_len).contains(&s) || !(0.0..=height).contains(&h) {
                        continue;
                    }
                    out.push(&SwissRollGeometry::lift(s, h), p as u32 + 1, &[s, h]);
                    count += 1;
                }
            }
        }
        Scene::NoisySphereHighdim {
            n,
            intrinsic,
            ambient,
            ..
        } => {
            let rot = random_rotation(&mut rng, ambient);
            for _ in 0..n {
                let mut v: Vec<f64> = (0..=intrinsic).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= norm);
                let x: Vec<f64> = (0..ambient)
                    .map(|r| (0..=intrinsic).map(|c| rot[(r, c)] * v[c]).sum())
                    .collect();
                out.push(&x, 1, &v);
            }
        }
        Scene::Plane { n, .. } => {
            for _ in 0..n {
                let (x, y) = (rng.random_range(0.0..20.0), rng.random_range(0.0..20.0));
                out.push(&[x, y, 0.0], 1, &[x, y]);
            }
        }
    }

    let noise = scene.noise();
    let mut cloud = out.finish()?;
    if noise > 0.0 {
        let normal = Normal::new(0.0, noise).map_err(|e| Error::param(e.to_string()))?;
        cloud.points.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    cloud.seed = seed;
    cloud.meta.scene = Some(scene.clone());
    cloud.validate()?;
    Ok(cloud)
}

#[derive(Default)]
struct Builder {
    rows: Vec<Vec<f64>>,
    labels: Vec<u32>,
    truth: Vec<Vec<f64>>,
    params: BTreeMap<String, f64>,
}

impl Builder {
    fn push(&mut self, x: &[f64], label: u32, truth: &[f64]) {
        self.rows.push(x.to_vec());
        self.labels.push(label);
        self.truth.push(truth.to_vec());
    }

    fn swiss_roll(&mut self, rng: &mut ChaCha8Rng, n: usize, label: u32) {
        let len = SwissRollGeometry::length();
        for _ in 0..n {
            let s = rng.random_range(0.0..len);
            let h = rng.random_range(0.0..SwissRollGeometry::HEIGHT);
            self.push(&SwissRollGeometry::lift(s, h), label, &[s, h]);
        }
    }

    fn plane_x(&mut self, rng: &mut ChaCha8Rng, n: usize, label: u32, x: f64, y: (f64, f64), z: (f64, f64)) {
        for _ in 0..n {
            let (py, pz) = (rng.random_range(y.0..y.1), rng.random_range(z.0..z.1));
            self.push(&[x, py, pz], label, &[py, pz]);
        }
    }

    fn plane_z(&mut self, rng: &mut ChaCha8Rng, n: usize, label: u32, z: f64, x: (f64, f64), y: (f64, f64)) {
        for _ in 0..n {
            let (px, py) = (rng.random_range(x.0..x.1), rng.random_range(y.0..y.1));
            self.push(&[px, py, z], label, &[px, py]);
        }
    }

    /// Uniform samples on the unit sphere around `center`; truth is (polar, azimuth).
    fn sphere(&mut self, rng: &mut ChaCha8Rng, n: usize, label: u32, center: [f64; 3]) {
        for _ in 0..n {
            let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let u = [v[0] / norm, v[1] / norm, v[2] / norm];
            let polar = u[2].clamp(-1.0, 1.0).acos();
            let azimuth = u[1].atan2(u[0]);
            self.push(&[center[0] + u[0], center[1] + u[1], center[2] + u[2]], label, &[polar, azimuth]);
        }
    }

    fn finish(self) -> Result<PointCloud> {
        let n = self.rows.len();
        let dim = self.rows[0].len();
        let tdim = self.truth.iter().map(Vec::len).max().unwrap_or(0);
        let points = DMatrix::from_fn(n, dim, |i, j| self.rows[i][j]);
        let truth = DMatrix::from_fn(n, tdim, |i, j| self.truth[i].get(j).copied().unwrap_or(0.0));
        Ok(PointCloud {
            points,
            labels: Some(self.labels),
            truth: Some(truth),
            seed: 0,
            meta: CloudMeta {
                scene: None,
                params: self.params,
                source_rows: None,
            },
        })
    }
}

/// Haar-distributed orthogonal matrix from the QR factorisation of a Gaussian matrix.
fn random_rotation(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for c in 0..dim {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q
}

/// Distance of each sample to the nearest manifold intersection, measured in
/// its own generating coordinates. Only defined for the roll-plane scenes.
pub fn intersection_distances(cloud: &PointCloud) -> Option<Vec<f64>> {
    let scene = cloud.meta.scene.as_ref()?;
    let (labels, truth) = (cloud.labels.as_ref()?, cloud.truth.as_ref()?);
    let plane_x = *cloud.meta.params.get("plane_x")?;
    let plane_z = cloud.meta.params.get("plane_z").copied();
    if !matches!(scene, Scene::SwissRollPlane { .. } | Scene::SwissRollTwoPlanes { .. }) {
        return None;
    }
    let s_start = SwissRollGeometry::arc_length(SwissRollGeometry::T_START);
    let x_of = |t: f64| t * t.cos();
    let z_of = |t: f64| t * t.sin();

    // roll ∩ plane x = plane_x: lines at arc lengths s_k, plane coordinate z_k
    let tx = SwissRollGeometry::crossings(x_of, plane_x);
    let roll_s_x: Vec<f64> = tx.iter().map(|&t| SwissRollGeometry::arc_length(t) - s_start).collect();
    let plane_x_z: Vec<f64> = tx.iter().map(|&t| z_of(t)).collect();
    let tz = plane_z.map_or_else(Vec::new, |pz| SwissRollGeometry::crossings(z_of, pz));
    let roll_s_z: Vec<f64> = tz.iter().map(|&t| SwissRollGeometry::arc_length(t) - s_start).collect();
    let plane_z_x: Vec<f64> = tz.iter().map(|&t| x_of(t)).collect();
    let nearest = |v: f64, set: &[f64]| set.iter().map(|c| (v - c).abs()).fold(f64::INFINITY, f64::min);

    Some(
        (0..cloud.len())
            .map(|i| {
                let (a, b) = (truth[(i, 0)], truth[(i, 1)]);
                match labels[i] {
                    1 => nearest(a, &roll_s_x).min(nearest(a, &roll_s_z)),
                    // plane x = const, truth (y, z); meets the other plane along x = plane_x too
                    2 => {
                        let other = plane_z.map_or(f64::INFINITY, |pz| (b - pz).abs());
                        nearest(b, &plane_x_z).min(other)
                    }
                    // plane z = const, truth (x, y)
                    _ => nearest(a, &plane_z_x).min((a - plane_x).abs()),
                }
            })
            .collect(),
    )
}
