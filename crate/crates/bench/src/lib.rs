//! Shared fixtures for the benchmarks.

use manistream::datasets::{gen_scene, split_batch_stream, PointCloud, Scene};
use manistream::pipeline::{fit_batch, FitParams, FittedModel};

pub const SEED: u64 = 11;

/// Swiss roll split into a batch of `batch` samples and a stream of `stream`.
pub fn roll_split(batch: usize, stream: usize) -> (PointCloud, PointCloud) {
    let cloud = gen_scene(&Scene::SwissRoll { n: batch + stream, noise: 0.0 }, SEED).expect("valid scene");
    split_batch_stream(&cloud, batch, SEED).expect("valid split")
}

/// Standard scene of `kind` scaled down to roughly `total` samples.
pub fn scene(kind: &str, total: usize) -> PointCloud {
    let scene = Scene::standard(kind).expect("known scene");
    let sizes = scene.sizes();
    let sum: usize = sizes.iter().sum();
    let scaled: Vec<usize> = sizes.iter().map(|s| (s * total / sum).max(1)).collect();
    gen_scene(&scene.with_sizes(&scaled).expect("valid sizes"), SEED).expect("valid scene")
}

pub fn fitted(batch: &PointCloud) -> FittedModel {
    fit_batch(
        batch,
        &FitParams {
            seed: SEED,
            ..FitParams::default()
        },
    )
    .expect("fit succeeds")
}

/// First `m` rows of `stream`.
pub fn prefix(stream: &PointCloud, m: usize) -> PointCloud {
    stream.select(&(0..m.min(stream.len())).collect::<Vec<_>>())
}
