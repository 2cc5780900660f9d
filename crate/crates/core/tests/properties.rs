use approx::assert_relative_eq;
use manistream::eval::{clustering_accuracy, procrustes_error};
use manistream::geometry::isomap;
use manistream::linalg::{distance_matrix, Rows};
use manistream::pipeline::{fit_batch, map_stream, map_stream_sample, FitParams, FittedModel};
use manistream::stitching::solve_transform;
use manistream::stream_map::out_of_sample_embed;
use manistream::PointCloud;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two parallel 10×10 squares, ten units apart along z.
fn two_planes(per_plane: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(2 * per_plane * 3);
    let mut labels = Vec::with_capacity(2 * per_plane);
    for (label, z) in [(1u32, 0.0), (2, 10.0)] {
        for _ in 0..per_plane {
            rows.extend([rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), z]);
            labels.push(label);
        }
    }
    PointCloud::new(DMatrix::from_row_slice(2 * per_plane, 3, &rows), Some(labels)).unwrap()
}

fn fitted_planes() -> (PointCloud, FittedModel) {
    let cloud = two_planes(200, 3);
    let fitted = fit_batch(&cloud, &FitParams { seed: 3, ..FitParams::default() }).unwrap();
    (cloud, fitted)
}

#[test]
fn stream_of_the_batch_lands_on_its_own_clusters() {
    let (cloud, fitted) = fitted_planes();
    assert_eq!(fitted.p(), 2);
    let result = map_stream(&cloud, &fitted).unwrap();
    let acc = clustering_accuracy(&result.indices(), cloud.labels.as_ref().unwrap()).unwrap();
    assert!(acc >= 0.95, "accuracy {acc}");
    for s in &result.samples {
        assert!((1..=fitted.p()).contains(&s.index));
        assert!(s.y_global.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn fitting_and_streaming_are_deterministic() {
    let cloud = two_planes(150, 8);
    let params = FitParams { seed: 8, ..FitParams::default() };
    let a = fit_batch(&cloud, &params).unwrap();
    let b = fit_batch(&cloud, &params).unwrap();
    assert_eq!(a.assignment, b.assignment);
    assert_eq!(a.batch_embedding(), b.batch_embedding());
    let stream = two_planes(40, 9);
    let ra = map_stream(&stream, &a).unwrap();
    let rb = map_stream(&stream, &b).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn streaming_leaves_the_model_untouched() {
    let (_, fitted) = fitted_planes();
    let before = format!("{:?}", fitted.models) + &format!("{:?}", fitted.alignment);
    map_stream(&two_planes(30, 4), &fitted).unwrap();
    let after = format!("{:?}", fitted.models) + &format!("{:?}", fitted.alignment);
    assert_eq!(before, after);
}

fn rotation(angle: f64, reflect: bool) -> DMatrix<f64> {
    let (c, s) = (angle.cos(), angle.sin());
    let f = if reflect { -1.0 } else { 1.0 };
    DMatrix::from_row_slice(2, 2, &[c, -s * f, s, c * f])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn argmin_is_invariant_under_a_common_rigid_motion(
        angle in 0.0f64..std::f64::consts::TAU,
        reflect in any::<bool>(),
        shift in proptest::collection::vec(-50.0f64..50.0, 2),
        sample in proptest::collection::vec(-2.0f64..12.0, 3),
    ) {
        let (_, fitted) = fitted_planes();
        prop_assume!(fitted.d_global() == 2);
        let q = rotation(angle, reflect);
        let b = DVector::from_vec(shift);
        let mut moved = fitted.clone();
        for t in &mut moved.alignment.transforms {
            t.rotation = &q * &t.rotation;
            t.translation = &q * &t.translation + &b;
            t.mean = &q * &t.mean + &b;
        }
        let base = map_stream_sample(&sample, &fitted).unwrap();
        let other = map_stream_sample(&sample, &moved).unwrap();
        prop_assert_eq!(base.index, other.index);
        let expect = &q * &base.y_global + &b;
        prop_assert!((expect - other.y_global).amax() < 1e-9);
    }

    #[test]
    fn ridge_shrinks_the_transform(
        lde in proptest::collection::vec(-3.0f64..3.0, 2 * 12),
        ge in proptest::collection::vec(-3.0f64..3.0, 2 * 12),
        lo in 0.0f64..1.0,
        step in 0.01f64..5.0,
    ) {
        let lde = DMatrix::from_vec(2, 12, lde);
        let ge = DMatrix::from_vec(2, 12, ge);
        let norm = |lambda: f64| {
            let (r, t) = solve_transform(&lde, &ge, lambda).unwrap();
            r.norm_squared() + t.norm_squared()
        };
        let (small, large) = (norm(lo + 1e-6), norm(lo + step));
        prop_assert!(large <= small * (1.0 + 1e-9), "{} > {}", large, small);
    }

    #[test]
    fn procrustes_ignores_similarity_transforms(
        pts in proptest::collection::vec(-5.0f64..5.0, 2 * 10),
        angle in 0.0f64..std::f64::consts::TAU,
        reflect in any::<bool>(),
        scale in 0.1f64..10.0,
        shift in proptest::collection::vec(-20.0f64..20.0, 2),
    ) {
        let x = DMatrix::from_row_slice(10, 2, &pts);
        let noisy = DMatrix::from_fn(10, 2, |r, c| x[(r, c)] + 0.3 * ((r * 7 + c * 3) % 5) as f64);
        let base = procrustes_error(&x, &noisy).unwrap();
        let q = rotation(angle, reflect);
        let moved = (&noisy * q) * scale + DMatrix::from_fn(10, 2, |_, c| shift[c]);
        let after = procrustes_error(&x, &moved).unwrap();
        prop_assert!((base - after).abs() <= 1e-10, "{} vs {}", base, after);
    }

    #[test]
    fn accuracy_is_bounded_and_label_names_do_not_matter(
        truth in proptest::collection::vec(1u32..4, 1..60),
        pred in proptest::collection::vec(1u32..6, 60),
        offset in 1u32..100,
    ) {
        let pred = &pred[..truth.len()];
        let acc = clustering_accuracy(pred, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        let renamed: Vec<u32> = truth.iter().map(|t| t + offset).collect();
        prop_assert_eq!(clustering_accuracy(&renamed, &truth).unwrap(), 1.0);
        let shifted: Vec<u32> = pred.iter().map(|p| p * 3 + offset).collect();
        prop_assert_eq!(clustering_accuracy(&shifted, &truth).unwrap(), acc);
    }

    #[test]
    fn geodesics_bound_euclidean_and_training_rows_reproduce(
        pts in proptest::collection::vec(-5.0f64..5.0, 3 * 40),
        k in 3usize..10,
    ) {
        let points = DMatrix::from_row_slice(40, 3, &pts);
        let model = isomap(&points, (0..40).collect(), k, Some(2)).unwrap();
        let euclid = distance_matrix(&Rows::from_matrix(&points));
        for i in 0..40 {
            for j in 0..40 {
                prop_assert!(model.geodesics[(i, j)] >= euclid[(i, j)] - 1e-9);
            }
        }
        for j in 0..40 {
            let y = out_of_sample_embed(&model.geodesics.row(j).transpose(), &model).unwrap();
            for a in 0..model.dim {
                assert_relative_eq!(y[a], model.embedding[(j, a)], epsilon = 1e-6, max_relative = 1e-9);
            }
        }
    }
}
