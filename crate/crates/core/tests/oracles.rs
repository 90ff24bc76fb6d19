mod common;

use common::*;
use proptest::prelude::*;
use repudf::extraction::{clamp_components, repulsion_step};
use repudf::geometry::p3;
use repudf::metrics::{chamfer_l1, f1_score, spacing_uniformity};
use repudf::shapes::AnalyticShape;
use repudf::spatial::SpatialIndex;
use repudf::training::{udf_loss, UDF_CLAMP};
use repudf::autodiff::{Tape, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn library_matches_references(seed in any::<u64>(), n in 1usize..300, m in 1usize..300) {
        prop_assert_eq!(check_instance(seed, n, m), Ok(()));
    }

    #[test]
    fn knn_is_sorted_and_nonnegative(seed in any::<u64>(), n in 1usize..500, k in 1usize..20) {
        let cloud = random_cloud(n, seed);
        let index = SpatialIndex::build(&cloud.positions).unwrap();
        let k = k.min(n);
        let nbs = index.knn(p3(0.1, -0.2, 0.3), k).unwrap();
        prop_assert_eq!(nbs.len(), k);
        for w in nbs.windows(2) {
            prop_assert!(w[0].dist <= w[1].dist);
            prop_assert!(w[0].dist < w[1].dist || w[0].id < w[1].id);
        }
        prop_assert!(nbs[0].dist >= 0.0);
    }

    #[test]
    fn chamfer_and_f1_of_identical_clouds(seed in any::<u64>(), n in 1usize..200) {
        let cloud = random_cloud(n, seed);
        prop_assert_eq!(chamfer_l1(&cloud, &cloud).unwrap(), 0.0);
        prop_assert_eq!(f1_score(&cloud, &cloud, 0.1).unwrap().f1, 100.0);
    }

    #[test]
    fn chamfer_is_symmetric(seed in any::<u64>(), n in 1usize..100, m in 1usize..100) {
        let a = random_cloud(n, seed);
        let b = random_cloud(m, seed ^ 1);
        let ab = chamfer_l1(&a, &b).unwrap();
        let ba = chamfer_l1(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
    }

    #[test]
    fn repulsion_never_exceeds_clamp(seed in any::<u64>(), n in 2usize..200, clamp in 0.001f64..0.1) {
        let cloud = random_cloud(n, seed);
        let k = 16.min(n - 1);
        let out = repulsion_step(&cloud.positions, k, clamp, 1.0, false).unwrap();
        // The step itself is clamped exactly; recovering it as a difference of
        // positions adds one rounding of the position's magnitude.
        let tol = clamp + 4.0 * f64::EPSILON;
        for (a, b) in cloud.positions.iter().zip(&out) {
            let d = *b - *a;
            prop_assert!(d.x.abs() <= tol && d.y.abs() <= tol && d.z.abs() <= tol, "{:?}", d);
        }
    }

    #[test]
    fn clamp_is_componentwise(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
        let c = clamp_components(p3(x, y, z), 0.03);
        prop_assert_eq!(c, p3(x.clamp(-0.03, 0.03), y.clamp(-0.03, 0.03), z.clamp(-0.03, 0.03)));
    }

    #[test]
    fn udf_loss_ignores_raising_saturated_predictions(
        f in proptest::collection::vec(0.0f64..1.0, 1..20),
        bump in 0.0f64..2.0,
    ) {
        let targets: Vec<f64> = f.iter().map(|v| (v * 7.0) % 1.0).collect();
        let eval = |preds: &[f64]| {
            let mut tape = Tape::new();
            let p = tape.constant(Tensor::from_vec(preds.len(), 1, preds.to_vec()).unwrap());
            let l = udf_loss(&mut tape, p, &targets, UDF_CLAMP).unwrap();
            tape.value(l).item()
        };
        let raised: Vec<f64> = f.iter().map(|&v| if v > UDF_CLAMP { v + bump } else { v }).collect();
        prop_assert_eq!(eval(&f), eval(&raised));
    }

    #[test]
    fn sphere_udf_is_radial(x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0, r in 0.2f64..2.0) {
        let s = AnalyticShape::sphere(r);
        let p = p3(x, y, z);
        prop_assert!((s.udf(p) - (p.norm() - r).abs()).abs() < 1e-12);
    }
}

#[test]
fn uniform_grid_has_zero_spacing_cv() {
    let pts: Vec<_> = (0..10)
        .flat_map(|i| (0..10).map(move |j| p3(f64::from(i) * 0.1, f64::from(j) * 0.1, 0.0)))
        .collect();
    assert!(spacing_uniformity(&pts).unwrap() < 1e-12);
}
