use std::sync::Arc;

use rand::Rng;

use repudf::autodiff::{ParamStore, Tape, Tensor};
use repudf::decoder::{AggregationSources, ModelConfig, NeighborhoodDecoder, VectorAttention};
use repudf::geometry::{p3, sample_query_points, ColoredPointCloud};
use repudf::rng::rng_from_seed;
use repudf::shapes::AnalyticShape;

fn seen(n: usize) -> ColoredPointCloud {
    AnalyticShape::torus(1.0, 0.35).sample_surface(n, 11)
}

fn small_model(seed: u64) -> NeighborhoodDecoder {
    let config = ModelConfig {
        d: 16,
        tokens: 8,
        anchors: 32,
        head_width: 16,
        predictor_ffn: 32,
        ..ModelConfig::default()
    };
    let mut model = NeighborhoodDecoder::new(config, seed).unwrap();
    // A fresh head ignores the aggregated feature (its conditioning starts at
    // zero), so stand in for a trained model by offsetting every parameter.
    let mut rng = rng_from_seed(seed ^ 0xfeed);
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        for v in model.params.get_mut(id).data_mut() {
            *v += 0.1 * (rng.random::<f64>() - 0.5);
        }
    }
    model
}

#[test]
fn aggregation_weights_sum_to_one_per_channel() {
    // With identical value rows, z* equals that row exactly when every
    // channel's weights over the neighborhood sum to 1.
    let d = 6;
    let mut store = ParamStore::default();
    let mut rng = rng_from_seed(3);
    let attention = VectorAttention::new(&mut store, &mut rng, d);
    let mut tape = Tape::new();
    let rows = 10;
    let keys: Vec<f64> = (0..rows * d).map(|i| ((i * 37) % 11) as f64 / 5.0 - 1.0).collect();
    let value_row: Vec<f64> = (0..d).map(|c| c as f64 * 0.3 - 0.7).collect();
    let values: Vec<f64> = (0..rows).flat_map(|_| value_row.clone()).collect();
    let locs: Vec<f64> = (0..rows * 3).map(|i| ((i * 13) % 7) as f64 * 0.2).collect();
    let sources = AggregationSources {
        keys: tape.constant(Tensor::from_vec(rows, d, keys).unwrap()),
        values: tape.constant(Tensor::from_vec(rows, d, values).unwrap()),
        locations: tape.constant(Tensor::from_vec(rows, 3, locs).unwrap()),
        global_query: tape.constant(Tensor::from_vec(1, d, vec![0.1; d]).unwrap()),
    };
    let queries = [p3(0.0, 0.1, 0.2), p3(1.0, -1.0, 0.5)];
    let neighbors = Arc::new(vec![0, 3, 5, 9, 1, 2, 7, 8]);
    let z = attention
        .aggregate(&mut tape, &store, &sources, &queries, neighbors, 4)
        .unwrap();
    let z = tape.value(z);
    for q in 0..2 {
        assert_eq!(z.row_slice(q).len(), d);
        for (got, want) in z.row_slice(q).iter().zip(&value_row) {
            assert!((got - want).abs() < 1e-12);
        }
    }
}

#[test]
fn predictions_depend_only_on_gathered_neighbors() {
    let model = small_model(1);
    let cloud = seen(600);
    let mut scene = model.prepare(&cloud, None).unwrap();
    let queries = sample_query_points(300, 2.0, 5).unwrap();
    let before = model.decode(&scene, &queries, 4, 4).unwrap();

    let target = 7;
    let uses_target: Vec<bool> = queries
        .iter()
        .map(|&q| scene.anchor_index().knn_ids(q, 4).unwrap().contains(&target))
        .collect();
    assert!(uses_target.iter().any(|&u| u) && uses_target.iter().any(|&u| !u));

    scene.perturb_anchor_sources(target, 0.5);
    let after = model.decode(&scene, &queries, 4, 4).unwrap();
    for (i, &uses) in uses_target.iter().enumerate() {
        if uses {
            assert_ne!(before.udf[i], after.udf[i], "query {i} should see the change");
        } else {
            assert_eq!(before.udf[i], after.udf[i], "query {i} changed without the anchor");
        }
    }
}

#[test]
fn neighbor_counts_can_change_at_inference() {
    let model = small_model(2);
    let cloud = seen(400);
    let scene = model.prepare(&cloud, None).unwrap();
    let queries = sample_query_points(50, 2.0, 6).unwrap();
    let default = model.decode(&scene, &queries, 4, 4).unwrap();
    let wide = model.decode(&scene, &queries, 12, 12).unwrap();
    assert_eq!(wide.udf.len(), 50);
    assert!(wide.udf.iter().all(|v| v.is_finite()));
    assert_ne!(default.udf, wide.udf);
    let coarse_only = model.decode(&scene, &queries, 12, 0).unwrap();
    assert!(coarse_only.udf.iter().all(|v| v.is_finite()));
    assert!(model.decode(&scene, &queries, 33, 4).is_err());
}

#[test]
fn fine_feature_resolution_can_change_at_inference() {
    let model = small_model(3);
    let cloud = seen(800);
    let queries = sample_query_points(40, 2.0, 7).unwrap();
    let sparse = model.prepare(&cloud, Some(&cloud.subsample(4))).unwrap();
    let dense = model.prepare(&cloud, None).unwrap();
    assert_eq!(sparse.fine_count(), 200);
    assert_eq!(dense.fine_count(), 800);
    let a = model.decode(&sparse, &queries, 4, 4).unwrap();
    let b = model.decode(&dense, &queries, 4, 4).unwrap();
    assert_ne!(a.udf, b.udf);
}

#[test]
fn chunking_does_not_change_results() {
    let model = small_model(4);
    let cloud = seen(300);
    let scene = model.prepare(&cloud, None).unwrap();
    let queries = sample_query_points(5000, 3.0, 8).unwrap();
    let all = model.decode(&scene, &queries, 4, 4).unwrap();
    let one = model.decode_chunk(&scene, &queries[..100], 4, 4).unwrap();
    assert_eq!(&all.udf[..100], &one.udf[..]);
    assert_eq!(&all.colors[..100], &one.colors[..]);
}

#[test]
fn tape_and_inference_paths_agree() {
    let model = small_model(5);
    let cloud = seen(300);
    let queries = sample_query_points(64, 2.5, 9).unwrap();
    let scene = model.prepare(&cloud, None).unwrap();
    let fast = model.decode_udf(&scene, &queries, 4, 4).unwrap();

    let mut tape = Tape::new();
    let vars = model.scene(&mut tape, &model.params, &cloud, None).unwrap();
    let out = model.query(&mut tape, &model.params, &vars, &queries, 4, 4).unwrap();
    let slow = tape.value(out.udf);
    for (i, v) in fast.iter().enumerate() {
        assert!((v - slow.row_slice(i)[0]).abs() < 1e-12);
    }
}
