//! k-nearest and radius queries on a k-d tree, checked against a linear scan,
//! plus farthest point sampling.

use std::time::Instant;

use repudf::geometry::sample_query_points;
use repudf::spatial::{fps_sample, SpatialIndex};

fn main() -> repudf::Result<()> {
    let points = sample_query_points(100_000, 1.0, 7)?;
    let queries = sample_query_points(1000, 1.2, 8)?;

    let start = Instant::now();
    let index = SpatialIndex::build(&points)?;
    println!("built index over {} points in {:.1?}", index.len(), start.elapsed());

    let start = Instant::now();
    let mut mismatches = 0;
    for &q in &queries {
        let fast = index.knn_ids(q, 8)?;
        let mut brute: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (p.dist(q), i)).collect();
        brute.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let brute: Vec<usize> = brute[..8].iter().map(|&(_, i)| i).collect();
        if fast != brute {
            mismatches += 1;
        }
    }
    println!("8-NN for {} queries: {} mismatches vs linear scan ({:.1?})", queries.len(), mismatches, start.elapsed());

    let ball = index.radius(queries[0], 0.1)?;
    println!("{} points within 0.1 of {:?}", ball.len(), queries[0]);

    let start = Instant::now();
    let picked = fps_sample(&points, 200, 0)?;
    println!("farthest point sampling kept {} points in {:.1?}", picked.len(), start.elapsed());
    Ok(())
}
