//! Metrics between two PLY files, or between two samplings of a shape when no
//! files are given.
//!
//! cargo run --release --example evaluate_clouds -- pred.ply gt.ply

use repudf::io::read_ply;
use repudf::metrics::evaluate;
use repudf::shapes::AnalyticShape;

fn main() -> repudf::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (pred, gt) = match args.as_slice() {
        [p, g] => (read_ply(p)?, read_ply(g)?),
        _ => {
            let shape = AnalyticShape::sphere(1.0);
            let jitter = shape.sample_surface(5000, 2).map_positions(|p| p * 1.02);
            (jitter, shape.sample_surface(20_000, 3))
        }
    };
    let report = evaluate(&pred, &gt)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
