//! Fits a decoder to one analytic shape, extracts a point cloud with and
//! without repulsion, and scores both against a ground-truth sample.
//!
//! `cargo run --release --example fit_and_extract -- [shape] [steps] [out_dir]`
//!
//! The full default run (torus, 5000 steps) takes about 12 minutes; a few
//! hundred steps are enough to see the pipeline end to end.

use std::path::PathBuf;

use repudf::extraction::{extract_surface, ExtractionConfig, LearnedField, RepulsionMode};
use repudf::io::{save_model, write_loss_log, write_ply, CheckpointMeta, PlyFormat};
use repudf::metrics::evaluate;
use repudf::shapes::AnalyticShape;
use repudf::training::{fit_shape, TrainConfig};

fn main() -> repudf::Result<()> {
    let mut args = std::env::args().skip(1);
    let shape_name = args.next().unwrap_or_else(|| "torus".into());
    let steps: usize = args.next().map_or(300, |s| s.parse().expect("steps"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "fit_and_extract_out".into()));
    std::fs::create_dir_all(&out)?;

    let shape: AnalyticShape = shape_name.parse()?;
    let config = TrainConfig { steps, shape: shape_name.clone(), ..TrainConfig::default() };
    let fitted = fit_shape(&shape, &config, 0)?;
    let last = fitted.history.last().expect("at least one step");
    println!("{steps} steps: total {:.4} udf {:.4} anchor {:.4} rgb {:.4}", last.total, last.udf, last.anchor, last.rgb);
    write_loss_log(out.join("loss.csv"), &fitted.history)?;
    let meta = CheckpointMeta {
        model: fitted.model.config,
        normalization: fitted.normalization,
        shape: Some(shape_name),
        steps,
        seen: fitted.seen.clone(),
    };
    save_model(out.join("checkpoint.rudf"), &fitted.model, &meta)?;

    // Scores are computed in the normalized frame the model works in.
    let gt = fitted.normalization.apply_cloud(&shape.sample_surface(20_000, 1));
    let field = LearnedField::new(&fitted.model, &fitted.seen, None, 4, 4, 1e-3)?;
    for mode in [RepulsionMode::Off, RepulsionMode::On] {
        let extraction = ExtractionConfig { query_count: 50_000, repulsion: mode, ..ExtractionConfig::default() };
        let result = extract_surface(&field, &extraction, 0)?;
        if result.is_empty() {
            println!("repulsion {mode}: no query fell under the threshold");
            continue;
        }
        let report = evaluate(&result.cloud, &gt)?;
        println!(
            "repulsion {mode}: {} points, F1 {:.2}, chamfer {:.4}",
            result.survivors(),
            report.f1,
            report.l1_chamfer
        );
        let cloud = fitted.normalization.invert_cloud(&result.cloud);
        write_ply(out.join(format!("extracted_{mode}.ply")), &cloud, PlyFormat::default())?;
    }
    Ok(())
}
