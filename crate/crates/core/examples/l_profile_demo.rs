//! The planar L-profile comparison. Writes scatter and field CSVs for
//! external plotting and prints the summary.
//!
//! cargo run --release --example l_profile_demo -- [seed] [out_dir]

use std::path::PathBuf;

use repudf::demo2d::{run_demo2d, write_demo2d, Demo2dConfig};

fn main() -> repudf::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed must be an integer"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "l_profile_demo".into()));

    let config = Demo2dConfig::default();
    let run = run_demo2d(&config, seed)?;
    write_demo2d(&out, &run, &config)?;

    for mode in [&run.summary.off, &run.summary.on] {
        println!(
            "repulsion {}: {} points, coverage {:.3}, spacing CV {:.3}, corner/flat density {:.2}",
            mode.repulsion, mode.survivors, mode.coverage, mode.spacing_cv, mode.corner_flat_ratio
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}
