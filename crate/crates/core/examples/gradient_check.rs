//! Finite-difference checks of every tape primitive and of the full training
//! objective on a tiny decoder.

use std::time::Instant;

use repudf::autodiff::{primitive_suite, GradCheckOptions};
use repudf::training::pipeline_grad_check;

fn main() -> repudf::Result<()> {
    let options = GradCheckOptions::default();
    for (name, report) in primitive_suite(0, options)? {
        println!("{name:>18}: max rel error {:.2e} over {} entries", report.max_rel_error, report.checked);
    }
    let start = Instant::now();
    let report = pipeline_grad_check(0, options)?;
    println!(
        "full objective: max rel error {:.2e} over {} entries, {} skipped at branch changes ({:.1?})",
        report.max_rel_error,
        report.checked,
        report.skipped,
        start.elapsed()
    );
    Ok(())
}
