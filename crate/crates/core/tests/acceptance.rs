//! Acceptance checks. Every test writes one PASS/FAIL line straight to stdout,
//! so the lines show up even when test output is captured.
//!
//! The two torus checks fit the default model for 5,000 steps and are ignored
//! by default. Run everything with
//! `cargo test --release --test acceptance -- --include-ignored`.

mod common;

use std::io::Write;
use std::path::Path;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repudf::autodiff::{primitive_suite, GradCheckOptions};
use repudf::decoder::{ModelConfig, NeighborhoodDecoder};
use repudf::demo2d::{run_demo2d, write_demo2d, Demo2dConfig};
use repudf::extraction::{extract_surface, udf_shift_step, AnalyticField, ExtractionConfig, LearnedField, RepulsionMode};
use repudf::geometry::{normalize_to_unit, sample_query_points};
use repudf::io::{write_loss_log, write_ply, PlyFormat};
use repudf::metrics::{f1_score, F1_THRESHOLD};
use repudf::shapes::AnalyticShape;
use repudf::training::{fit_shape, pipeline_grad_check, TrainConfig, Trainer};

/// Timing checks must not share the machine with each other.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("\nacceptance {id} {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(pass, "{}", line.trim_end());
}

#[test]
fn criterion_1_gradients() {
    let _guard = serial();
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..10 {
        let options = GradCheckOptions::sampled(256, seed);
        for (_, r) in primitive_suite(seed, options).unwrap() {
            worst = worst.max(r.max_rel_error);
            checked += r.checked;
        }
        let r = pipeline_grad_check(seed, options).unwrap();
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-4 && elapsed < Duration::from_secs(60);
    report(1, "gradient check", pass, &format!("max rel error {worst:.2e} over {checked} entries, {elapsed:.1?}"));
}

#[test]
fn criterion_2_oracles() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = Vec::new();
    for i in 0..200u64 {
        let n = rng.random_range(1..=1000);
        let m = rng.random_range(1..=1000);
        if let Err(e) = common::check_instance(i, n, m) {
            failures.push(e);
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(120);
    let detail = match failures.first() {
        Some(first) => format!("{} of 200 instances failed, first: {first}", failures.len()),
        None => format!("200 instances, {elapsed:.1?}"),
    };
    report(2, "brute-force oracles", pass, &detail);
}

#[test]
fn criterion_3_sphere_shift() {
    let _guard = serial();
    let shape = AnalyticShape::sphere(1.0);
    let field = AnalyticField::new(shape);
    let exterior: Vec<_> = sample_query_points(40_000, 3.0, 3)
        .unwrap()
        .into_iter()
        .filter(|p| p.norm() > 1.0)
        .take(10_000)
        .collect();
    assert_eq!(exterior.len(), 10_000);
    let moved = udf_shift_step(&exterior, &field, 1e-12).unwrap();
    let worst = moved.iter().map(|&p| shape.udf(p)).fold(0.0, f64::max);
    report(3, "one-step sphere shift", worst < 1e-9, &format!("max udf after one step {worst:.2e}"));
}

#[test]
fn criterion_4_l_profile_demo() {
    let _guard = serial();
    let start = Instant::now();
    let run = run_demo2d(&Demo2dConfig::default(), 0).unwrap();
    let elapsed = start.elapsed();
    let (off, on) = (&run.summary.off, &run.summary.on);
    let pass = on.coverage > off.coverage
        && on.corner_flat_ratio < off.corner_flat_ratio
        && on.spacing_cv < off.spacing_cv
        && elapsed < Duration::from_secs(60);
    let detail = format!(
        "coverage {:.3} -> {:.3}, corner/flat {:.3} -> {:.3}, spacing CV {:.3} -> {:.3}, {elapsed:.1?}",
        off.coverage, on.coverage, off.corner_flat_ratio, on.corner_flat_ratio, off.spacing_cv, on.spacing_cv
    );
    report(4, "L-profile demo", pass, &detail);
}

#[test]
fn criterion_6_decode_scaling() {
    let _guard = serial();
    let model = NeighborhoodDecoder::new(ModelConfig::default(), 0).unwrap();
    let (seen, _) = normalize_to_unit(&AnalyticShape::torus(1.0, 0.35).sample_surface(2000, 6)).unwrap();
    let sizes = [1_000usize, 10_000, 100_000];
    let mut anchor_times = Vec::new();
    let mut decode_times = Vec::new();
    for (i, &nq) in sizes.iter().enumerate() {
        let queries = sample_query_points(nq, 3.0, i as u64).unwrap();
        // Minimum of three repetitions filters scheduler noise.
        let mut best_anchor = f64::INFINITY;
        let mut best_decode = f64::INFINITY;
        for _ in 0..3 {
            let t = Instant::now();
            let scene = model.prepare(&seen, None).unwrap();
            best_anchor = best_anchor.min(t.elapsed().as_secs_f64());
            let t = Instant::now();
            let out = model.decode(&scene, &queries, 4, 4).unwrap();
            best_decode = best_decode.min(t.elapsed().as_secs_f64());
            assert_eq!(out.udf.len(), nq);
        }
        anchor_times.push(best_anchor);
        decode_times.push(best_decode);
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let r2 = r_squared(&xs, &decode_times);
    let mean = anchor_times.iter().sum::<f64>() / 3.0;
    let spread = anchor_times.iter().map(|t| (t - mean).abs() / mean).fold(0.0, f64::max);
    let pass = r2 > 0.99 && spread < 0.1;
    let detail = format!(
        "decode {:.3}/{:.3}/{:.3} s, R^2 {r2:.5}; anchor prediction {:.1}/{:.1}/{:.1} ms, max deviation {:.1}%",
        decode_times[0],
        decode_times[1],
        decode_times[2],
        anchor_times[0] * 1e3,
        anchor_times[1] * 1e3,
        anchor_times[2] * 1e3,
        spread * 100.0
    );
    report(6, "linear decode time", pass, &detail);
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

#[test]
fn criterion_7_loss_identity() {
    let _guard = serial();
    let config = TrainConfig { steps: 500, ..TrainConfig::default() };
    let mut trainer = Trainer::new(AnalyticShape::torus(1.0, 0.35), config, 7).unwrap();
    let mut worst = 0.0f64;
    let mut steps = 0;
    trainer
        .run(|r| {
            worst = worst.max(r.identity_error());
            steps += 1;
        })
        .unwrap();
    let pass = steps == 500 && worst <= 1e-12;
    report(7, "loss identity", pass, &format!("{steps} steps, max |total - weighted sum| {worst:.1e}"));
}

/// Numbers of one default torus fit plus extraction. F1 is scored in the
/// normalized frame the model works in; the shape's own frame is kept for
/// reference.
struct TorusRun {
    f1_on: f64,
    f1_off: f64,
    f1_on_shape_frame: f64,
    f1_off_shape_frame: f64,
    elapsed: Duration,
}

/// Fits the default torus and extracts at 50,000 queries in both modes,
/// writing the loss log and both clouds into `dir`.
fn torus_run(dir: &Path) -> TorusRun {
    let start = Instant::now();
    let shape = AnalyticShape::torus(1.0, 0.35);
    let fitted = fit_shape(&shape, &TrainConfig::default(), 0).unwrap();
    write_loss_log(dir.join("loss.csv"), &fitted.history).unwrap();
    let gt = shape.sample_surface(20_000, 1);
    let gt_normalized = fitted.normalization.apply_cloud(&gt);
    let field = LearnedField::new(&fitted.model, &fitted.seen, None, 4, 4, 1e-3).unwrap();
    let mut f1 = [[0.0; 2]; 2];
    for (slot, mode) in [RepulsionMode::Off, RepulsionMode::On].into_iter().enumerate() {
        let config = ExtractionConfig { query_count: 50_000, repulsion: mode, ..ExtractionConfig::default() };
        let result = extract_surface(&field, &config, 0).unwrap();
        let cloud = fitted.normalization.invert_cloud(&result.cloud);
        write_ply(dir.join(format!("extracted_{mode}.ply")), &cloud, PlyFormat::default()).unwrap();
        if !cloud.is_empty() {
            f1[slot][0] = f1_score(&result.cloud, &gt_normalized, F1_THRESHOLD).unwrap().f1;
            f1[slot][1] = f1_score(&cloud, &gt, F1_THRESHOLD).unwrap().f1;
        }
    }
    TorusRun {
        f1_off: f1[0][0],
        f1_on: f1[1][0],
        f1_off_shape_frame: f1[0][1],
        f1_on_shape_frame: f1[1][1],
        elapsed: start.elapsed(),
    }
}

/// The first torus run, shared by the end-to-end and determinism checks.
fn first_torus_run() -> &'static (tempfile::TempDir, TorusRun) {
    static RUN: OnceLock<(tempfile::TempDir, TorusRun)> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let run = torus_run(dir.path());
        (dir, run)
    })
}

#[test]
#[ignore = "fits the default torus model for 5,000 steps"]
fn criterion_5_torus_end_to_end() {
    let _guard = serial();
    let (_, run) = first_torus_run();
    let pass = run.f1_on >= 90.0 && run.f1_on >= run.f1_off && run.elapsed < Duration::from_secs(30 * 60);
    let detail = format!(
        "F1 repulsion on {:.2}, off {:.2}; in the shape's own frame {:.2} and {:.2}; {:.1?}",
        run.f1_on, run.f1_off, run.f1_on_shape_frame, run.f1_off_shape_frame, run.elapsed
    );
    report(5, "torus fit and extraction", pass, &detail);
}

#[test]
#[ignore = "fits the default torus model twice"]
fn criterion_8_determinism() {
    let _guard = serial();
    let demo = |dir: &Path| {
        let config = Demo2dConfig::default();
        write_demo2d(dir, &run_demo2d(&config, 0).unwrap(), &config).unwrap();
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    demo(a.path());
    demo(b.path());
    let mut differing = differing_files(a.path(), b.path());

    let (first, _) = first_torus_run();
    let second = tempfile::tempdir().unwrap();
    torus_run(second.path());
    differing.extend(differing_files(first.path(), second.path()));

    let detail = if differing.is_empty() {
        "demo2d and torus outputs byte-identical".to_string()
    } else {
        format!("differing: {}", differing.join(", "))
    };
    report(8, "determinism", differing.is_empty(), &detail);
}

/// Names of files in `a` whose bytes differ from the same file in `b`.
fn differing_files(a: &Path, b: &Path) -> Vec<String> {
    let mut names: Vec<_> = std::fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    names
        .into_iter()
        .filter(|n| std::fs::read(a.join(n)).ok() != std::fs::read(b.join(n)).ok())
        .map(|n| n.to_string_lossy().into_owned())
        .collect()
}
