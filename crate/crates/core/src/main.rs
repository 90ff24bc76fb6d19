use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use repudf::autodiff::{primitive_suite, GradCheckOptions};
use repudf::demo2d::{run_demo2d, write_demo2d, Demo2dConfig};
use repudf::extraction::{extract_surface, AnalyticField, ExtractionConfig, LearnedField, RepulsionMode, UdfField};
use repudf::io::{
    load_model, read_json, read_ply, save_model, write_csv_rows, write_json, write_loss_log, write_ply,
    CheckpointMeta, PlyFormat, RunConfig,
};
use repudf::metrics::evaluate;
use repudf::shapes::AnalyticShape;
use repudf::training::{pipeline_grad_check, Trainer};
use repudf::Error;

const GRADCHECK_BOUND: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "repudf", version, about = "Fit, extract and evaluate colored UDF reconstructions")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration JSON; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Analytic shape such as `sphere:1`, `torus:1,0.35` or `box:1,1,1`.
    #[arg(long, global = true)]
    shape: Option<String>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repulsion between extracted points (default on).
    #[arg(long, global = true, value_parser = ["on", "off"])]
    repulsion: Option<String>,
    /// Shift-and-repel iterations (default 10).
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// Initial queries at or above this distance are dropped (default 0.23).
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Neighbors per point in the repulsion step (default 16).
    #[arg(long = "k-repulsion", global = true)]
    k_repulsion: Option<usize>,
    /// Per-component bound on each repulsion move (default 0.03).
    #[arg(long, global = true)]
    clamp: Option<f64>,
    /// Coarse anchors gathered per query (default 4).
    #[arg(long = "k-coarse", global = true)]
    k_coarse: Option<usize>,
    /// Fine features gathered per query (default 4).
    #[arg(long = "k-fine", global = true)]
    k_fine: Option<usize>,
    /// Initial query count for extraction.
    #[arg(long, global = true)]
    queries: Option<usize>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write ASCII instead of binary little-endian PLY.
    #[arg(long = "ascii-ply", global = true)]
    ascii_ply: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a decoder to one analytic shape.
    Fit {
        /// Optimizer steps (default 5000).
        #[arg(long)]
        steps: Option<usize>,
        /// Peak learning rate of the cosine schedule (default 1e-4).
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Extract a colored surface from a fitted model or an analytic field.
    Extract {
        /// `analytic:<shape>` to extract from an exact distance field.
        #[arg(long)]
        field: Option<String>,
        /// Checkpoint written by `fit`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Use every n-th seen point for fine features.
        #[arg(long = "fine-stride")]
        fine_stride: Option<usize>,
    },
    /// Compare a predicted PLY against a ground-truth PLY.
    Eval {
        /// Predicted cloud.
        pred: PathBuf,
        /// Ground-truth cloud.
        gt: PathBuf,
    },
    /// Run the planar L-profile comparison with and without repulsion.
    Demo2d {
        /// Grid resolution per axis for the field CSV.
        #[arg(long)]
        grid: Option<usize>,
        /// Half extent of the query square.
        #[arg(long)]
        range: Option<f64>,
    },
    /// Finite-difference check of every primitive and of the full objective.
    Gradcheck {
        /// Pipeline seeds to check, starting at the master seed.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Entries checked per parameter tensor, sampled per seed; 0 checks all.
        #[arg(long = "entries-per-tensor", default_value_t = 256)]
        entries_per_tensor: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 1,
        Error::NonFinite(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("REPUDF_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| format!("REPUDF_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

/// File config merged with command-line overrides.
struct Resolved {
    run: RunConfig,
    seed: u64,
    shape: String,
    out: PathBuf,
    format: PlyFormat,
}

fn resolve(g: &Global) -> repudf::Result<Resolved> {
    let mut run: RunConfig = match &g.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = run.model_config.clone() {
        run.train.model = read_json(p)?;
    }
    let ex = &mut run.extraction;
    if let Some(r) = &g.repulsion {
        ex.repulsion = r.parse()?;
    }
    if let Some(v) = g.iterations {
        ex.iterations = v;
    }
    if let Some(v) = g.threshold {
        ex.threshold = v;
    }
    if let Some(v) = g.k_repulsion {
        ex.k = v;
    }
    if let Some(v) = g.clamp {
        ex.clamp = v;
    }
    if let Some(v) = g.queries {
        ex.query_count = v;
    }
    if let Some(v) = g.k_coarse {
        run.train.model.k_coarse = v;
    }
    if let Some(v) = g.k_fine {
        run.train.model.k_fine = v;
    }
    let seed = g.seed.or(run.seed).unwrap_or(run.train.seed);
    let shape = g
        .shape
        .clone()
        .or_else(|| run.shape.clone())
        .unwrap_or_else(|| run.train.shape.clone());
    let out = g.out.clone().or_else(|| run.out.clone()).unwrap_or_else(|| "out".into());
    run.seed = Some(seed);
    run.shape = Some(shape.clone());
    run.train.shape = shape.clone();
    run.train.seed = seed;
    run.out = Some(out.clone());
    Ok(Resolved {
        run,
        seed,
        shape,
        out,
        format: PlyFormat::from_ascii_flag(g.ascii_ply),
    })
}

/// Returns the exit code; only `gradcheck` reports a numeric failure without
/// an error.
fn run(cli: Cli) -> repudf::Result<u8> {
    let r = resolve(&cli.global)?;
    match cli.command {
        Command::Fit { steps, lr } => cmd_fit(r, steps, lr).map(|()| 0),
        Command::Extract {
            field,
            checkpoint,
            fine_stride,
        } => cmd_extract(r, &cli.global, field, checkpoint, fine_stride).map(|()| 0),
        Command::Eval { pred, gt } => cmd_eval(&r, &pred, &gt).map(|()| 0),
        Command::Demo2d { grid, range } => cmd_demo2d(&r, &cli.global, grid, range).map(|()| 0),
        Command::Gradcheck { seeds, entries_per_tensor } => cmd_gradcheck(&r, seeds, entries_per_tensor),
    }
}

fn cmd_fit(mut r: Resolved, steps: Option<usize>, lr: Option<f64>) -> repudf::Result<()> {
    if let Some(s) = steps {
        r.run.train.steps = s;
    }
    if let Some(v) = lr {
        r.run.train.lr = v;
    }
    let shape: AnalyticShape = r.shape.parse()?;
    std::fs::create_dir_all(&r.out)?;
    write_json(r.out.join("run_config.json"), &r.run)?;
    let mut trainer = Trainer::new(shape, r.run.train.clone(), r.seed)?;
    let start = Instant::now();
    let total = r.run.train.steps;
    let outcome = trainer.run(|rep| {
        if rep.step % 100 == 0 || rep.step + 1 == total {
            info!(
                "step {} total {:.5} udf {:.5} rgb {:.4} anchor {:.4} lr {:.2e} ({:.1}s)",
                rep.step,
                rep.total,
                rep.udf,
                rep.rgb,
                rep.anchor,
                rep.lr,
                start.elapsed().as_secs_f64()
            );
        }
    });
    write_loss_log(r.out.join("loss.csv"), &trainer.history)?;
    let steps_done = trainer.steps_done();
    let meta = CheckpointMeta {
        model: trainer.model.config,
        normalization: trainer.normalization,
        shape: Some(r.shape.clone()),
        steps: steps_done,
        seen: trainer.inference_view()?,
    };
    save_model(r.out.join("checkpoint.rudf"), &trainer.model, &meta)?;
    outcome?;
    info!("wrote {}", r.out.join("checkpoint.rudf").display());
    Ok(())
}

#[derive(Serialize)]
struct ExtractSummary {
    field: String,
    repulsion: RepulsionMode,
    initial_queries: usize,
    survivors: usize,
    iterations: usize,
    empty: bool,
    seed: u64,
    config: ExtractionConfig,
}

fn cmd_extract(
    r: Resolved,
    g: &Global,
    field: Option<String>,
    checkpoint: Option<PathBuf>,
    fine_stride: Option<usize>,
) -> repudf::Result<()> {
    let config = r.run.extraction.clone();
    std::fs::create_dir_all(&r.out)?;
    let (result, label) = match (field, checkpoint) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidArgument("pass either --field or --checkpoint, not both".into()));
        }
        (None, Some(path)) => {
            let (model, meta) = load_model(&path)?;
            let fine = fine_stride.map(|s| meta.seen.subsample(s));
            let learned = LearnedField::new(
                &model,
                &meta.seen,
                fine.as_ref(),
                g.k_coarse.unwrap_or(meta.model.k_coarse),
                g.k_fine.unwrap_or(meta.model.k_fine),
                config.fd_step,
            )?;
            let result = extract_surface(&learned, &config, r.seed)?;
            // Back to the frame the shape was defined in.
            let mut result = result;
            result.cloud = meta.normalization.invert_cloud(&result.cloud);
            (result, format!("checkpoint:{}", path.display()))
        }
        (field, None) => {
            let name = match field {
                Some(f) => f
                    .strip_prefix("analytic:")
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown field {f:?}; expected analytic:<shape>")))?
                    .to_string(),
                None => r.shape.clone(),
            };
            let shape: AnalyticShape = name.parse()?;
            let analytic = AnalyticField::new(shape);
            let planar = config.planar || analytic.is_planar();
            let config = ExtractionConfig { planar, ..config.clone() };
            (extract_surface(&analytic, &config, r.seed)?, format!("analytic:{name}"))
        }
    };
    write_ply(r.out.join("extracted.ply"), &result.cloud, r.format)?;
    let summary = ExtractSummary {
        field: label,
        repulsion: result.repulsion,
        initial_queries: result.initial_count,
        survivors: result.survivors(),
        iterations: result.iterations,
        empty: result.is_empty(),
        seed: r.seed,
        config,
    };
    write_json(r.out.join("summary.json"), &summary)?;
    info!("{} survivors written to {}", summary.survivors, r.out.join("extracted.ply").display());
    Ok(())
}

fn cmd_eval(r: &Resolved, pred: &Path, gt: &Path) -> repudf::Result<()> {
    let pred = read_ply(pred)?;
    let gt = read_ply(gt)?;
    let report = evaluate(&pred, &gt)?;
    std::fs::create_dir_all(&r.out)?;
    write_json(r.out.join("eval.json"), &report)?;
    write_csv_rows(r.out.join("eval.csv"), std::slice::from_ref(&report))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_demo2d(r: &Resolved, g: &Global, grid: Option<usize>, range: Option<f64>) -> repudf::Result<()> {
    let mut config = Demo2dConfig::default();
    if let Some(v) = g.iterations {
        config.iterations = v;
    }
    if let Some(v) = g.threshold {
        config.threshold = v;
    }
    if let Some(v) = g.k_repulsion {
        config.k = v;
    }
    if let Some(v) = g.clamp {
        config.clamp = v;
    }
    if let Some(v) = g.queries {
        config.queries = v;
    }
    if let Some(v) = grid {
        config.grid = v;
    }
    if let Some(v) = range {
        config.range = v;
    }
    let run = run_demo2d(&config, r.seed)?;
    write_demo2d(&r.out, &run, &config)?;
    println!("{}", serde_json::to_string_pretty(&run.summary)?);
    Ok(())
}

#[derive(Serialize)]
struct GradCheckRow {
    seed: u64,
    target: String,
    max_rel_error: f64,
    checked: usize,
    skipped: usize,
    passed: bool,
}

fn cmd_gradcheck(r: &Resolved, seeds: u64, entries_per_tensor: usize) -> repudf::Result<u8> {
    let mut rows = Vec::new();
    for seed in r.seed..r.seed + seeds {
        let options = match entries_per_tensor {
            0 => GradCheckOptions { seed, ..GradCheckOptions::default() },
            n => GradCheckOptions::sampled(n, seed),
        };
        let mut checks: Vec<(String, _)> = primitive_suite(seed, options)?
            .into_iter()
            .map(|(name, rep)| (name.to_string(), rep))
            .collect();
        checks.push(("pipeline".into(), pipeline_grad_check(seed, options)?));
        for (target, rep) in checks {
            rows.push(GradCheckRow {
                seed,
                target,
                max_rel_error: rep.max_rel_error,
                checked: rep.checked,
                skipped: rep.skipped,
                passed: rep.max_rel_error < GRADCHECK_BOUND,
            });
        }
        let pipe = rows.last().expect("pipeline row");
        println!("seed {seed}: pipeline max rel error {:.3e} over {} entries", pipe.max_rel_error, pipe.checked);
    }
    std::fs::create_dir_all(&r.out)?;
    write_csv_rows(r.out.join("gradcheck.csv"), &rows)?;
    let worst = rows.iter().map(|x| x.max_rel_error).fold(0.0, f64::max);
    println!("worst relative error {worst:.3e} (bound {GRADCHECK_BOUND:e})");
    if rows.iter().all(|x| x.passed) {
        Ok(0)
    } else {
        eprintln!("error: gradient check failed");
        Ok(3)
    }
}
