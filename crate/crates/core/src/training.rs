//! Losses, training targets and the per-shape fitting loop.
//!
//! The objective is `L = L_udf + 0.01 * L_rgb + 0.03 * L_anchor`:
//!
//! * `L_udf`: mean `|min(f, δ) - min(udf, δ)|` with `δ = 0.5`;
//! * `L_rgb`: 256-way cross-entropy per color channel, over queries whose
//!   nearest ground-truth point is closer than 0.1;
//! * `L_anchor`: L1 chamfer between anchor locations and an FPS subset of the
//!   ground truth with as many points as there are anchors.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, Adam, AdamConfig, GradCheckOptions, GradCheckReport, Tape, Tensor, Var};
use crate::decoder::{ModelConfig, NeighborhoodDecoder, COLOR_BINS};
use crate::error::{invalid_input, Error, Result};
use crate::geometry::{
    normalization_for, sample_query_points, ColoredPointCloud, NormalizationTransform, Point3, Rgb, Similarity,
};
use crate::rng::{derive_indexed, derive_seed, rng_from_seed};
use rand_distr::{Distribution, StandardNormal};
use crate::shapes::AnalyticShape;
use crate::spatial::{fps_sample, SpatialIndex};
use crate::autodiff::ParamStore;

pub const UDF_CLAMP: f64 = 0.5;
pub const RGB_WEIGHT: f64 = 0.01;
pub const ANCHOR_WEIGHT: f64 = 0.03;
/// Color supervision radius (strict).
pub const COLOR_RADIUS: f64 = 0.1;

/// Per-query supervision plus the sparse cloud for the anchor loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTargets {
    pub udf: Vec<f64>,
    /// `Some` only when the nearest ground-truth point is closer than 0.1.
    pub colors: Vec<Option<Rgb>>,
    pub sparse_gt: Vec<Point3>,
}

impl TrainTargets {
    pub fn valid_color_count(&self) -> usize {
        self.colors.iter().filter(|c| c.is_some()).count()
    }
}

/// Ground truth with its spatial index and FPS subset, reusable across batches.
#[derive(Debug, Clone)]
pub struct TargetBuilder {
    gt: ColoredPointCloud,
    index: SpatialIndex,
    sparse: Vec<Point3>,
}

impl TargetBuilder {
    pub fn new(gt: ColoredPointCloud, sparse_count: usize) -> Result<Self> {
        if gt.is_empty() {
            return Err(invalid_input("ground truth cloud is empty"));
        }
        let index = SpatialIndex::build(&gt.positions)?;
        let count = sparse_count.min(gt.len());
        let sparse = fps_sample(&gt.positions, count, 0)?
            .into_iter()
            .map(|i| gt.positions[i])
            .collect();
        Ok(TargetBuilder { gt, index, sparse })
    }

    pub fn gt(&self) -> &ColoredPointCloud {
        &self.gt
    }

    pub fn sparse(&self) -> &[Point3] {
        &self.sparse
    }

    pub fn targets(&self, queries: &[Point3]) -> TrainTargets {
        let mut udf = Vec::with_capacity(queries.len());
        let mut colors = Vec::with_capacity(queries.len());
        for &q in queries {
            let nb = self.index.nearest(q);
            udf.push(nb.dist);
            let color = match &self.gt.colors {
                Some(c) if nb.dist < COLOR_RADIUS => Some(c[nb.id]),
                _ => None,
            };
            colors.push(color);
        }
        TrainTargets {
            udf,
            colors,
            sparse_gt: self.sparse.clone(),
        }
    }
}

/// Targets for `queries` against `gt`, with an FPS subset of `sparse_count` points.
pub fn build_targets(queries: &[Point3], gt: &ColoredPointCloud, sparse_count: usize) -> Result<TrainTargets> {
    Ok(TargetBuilder::new(gt.clone(), sparse_count)?.targets(queries))
}

/// Mean of `|min(f, δ) - min(udf, δ)|`; `pred` is `Nq×1`.
pub fn udf_loss(tape: &mut Tape, pred: Var, targets: &[f64], delta: f64) -> Result<Var> {
    udf_loss_with(tape, pred, targets, delta, UdfLoss::Clamped)
}

/// How predictions above `δ` are treated by the UDF loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UdfLoss {
    /// `|min(f, δ) - min(udf, δ)|` for every query. A prediction above `δ`
    /// gets no gradient even when its target is below `δ`.
    Clamped,
    /// Same as `Clamped` except that queries with `udf < δ` compare the
    /// unclamped prediction, `|f - udf|`. The two agree whenever `f <= δ` or
    /// `udf >= δ`. Keeps near-surface queries trainable once the field has
    /// risen above `δ` everywhere, which uniform queries otherwise cause
    /// within the first few hundred steps.
    #[default]
    NearUnclamped,
}

pub fn udf_loss_with(tape: &mut Tape, pred: Var, targets: &[f64], delta: f64, kind: UdfLoss) -> Result<Var> {
    let [rows, cols] = tape.shape(pred);
    if rows != targets.len() || cols != 1 {
        return Err(Error::ShapeMismatch {
            op: "udf_loss",
            lhs: [rows, cols],
            rhs: [targets.len(), 1],
        });
    }
    let clamped = tape.clamp_max(pred, delta);
    let compared = match kind {
        UdfLoss::Clamped => clamped,
        UdfLoss::NearUnclamped => {
            let near: Vec<f64> = targets.iter().map(|&t| if t < delta { 1.0 } else { 0.0 }).collect();
            let far = Tensor::from_vec(rows, 1, near.iter().map(|m| 1.0 - m).collect())?;
            let near = tape.mul_const(pred, Tensor::from_vec(rows, 1, near)?)?;
            let far = tape.mul_const(clamped, far)?;
            tape.add(near, far)?
        }
    };
    let t = tape.constant(Tensor::from_vec(rows, 1, targets.iter().map(|&t| t.min(delta)).collect())?);
    let diff = tape.sub(compared, t)?;
    let diff = tape.abs(diff);
    Ok(tape.mean(diff))
}

/// Color bin for a channel value in `[0, 1]`.
pub fn color_bin(c: f64) -> usize {
    ((c.clamp(0.0, 1.0) * 255.0).round() as usize).min(COLOR_BINS - 1)
}

/// Mean cross-entropy over the channels of valid queries; exactly zero (and
/// gradient-free) when no query is valid. `logits` is `3·Nq × 256`.
pub fn rgb_loss(tape: &mut Tape, logits: Var, colors: &[Option<Rgb>]) -> Result<Var> {
    let [rows, cols] = tape.shape(logits);
    if rows != 3 * colors.len() || cols != COLOR_BINS {
        return Err(Error::ShapeMismatch {
            op: "rgb_loss",
            lhs: [rows, cols],
            rhs: [3 * colors.len(), COLOR_BINS],
        });
    }
    let mut ids = Vec::new();
    let mut bins = Vec::new();
    for (i, c) in colors.iter().enumerate() {
        if let Some(rgb) = c {
            for ch in 0..3 {
                ids.push(3 * i + ch);
                bins.push(color_bin(rgb[ch]));
            }
        }
    }
    if ids.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let n = ids.len() as f64;
    let rows = tape.gather_rows(logits, Arc::new(ids))?;
    let logp = tape.log_softmax_rows(rows);
    let picked = tape.pick(logp, Arc::new(bins))?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / n))
}

/// Index of the L1-nearest point in `set` (ties to the smaller index).
pub fn nearest_l1(p: Point3, set: &[Point3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, &s) in set.iter().enumerate() {
        let d = (p - s).norm_l1();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// L1 chamfer between anchor locations (`M×3`) and `gt`: the mean L1 distance
/// from each anchor to its L1-nearest ground-truth point plus the mean in the
/// other direction.
pub fn anchor_loss(tape: &mut Tape, locations: Var, gt: &[Point3]) -> Result<Var> {
    let [m, cols] = tape.shape(locations);
    if m == 0 || gt.is_empty() || cols != 3 {
        return Err(invalid_input("anchor loss needs non-empty M×3 anchors and ground truth"));
    }
    let anchors = crate::decoder::rows_to_points(tape.value(locations));
    let to_gt: Vec<usize> = anchors.iter().map(|&a| nearest_l1(a, gt).0).collect();
    let to_anchor: Vec<usize> = gt.iter().map(|&g| nearest_l1(g, &anchors).0).collect();
    tape.note_branch(&to_gt);
    tape.note_branch(&to_anchor);

    let matched_gt: Vec<Point3> = to_gt.iter().map(|&i| gt[i]).collect();
    let matched_gt = tape.constant(crate::decoder::points_to_tensor(&matched_gt));
    let forward = tape.sub(locations, matched_gt)?;
    let forward = tape.abs(forward);
    let forward = tape.sum(forward);
    let forward = tape.scale(forward, 1.0 / m as f64);

    let gathered = tape.gather_rows(locations, Arc::new(to_anchor))?;
    let gt_t = tape.constant(crate::decoder::points_to_tensor(gt));
    let backward = tape.sub(gathered, gt_t)?;
    let backward = tape.abs(backward);
    let backward = tape.sum(backward);
    let backward = tape.scale(backward, 1.0 / gt.len() as f64);
    tape.add(forward, backward)
}

/// `udf + 0.01 * rgb + 0.03 * anchor`.
pub fn total_loss(tape: &mut Tape, udf: Var, rgb: Var, anchor: Var) -> Result<Var> {
    let rgb = tape.scale(rgb, RGB_WEIGHT);
    let anchor = tape.scale(anchor, ANCHOR_WEIGHT);
    let partial = tape.add(udf, rgb)?;
    tape.add(partial, anchor)
}

/// Plain-number version of [`total_loss`], with the same evaluation order.
pub fn combine_losses(udf: f64, rgb: f64, anchor: f64) -> f64 {
    udf + RGB_WEIGHT * rgb + ANCHOR_WEIGHT * anchor
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub anchor: Var,
    pub udf: Var,
    pub rgb: Var,
    pub total: Var,
}

/// One training batch: a seen cloud, queries and their targets.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub seen: ColoredPointCloud,
    pub queries: Vec<Point3>,
    pub targets: TrainTargets,
    pub udf_loss: UdfLoss,
}

/// Builds the full objective for one batch on `tape`.
pub fn training_objective(
    model: &NeighborhoodDecoder,
    tape: &mut Tape,
    store: &ParamStore,
    batch: &TrainingBatch,
) -> Result<LossVars> {
    let scene = model.scene(tape, store, &batch.seen, None)?;
    let out = model.query(
        tape,
        store,
        &scene,
        &batch.queries,
        model.config.k_coarse,
        model.config.k_fine,
    )?;
    let udf = udf_loss_with(tape, out.udf, &batch.targets.udf, UDF_CLAMP, batch.udf_loss)?;
    let rgb = rgb_loss(tape, out.color_logits, &batch.targets.colors)?;
    let anchor = anchor_loss(tape, scene.anchors.locations, &batch.targets.sparse_gt)?;
    let total = total_loss(tape, udf, rgb, anchor)?;
    Ok(LossVars { anchor, udf, rgb, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub anchor: f64,
    pub udf: f64,
    pub rgb: f64,
    pub total: f64,
    pub lr: f64,
}

impl LossReport {
    /// Largest deviation of `total` from the weighted sum of its components.
    pub fn identity_error(&self) -> f64 {
        (self.total - combine_losses(self.udf, self.rgb, self.anchor)).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Shape string such as `torus:1,0.35`.
    pub shape: String,
    pub augmentation: bool,
    pub udf_loss: UdfLoss,
    pub query_count: usize,
    pub query_range: f64,
    pub gt_points: usize,
    /// Surface samples drawn per partial view before hidden-point removal.
    pub view_samples: usize,
    pub view_dir: [f64; 3],
    pub view_noise: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            lr: 1e-4,
            warmup_fraction: 0.05,
            seed: 0,
            shape: "sphere:1".into(),
            augmentation: false,
            udf_loss: UdfLoss::default(),
            query_count: 550,
            query_range: 3.0,
            gt_points: 20_000,
            view_samples: 2000,
            view_dir: [1.0, 0.6, 0.8],
            view_noise: 0.0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.steps == 0 || self.query_count == 0 || self.gt_points == 0 || self.view_samples == 0 {
            return Err(crate::error::invalid_argument(
                "steps, query_count, gt_points and view_samples must be positive",
            ));
        }
        if !(self.lr > 0.0) || !(self.query_range > 0.0) || !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(crate::error::invalid_argument("lr, query_range or warmup_fraction out of range"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            total_steps: self.steps,
            warmup_fraction: self.warmup_fraction,
            ..AdamConfig::default()
        }
    }
}

/// Per-shape fitting state. All clouds held here are in normalized units.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: NeighborhoodDecoder,
    pub normalization: NormalizationTransform,
    pub history: Vec<LossReport>,
    shape: AnalyticShape,
    config: TrainConfig,
    seed: u64,
    adam: Adam,
    targets: TargetBuilder,
}

impl Trainer {
    pub fn new(shape: AnalyticShape, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let model = NeighborhoodDecoder::new(config.model, derive_seed(seed, "model"))?;
        let gt_raw = shape.sample_surface(config.gt_points, derive_seed(seed, "gt"));
        let normalization = normalization_for(&gt_raw)?;
        let gt = normalization.apply_cloud(&gt_raw);
        let targets = TargetBuilder::new(gt, config.model.anchors)?;
        let adam = Adam::new(config.adam(), &model.params);
        Ok(Trainer {
            model,
            normalization,
            history: Vec::with_capacity(config.steps),
            shape,
            config,
            seed,
            adam,
            targets,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn shape(&self) -> &AnalyticShape {
        &self.shape
    }

    /// Normalized ground truth.
    pub fn gt(&self) -> &ColoredPointCloud {
        self.targets.gt()
    }

    pub fn steps_done(&self) -> usize {
        self.history.len()
    }

    /// Normalized partial view for step `t`.
    pub fn seen_cloud(&self, t: usize) -> Result<ColoredPointCloud> {
        let c = &self.config;
        let raw = self.shape.make_partial_view(
            Point3::from_array(c.view_dir),
            c.view_samples,
            c.view_noise,
            derive_indexed(self.seed, "view", t as u64),
        )?;
        Ok(self.normalization.apply_cloud(&raw))
    }

    /// The batch used at step `t`; deterministic in `(seed, t)`.
    pub fn batch(&self, t: usize) -> Result<TrainingBatch> {
        let seen = self.seen_cloud(t)?;
        let queries = sample_query_points(
            self.config.query_count,
            self.config.query_range,
            derive_indexed(self.seed, "queries", t as u64),
        )?;
        if self.config.augmentation {
            let sim = Similarity::random(derive_indexed(self.seed, "augment", t as u64));
            let gt = sim.apply_cloud(self.targets.gt());
            let builder = TargetBuilder::new(gt, self.config.model.anchors)?;
            let seen = sim.apply_cloud(&seen);
            let targets = builder.targets(&queries);
            return Ok(TrainingBatch {
                seen,
                queries,
                targets,
                udf_loss: self.config.udf_loss,
            });
        }
        let targets = self.targets.targets(&queries);
        Ok(TrainingBatch {
            seen,
            queries,
            targets,
            udf_loss: self.config.udf_loss,
        })
    }

    /// One optimization step. A non-finite loss or gradient leaves the
    /// parameters untouched and returns [`Error::NonFinite`].
    pub fn step(&mut self) -> Result<LossReport> {
        let t = self.history.len();
        let batch = self.batch(t)?;
        let mut tape = Tape::new();
        let vars = training_objective(&self.model, &mut tape, &self.model.params, &batch)?;
        let value = |v: Var| tape.value(v).item();
        let (anchor, udf, rgb, total) = (value(vars.anchor), value(vars.udf), value(vars.rgb), value(vars.total));
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {t} is {total}")));
        }
        let grads = tape.backward(vars.total)?;
        drop(tape);
        let lr = self.adam.step(&mut self.model.params, &grads)?;
        let report = LossReport {
            step: t,
            anchor,
            udf,
            rgb,
            total,
            lr,
        };
        self.history.push(report);
        Ok(report)
    }

    /// Runs the remaining configured steps, calling `on_step` after each.
    pub fn run(&mut self, mut on_step: impl FnMut(&LossReport)) -> Result<()> {
        while self.history.len() < self.config.steps {
            let report = self.step()?;
            on_step(&report);
        }
        Ok(())
    }

    /// The canonical seen cloud used at inference (the step-0 view).
    pub fn inference_view(&self) -> Result<ColoredPointCloud> {
        self.seen_cloud(0)
    }

    pub fn into_fitted(self) -> Result<FittedShape> {
        let seen = self.inference_view()?;
        Ok(FittedShape {
            seen,
            gt: self.targets.gt().clone(),
            model: self.model,
            normalization: self.normalization,
            history: self.history,
        })
    }
}

/// A fitted model with everything needed to extract and evaluate.
#[derive(Debug, Clone)]
pub struct FittedShape {
    pub model: NeighborhoodDecoder,
    pub normalization: NormalizationTransform,
    pub history: Vec<LossReport>,
    /// Normalized seen cloud for inference.
    pub seen: ColoredPointCloud,
    /// Normalized ground truth.
    pub gt: ColoredPointCloud,
}

/// Fits a fresh decoder to one analytic shape.
pub fn fit_shape(shape: &AnalyticShape, config: &TrainConfig, seed: u64) -> Result<FittedShape> {
    let mut trainer = Trainer::new(*shape, config.clone(), seed)?;
    trainer.run(|_| {})?;
    trainer.into_fitted()
}

/// Settings small enough to check every parameter of the full objective by
/// finite differences.
pub fn grad_check_config() -> TrainConfig {
    TrainConfig {
        steps: 1,
        shape: "torus".into(),
        query_count: 48,
        gt_points: 2000,
        view_samples: 400,
        model: ModelConfig::tiny(),
        ..TrainConfig::default()
    }
}

/// Finite-difference check of the whole training objective (decoder, losses
/// and neighbor gathering) on a tiny model initialized from `seed`.
///
/// Every parameter is first offset by seeded N(0, 0.1²) noise. Several layers
/// start at exactly zero, which would leave whole paths with zero gradient and
/// nothing to compare.
pub fn pipeline_grad_check(seed: u64, options: GradCheckOptions) -> Result<GradCheckReport> {
    let config = grad_check_config();
    let shape: AnalyticShape = config.shape.parse()?;
    let mut trainer = Trainer::new(shape, config, seed)?;
    let mut rng = rng_from_seed(derive_seed(seed, "gradcheck-offset"));
    let ids: Vec<_> = trainer.model.params.ids().collect();
    for id in ids {
        for v in trainer.model.params.get_mut(id).data_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += 0.1 * n;
        }
    }
    let batch = trainer.batch(0)?;
    let model = &trainer.model;
    grad_check(
        &model.params,
        |tape, store| Ok(training_objective(model, tape, store, &batch)?.total),
        options,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::p3;

    fn scalar(tape: &Tape, v: Var) -> f64 {
        tape.value(v).item()
    }

    #[test]
    fn pipeline_gradients_match() {
        let r = pipeline_grad_check(3, GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert!(r.checked > 1000);
    }

    #[test]
    fn udf_loss_examples() {
        let mut tape = Tape::new();
        let pred = tape.constant(Tensor::from_vec(2, 1, vec![0.7, 0.1]).unwrap());
        let l = udf_loss(&mut tape, pred, &[0.6, 0.3], UDF_CLAMP).unwrap();
        assert!((scalar(&tape, l) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn udf_loss_variants() {
        let preds = [0.7, 0.1, 0.9, 0.4];
        let targets = [0.6, 0.3, 0.2, 0.8];
        let run = |kind| {
            let mut tape = Tape::new();
            let pred = tape.constant(Tensor::from_vec(4, 1, preds.to_vec()).unwrap());
            let l = udf_loss_with(&mut tape, pred, &targets, UDF_CLAMP, kind).unwrap();
            let g = tape.backward_all(l).unwrap()[pred.index()].clone().unwrap();
            (scalar(&tape, l), g.data().to_vec())
        };
        let (clamped, gc) = run(UdfLoss::Clamped);
        let (near, gn) = run(UdfLoss::NearUnclamped);
        // Only the third query (f above δ, target below) differs.
        assert!((clamped - (0.0 + 0.2 + 0.3 + 0.1) / 4.0).abs() < 1e-15);
        assert!((near - (0.0 + 0.2 + 0.7 + 0.1) / 4.0).abs() < 1e-15);
        assert_eq!(gc, vec![0.0, -0.25, 0.0, -0.25]);
        assert_eq!(gn, vec![0.0, -0.25, 0.25, -0.25]);
    }

    #[test]
    fn rgb_loss_uniform_and_empty() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::zeros(6, COLOR_BINS));
        let l = rgb_loss(&mut tape, logits, &[Some([0.2, 0.4, 1.0]), None]).unwrap();
        assert!((scalar(&tape, l) - (256f64).ln()).abs() < 1e-12);
        let e = rgb_loss(&mut tape, logits, &[None, None]).unwrap();
        assert_eq!(scalar(&tape, e), 0.0);
    }

    #[test]
    fn anchor_loss_single_points() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(&[0.0, 0.0, 0.0]));
        let l = anchor_loss(&mut tape, a, &[p3(1.0, 2.0, 3.0)]).unwrap();
        assert_eq!(scalar(&tape, l), 12.0);
    }

    #[test]
    fn targets_strict_color_radius() {
        let gt = ColoredPointCloud::new(vec![p3(0.0, 0.0, 0.0)], Some(vec![[1.0, 0.5, 0.0]])).unwrap();
        let t = build_targets(&[p3(0.0, 0.0, 0.0), p3(0.1, 0.0, 0.0), p3(0.0999, 0.0, 0.0)], &gt, 1).unwrap();
        assert_eq!(t.udf[0], 0.0);
        assert_eq!(t.colors[0], Some([1.0, 0.5, 0.0]));
        assert_eq!(t.colors[1], None);
        assert!(t.colors[2].is_some());
        assert_eq!(t.sparse_gt.len(), 1);
    }

    #[test]
    fn tiny_training_reduces_loss() {
        let config = TrainConfig {
            steps: 60,
            lr: 3e-3,
            warmup_fraction: 0.0,
            gt_points: 500,
            view_samples: 200,
            query_count: 64,
            model: ModelConfig::tiny(),
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(AnalyticShape::sphere(1.0), config, 3).unwrap();
        trainer.run(|r| assert!(r.identity_error() <= 1e-12)).unwrap();
        let h = &trainer.history;
        let head: f64 = h[..10].iter().map(|r| r.total).sum();
        let tail: f64 = h[h.len() - 10..].iter().map(|r| r.total).sum();
        assert!(tail < head, "{tail} !< {head}");
    }
}
