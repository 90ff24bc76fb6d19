//! Surface extraction by point shifting with optional repulsion.
//!
//! Random queries whose initial UDF is below a threshold are moved onto the
//! zero level set with `q <- q - f(q) * ∇f / |∇f|`. With repulsion enabled
//! every shift is followed by a push away from the `k` nearest other points,
//! `Σ (q - q_i) / |q - q_i|²`, clamped per component, which spreads points
//! that would otherwise pile up where the surface bends.

use std::fmt;
use std::str::FromStr;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{NeighborhoodDecoder, PreparedScene};
use crate::error::{invalid_argument, Result};
use crate::geometry::{sample_query_points, sample_query_points_planar, ColoredPointCloud, Point3, Rgb};
use crate::rng::{derive_seed, rng_from_seed, splitmix64};
use crate::shapes::AnalyticShape;
use crate::spatial::SpatialIndex;

/// Distance below which two points count as coincident during repulsion.
pub const COINCIDENT_EPS: f64 = 1e-12;
/// Magnitude of the term that replaces a coincident neighbor's force.
pub const COINCIDENT_PUSH: f64 = 1.0 / COINCIDENT_EPS;

/// A scalar unsigned distance field with colors.
pub trait UdfField: Sync {
    /// Distances, all `>= 0`.
    fn eval(&self, points: &[Point3]) -> Result<Vec<f64>>;

    /// Gradients of the field, `None` where undefined. Need not be unit length.
    fn gradient(&self, points: &[Point3]) -> Result<Vec<Option<Point3>>>;

    fn colors(&self, points: &[Point3]) -> Result<Vec<Rgb>>;

    /// Whether the field lives in the `z = 0` plane.
    fn is_planar(&self) -> bool {
        false
    }
}

/// Exact distance field of an analytic shape.
#[derive(Debug, Clone)]
pub struct AnalyticField {
    pub shape: AnalyticShape,
}

impl AnalyticField {
    pub fn new(shape: AnalyticShape) -> Self {
        AnalyticField { shape }
    }
}

impl UdfField for AnalyticField {
    fn eval(&self, points: &[Point3]) -> Result<Vec<f64>> {
        Ok(points.par_iter().map(|&p| self.shape.udf(p)).collect())
    }

    fn gradient(&self, points: &[Point3]) -> Result<Vec<Option<Point3>>> {
        Ok(points.par_iter().map(|&p| self.shape.gradient(p).ok()).collect())
    }

    fn colors(&self, points: &[Point3]) -> Result<Vec<Rgb>> {
        Ok(points.par_iter().map(|&p| self.shape.color(p)).collect())
    }

    fn is_planar(&self) -> bool {
        self.shape.is_planar()
    }
}

/// The trained decoder over one prepared scene. Values are clamped at zero;
/// gradients are central differences of the raw prediction.
#[derive(Debug, Clone)]
pub struct LearnedField<'a> {
    pub model: &'a NeighborhoodDecoder,
    pub scene: PreparedScene,
    pub k_coarse: usize,
    pub k_fine: usize,
    pub fd_step: f64,
    pub planar: bool,
}

impl<'a> LearnedField<'a> {
    pub fn new(
        model: &'a NeighborhoodDecoder,
        seen: &ColoredPointCloud,
        fine: Option<&ColoredPointCloud>,
        k_coarse: usize,
        k_fine: usize,
        fd_step: f64,
    ) -> Result<Self> {
        if !(fd_step > 0.0) {
            return Err(invalid_argument("finite-difference step must be positive"));
        }
        Ok(LearnedField {
            model,
            scene: model.prepare(seen, fine)?,
            k_coarse,
            k_fine,
            fd_step,
            planar: false,
        })
    }

    /// Raw (unclamped) predictions.
    pub fn raw(&self, points: &[Point3]) -> Result<Vec<f64>> {
        self.model
            .decode_udf(&self.scene, points, self.k_coarse, self.k_fine)
    }
}

impl UdfField for LearnedField<'_> {
    fn eval(&self, points: &[Point3]) -> Result<Vec<f64>> {
        Ok(self.raw(points)?.into_iter().map(|v| v.max(0.0)).collect())
    }

    fn gradient(&self, points: &[Point3]) -> Result<Vec<Option<Point3>>> {
        let axes = if self.planar { 2 } else { 3 };
        let h = self.fd_step;
        let mut probes = Vec::with_capacity(points.len() * axes * 2);
        for &p in points {
            for a in 0..axes {
                let mut e = [0.0; 3];
                e[a] = h;
                let e = Point3::from_array(e);
                probes.push(p + e);
                probes.push(p - e);
            }
        }
        let v = self.raw(&probes)?;
        Ok(points
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let mut g = [0.0; 3];
                for (a, ga) in g.iter_mut().enumerate().take(axes) {
                    let base = (i * axes + a) * 2;
                    *ga = (v[base] - v[base + 1]) / (2.0 * h);
                }
                let g = Point3::from_array(g);
                g.is_finite().then_some(g)
            })
            .collect())
    }

    fn colors(&self, points: &[Point3]) -> Result<Vec<Rgb>> {
        Ok(self
            .model
            .decode(&self.scene, points, self.k_coarse, self.k_fine)?
            .colors)
    }

    fn is_planar(&self) -> bool {
        self.planar
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RepulsionMode {
    Off,
    #[default]
    On,
}

impl RepulsionMode {
    pub fn is_on(self) -> bool {
        self == RepulsionMode::On
    }
}

impl fmt::Display for RepulsionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.is_on() { "on" } else { "off" })
    }
}

impl FromStr for RepulsionMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(RepulsionMode::On),
            "off" => Ok(RepulsionMode::Off),
            _ => Err(invalid_argument(format!("repulsion mode must be on or off, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    pub iterations: usize,
    /// Initial queries with `f >= threshold` are discarded.
    pub threshold: f64,
    /// Neighbors per point in the repulsion step.
    pub k: usize,
    /// Per-component bound on the repulsion displacement.
    pub clamp: f64,
    /// Points per field evaluation batch.
    pub batch_size: usize,
    pub repulsion: RepulsionMode,
    /// Multiplier applied to the raw repulsion force before clamping.
    pub repulsion_scale: f64,
    /// Central-difference step for learned fields.
    pub fd_step: f64,
    /// Points whose gradient norm falls below this are not shifted.
    pub zero_grad_eps: f64,
    pub query_count: usize,
    pub query_range: f64,
    /// Sample queries in the `z = 0` plane and keep all motion in it.
    pub planar: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            iterations: 10,
            threshold: 0.23,
            k: 16,
            clamp: 0.03,
            batch_size: 48_000,
            repulsion: RepulsionMode::On,
            repulsion_scale: 1.0,
            fd_step: 1e-3,
            zero_grad_eps: 1e-12,
            query_count: 216_000,
            query_range: 3.0,
            planar: false,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.k == 0 || self.batch_size == 0 || self.query_count == 0 {
            return Err(invalid_argument(
                "iterations, k, batch_size and query_count must be positive",
            ));
        }
        if !(self.threshold > 0.0) || !(self.clamp > 0.0) || !(self.query_range > 0.0) || !(self.fd_step > 0.0) {
            return Err(invalid_argument(
                "threshold, clamp, query_range and fd_step must be positive",
            ));
        }
        Ok(())
    }
}

/// Uniform initial queries in the configured cube (or square, when planar).
pub fn init_queries(config: &ExtractionConfig, seed: u64) -> Result<Vec<Point3>> {
    let seed = derive_seed(seed, "extract-queries");
    if config.planar {
        sample_query_points_planar(config.query_count, config.query_range, seed)
    } else {
        sample_query_points(config.query_count, config.query_range, seed)
    }
}

fn batched<T: Send>(
    points: &[Point3],
    batch: usize,
    f: impl Fn(&[Point3]) -> Result<Vec<T>>,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(points.len());
    for chunk in points.chunks(batch.max(1)) {
        out.extend(f(chunk)?);
    }
    Ok(out)
}

fn shift(p: Point3, f: f64, g: Option<Point3>, eps: f64) -> Point3 {
    match g {
        Some(g) if g.norm() >= eps => p - g * (f / g.norm()),
        _ => p,
    }
}

/// One `q <- q - f(q) ∇f/|∇f|` step. Points with undefined or vanishing
/// gradients stay put.
pub fn udf_shift_step(points: &[Point3], field: &dyn UdfField, eps: f64) -> Result<Vec<Point3>> {
    udf_shift_step_batched(points, field, eps, usize::MAX)
}

fn udf_shift_step_batched(points: &[Point3], field: &dyn UdfField, eps: f64, batch: usize) -> Result<Vec<Point3>> {
    let planar = field.is_planar();
    batched(points, batch, |chunk| {
        let f = field.eval(chunk)?;
        let g = field.gradient(chunk)?;
        Ok(chunk
            .iter()
            .zip(f.iter().zip(g))
            .map(|(&p, (&f, g))| {
                let g = if planar { g.map(|g| Point3::new(g.x, g.y, 0.0)) } else { g };
                shift(p, f, g, eps)
            })
            .collect())
    })
}

/// Direction for a coincident pair: pseudo-random, fixed by the unordered id
/// pair, and opposite for the two members so the pair separates.
fn coincident_direction(i: usize, j: usize, planar: bool) -> Point3 {
    use rand::Rng as _;
    let (lo, hi) = (i.min(j), i.max(j));
    let seed = splitmix64(splitmix64(lo as u64) ^ (hi as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut rng = rng_from_seed(seed);
    let sign = if i == lo { 1.0 } else { -1.0 };
    loop {
        let v = Point3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            if planar { 0.0 } else { rng.random_range(-1.0..1.0) },
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v * (sign / n);
        }
    }
}

/// Raw repulsion force on point `i` from `neighbors` (ids into `points`).
pub fn repulsion_force(points: &[Point3], i: usize, neighbors: &[usize], planar: bool) -> Point3 {
    let q = points[i];
    let mut sorted = neighbors.to_vec();
    sorted.sort_unstable();
    let mut force = Point3::ZERO;
    for j in sorted {
        let d = q - points[j];
        let d2 = d.norm_squared();
        if d2.sqrt() < COINCIDENT_EPS {
            force += coincident_direction(i, j, planar) * COINCIDENT_PUSH;
        } else {
            force += d / d2;
        }
    }
    force
}

/// Componentwise clamp to `[-c, c]`.
pub fn clamp_components(v: Point3, c: f64) -> Point3 {
    v.map(|x| x.clamp(-c, c))
}

/// Pushes every point away from its `k` nearest others. All neighbor sets come
/// from the positions at entry.
pub fn repulsion_step(points: &[Point3], k: usize, clamp: f64, scale: f64, planar: bool) -> Result<Vec<Point3>> {
    if points.len() < k + 1 {
        return Err(invalid_argument(format!(
            "repulsion with k = {k} needs at least {} points, got {}",
            k + 1,
            points.len()
        )));
    }
    let index = SpatialIndex::build(points)?;
    points
        .par_iter()
        .enumerate()
        .map(|(i, &q)| {
            let ids: Vec<usize> = index
                .knn(q, k + 1)?
                .into_iter()
                .map(|nb| nb.id)
                .filter(|&j| j != i)
                .take(k)
                .collect();
            let mut force = repulsion_force(points, i, &ids, planar) * scale;
            if planar {
                force.z = 0.0;
            }
            Ok(q + clamp_components(force, clamp))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExtractionResult {
    /// Final positions with decoded colors and final UDF values.
    pub cloud: ColoredPointCloud,
    /// Positions of the surviving queries before any shifting.
    pub initial: Vec<Point3>,
    pub initial_count: usize,
    pub iterations: usize,
    pub repulsion: RepulsionMode,
}

impl ExtractionResult {
    pub fn survivors(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }
}

/// Full extraction from fresh random queries.
pub fn extract_surface(field: &dyn UdfField, config: &ExtractionConfig, seed: u64) -> Result<ExtractionResult> {
    config.validate()?;
    let queries = init_queries(config, seed)?;
    extract_from(field, config, queries)
}

/// Extraction from caller-supplied initial queries.
pub fn extract_from(field: &dyn UdfField, config: &ExtractionConfig, queries: Vec<Point3>) -> Result<ExtractionResult> {
    config.validate()?;
    let initial_count = queries.len();
    let f0 = batched(&queries, config.batch_size, |c| field.eval(c))?;
    let initial: Vec<Point3> = queries
        .iter()
        .zip(&f0)
        .filter(|(_, &f)| f < config.threshold)
        .map(|(&p, _)| p)
        .collect();
    debug!("{} of {initial_count} queries below threshold", initial.len());
    let mut points = initial.clone();
    let planar = config.planar || field.is_planar();
    if points.is_empty() {
        return Ok(ExtractionResult {
            cloud: ColoredPointCloud::new(Vec::new(), Some(Vec::new()))?.with_udf(Vec::new())?,
            initial,
            initial_count,
            iterations: config.iterations,
            repulsion: config.repulsion,
        });
    }
    for it in 0..config.iterations {
        points = udf_shift_step_batched(&points, field, config.zero_grad_eps, config.batch_size)?;
        if config.repulsion.is_on() && points.len() > 1 {
            let k = config.k.min(points.len() - 1);
            points = repulsion_step(&points, k, config.clamp, config.repulsion_scale, planar)?;
        }
        debug!("iteration {} done", it + 1);
    }
    let colors = batched(&points, config.batch_size, |c| field.colors(c))?;
    let udf = batched(&points, config.batch_size, |c| field.eval(c))?;
    let cloud = ColoredPointCloud::new(points, Some(colors))?.with_udf(udf)?;
    Ok(ExtractionResult {
        cloud,
        initial,
        initial_count,
        iterations: config.iterations,
        repulsion: config.repulsion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::p3;

    #[test]
    fn two_point_repulsion() {
        let out = repulsion_step(&[p3(0.0, 0.0, 0.0), p3(1.0, 0.0, 0.0)], 1, 0.03, 1.0, false).unwrap();
        assert_eq!(out[0], p3(-0.03, 0.0, 0.0));
        assert_eq!(out[1], p3(1.03, 0.0, 0.0));
    }

    #[test]
    fn clamp_example() {
        let v = clamp_components(p3(0.1, -0.05, 0.01), 0.03);
        assert_eq!(v, p3(0.03, -0.03, 0.01));
    }

    #[test]
    fn ring_center_is_balanced() {
        let mut pts = vec![p3(0.0, 0.0, 0.0)];
        for i in 0..8 {
            let a = i as f64 * std::f64::consts::FRAC_PI_4;
            pts.push(p3(a.cos(), a.sin(), 0.0));
        }
        let out = repulsion_step(&pts, 8, 0.03, 1.0, false).unwrap();
        assert!(out[0].norm() < 1e-12);
    }

    #[test]
    fn coincident_points_separate() {
        let out = repulsion_step(&[p3(0.0, 0.0, 0.0), p3(0.0, 0.0, 0.0)], 1, 0.03, 1.0, true).unwrap();
        assert!(out[0].dist(out[1]) > 0.0);
        assert_eq!(out[0].z, 0.0);
        let again = repulsion_step(&[p3(0.0, 0.0, 0.0), p3(0.0, 0.0, 0.0)], 1, 0.03, 1.0, true).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn sphere_shift_is_exact() {
        let field = AnalyticField::new(AnalyticShape::sphere(1.0));
        let out = udf_shift_step(&[p3(2.0, 0.0, 0.0), p3(1.0, 0.0, 0.0)], &field, 1e-12).unwrap();
        assert_eq!(out, vec![p3(1.0, 0.0, 0.0), p3(1.0, 0.0, 0.0)]);
    }

    #[test]
    fn extraction_is_batch_invariant() {
        let field = AnalyticField::new(AnalyticShape::torus(1.0, 0.35));
        let mut config = ExtractionConfig {
            query_count: 3000,
            ..ExtractionConfig::default()
        };
        let a = extract_surface(&field, &config, 5).unwrap();
        config.batch_size = 77;
        let b = extract_surface(&field, &config, 5).unwrap();
        assert_eq!(a.cloud, b.cloud);
        assert!(a.survivors() > 0);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("on".parse::<RepulsionMode>().unwrap(), RepulsionMode::On);
        assert!("maybe".parse::<RepulsionMode>().is_err());
    }
}
