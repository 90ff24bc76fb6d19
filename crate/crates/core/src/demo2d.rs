//! The planar L-profile comparison: extraction with and without repulsion on
//! the exact distance field of an L-shaped outline, plus the sampled fields
//! needed to plot it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_argument, Result};
use crate::extraction::{extract_from, init_queries, AnalyticField, ExtractionConfig, ExtractionResult, RepulsionMode};
use crate::geometry::{p3, Point3};
use crate::io::{write_csv_rows, write_json, write_points_csv};
use crate::metrics::{coverage, spacing_uniformity};
use crate::rng::derive_seed;
use crate::shapes::AnalyticShape;
use crate::spatial::SpatialIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Demo2dConfig {
    pub leg_x: f64,
    pub leg_y: f64,
    pub width: f64,
    pub queries: usize,
    /// Half extent of the square the queries are drawn from. The default puts
    /// about 21 surviving queries on each unit of outline, the same spacing
    /// (about 0.047) that 216k queries in `[-3, 3]³` give on a surface.
    pub range: f64,
    pub threshold: f64,
    pub iterations: usize,
    pub k: usize,
    pub clamp: f64,
    /// Multiplier on the raw repulsion force.
    pub repulsion_scale: f64,
    /// Dense ground-truth samples for coverage.
    pub gt_samples: usize,
    pub coverage_radius: f64,
    /// Side of the square cells used for the corner/flat density ratio.
    pub cell: f64,
    /// Grid resolution per axis for the potential/gradient CSV.
    pub grid: usize,
}

impl Default for Demo2dConfig {
    fn default() -> Self {
        Demo2dConfig {
            leg_x: 2.0,
            leg_y: 2.0,
            width: 0.5,
            queries: 20_000,
            range: 10.0,
            threshold: 0.23,
            iterations: 10,
            k: 16,
            clamp: 0.03,
            repulsion_scale: 1.0,
            gt_samples: 20_000,
            coverage_radius: 0.05,
            cell: 0.2,
            grid: 121,
        }
    }
}

impl Demo2dConfig {
    pub fn shape(&self) -> Result<AnalyticShape> {
        AnalyticShape::new(crate::shapes::ShapeKind::LProfile {
            leg_x: self.leg_x,
            leg_y: self.leg_y,
            width: self.width,
        })
    }

    pub fn extraction(&self, repulsion: RepulsionMode) -> ExtractionConfig {
        ExtractionConfig {
            iterations: self.iterations,
            threshold: self.threshold,
            k: self.k,
            clamp: self.clamp,
            repulsion_scale: self.repulsion_scale,
            repulsion,
            query_count: self.queries,
            query_range: self.range,
            planar: true,
            ..ExtractionConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub repulsion: RepulsionMode,
    pub survivors: usize,
    pub coverage: f64,
    pub spacing_cv: f64,
    /// Mean points per corner cell.
    pub corner_density: f64,
    /// Mean points per flat cell.
    pub flat_density: f64,
    pub corner_flat_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demo2dSummary {
    pub seed: u64,
    pub initial_queries: usize,
    pub off: ModeSummary,
    pub on: ModeSummary,
}

/// Convex-corner cell centers and flat cell centers (midpoints of the two
/// outer legs and the two inner edges).
pub fn density_cells(shape: &AnalyticShape) -> Result<(Vec<Point3>, Vec<Point3>)> {
    let v = shape
        .l_vertices()
        .ok_or_else(|| invalid_argument("density cells need an L profile"))?;
    let corners = [0, 1, 2, 4, 5].map(|i| v[i]).to_vec();
    let mid = |a: usize, b: usize| (v[a] + v[b]) * 0.5;
    let flats = vec![mid(0, 1), mid(5, 0), mid(2, 3), mid(3, 4)];
    Ok((corners, flats))
}

fn mean_cell_count(points: &[Point3], centers: &[Point3], side: f64) -> f64 {
    let h = side / 2.0;
    let total: usize = centers
        .iter()
        .map(|c| {
            points
                .iter()
                .filter(|p| (p.x - c.x).abs() < h && (p.y - c.y).abs() < h)
                .count()
        })
        .sum();
    total as f64 / centers.len() as f64
}

pub fn summarize(
    result: &ExtractionResult,
    shape: &AnalyticShape,
    dense_gt: &[Point3],
    config: &Demo2dConfig,
) -> Result<ModeSummary> {
    let pts = &result.cloud.positions;
    let (corners, flats) = density_cells(shape)?;
    let corner_density = mean_cell_count(pts, &corners, config.cell);
    let flat_density = mean_cell_count(pts, &flats, config.cell);
    Ok(ModeSummary {
        repulsion: result.repulsion,
        survivors: pts.len(),
        coverage: coverage(pts, dense_gt, config.coverage_radius)?,
        spacing_cv: if pts.len() >= 2 { spacing_uniformity(pts)? } else { 0.0 },
        corner_density,
        flat_density,
        corner_flat_ratio: if flat_density > 0.0 {
            corner_density / flat_density
        } else {
            f64::INFINITY
        },
    })
}

#[derive(Debug, Clone)]
pub struct Demo2dRun {
    pub summary: Demo2dSummary,
    pub initial: Vec<Point3>,
    pub off: ExtractionResult,
    pub on: ExtractionResult,
}

/// Runs both modes from the same initial queries.
pub fn run_demo2d(config: &Demo2dConfig, seed: u64) -> Result<Demo2dRun> {
    let shape = config.shape()?;
    let field = AnalyticField::new(shape);
    let queries = init_queries(&config.extraction(RepulsionMode::Off), seed)?;
    let off = extract_from(&field, &config.extraction(RepulsionMode::Off), queries.clone())?;
    let on = extract_from(&field, &config.extraction(RepulsionMode::On), queries)?;
    let dense = shape.sample_surface(config.gt_samples, derive_seed(seed, "demo2d-gt"));
    let summary = Demo2dSummary {
        seed,
        initial_queries: config.queries,
        off: summarize(&off, &shape, &dense.positions, config)?,
        on: summarize(&on, &shape, &dense.positions, config)?,
    };
    Ok(Demo2dRun {
        summary,
        initial: off.initial.clone(),
        off,
        on,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub i: usize,
    pub j: usize,
    pub x: f64,
    pub y: f64,
    pub udf: f64,
    /// Unit gradient of the distance field; zero where undefined.
    pub grad_x: f64,
    pub grad_y: f64,
    /// `Σ -ln |q - q_i|` over the `k` nearest final points of the repulsion run.
    pub repulsion_potential: f64,
}

/// Samples the distance field, its gradient and the repulsive potential of
/// `points` on a `resolution × resolution` grid over `[-range, range]²`.
pub fn sample_grid(
    shape: &AnalyticShape,
    points: &[Point3],
    k: usize,
    range: f64,
    resolution: usize,
) -> Result<Vec<GridRow>> {
    if resolution < 2 {
        return Err(invalid_argument("grid resolution must be at least 2"));
    }
    let index = if points.is_empty() { None } else { Some(SpatialIndex::build(points)?) };
    let step = 2.0 * range / (resolution - 1) as f64;
    let mut rows = Vec::with_capacity(resolution * resolution);
    for j in 0..resolution {
        for i in 0..resolution {
            let q = p3(-range + i as f64 * step, -range + j as f64 * step, 0.0);
            let g = shape.gradient(q).unwrap_or(Point3::ZERO);
            let repulsion_potential = match &index {
                Some(idx) => idx
                    .knn(q, k.min(idx.len()))?
                    .iter()
                    .map(|nb| -nb.dist.max(1e-12).ln())
                    .sum(),
                None => 0.0,
            };
            rows.push(GridRow {
                i,
                j,
                x: q.x,
                y: q.y,
                udf: shape.udf(q),
                grad_x: g.x,
                grad_y: g.y,
                repulsion_potential,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct FinalRow {
    x: f64,
    y: f64,
    udf: f64,
}

fn final_rows(result: &ExtractionResult) -> Vec<FinalRow> {
    let udf = result.cloud.udf.as_deref().unwrap_or(&[]);
    result
        .cloud
        .positions
        .iter()
        .zip(udf)
        .map(|(p, &u)| FinalRow { x: p.x, y: p.y, udf: u })
        .collect()
}

/// Writes `initial.csv`, `final_off.csv`, `final_on.csv`, `grid.csv` and
/// `summary.json` into `dir`.
pub fn write_demo2d(dir: &Path, run: &Demo2dRun, config: &Demo2dConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let shape = config.shape()?;
    write_points_csv(dir.join("initial.csv"), &run.initial)?;
    write_csv_rows(dir.join("final_off.csv"), &final_rows(&run.off))?;
    write_csv_rows(dir.join("final_on.csv"), &final_rows(&run.on))?;
    let grid = sample_grid(&shape, &run.on.cloud.positions, config.k, config.range, config.grid)?;
    write_csv_rows(dir.join("grid.csv"), &grid)?;
    write_json(dir.join("summary.json"), &run.summary)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_dimensions_and_far_gradient() {
        let config = Demo2dConfig::default();
        let shape = config.shape().unwrap();
        let rows = sample_grid(&shape, &[], 4, 3.0, 7).unwrap();
        assert_eq!(rows.len(), 49);
        // Below the middle of the bottom leg the field points straight down.
        let g = shape.gradient(p3(0.0, -2.0, 0.0)).unwrap();
        assert!((g.y + 1.0).abs() < 1e-12 && g.x.abs() < 1e-12);
    }
}
