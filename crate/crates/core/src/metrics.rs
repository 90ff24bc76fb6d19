//! Point-cloud evaluation: L1 chamfer, F1 at a distance threshold, the
//! radius-limited L1 color error, spacing uniformity and coverage.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};
use crate::geometry::{ColoredPointCloud, Point3};
use crate::spatial::SpatialIndex;

pub const F1_THRESHOLD: f64 = 0.1;
pub const RGB_RADIUS: f64 = 0.1;

fn non_empty(cloud: &ColoredPointCloud, what: &str) -> Result<()> {
    if cloud.is_empty() {
        return Err(invalid_input(format!("{what} cloud is empty")));
    }
    Ok(())
}

/// Smallest L1 distance from `p` to the indexed set. The Euclidean nearest
/// neighbor bounds the answer, and the L1 winner lies inside the Euclidean ball
/// of that bound.
pub fn nearest_l1_distance(index: &SpatialIndex, p: Point3) -> f64 {
    let e = index.nearest(p);
    let bound = (index.points()[e.id] - p).norm_l1();
    if bound == 0.0 {
        return 0.0;
    }
    let r = bound * (1.0 + 1e-9) + f64::MIN_POSITIVE;
    let candidates = index.radius(p, r).expect("positive radius");
    candidates
        .iter()
        .map(|nb| (index.points()[nb.id] - p).norm_l1())
        .fold(bound, f64::min)
}

fn mean_l1_to(from: &[Point3], to: &SpatialIndex) -> f64 {
    let d: Vec<f64> = from.par_iter().map(|&p| nearest_l1_distance(to, p)).collect();
    d.iter().sum::<f64>() / from.len() as f64
}

/// Mean L1 distance to the L1-nearest counterpart, summed over both directions.
pub fn chamfer_l1(pred: &ColoredPointCloud, gt: &ColoredPointCloud) -> Result<f64> {
    non_empty(pred, "predicted")?;
    non_empty(gt, "ground truth")?;
    let pi = SpatialIndex::build(&pred.positions)?;
    let gi = SpatialIndex::build(&gt.positions)?;
    Ok(mean_l1_to(&pred.positions, &gi) + mean_l1_to(&gt.positions, &pi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Stats {
    /// Fractions in `[0, 1]`.
    pub precision: f64,
    pub recall: f64,
    /// Percentage in `[0, 100]`.
    pub f1: f64,
}

fn matched_fraction(from: &[Point3], to: &SpatialIndex, threshold: f64) -> f64 {
    let hits = from
        .par_iter()
        .filter(|&&p| to.nearest(p).dist < threshold)
        .count();
    hits as f64 / from.len() as f64
}

/// Precision, recall and F1 (percent) with strict `< threshold` matching.
pub fn f1_score(pred: &ColoredPointCloud, gt: &ColoredPointCloud, threshold: f64) -> Result<F1Stats> {
    non_empty(pred, "predicted")?;
    non_empty(gt, "ground truth")?;
    let pi = SpatialIndex::build(&pred.positions)?;
    let gi = SpatialIndex::build(&gt.positions)?;
    let precision = matched_fraction(&pred.positions, &gi, threshold);
    let recall = matched_fraction(&gt.positions, &pi, threshold);
    Ok(F1Stats {
        precision,
        recall,
        f1: f1_from(precision, recall),
    })
}

pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        200.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RgbStats {
    /// Average of the two directional terms.
    pub l1_rgb: f64,
    pub term_a: f64,
    pub term_b: f64,
    /// `|P_A| / |pred|`: predicted points within the radius of the ground truth.
    pub matched_pred: f64,
    /// `|P_B| / |gt|`: ground-truth points within the radius of the prediction.
    pub matched_gt: f64,
    /// Set when `P_A` is empty and `term_a` was defined as 0.
    pub empty_a: bool,
    pub empty_b: bool,
}

fn rgb_term(
    from: &[Point3],
    from_colors: &[[f64; 3]],
    to: &SpatialIndex,
    to_colors: &[[f64; 3]],
    radius: f64,
) -> (f64, usize) {
    let diffs: Vec<Option<f64>> = from
        .par_iter()
        .zip(from_colors)
        .map(|(&p, c)| {
            let nb = to.nearest(p);
            (nb.dist < radius).then(|| {
                let t = to_colors[nb.id];
                (c[0] - t[0]).abs() + (c[1] - t[1]).abs() + (c[2] - t[2]).abs()
            })
        })
        .collect();
    let mut sum = 0.0;
    let mut count = 0;
    for d in diffs.into_iter().flatten() {
        sum += d;
        count += 1;
    }
    if count == 0 {
        (0.0, 0)
    } else {
        (sum / count as f64, count)
    }
}

/// Color error restricted to points whose nearest counterpart (Euclidean) is
/// within 0.1, averaged over both directions.
pub fn l1_rgb(pred: &ColoredPointCloud, gt: &ColoredPointCloud) -> Result<RgbStats> {
    non_empty(pred, "predicted")?;
    non_empty(gt, "ground truth")?;
    let (Some(pc), Some(gc)) = (&pred.colors, &gt.colors) else {
        return Err(invalid_input("L1-RGB needs colors on both clouds"));
    };
    let pi = SpatialIndex::build(&pred.positions)?;
    let gi = SpatialIndex::build(&gt.positions)?;
    let (term_a, na) = rgb_term(&pred.positions, pc, &gi, gc, RGB_RADIUS);
    let (term_b, nb) = rgb_term(&gt.positions, gc, &pi, pc, RGB_RADIUS);
    Ok(RgbStats {
        l1_rgb: 0.5 * (term_a + term_b),
        term_a,
        term_b,
        matched_pred: na as f64 / pred.len() as f64,
        matched_gt: nb as f64 / gt.len() as f64,
        empty_a: na == 0,
        empty_b: nb == 0,
    })
}

/// Nearest-other-point distance for every point.
pub fn nearest_neighbor_distances(points: &[Point3]) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(invalid_input("spacing needs at least two points"));
    }
    let index = SpatialIndex::build(points)?;
    points
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let nbs = index.knn(p, 2)?;
            Ok(nbs.iter().find(|nb| nb.id != i).map_or(0.0, |nb| nb.dist))
        })
        .collect()
}

/// Coefficient of variation (std / mean) of nearest-neighbor spacing; 0 when
/// the mean spacing is 0.
pub fn spacing_uniformity(points: &[Point3]) -> Result<f64> {
    let d = nearest_neighbor_distances(points)?;
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Ok(0.0);
    }
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

/// Fraction of `gt` points with a `pred` point closer than `radius`.
pub fn coverage(pred: &[Point3], gt: &[Point3], radius: f64) -> Result<f64> {
    if gt.is_empty() {
        return Err(invalid_input("coverage needs ground truth points"));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let index = SpatialIndex::build(pred)?;
    Ok(matched_fraction(gt, &index, radius))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pred_points: usize,
    pub gt_points: usize,
    pub l1_chamfer: f64,
    /// Percentage.
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub l1_rgb: f64,
    pub l1_rgb_a: f64,
    pub l1_rgb_b: f64,
    pub matched_pred_fraction: f64,
    pub matched_gt_fraction: f64,
    pub rgb_a_empty: bool,
    pub rgb_b_empty: bool,
    /// `None` for predictions with fewer than two points.
    pub spacing_cv: Option<f64>,
}

/// All metrics at once; both clouds need colors.
pub fn evaluate(pred: &ColoredPointCloud, gt: &ColoredPointCloud) -> Result<EvalReport> {
    let f1 = f1_score(pred, gt, F1_THRESHOLD)?;
    let rgb = l1_rgb(pred, gt)?;
    Ok(EvalReport {
        pred_points: pred.len(),
        gt_points: gt.len(),
        l1_chamfer: chamfer_l1(pred, gt)?,
        f1: f1.f1,
        precision: f1.precision,
        recall: f1.recall,
        l1_rgb: rgb.l1_rgb,
        l1_rgb_a: rgb.term_a,
        l1_rgb_b: rgb.term_b,
        matched_pred_fraction: rgb.matched_pred,
        matched_gt_fraction: rgb.matched_gt,
        rgb_a_empty: rgb.empty_a,
        rgb_b_empty: rgb.empty_b,
        spacing_cv: if pred.len() >= 2 {
            Some(spacing_uniformity(&pred.positions)?)
        } else {
            None
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::p3;

    fn cloud(pts: &[Point3], color: [f64; 3]) -> ColoredPointCloud {
        ColoredPointCloud::new(pts.to_vec(), Some(vec![color; pts.len()])).unwrap()
    }

    #[test]
    fn chamfer_sums_both_directions() {
        let a = cloud(&[p3(0.0, 0.0, 0.0)], [0.0; 3]);
        let b = cloud(&[p3(1.0, 1.0, 1.0)], [0.0; 3]);
        assert_eq!(chamfer_l1(&a, &b).unwrap(), 6.0);
        assert_eq!(chamfer_l1(&a, &a).unwrap(), 0.0);
        assert!(chamfer_l1(&a, &ColoredPointCloud::default()).is_err());
    }

    #[test]
    fn f1_half_recall() {
        let gt = cloud(&[p3(0.0, 0.0, 0.0), p3(5.0, 0.0, 0.0)], [0.0; 3]);
        let pred = cloud(&[p3(0.01, 0.0, 0.0)], [0.0; 3]);
        let s = f1_score(&pred, &gt, 0.1).unwrap();
        assert!((s.f1 - 66.6667).abs() < 0.01);
        let far = cloud(&[p3(0.1, 0.0, 0.0)], [0.0; 3]);
        assert_eq!(f1_score(&far, &cloud(&[p3(0.0, 0.0, 0.0)], [0.0; 3]), 0.1).unwrap().f1, 0.0);
    }

    #[test]
    fn rgb_difference() {
        let a = cloud(&[p3(0.0, 0.0, 0.0)], [0.1, 0.2, 0.3]);
        let b = cloud(&[p3(0.0, 0.0, 0.0)], [0.0, 0.0, 0.0]);
        let s = l1_rgb(&a, &b).unwrap();
        assert!((s.l1_rgb - 0.6).abs() < 1e-15);
        let far = cloud(&[p3(1.0, 0.0, 0.0)], [0.0; 3]);
        let s = l1_rgb(&a, &far).unwrap();
        assert!(s.empty_a && s.empty_b && s.l1_rgb == 0.0);
    }

    #[test]
    fn spacing_examples() {
        let grid: Vec<Point3> = (0..5)
            .flat_map(|i| (0..5).map(move |j| p3(i as f64, j as f64, 0.0)))
            .collect();
        assert!(spacing_uniformity(&grid).unwrap() < 1e-9);
        let mut clump = vec![p3(0.0, 0.0, 0.0); 20];
        clump.push(p3(1.0, 0.0, 0.0));
        assert!(spacing_uniformity(&clump).unwrap() > 1.0);
        assert!(spacing_uniformity(&[p3(0.0, 0.0, 0.0)]).is_err());
    }
}
