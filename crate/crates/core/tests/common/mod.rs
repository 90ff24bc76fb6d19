//! Quadratic reference implementations shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repudf::geometry::{p3, ColoredPointCloud, Point3, Rgb};

/// Random cloud of `n` points. Odd seeds snap coordinates to a coarse lattice
/// so exact distance ties and duplicates are common.
pub fn random_cloud(n: usize, seed: u64) -> ColoredPointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lattice = seed % 2 == 1;
    let positions = (0..n)
        .map(|_| {
            let mut c = || {
                if lattice {
                    f64::from(rng.random_range(-4..=4)) * 0.05
                } else {
                    rng.random_range(-1.0..1.0)
                }
            };
            p3(c(), c(), c())
        })
        .collect();
    let colors = (0..n)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    ColoredPointCloud::new(positions, Some(colors)).unwrap()
}

/// All `(distance, id)` pairs sorted ascending.
pub fn sorted_by_distance(points: &[Point3], q: Point3) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (p.dist(q), i)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all
}

pub fn brute_knn(points: &[Point3], q: Point3, k: usize) -> Vec<(f64, usize)> {
    sorted_by_distance(points, q).into_iter().take(k).collect()
}

pub fn brute_radius(points: &[Point3], q: Point3, r: f64) -> Vec<(f64, usize)> {
    sorted_by_distance(points, q).into_iter().filter(|&(d, _)| d < r).collect()
}

/// Nearest point by Euclidean distance, ties to the smaller id.
pub fn brute_nearest(points: &[Point3], q: Point3) -> (f64, usize) {
    brute_knn(points, q, 1)[0]
}

/// Farthest point sampling recomputing every distance to the picked set at
/// every step.
pub fn brute_fps(points: &[Point3], count: usize, start: usize) -> Vec<usize> {
    let mut picked = vec![start];
    while picked.len() < count {
        let mut best = None;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if picked.contains(&i) {
                continue;
            }
            let d = picked
                .iter()
                .map(|&j| p.dist_squared(points[j]))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = Some(i);
            }
        }
        picked.push(best.unwrap());
    }
    picked
}

fn min_l1(p: Point3, set: &[Point3]) -> f64 {
    set.iter().map(|s| (*s - p).norm_l1()).fold(f64::INFINITY, f64::min)
}

pub fn brute_chamfer_l1(a: &[Point3], b: &[Point3]) -> f64 {
    let ab: f64 = a.iter().map(|&p| min_l1(p, b)).sum::<f64>() / a.len() as f64;
    let ba: f64 = b.iter().map(|&p| min_l1(p, a)).sum::<f64>() / b.len() as f64;
    ab + ba
}

/// `(precision, recall, f1 percent)` with strict matching.
pub fn brute_f1(pred: &[Point3], gt: &[Point3], thr: f64) -> (f64, f64, f64) {
    let hit = |p: &Point3, set: &[Point3]| set.iter().any(|s| s.dist(*p) < thr);
    let precision = pred.iter().filter(|p| hit(p, gt)).count() as f64 / pred.len() as f64;
    let recall = gt.iter().filter(|g| hit(g, pred)).count() as f64 / gt.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        200.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

fn rgb_term(from: &ColoredPointCloud, to: &ColoredPointCloud, radius: f64) -> f64 {
    let fc = from.colors.as_ref().unwrap();
    let tc = to.colors.as_ref().unwrap();
    let mut sum = 0.0;
    let mut count = 0;
    for (i, &p) in from.positions.iter().enumerate() {
        let (d, j) = brute_nearest(&to.positions, p);
        if d < radius {
            sum += (0..3).map(|c| (fc[i][c] - tc[j][c]).abs()).sum::<f64>();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

pub fn brute_l1_rgb(pred: &ColoredPointCloud, gt: &ColoredPointCloud, radius: f64) -> f64 {
    0.5 * (rgb_term(pred, gt, radius) + rgb_term(gt, pred, radius))
}

/// `(udf, colors, sparse)` targets.
pub fn brute_targets(
    queries: &[Point3],
    gt: &ColoredPointCloud,
    sparse_count: usize,
    color_radius: f64,
) -> (Vec<f64>, Vec<Option<Rgb>>, Vec<Point3>) {
    let colors = gt.colors.as_ref().unwrap();
    let mut udf = Vec::new();
    let mut col = Vec::new();
    for &q in queries {
        let (d, j) = brute_nearest(&gt.positions, q);
        udf.push(d);
        col.push((d < color_radius).then(|| colors[j]));
    }
    let sparse = brute_fps(&gt.positions, sparse_count.min(gt.len()), 0)
        .into_iter()
        .map(|i| gt.positions[i])
        .collect();
    (udf, col, sparse)
}

/// Checks every library result against its reference for one random
/// instance; returns a description of the first mismatch.
pub fn check_instance(seed: u64, n: usize, m: usize) -> Result<(), String> {
    use repudf::metrics::{chamfer_l1, f1_score, l1_rgb, F1_THRESHOLD, RGB_RADIUS};
    use repudf::spatial::{fps_sample, SpatialIndex};
    use repudf::training::{build_targets, COLOR_RADIUS};

    let a = random_cloud(n, seed);
    let b = random_cloud(m, seed.wrapping_mul(7919).wrapping_add(3));
    let queries = random_cloud(40, seed ^ 0x5eed).positions;
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12;

    let index = SpatialIndex::build(&a.positions).map_err(|e| e.to_string())?;
    for (qi, &q) in queries.iter().enumerate() {
        let k = 1 + (qi * 37 + seed as usize) % n;
        let got: Vec<(f64, usize)> = index.knn(q, k).unwrap().iter().map(|x| (x.dist, x.id)).collect();
        let want = brute_knn(&a.positions, q, k);
        if got.len() != want.len() || got.iter().zip(&want).any(|(g, w)| g.1 != w.1 || !close(g.0, w.0)) {
            return Err(format!("knn mismatch seed {seed} q {qi} k {k}"));
        }
        let r = 0.05 + 0.1 * (qi % 5) as f64;
        let got: Vec<(f64, usize)> = index.radius(q, r).unwrap().iter().map(|x| (x.dist, x.id)).collect();
        let want = brute_radius(&a.positions, q, r);
        if got.len() != want.len() || got.iter().zip(&want).any(|(g, w)| g.1 != w.1 || !close(g.0, w.0)) {
            return Err(format!("radius mismatch seed {seed} q {qi} r {r}"));
        }
    }

    let count = n.min(24);
    let start = seed as usize % n;
    if fps_sample(&a.positions, count, start).unwrap() != brute_fps(&a.positions, count, start) {
        return Err(format!("fps mismatch seed {seed}"));
    }

    let cd = chamfer_l1(&a, &b).unwrap();
    if !close(cd, brute_chamfer_l1(&a.positions, &b.positions)) {
        return Err(format!("chamfer mismatch seed {seed}"));
    }
    let f1 = f1_score(&a, &b, F1_THRESHOLD).unwrap();
    let (p, r, f) = brute_f1(&a.positions, &b.positions, F1_THRESHOLD);
    if !close(f1.precision, p) || !close(f1.recall, r) || !close(f1.f1, f) {
        return Err(format!("f1 mismatch seed {seed}"));
    }
    let rgb = l1_rgb(&a, &b).unwrap();
    if !close(rgb.l1_rgb, brute_l1_rgb(&a, &b, RGB_RADIUS)) {
        return Err(format!("l1-rgb mismatch seed {seed}"));
    }

    let sparse = n.min(16);
    let t = build_targets(&queries, &a, sparse).unwrap();
    let (udf, colors, sp) = brute_targets(&queries, &a, sparse, COLOR_RADIUS);
    if t.udf.iter().zip(&udf).any(|(x, y)| !close(*x, *y)) || t.colors != colors || t.sparse_gt != sp {
        return Err(format!("targets mismatch seed {seed}"));
    }
    Ok(())
}
