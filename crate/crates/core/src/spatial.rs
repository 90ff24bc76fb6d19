//! Exact nearest-neighbor search and farthest point sampling.
//!
//! [`SpatialIndex`] is a static k-d tree. Results are exact: they equal a
//! linear scan under the ordering `(distance, point id)`, so ties always
//! resolve to the smaller id.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{invalid_argument, invalid_input, Result};
use crate::geometry::Point3;

const LEAF_SIZE: usize = 8;

/// A neighbor: point id and Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub dist: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Immutable k-d tree over a point array.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    bounds: Aabb,
}

/// Heap entry ordered by `(dist, id)`; the max-heap top is the current worst.
/// Ordering on the reported distance rather than its square keeps id ties
/// consistent when two squared distances round to the same root.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    id: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then_with(|| self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl SpatialIndex {
    pub fn build(points: &[Point3]) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid_input("cannot index an empty point set"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(invalid_input("cannot index non-finite points"));
        }
        let mut min = points[0];
        let mut max = points[0];
        for p in points {
            min = Point3::new(min.x.min(p.x), min.y.min(p.y), min.z.min(p.z));
            max = Point3::new(max.x.max(p.x), max.y.max(p.y), max.z.max(p.z));
        }
        let mut index = SpatialIndex {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1),
            bounds: Aabb { min, max },
        };
        let n = points.len();
        index.build_node(0, n);
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let slot = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return slot;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            let p = self.points[i];
            for a in 0..3 {
                lo[a] = lo[a].min(p.axis(a));
                hi[a] = hi[a].max(p.axis(a));
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] - lo[axis] <= 0.0 {
            // All points coincide.
            self.nodes.push(Node::Leaf { start, end });
            return slot;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a].axis(axis).total_cmp(&points[b].axis(axis))
        });
        let value = self.points[self.order[mid]].axis(axis);
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[slot] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        slot
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// The `k` nearest points, ascending by `(distance, id)`.
    pub fn knn(&self, q: Point3, k: usize) -> Result<Vec<Neighbor>> {
        if k == 0 || k > self.len() {
            return Err(invalid_argument(format!(
                "k = {k} must lie in 1..={}",
                self.len()
            )));
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_node(0, q, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        Ok(out
            .into_iter()
            .map(|c| Neighbor { id: c.id, dist: c.dist })
            .collect())
    }

    /// Ids of the `k` nearest points, ascending by `(distance, id)`.
    pub fn knn_ids(&self, q: Point3, k: usize) -> Result<Vec<usize>> {
        Ok(self.knn(q, k)?.into_iter().map(|n| n.id).collect())
    }

    /// The single nearest point.
    pub fn nearest(&self, q: Point3) -> Neighbor {
        self.knn(q, 1).expect("index is non-empty")[0]
    }

    fn knn_node(&self, node: usize, q: Point3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &self.order[start..end] {
                    let c = Candidate {
                        dist: q.dist(self.points[id]),
                        id,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap holds k items") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q.axis(axis) - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn_node(near, q, k, heap);
                // Points on the far side are at least |diff| away along this
                // axis, and `sqrt(diff²)` is computed the way their distances
                // are, so it is a safe lower bound. Equal distances must still
                // be visited for id ties.
                if heap.len() < k || (diff * diff).sqrt() <= heap.peek().map_or(f64::INFINITY, |c| c.dist) {
                    self.knn_node(far, q, k, heap);
                }
            }
        }
    }

    /// Every point with distance strictly below `r`, ascending by `(distance, id)`.
    pub fn radius(&self, q: Point3, r: f64) -> Result<Vec<Neighbor>> {
        if !(r > 0.0) {
            return Err(invalid_argument("radius must be positive"));
        }
        let mut out = Vec::new();
        self.radius_node(0, q, r, &mut out);
        out.sort_by(|a, b| a.dist.total_cmp(&b.dist).then_with(|| a.id.cmp(&b.id)));
        Ok(out)
    }

    fn radius_node(&self, node: usize, q: Point3, r: f64, out: &mut Vec<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &self.order[start..end] {
                    let dist = q.dist(self.points[id]);
                    if dist < r {
                        out.push(Neighbor { id, dist });
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q.axis(axis) - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.radius_node(near, q, r, out);
                if diff.abs() < r {
                    self.radius_node(far, q, r, out);
                }
            }
        }
    }
}

/// Greedy farthest point sampling starting from `start`.
///
/// Each step picks the point with the largest distance to the selected set,
/// ties going to the smaller id.
pub fn fps_sample(points: &[Point3], count: usize, start: usize) -> Result<Vec<usize>> {
    if count > points.len() {
        return Err(invalid_argument(format!(
            "cannot pick {count} of {} points",
            points.len()
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    if start >= points.len() {
        return Err(invalid_argument(format!("start id {start} out of range")));
    }
    let mut min_d2: Vec<f64> = points.iter().map(|p| p.dist_squared(points[start])).collect();
    let mut picked = Vec::with_capacity(count);
    picked.push(start);
    min_d2[start] = f64::NEG_INFINITY;
    while picked.len() < count {
        let mut best = usize::MAX;
        let mut best_d2 = f64::NEG_INFINITY;
        for (i, &d2) in min_d2.iter().enumerate() {
            if d2 > best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        picked.push(best);
        let chosen = points[best];
        min_d2[best] = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if min_d2[i] > f64::NEG_INFINITY {
                let d2 = p.dist_squared(chosen);
                if d2 < min_d2[i] {
                    min_d2[i] = d2;
                }
            }
        }
    }
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{p3, sample_query_points};

    #[test]
    fn collinear_knn() {
        let pts = [p3(0.0, 0.0, 0.0), p3(1.0, 0.0, 0.0), p3(2.0, 0.0, 0.0)];
        let idx = SpatialIndex::build(&pts).unwrap();
        assert_eq!(idx.knn_ids(p3(0.4, 0.0, 0.0), 2).unwrap(), vec![0, 1]);
        assert_eq!(idx.knn(p3(0.4, 0.0, 0.0), 3).unwrap().len(), 3);
        let hit = idx.knn(p3(2.0, 0.0, 0.0), 1).unwrap();
        assert_eq!((hit[0].id, hit[0].dist), (2, 0.0));
        assert!(idx.knn(p3(0.0, 0.0, 0.0), 4).is_err());
    }

    #[test]
    fn duplicates_resolve_by_id() {
        let pts = vec![p3(1.0, 1.0, 1.0); 20];
        let idx = SpatialIndex::build(&pts).unwrap();
        assert_eq!(idx.knn_ids(p3(0.0, 0.0, 0.0), 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn empty_index_is_rejected() {
        assert!(SpatialIndex::build(&[]).is_err());
    }

    #[test]
    fn radius_is_strict() {
        let pts = [p3(0.0, 0.0, 0.0), p3(0.5, 0.0, 0.0), p3(3.0, 0.0, 0.0)];
        let idx = SpatialIndex::build(&pts).unwrap();
        let hits = idx.radius(p3(0.0, 0.0, 0.0), 0.5).unwrap();
        assert_eq!(hits.iter().map(|n| n.id).collect::<Vec<_>>(), vec![0]);
        assert_eq!(idx.radius(p3(0.0, 0.0, 0.0), 100.0).unwrap().len(), 3);
    }

    #[test]
    fn large_build() {
        let pts = sample_query_points(48_000, 1.0, 3).unwrap();
        let idx = SpatialIndex::build(&pts).unwrap();
        assert_eq!(idx.len(), 48_000);
        assert_eq!(idx.nearest(pts[123]).id, 123);
    }

    #[test]
    fn fps_basics() {
        let pts = [p3(0.0, 0.0, 0.0), p3(1.0, 0.0, 0.0), p3(0.5, 0.0, 0.0)];
        assert_eq!(fps_sample(&pts, 2, 0).unwrap(), vec![0, 1]);
        let mut all = fps_sample(&pts, 3, 0).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        assert!(fps_sample(&pts, 4, 0).is_err());
    }
}
