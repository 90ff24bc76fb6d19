//! Points, colored clouds, normalization, query sampling and augmentation.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_argument, invalid_input, Error, Result};
use crate::rng::rng_from_seed;

/// A position in normalized object units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub const fn p3(x: f64, y: f64, z: f64) -> Point3 {
    Point3 { x, y, z }
}

impl Point3 {
    pub const ZERO: Point3 = p3(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        p3(x, y, z)
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        p3(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Point3) -> Point3 {
        p3(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn norm_l1(self) -> f64 {
        self.x.abs() + self.y.abs() + self.z.abs()
    }

    /// Squared Euclidean distance, evaluated component by component as `(a - b)`.
    ///
    /// Every neighbor search in the crate uses this exact expression so that
    /// results from different code paths compare bit-for-bit.
    pub fn dist_squared(self, o: Point3) -> f64 {
        let dx = self.x - o.x;
        let dy = self.y - o.y;
        let dz = self.z - o.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn dist(self, o: Point3) -> f64 {
        self.dist_squared(o).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn normalized(self) -> Option<Point3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self / n)
    }

    pub fn axis(self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Point3 {
        p3(f(self.x), f(self.y), f(self.z))
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        p3(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Point3 {
    fn add_assign(&mut self, o: Point3) {
        *self = *self + o;
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        p3(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        p3(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Point3 {
    type Output = Point3;
    fn div(self, s: f64) -> Point3 {
        p3(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        p3(-self.x, -self.y, -self.z)
    }
}

/// RGB triple with components in `[0, 1]`.
pub type Rgb = [f64; 3];

/// Positions with optional per-point colors and UDF values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ColoredPointCloud {
    pub positions: Vec<Point3>,
    pub colors: Option<Vec<Rgb>>,
    pub udf: Option<Vec<f64>>,
}

impl ColoredPointCloud {
    pub fn new(positions: Vec<Point3>, colors: Option<Vec<Rgb>>) -> Result<Self> {
        let cloud = ColoredPointCloud {
            positions,
            colors,
            udf: None,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn from_positions(positions: Vec<Point3>) -> Self {
        ColoredPointCloud {
            positions,
            colors: None,
            udf: None,
        }
    }

    pub fn with_udf(mut self, udf: Vec<f64>) -> Result<Self> {
        if udf.len() != self.positions.len() {
            return Err(invalid_input("udf length differs from point count"));
        }
        if udf.iter().any(|&u| !(u >= 0.0)) {
            return Err(invalid_input("udf values must be nonnegative"));
        }
        self.udf = Some(udf);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self.positions.iter().position(|p| !p.is_finite()) {
            return Err(invalid_input(format!("non-finite position at index {p}")));
        }
        if let Some(colors) = &self.colors {
            if colors.len() != self.positions.len() {
                return Err(invalid_input(format!(
                    "{} colors for {} positions",
                    colors.len(),
                    self.positions.len()
                )));
            }
            if colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(invalid_input("color component outside [0, 1]"));
            }
        }
        if let Some(udf) = &self.udf {
            if udf.len() != self.positions.len() {
                return Err(invalid_input("udf length differs from point count"));
            }
        }
        Ok(())
    }

    /// Keeps the points at the given indices, in order.
    pub fn select(&self, ids: &[usize]) -> ColoredPointCloud {
        ColoredPointCloud {
            positions: ids.iter().map(|&i| self.positions[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| ids.iter().map(|&i| c[i]).collect()),
            udf: self.udf.as_ref().map(|u| ids.iter().map(|&i| u[i]).collect()),
        }
    }

    /// Every `stride`-th point; the "resolution" knob for fine features.
    pub fn subsample(&self, stride: usize) -> ColoredPointCloud {
        let ids: Vec<usize> = (0..self.len()).step_by(stride.max(1)).collect();
        self.select(&ids)
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.is_empty() {
            return None;
        }
        let n = self.len() as f64;
        let mut acc = Point3::ZERO;
        for &p in &self.positions {
            acc += p;
        }
        Some(acc / n)
    }

    pub fn map_positions(&self, f: impl Fn(Point3) -> Point3) -> ColoredPointCloud {
        ColoredPointCloud {
            positions: self.positions.iter().map(|&p| f(p)).collect(),
            colors: self.colors.clone(),
            udf: self.udf.clone(),
        }
    }
}

/// Maps a cloud to zero mean and unit variance: `normalized = (p - centroid) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub centroid: Point3,
    pub scale: f64,
}

impl NormalizationTransform {
    pub const IDENTITY: NormalizationTransform = NormalizationTransform {
        centroid: Point3::ZERO,
        scale: 1.0,
    };

    pub fn apply(&self, p: Point3) -> Point3 {
        (p - self.centroid) / self.scale
    }

    pub fn invert(&self, p: Point3) -> Point3 {
        p * self.scale + self.centroid
    }

    pub fn apply_cloud(&self, cloud: &ColoredPointCloud) -> ColoredPointCloud {
        let mut out = cloud.map_positions(|p| self.apply(p));
        if let Some(udf) = &mut out.udf {
            udf.iter_mut().for_each(|u| *u /= self.scale);
        }
        out
    }

    pub fn invert_cloud(&self, cloud: &ColoredPointCloud) -> ColoredPointCloud {
        let mut out = cloud.map_positions(|p| self.invert(p));
        if let Some(udf) = &mut out.udf {
            udf.iter_mut().for_each(|u| *u *= self.scale);
        }
        out
    }
}

/// Computes the isotropic transform giving zero centroid and a mean squared
/// distance from the origin of 3 (unit variance per axis on average).
pub fn normalization_for(cloud: &ColoredPointCloud) -> Result<NormalizationTransform> {
    let centroid = cloud
        .centroid()
        .ok_or_else(|| invalid_input("cannot normalize an empty cloud"))?;
    let msd = cloud
        .positions
        .iter()
        .map(|&p| p.dist_squared(centroid))
        .sum::<f64>()
        / cloud.len() as f64;
    let scale = (msd / 3.0).sqrt();
    if !(scale > 1e-12) || !scale.is_finite() {
        return Err(Error::DegenerateScale(format!(
            "mean squared deviation {msd} gives no usable scale"
        )));
    }
    Ok(NormalizationTransform { centroid, scale })
}

pub fn normalize_to_unit(
    cloud: &ColoredPointCloud,
) -> Result<(ColoredPointCloud, NormalizationTransform)> {
    let t = normalization_for(cloud)?;
    Ok((t.apply_cloud(cloud), t))
}

/// `count` points uniform in the cube `[-range, range]^3`.
pub fn sample_query_points(count: usize, range: f64, seed: u64) -> Result<Vec<Point3>> {
    if count == 0 || !(range > 0.0) {
        return Err(invalid_argument("query sampling needs count > 0 and range > 0"));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..count)
        .map(|_| {
            p3(
                rng.random_range(-range..=range),
                rng.random_range(-range..=range),
                rng.random_range(-range..=range),
            )
        })
        .collect())
}

/// `count` points uniform in the square `[-range, range]^2` of the plane z = 0.
pub fn sample_query_points_planar(count: usize, range: f64, seed: u64) -> Result<Vec<Point3>> {
    if count == 0 || !(range > 0.0) {
        return Err(invalid_argument("query sampling needs count > 0 and range > 0"));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..count)
        .map(|_| {
            p3(
                rng.random_range(-range..=range),
                rng.random_range(-range..=range),
                0.0,
            )
        })
        .collect())
}

/// A uniform scale followed by a rotation: `p -> scale * R p`.
///
/// `R = Rz(θz) · Ry(θy) · Rx(θx)`, i.e. the rotation about X is applied
/// first, then Y, then Z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub angles: [f64; 3],
    rotation: [[f64; 3]; 3],
}

impl Similarity {
    pub fn new(scale: f64, angles: [f64; 3]) -> Self {
        let [ax, ay, az] = angles;
        let (sx, cx) = ax.sin_cos();
        let (sy, cy) = ay.sin_cos();
        let (sz, cz) = az.sin_cos();
        let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
        let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
        let rotation = mat3_mul(&rz, &mat3_mul(&ry, &rx));
        Similarity {
            scale,
            angles,
            rotation,
        }
    }

    pub fn identity() -> Self {
        Similarity::new(1.0, [0.0; 3])
    }

    /// Scale in `[0.8, 1.2]`, each angle in `[-π, π]`.
    pub fn random(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let scale = rng.random_range(0.8..=1.2);
        let pi = std::f64::consts::PI;
        let angles = [
            rng.random_range(-pi..=pi),
            rng.random_range(-pi..=pi),
            rng.random_range(-pi..=pi),
        ];
        Similarity::new(scale, angles)
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        self.rotation
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        let r = &self.rotation;
        let v = [p.x, p.y, p.z];
        let row = |i: usize| r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2];
        p3(row(0), row(1), row(2)) * self.scale
    }

    pub fn apply_cloud(&self, cloud: &ColoredPointCloud) -> ColoredPointCloud {
        let mut out = cloud.map_positions(|p| self.apply(p));
        if let Some(udf) = &mut out.udf {
            udf.iter_mut().for_each(|u| *u *= self.scale);
        }
        out
    }
}

fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Applies one random similarity (drawn from `seed`) to every point.
pub fn apply_augmentation(cloud: &ColoredPointCloud, seed: u64) -> Result<ColoredPointCloud> {
    if cloud.is_empty() {
        return Err(invalid_input("cannot augment an empty cloud"));
    }
    Ok(Similarity::random(seed).apply_cloud(cloud))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: &[[f64; 3]]) -> ColoredPointCloud {
        ColoredPointCloud::from_positions(points.iter().map(|&a| Point3::from_array(a)).collect())
    }

    #[test]
    fn normalize_two_points() {
        let (out, t) = normalize_to_unit(&cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])).unwrap();
        assert_eq!(t.centroid, p3(1.0, 0.0, 0.0));
        let s3 = 3f64.sqrt();
        assert!((out.positions[0].x + s3).abs() < 1e-12);
        assert!((out.positions[1].x - s3).abs() < 1e-12);
        assert!((t.scale - 1.0 / s3).abs() < 1e-12);
    }

    #[test]
    fn normalize_rejects_degenerate_and_empty() {
        let err = normalize_to_unit(&cloud(&[[5.0, 5.0, 5.0], [5.0, 5.0, 5.0]])).unwrap_err();
        assert!(matches!(err, Error::DegenerateScale(_)));
        let err = normalize_to_unit(&ColoredPointCloud::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn normalize_is_idempotent() {
        let pts = sample_query_points(500, 2.0, 11).unwrap();
        let (once, _) = normalize_to_unit(&ColoredPointCloud::from_positions(pts)).unwrap();
        let (_, t) = normalize_to_unit(&once).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-6);
        assert!(t.centroid.norm() < 1e-9);
    }

    #[test]
    fn query_sampling_contract() {
        let q = sample_query_points(550, 3.0, 7).unwrap();
        assert_eq!(q.len(), 550);
        assert!(q
            .iter()
            .all(|p| p.to_array().iter().all(|c| (-3.0..=3.0).contains(c))));
        assert_eq!(q, sample_query_points(550, 3.0, 7).unwrap());
        let tiny = sample_query_points(1, 1e-4, 0).unwrap();
        assert!(tiny[0].to_array().iter().all(|c| c.abs() <= 1e-4));
        assert!(sample_query_points(0, 1.0, 0).is_err());
    }

    #[test]
    fn identity_similarity_is_identity() {
        let c = cloud(&[[1.0, 2.0, 3.0], [-0.5, 0.25, 4.0]]);
        let out = Similarity::identity().apply_cloud(&c);
        assert_eq!(out, c);
    }

    #[test]
    fn augmentation_scales_distances_within_bounds() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 2.0, -0.5]]);
        let d = c.positions[0].dist(c.positions[1]);
        for seed in 0..50 {
            let out = apply_augmentation(&c, seed).unwrap();
            let d2 = out.positions[0].dist(out.positions[1]);
            assert!(d2 >= 0.8 * d - 1e-12 && d2 <= 1.2 * d + 1e-12);
            assert_eq!(out, apply_augmentation(&c, seed).unwrap());
        }
    }

    #[test]
    fn rotation_order_is_x_then_y_then_z() {
        let half = std::f64::consts::FRAC_PI_2;
        // x-axis unit vector: Rx leaves it, Ry(90°) sends it to -z, Rz leaves -z.
        let s = Similarity::new(1.0, [0.0, half, half]);
        let out = s.apply(p3(1.0, 0.0, 0.0));
        assert!((out - p3(0.0, 0.0, -1.0)).norm() < 1e-12);
    }
}
