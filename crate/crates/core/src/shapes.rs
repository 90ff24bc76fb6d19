//! Closed-form unsigned distance fields with exact gradients and surface samplers.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_argument, Error, Result};
use crate::geometry::{p3, ColoredPointCloud, Point3, Rgb};
use crate::rng::rng_from_seed;

/// Distance below which a point counts as on the surface or medial axis.
pub const GRADIENT_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
    Torus { major: f64, minor: f64 },
    /// Outline of an L-shaped polygon in the plane z = 0. The horizontal leg
    /// spans `leg_x`, the vertical leg `leg_y`, both `width` thick.
    LProfile { leg_x: f64, leg_y: f64, width: f64 },
}

/// The gradient is not defined at this point (surface or medial axis).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UndefinedGradient;

impl fmt::Display for UndefinedGradient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("gradient undefined on the surface or medial axis")
    }
}

impl std::error::Error for UndefinedGradient {}

/// An analytic shape centred at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticShape {
    pub kind: ShapeKind,
}

/// Smooth position-derived coloring, components in `[0, 1]`.
pub fn default_color(p: Point3) -> Rgb {
    let c = |a: f64| 0.5 + 0.5 * a.sin();
    [
        c(1.7 * p.x + 0.9 * p.y + 0.3),
        c(2.1 * p.y - 1.3 * p.z + 1.1),
        c(1.9 * p.z + 1.2 * p.x - 0.7),
    ]
}

impl AnalyticShape {
    pub fn new(kind: ShapeKind) -> Result<Self> {
        let params: Vec<f64> = match kind {
            ShapeKind::Sphere { radius } => vec![radius],
            ShapeKind::Box { half_extents } => half_extents.to_vec(),
            ShapeKind::Torus { major, minor } => {
                if minor >= major {
                    return Err(invalid_argument("torus needs minor < major"));
                }
                vec![major, minor]
            }
            ShapeKind::LProfile {
                leg_x,
                leg_y,
                width,
            } => {
                if width >= leg_x || width >= leg_y {
                    return Err(invalid_argument("L profile needs width < both legs"));
                }
                vec![leg_x, leg_y, width]
            }
        };
        if params.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(invalid_argument("shape parameters must be positive and finite"));
        }
        Ok(AnalyticShape { kind })
    }

    pub fn sphere(radius: f64) -> Self {
        Self::new(ShapeKind::Sphere { radius }).expect("valid sphere")
    }

    pub fn cube_box(half_extents: [f64; 3]) -> Self {
        Self::new(ShapeKind::Box { half_extents }).expect("valid box")
    }

    pub fn torus(major: f64, minor: f64) -> Self {
        Self::new(ShapeKind::Torus { major, minor }).expect("valid torus")
    }

    pub fn l_profile(leg_x: f64, leg_y: f64, width: f64) -> Self {
        Self::new(ShapeKind::LProfile {
            leg_x,
            leg_y,
            width,
        })
        .expect("valid L profile")
    }

    pub fn is_planar(&self) -> bool {
        matches!(self.kind, ShapeKind::LProfile { .. })
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ShapeKind::Sphere { .. } => "sphere",
            ShapeKind::Box { .. } => "box",
            ShapeKind::Torus { .. } => "torus",
            ShapeKind::LProfile { .. } => "lprofile",
        }
    }

    pub fn color(&self, p: Point3) -> Rgb {
        default_color(p)
    }

    /// Closed polygon vertices of the L profile (counter-clockwise), centred
    /// on the bounding box.
    pub fn l_vertices(&self) -> Option<[Point3; 6]> {
        let ShapeKind::LProfile {
            leg_x,
            leg_y,
            width,
        } = self.kind
        else {
            return None;
        };
        let (cx, cy) = (leg_x / 2.0, leg_y / 2.0);
        let v = |x: f64, y: f64| p3(x - cx, y - cy, 0.0);
        Some([
            v(0.0, 0.0),
            v(leg_x, 0.0),
            v(leg_x, width),
            v(width, width),
            v(width, leg_y),
            v(0.0, leg_y),
        ])
    }

    fn l_segments(&self) -> Option<[(Point3, Point3); 6]> {
        let v = self.l_vertices()?;
        Some(std::array::from_fn(|i| (v[i], v[(i + 1) % 6])))
    }

    /// Exact unsigned distance to the surface.
    pub fn udf(&self, p: Point3) -> f64 {
        self.closest(p).0
    }

    /// Distance and a closest surface point (first one found on ties).
    fn closest(&self, p: Point3) -> (f64, Point3, bool) {
        match self.kind {
            ShapeKind::Sphere { radius } => {
                let n = p.norm();
                let dir = p.normalized().unwrap_or(p3(1.0, 0.0, 0.0));
                ((n - radius).abs(), dir * radius, n > GRADIENT_TOLERANCE)
            }
            ShapeKind::Box { half_extents: h } => box_closest(p, h),
            ShapeKind::Torus { major, minor } => {
                let rho = (p.x * p.x + p.y * p.y).sqrt();
                let ring_dir = if rho > 0.0 {
                    p3(p.x / rho, p.y / rho, 0.0)
                } else {
                    p3(1.0, 0.0, 0.0)
                };
                let ring = ring_dir * major;
                let off = p - ring;
                let tube = off.norm();
                let dir = off.normalized().unwrap_or(p3(0.0, 0.0, 1.0));
                let unique = rho > GRADIENT_TOLERANCE && tube > GRADIENT_TOLERANCE;
                ((tube - minor).abs(), ring + dir * minor, unique)
            }
            ShapeKind::LProfile { .. } => {
                let segs = self.l_segments().expect("L profile");
                let mut best = (f64::INFINITY, Point3::ZERO);
                let mut second = f64::INFINITY;
                for (a, b) in segs {
                    let c = closest_on_segment(p, a, b);
                    let d = p.dist(c);
                    if d < best.0 {
                        second = best.0;
                        best = (d, c);
                    } else if d < second {
                        second = d;
                    }
                }
                // Corners are shared by two segments; only a distinct closest
                // point counts as a tie.
                let mut unique = true;
                if second - best.0 <= GRADIENT_TOLERANCE {
                    for (a, b) in segs {
                        let c = closest_on_segment(p, a, b);
                        if (p.dist(c) - best.0).abs() <= GRADIENT_TOLERANCE
                            && c.dist(best.1) > GRADIENT_TOLERANCE
                        {
                            unique = false;
                        }
                    }
                }
                (best.0, best.1, unique)
            }
        }
    }

    /// Unit gradient of the UDF, or [`UndefinedGradient`] on the surface and
    /// on the medial axis.
    pub fn gradient(&self, p: Point3) -> std::result::Result<Point3, UndefinedGradient> {
        let (d, c, unique) = self.closest(p);
        if d <= GRADIENT_TOLERANCE || !unique {
            return Err(UndefinedGradient);
        }
        (p - c).normalized().ok_or(UndefinedGradient)
    }

    /// Outward unit normal at a surface point.
    pub fn normal(&self, s: Point3) -> Point3 {
        match self.kind {
            ShapeKind::Sphere { .. } => s.normalized().unwrap_or(p3(1.0, 0.0, 0.0)),
            ShapeKind::Box { half_extents: h } => {
                let mut axis = 0;
                let mut best = f64::INFINITY;
                for a in 0..3 {
                    let gap = (h[a] - s.axis(a).abs()).abs();
                    if gap < best {
                        best = gap;
                        axis = a;
                    }
                }
                let sign = s.axis(axis).signum();
                let mut n = [0.0; 3];
                n[axis] = if sign == 0.0 { 1.0 } else { sign };
                Point3::from_array(n)
            }
            ShapeKind::Torus { major, .. } => {
                let rho = (s.x * s.x + s.y * s.y).sqrt().max(1e-300);
                let ring = p3(s.x / rho, s.y / rho, 0.0) * major;
                (s - ring).normalized().unwrap_or(p3(0.0, 0.0, 1.0))
            }
            ShapeKind::LProfile { .. } => {
                let segs = self.l_segments().expect("L profile");
                let (a, b) = segs
                    .iter()
                    .copied()
                    .min_by(|(a0, b0), (a1, b1)| {
                        s.dist(closest_on_segment(s, *a0, *b0))
                            .total_cmp(&s.dist(closest_on_segment(s, *a1, *b1)))
                    })
                    .expect("six segments");
                // Counter-clockwise polygon: outward normal is the edge rotated clockwise.
                let t = (b - a).normalized().unwrap_or(p3(1.0, 0.0, 0.0));
                p3(t.y, -t.x, 0.0)
            }
        }
    }

    pub fn surface_area(&self) -> f64 {
        match self.kind {
            ShapeKind::Sphere { radius } => 4.0 * PI * radius * radius,
            ShapeKind::Box { half_extents: h } => {
                8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2])
            }
            ShapeKind::Torus { major, minor } => 4.0 * PI * PI * major * minor,
            ShapeKind::LProfile { leg_x, leg_y, .. } => 2.0 * (leg_x + leg_y),
        }
    }

    /// `count` area-uniform surface samples colored by the shape's color function.
    pub fn sample_surface(&self, count: usize, seed: u64) -> ColoredPointCloud {
        let mut rng = rng_from_seed(seed);
        let mut positions = Vec::with_capacity(count);
        while positions.len() < count {
            let p = match self.kind {
                ShapeKind::Sphere { radius } => {
                    let g: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                    match Point3::from_array(g).normalized() {
                        Some(d) => d * radius,
                        None => continue,
                    }
                }
                ShapeKind::Box { half_extents: h } => {
                    let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                    let total: f64 = areas.iter().sum();
                    let mut pick = rng.random::<f64>() * total;
                    let mut axis = 2;
                    for (a, area) in areas.iter().enumerate() {
                        if pick < *area {
                            axis = a;
                            break;
                        }
                        pick -= area;
                    }
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    let mut c = [0.0; 3];
                    for (a, v) in c.iter_mut().enumerate() {
                        *v = if a == axis {
                            sign * h[a]
                        } else {
                            rng.random_range(-h[a]..=h[a])
                        };
                    }
                    Point3::from_array(c)
                }
                ShapeKind::Torus { major, minor } => {
                    let theta = rng.random_range(0.0..2.0 * PI);
                    let phi = rng.random_range(0.0..2.0 * PI);
                    let accept = rng.random::<f64>();
                    if accept > (major + minor * theta.cos()) / (major + minor) {
                        continue;
                    }
                    let rho = major + minor * theta.cos();
                    p3(rho * phi.cos(), rho * phi.sin(), minor * theta.sin())
                }
                ShapeKind::LProfile { .. } => {
                    let segs = self.l_segments().expect("L profile");
                    let total: f64 = segs.iter().map(|(a, b)| a.dist(*b)).sum();
                    let mut s = rng.random::<f64>() * total;
                    let mut out = segs[5].1;
                    for (a, b) in segs {
                        let len = a.dist(b);
                        if s <= len {
                            out = a + (b - a) * (s / len);
                            break;
                        }
                        s -= len;
                    }
                    out
                }
            };
            positions.push(p);
        }
        let colors = positions.iter().map(|&p| self.color(p)).collect();
        ColoredPointCloud {
            positions,
            colors: Some(colors),
            udf: None,
        }
    }

    /// Simulated single-view capture: surface samples whose outward normal
    /// faces `view_dir`, optionally perturbed by isotropic Gaussian noise.
    pub fn make_partial_view(
        &self,
        view_dir: Point3,
        count: usize,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<ColoredPointCloud> {
        let dir = view_dir
            .normalized()
            .ok_or_else(|| invalid_argument("view direction must be nonzero"))?;
        let all = self.sample_surface(count, seed);
        let keep: Vec<usize> = all
            .positions
            .iter()
            .enumerate()
            .filter(|(_, &p)| self.normal(p).dot(dir) >= 0.0)
            .map(|(i, _)| i)
            .collect();
        let mut view = all.select(&keep);
        if noise_sigma > 0.0 {
            let mut rng = rng_from_seed(seed ^ 0x005E_ED0F_0153);
            for p in &mut view.positions {
                let n: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                *p += Point3::from_array(n) * noise_sigma;
            }
        }
        Ok(view)
    }
}

fn closest_on_segment(p: Point3, a: Point3, b: Point3) -> Point3 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.norm_squared()).clamp(0.0, 1.0);
    a + ab * t
}

fn box_closest(p: Point3, h: [f64; 3]) -> (f64, Point3, bool) {
    let a = p.to_array();
    let outside = (0..3).any(|i| a[i].abs() > h[i]);
    if outside {
        let c: [f64; 3] = std::array::from_fn(|i| a[i].clamp(-h[i], h[i]));
        let c = Point3::from_array(c);
        return (p.dist(c), c, true);
    }
    // Inside: nearest face, unsigned.
    let gaps: [f64; 3] = std::array::from_fn(|i| h[i] - a[i].abs());
    let mut axis = 0;
    for i in 1..3 {
        if gaps[i] < gaps[axis] {
            axis = i;
        }
    }
    let mut unique = a[axis].abs() > GRADIENT_TOLERANCE || gaps[axis] <= GRADIENT_TOLERANCE;
    for i in 0..3 {
        if i != axis && (gaps[i] - gaps[axis]).abs() <= GRADIENT_TOLERANCE {
            unique = false;
        }
    }
    let mut c = a;
    c[axis] = if a[axis] >= 0.0 { h[axis] } else { -h[axis] };
    (gaps[axis], Point3::from_array(c), unique)
}

impl fmt::Display for AnalyticShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ShapeKind::Sphere { radius } => write!(f, "sphere:{radius}"),
            ShapeKind::Box { half_extents: h } => write!(f, "box:{},{},{}", h[0], h[1], h[2]),
            ShapeKind::Torus { major, minor } => write!(f, "torus:{major},{minor}"),
            ShapeKind::LProfile {
                leg_x,
                leg_y,
                width,
            } => write!(f, "lprofile:{leg_x},{leg_y},{width}"),
        }
    }
}

/// Parses `name` or `name:p1,p2,...`; missing parameters take catalog defaults.
impl FromStr for AnalyticShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let params = rest
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| invalid_argument(format!("bad shape parameter {t:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let get = |i: usize, default: f64| params.get(i).copied().unwrap_or(default);
        let kind = match name.trim() {
            "sphere" => ShapeKind::Sphere {
                radius: get(0, 1.0),
            },
            "box" => {
                let a = get(0, 1.0);
                ShapeKind::Box {
                    half_extents: [a, get(1, a), get(2, a)],
                }
            }
            "torus" => ShapeKind::Torus {
                major: get(0, 1.0),
                minor: get(1, 0.35),
            },
            "lprofile" | "l" => ShapeKind::LProfile {
                leg_x: get(0, 2.0),
                leg_y: get(1, 2.0),
                width: get(2, 0.5),
            },
            other => return Err(invalid_argument(format!("unknown shape {other:?}"))),
        };
        AnalyticShape::new(kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        assert_eq!(AnalyticShape::sphere(1.0).udf(p3(2.0, 0.0, 0.0)), 1.0);
        assert!((AnalyticShape::torus(1.0, 0.25).udf(Point3::ZERO) - 0.75).abs() < 1e-15);
        let b = AnalyticShape::cube_box([1.0; 3]);
        assert!((b.udf(p3(2.0, 2.0, 0.0)) - 2f64.sqrt()).abs() < 1e-15);
        assert!((b.udf(p3(0.5, 0.1, 0.0)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sphere_gradient_is_radial() {
        let s = AnalyticShape::sphere(1.0);
        assert_eq!(s.gradient(p3(2.0, 0.0, 0.0)).unwrap(), p3(1.0, 0.0, 0.0));
        assert!(s.gradient(p3(1.0, 0.0, 0.0)).is_err());
        assert!(s.gradient(Point3::ZERO).is_err());
    }

    #[test]
    fn medial_axes_are_undefined() {
        let b = AnalyticShape::cube_box([1.0; 3]);
        assert!(b.gradient(Point3::ZERO).is_err());
        assert!(b.gradient(p3(0.5, 0.5, 0.0)).is_err());
        let t = AnalyticShape::torus(1.0, 0.25);
        assert!(t.gradient(p3(0.0, 0.0, 0.3)).is_err());
        assert!(t.gradient(p3(1.0, 0.0, 0.0)).is_err());
        let l = AnalyticShape::l_profile(2.0, 2.0, 0.5);
        let [v0, v1, ..] = l.l_vertices().unwrap();
        // Equidistant from the bottom edge and the left edge, inside the polygon.
        let diag = v0 + p3(0.2, 0.2, 0.0);
        assert!(l.gradient(diag).is_err());
        // Beyond a convex corner the corner itself is the unique closest point.
        assert!(l.gradient(v1 + p3(0.3, -0.3, 0.0)).is_ok());
    }

    #[test]
    fn samples_lie_on_surfaces() {
        for shape in [
            AnalyticShape::sphere(1.0),
            AnalyticShape::cube_box([1.0, 0.5, 0.75]),
            AnalyticShape::torus(1.0, 0.3),
            AnalyticShape::l_profile(2.0, 1.5, 0.4),
        ] {
            let c = shape.sample_surface(1000, 5);
            assert_eq!(c.len(), 1000);
            assert!(c.positions.iter().all(|&p| shape.udf(p) <= 1e-6), "{shape}");
            c.validate().unwrap();
            assert_eq!(c, shape.sample_surface(1000, 5));
        }
        let l = AnalyticShape::l_profile(2.0, 1.5, 0.4).sample_surface(500, 1);
        assert!(l.positions.iter().all(|p| p.z.abs() <= 1e-6));
    }

    #[test]
    fn partial_view_culls_back_hemisphere() {
        let s = AnalyticShape::sphere(1.0);
        let v = s.make_partial_view(p3(1.0, 0.0, 0.0), 4000, 0.0, 9).unwrap();
        assert!(v.positions.iter().all(|p| p.x >= -1e-6));
        assert!(v.positions.iter().all(|&p| s.udf(p) <= 1e-6));
        let ratio = v.len() as f64 / 4000.0;
        assert!((ratio - 0.5).abs() < 0.05, "{ratio}");
        assert!(s.make_partial_view(Point3::ZERO, 10, 0.0, 0).is_err());
    }

    #[test]
    fn parse_catalog() {
        assert_eq!("sphere:2".parse::<AnalyticShape>().unwrap(), AnalyticShape::sphere(2.0));
        assert_eq!("torus".parse::<AnalyticShape>().unwrap(), AnalyticShape::torus(1.0, 0.35));
        assert!("teapot".parse::<AnalyticShape>().is_err());
        assert!("sphere:-1".parse::<AnalyticShape>().is_err());
        let b: AnalyticShape = "box:1,2,3".parse().unwrap();
        assert_eq!(b.to_string().parse::<AnalyticShape>().unwrap(), b);
    }
}
