//! Point-patch encoder producing the token interface consumed by the anchor predictor.
//!
//! The seen cloud is split into groups around farthest-point centers; each
//! point is embedded from its centered coordinates and color, embeddings are
//! mean-pooled per group and offset by an embedding of the group center.

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{invalid_input, Result};
use crate::geometry::{ColoredPointCloud, Point3};
use crate::rng::Rng;
use crate::spatial::{fps_sample, SpatialIndex};

use super::layers::{Linear, Mlp2};

#[derive(Debug, Clone, Copy)]
pub struct PointPatchEncoder {
    point_mlp: Mlp2,
    center_embed: Linear,
    global: Linear,
    tokens: usize,
}

/// Group tokens `R` (`N×d`) and the global token `z0` (`1×d`).
#[derive(Debug, Clone)]
pub struct EncoderTokens {
    pub tokens: Var,
    pub global: Var,
    pub centers: Vec<Point3>,
}

/// FPS start chosen from geometry alone: the point farthest from the centroid,
/// ties broken by lexicographic coordinates. Keeps grouping independent of
/// input order.
pub fn canonical_start(points: &[Point3]) -> usize {
    let n = points.len() as f64;
    let mut c = Point3::ZERO;
    for &p in points {
        c += p;
    }
    let c = c / n;
    let key = |p: &Point3| (p.dist_squared(c), -p.x, -p.y, -p.z);
    let mut best = 0;
    for i in 1..points.len() {
        let (a, b) = (key(&points[i]), key(&points[best]));
        if a.0 > b.0 || (a.0 == b.0 && (a.1, a.2, a.3) > (b.1, b.2, b.3)) {
            best = i;
        }
    }
    best
}

impl PointPatchEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, d: usize, tokens: usize) -> Self {
        PointPatchEncoder {
            point_mlp: Mlp2::new(store, rng, "encoder.point_mlp", [6, d, d]),
            center_embed: Linear::new(store, rng, "encoder.center", 3, d),
            global: Linear::new(store, rng, "encoder.global", d, d),
            tokens,
        }
    }

    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, cloud: &ColoredPointCloud) -> Result<EncoderTokens> {
        let n = cloud.len();
        if n < self.tokens {
            return Err(invalid_input(format!(
                "encoder needs at least {} points, got {n}",
                self.tokens
            )));
        }
        let start = canonical_start(&cloud.positions);
        let center_ids = fps_sample(&cloud.positions, self.tokens, start)?;
        let centers: Vec<Point3> = center_ids.iter().map(|&i| cloud.positions[i]).collect();
        let index = SpatialIndex::build(&centers)?;
        let groups: Vec<usize> = cloud.positions.iter().map(|&p| index.nearest(p).id).collect();

        let mut sizes = vec![0usize; self.tokens];
        for &g in &groups {
            sizes[g] += 1;
        }
        let mut feats = Vec::with_capacity(n * 6);
        let mut pool = Tensor::zeros(self.tokens, n);
        for (i, (&p, &g)) in cloud.positions.iter().zip(&groups).enumerate() {
            let rel = p - centers[g];
            let rgb = cloud.colors.as_ref().map_or([0.0; 3], |c| c[i]);
            feats.extend_from_slice(&[rel.x, rel.y, rel.z, rgb[0], rgb[1], rgb[2]]);
            pool.set(g, i, 1.0 / sizes[g] as f64);
        }
        let input = tape.constant(Tensor::from_vec(n, 6, feats)?);
        let emb = self.point_mlp.forward(tape, store, input)?;
        let pool = tape.constant(pool);
        let pooled = tape.matmul(pool, emb)?;

        let center_data: Vec<f64> = centers.iter().flat_map(|c| c.to_array()).collect();
        let center_t = tape.constant(Tensor::from_vec(self.tokens, 3, center_data)?);
        let center_emb = self.center_embed.forward(tape, store, center_t)?;
        let tokens = tape.add(pooled, center_emb)?;

        let mean = tape.mean_rows(tokens);
        let global = self.global.forward(tape, store, mean)?;
        Ok(EncoderTokens {
            tokens,
            global,
            centers,
        })
    }
}
