//! The neighborhood decoder.
//!
//! A seen (partial, colored) cloud is encoded into group tokens, a transformer
//! turns them into `M` anchors with explicit 3D locations, and every query
//! aggregates only its `m` nearest anchors plus its `n` nearest fine features
//! (per-point RGB projections) before the query head predicts UDF and color.
//! Anchor prediction runs once per scene; per-query work touches `m + n`
//! features only.

mod aggregate;
mod config;
mod encoder;
mod head;
mod layers;
mod predictor;

use std::sync::Arc;

use rayon::prelude::*;

pub use aggregate::{AggregationSources, VectorAttention};
pub use config::ModelConfig;
pub use encoder::{canonical_start, EncoderTokens, PointPatchEncoder};
pub use head::{decode_colors, frequency_encode, frequency_encode_batch, HeadOutput, QueryHead, COLOR_BINS};
pub use layers::{LayerNorm, Linear, Mlp2};
pub use predictor::{AnchorPredictor, AnchorVars};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{invalid_argument, invalid_input, Result};
use crate::geometry::{ColoredPointCloud, Point3, Rgb};
use crate::rng::{derive_seed, rng_from_seed};
use crate::spatial::{Neighbor, SpatialIndex};

/// Queries decoded per tape at inference time.
pub const INFERENCE_CHUNK: usize = 2048;

#[derive(Debug, Clone)]
pub struct NeighborhoodDecoder {
    pub config: ModelConfig,
    pub params: ParamStore,
    encoder: PointPatchEncoder,
    predictor: AnchorPredictor,
    fine_projection: Linear,
    attention: VectorAttention,
    head: QueryHead,
}

/// Everything a query batch needs from one scene, as tape variables.
#[derive(Debug, Clone)]
pub struct SceneVars {
    pub tokens: EncoderTokens,
    pub anchors: AnchorVars,
    pub fine_features: Option<Var>,
    pub fine_positions: Vec<Point3>,
    pub anchor_locations: Vec<Point3>,
    pub sources: AggregationSources,
    anchor_index: SpatialIndex,
    fine_index: Option<SpatialIndex>,
}

/// The `m + n` features gathered for one query, coarse block first.
#[derive(Debug, Clone, PartialEq)]
pub struct GatheredNeighbors {
    pub coarse: Vec<Neighbor>,
    pub fine: Vec<Neighbor>,
    /// Neighbor location minus query location, same order as `coarse ++ fine`.
    pub displacements: Vec<Point3>,
}

impl GatheredNeighbors {
    pub fn len(&self) -> usize {
        self.coarse.len() + self.fine.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Nearest `m` anchors and `n` fine points for one query.
pub fn gather_neighbors(
    q: Point3,
    anchors: &SpatialIndex,
    fine: Option<&SpatialIndex>,
    m: usize,
    n: usize,
) -> Result<GatheredNeighbors> {
    let coarse = anchors.knn(q, m)?;
    let (fine, fine_points) = match (n, fine) {
        (0, _) => (Vec::new(), &[][..]),
        (_, Some(idx)) => (idx.knn(q, n)?, idx.points()),
        (_, None) => return Err(invalid_argument("fine neighbors requested without fine features")),
    };
    let displacements = coarse
        .iter()
        .map(|nb| anchors.points()[nb.id] - q)
        .chain(fine.iter().map(|nb| fine_points[nb.id] - q))
        .collect();
    Ok(GatheredNeighbors {
        coarse,
        fine,
        displacements,
    })
}

impl NeighborhoodDecoder {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(derive_seed(seed, "model-init"));
        let mut params = ParamStore::default();
        let encoder = PointPatchEncoder::new(&mut params, &mut rng, config.d, config.tokens);
        let predictor = AnchorPredictor::new(
            &mut params,
            &mut rng,
            config.d,
            config.anchors,
            config.predictor_layers,
            config.predictor_heads,
            config.predictor_ffn,
            config.query_range,
        );
        let fine_projection = Linear::new(&mut params, &mut rng, "fine.projection", 3, config.d);
        let attention = VectorAttention::new(&mut params, &mut rng, config.d);
        let head = QueryHead::new(
            &mut params,
            &mut rng,
            config.d,
            config.head_width,
            config.head_blocks,
            config.freq_bands,
        );
        Ok(NeighborhoodDecoder {
            config,
            params,
            encoder,
            predictor,
            fine_projection,
            attention,
            head,
        })
    }

    /// Rebuilds the model for `config` and loads parameters by name.
    pub fn from_params(config: ModelConfig, params: &ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.load_from(params)?;
        Ok(model)
    }

    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, seen: &ColoredPointCloud) -> Result<EncoderTokens> {
        self.encoder.encode(tape, store, seen)
    }

    pub fn predict_anchors(&self, tape: &mut Tape, store: &ParamStore, tokens: &EncoderTokens) -> Result<AnchorVars> {
        self.predictor.forward(tape, store, tokens)
    }

    /// One `d`-vector per seen point: a linear projection of its RGB.
    pub fn build_fine_features(&self, tape: &mut Tape, store: &ParamStore, seen: &ColoredPointCloud) -> Result<Var> {
        if seen.is_empty() {
            return Err(invalid_input("fine features need a non-empty cloud"));
        }
        let rgb: Vec<f64> = match &seen.colors {
            Some(c) => c.iter().flatten().copied().collect(),
            None => vec![0.0; 3 * seen.len()],
        };
        let rgb = tape.constant(Tensor::from_vec(seen.len(), 3, rgb)?);
        self.fine_projection.forward(tape, store, rgb)
    }

    /// Encoder, anchor predictor and fine features for one seen cloud.
    /// `fine_cloud` defaults to `seen`; passing a denser or sparser cloud
    /// changes the fine-feature resolution without retraining.
    pub fn scene(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        seen: &ColoredPointCloud,
        fine_cloud: Option<&ColoredPointCloud>,
    ) -> Result<SceneVars> {
        let tokens = self.encode(tape, store, seen)?;
        let anchors = self.predict_anchors(tape, store, &tokens)?;
        let fine_cloud = fine_cloud.unwrap_or(seen);
        let anchor_locations = rows_to_points(tape.value(anchors.locations));
        let anchor_index = SpatialIndex::build(&anchor_locations)?;
        let (features, locations, fine_features, fine_index) = if fine_cloud.is_empty() {
            (anchors.features, anchors.locations, None, None)
        } else {
            let ff = self.build_fine_features(tape, store, fine_cloud)?;
            let fine_locs = points_to_tensor(&fine_cloud.positions);
            let fine_locs = tape.constant(fine_locs);
            let feats = tape.concat_rows(&[anchors.features, ff])?;
            let locs = tape.concat_rows(&[anchors.locations, fine_locs])?;
            (feats, locs, Some(ff), Some(SpatialIndex::build(&fine_cloud.positions)?))
        };
        let sources = self
            .attention
            .sources(tape, store, features, locations, anchors.global)?;
        Ok(SceneVars {
            tokens,
            anchors,
            fine_features,
            fine_positions: fine_cloud.positions.clone(),
            anchor_locations,
            sources,
            anchor_index,
            fine_index,
        })
    }

    /// Source-row ids (`m` anchors then `n` fine features) for each query.
    fn neighbor_rows(&self, scene: &SceneIndices<'_>, queries: &[Point3], m: usize, n: usize) -> Result<Vec<usize>> {
        if m > scene.anchors.len() {
            return Err(invalid_argument(format!(
                "k_coarse = {m} exceeds {} anchors",
                scene.anchors.len()
            )));
        }
        let fine_len = scene.fine.map_or(0, SpatialIndex::len);
        if n > fine_len {
            return Err(invalid_argument(format!(
                "k_fine = {n} exceeds {fine_len} fine features"
            )));
        }
        let offset = scene.anchors.len();
        let mut rows = Vec::with_capacity(queries.len() * (m + n));
        for &q in queries {
            if m > 0 {
                rows.extend(scene.anchors.knn(q, m)?.into_iter().map(|nb| nb.id));
            }
            if n > 0 {
                let fine = scene.fine.expect("checked above");
                rows.extend(fine.knn(q, n)?.into_iter().map(|nb| nb.id + offset));
            }
        }
        Ok(rows)
    }

    /// Aggregates and decodes `queries` against a scene on the same tape.
    pub fn query(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        scene: &SceneVars,
        queries: &[Point3],
        m: usize,
        n: usize,
    ) -> Result<HeadOutput> {
        let idx = SceneIndices {
            anchors: &scene.anchor_index,
            fine: scene.fine_index.as_ref(),
        };
        let rows = self.neighbor_rows(&idx, queries, m, n)?;
        tape.note_branch(&rows);
        let zstar = self.attention.aggregate(
            tape,
            store,
            &scene.sources,
            queries,
            Arc::new(rows),
            m + n,
        )?;
        self.head.forward(tape, store, queries, zstar)
    }

    /// The aggregated feature `z*_q` alone (`Nq×d`).
    pub fn aggregate_only(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        scene: &SceneVars,
        queries: &[Point3],
        m: usize,
        n: usize,
    ) -> Result<Var> {
        let idx = SceneIndices {
            anchors: &scene.anchor_index,
            fine: scene.fine_index.as_ref(),
        };
        let rows = self.neighbor_rows(&idx, queries, m, n)?;
        self.attention
            .aggregate(tape, store, &scene.sources, queries, Arc::new(rows), m + n)
    }

    pub fn head(&self) -> &QueryHead {
        &self.head
    }

    pub fn attention(&self) -> &VectorAttention {
        &self.attention
    }

    /// Runs the per-scene stages once and freezes their outputs for inference.
    pub fn prepare(&self, seen: &ColoredPointCloud, fine_cloud: Option<&ColoredPointCloud>) -> Result<PreparedScene> {
        let mut tape = Tape::new();
        let scene = self.scene(&mut tape, &self.params, seen, fine_cloud)?;
        Ok(PreparedScene {
            keys: tape.value(scene.sources.keys).clone(),
            values: tape.value(scene.sources.values).clone(),
            locations: tape.value(scene.sources.locations).clone(),
            global_query: tape.value(scene.sources.global_query).clone(),
            anchor_features: tape.value(scene.anchors.features).clone(),
            anchor_locations: scene.anchor_locations,
            global: tape.value(scene.anchors.global).clone(),
            fine_positions: scene.fine_positions,
            anchor_index: scene.anchor_index,
            fine_index: scene.fine_index,
        })
    }

    /// Decodes one chunk of queries against a prepared scene.
    pub fn decode_chunk(&self, scene: &PreparedScene, queries: &[Point3], m: usize, n: usize) -> Result<DecodedQueries> {
        let idx = SceneIndices {
            anchors: &scene.anchor_index,
            fine: scene.fine_index.as_ref(),
        };
        let rows = self.neighbor_rows(&idx, queries, m, n)?;
        let mut tape = Tape::new();
        let sources = AggregationSources {
            keys: tape.constant(scene.keys.clone()),
            values: tape.constant(scene.values.clone()),
            locations: tape.constant(scene.locations.clone()),
            global_query: tape.constant(scene.global_query.clone()),
        };
        let zstar = self
            .attention
            .aggregate(&mut tape, &self.params, &sources, queries, Arc::new(rows), m + n)?;
        let out = self.head.forward(&mut tape, &self.params, queries, zstar)?;
        Ok(DecodedQueries {
            udf: tape.value(out.udf).data().to_vec(),
            colors: decode_colors(tape.value(out.color_logits)),
        })
    }

    /// Decodes any number of queries, chunked and run in parallel. Results do
    /// not depend on the chunking.
    pub fn decode(&self, scene: &PreparedScene, queries: &[Point3], m: usize, n: usize) -> Result<DecodedQueries> {
        let parts: Vec<DecodedQueries> = queries
            .par_chunks(INFERENCE_CHUNK)
            .map(|chunk| self.decode_chunk(scene, chunk, m, n))
            .collect::<Result<_>>()?;
        let mut out = DecodedQueries {
            udf: Vec::with_capacity(queries.len()),
            colors: Vec::with_capacity(queries.len()),
        };
        for p in parts {
            out.udf.extend(p.udf);
            out.colors.extend(p.colors);
        }
        Ok(out)
    }

    /// UDF values only (raw, unclamped).
    pub fn decode_udf(&self, scene: &PreparedScene, queries: &[Point3], m: usize, n: usize) -> Result<Vec<f64>> {
        Ok(self.decode(scene, queries, m, n)?.udf)
    }
}

struct SceneIndices<'a> {
    anchors: &'a SpatialIndex,
    fine: Option<&'a SpatialIndex>,
}

/// Frozen per-scene outputs: projected sources, anchors and neighbor indices.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    keys: Tensor,
    values: Tensor,
    locations: Tensor,
    global_query: Tensor,
    pub anchor_features: Tensor,
    pub anchor_locations: Vec<Point3>,
    pub global: Tensor,
    pub fine_positions: Vec<Point3>,
    anchor_index: SpatialIndex,
    fine_index: Option<SpatialIndex>,
}

impl PreparedScene {
    pub fn anchor_index(&self) -> &SpatialIndex {
        &self.anchor_index
    }

    pub fn fine_index(&self) -> Option<&SpatialIndex> {
        self.fine_index.as_ref()
    }

    pub fn fine_count(&self) -> usize {
        self.fine_positions.len()
    }

    /// Replaces one anchor's projected key and value rows, as if its feature
    /// vector had changed. Used to probe neighborhood locality.
    pub fn perturb_anchor_sources(&mut self, anchor: usize, delta: f64) {
        for t in [&mut self.keys, &mut self.values] {
            t.row_slice_mut(anchor).iter_mut().for_each(|v| *v += delta);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedQueries {
    /// Raw UDF predictions (may be negative).
    pub udf: Vec<f64>,
    pub colors: Vec<Rgb>,
}

pub fn rows_to_points(t: &Tensor) -> Vec<Point3> {
    (0..t.rows())
        .map(|r| {
            let row = t.row_slice(r);
            Point3::new(row[0], row[1], row[2])
        })
        .collect()
}

pub fn points_to_tensor(points: &[Point3]) -> Tensor {
    let data = points.iter().flat_map(|p| p.to_array()).collect();
    Tensor::from_vec(points.len(), 3, data).expect("shape")
}
