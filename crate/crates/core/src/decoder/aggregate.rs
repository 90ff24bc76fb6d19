//! Vector-attention aggregation over gathered neighbors.
//!
//! For a query `q` with gathered features `Z_q` (`K×d`, `K = m + n`),
//! neighbor locations and displacements `Δ_q = x_i - q`:
//!
//! ```text
//! W    = softmax_K( ψ( z W_q + Z_q W_k + δ(Δ_q) ) )     per channel
//! z*_q = Σ_i W_i ⊙ (Z_q,i W_v)
//! ```
//!
//! `ψ` and `δ` are two-layer MLPs; `z` is broadcast over the neighbor rows.

use std::sync::Arc;

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::geometry::Point3;
use crate::rng::Rng;

use super::layers::{Linear, Mlp2};

#[derive(Debug, Clone, Copy)]
pub struct VectorAttention {
    pub query_proj: Linear,
    pub key_proj: Linear,
    pub value_proj: Linear,
    pub weight_mlp: Mlp2,
    pub displacement_mlp: Mlp2,
}

/// Per-source projections computed once per scene: keys `S W_k`, values
/// `S W_v`, source locations and the projected global token `z W_q`.
#[derive(Debug, Clone, Copy)]
pub struct AggregationSources {
    pub keys: Var,
    pub values: Var,
    pub locations: Var,
    pub global_query: Var,
}

impl VectorAttention {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, d: usize) -> Self {
        VectorAttention {
            query_proj: Linear::no_bias(store, rng, "aggregate.w_q", d, d),
            key_proj: Linear::no_bias(store, rng, "aggregate.w_k", d, d),
            value_proj: Linear::no_bias(store, rng, "aggregate.w_v", d, d),
            weight_mlp: Mlp2::new(store, rng, "aggregate.psi", [d, d, d]),
            displacement_mlp: Mlp2::new(store, rng, "aggregate.delta", [3, d, d]),
        }
    }

    /// Projects stacked source features (`S`, one row per anchor or fine
    /// feature) and the global token.
    pub fn sources(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        features: Var,
        locations: Var,
        global: Var,
    ) -> Result<AggregationSources> {
        Ok(AggregationSources {
            keys: self.key_proj.forward(tape, store, features)?,
            values: self.value_proj.forward(tape, store, features)?,
            locations,
            global_query: self.query_proj.forward(tape, store, global)?,
        })
    }

    /// Aggregates `group` gathered sources per query. `neighbors` lists source
    /// rows query by query (`queries.len() * group` entries).
    pub fn aggregate(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sources: &AggregationSources,
        queries: &[Point3],
        neighbors: Arc<Vec<usize>>,
        group: usize,
    ) -> Result<Var> {
        let keys = tape.gather_rows(sources.keys, neighbors.clone())?;
        let values = tape.gather_rows(sources.values, neighbors.clone())?;
        let locs = tape.gather_rows(sources.locations, neighbors)?;
        let mut rep = Vec::with_capacity(queries.len() * group * 3);
        for q in queries {
            for _ in 0..group {
                rep.extend_from_slice(&q.to_array());
            }
        }
        let q_rep = tape.constant(Tensor::from_vec(queries.len() * group, 3, rep)?);
        let displacement = tape.sub(locs, q_rep)?;
        let pos = self.displacement_mlp.forward(tape, store, displacement)?;
        let pre = tape.add(keys, pos)?;
        let pre = tape.add_row(pre, sources.global_query)?;
        let logits = self.weight_mlp.forward(tape, store, pre)?;
        let weights = tape.group_softmax(logits, group)?;
        let weighted = tape.mul(weights, values)?;
        tape.group_sum(weighted, group)
    }
}
