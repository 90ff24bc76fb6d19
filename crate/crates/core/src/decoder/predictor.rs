//! Anchor predictor: a small pre-norm transformer over `[z0; R; E0 + z0]`.
//!
//! Row 0 of the output is the updated global token `z`, the last `M` rows are
//! the anchor tokens. Outputs at the patch-token slots are dropped.

use std::sync::Arc;

use rand_distr::{Distribution, Normal};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::encoder::EncoderTokens;
use super::layers::{LayerNorm, Linear, Mlp2};

#[derive(Debug, Clone)]
struct TransformerLayer {
    norm_attn: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm_ffn: LayerNorm,
    ffn: Mlp2,
    heads: usize,
}

impl TransformerLayer {
    fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, d: usize, heads: usize, ffn: usize) -> Self {
        TransformerLayer {
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), d),
            query: Linear::new(store, rng, &format!("{name}.attn.query"), d, d),
            key: Linear::new(store, rng, &format!("{name}.attn.key"), d, d),
            value: Linear::new(store, rng, &format!("{name}.attn.value"), d, d),
            out: Linear::new(store, rng, &format!("{name}.attn.out"), d, d),
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), d),
            ffn: Mlp2::new(store, rng, &format!("{name}.ffn"), [d, ffn, d]),
            heads,
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let d = tape.shape(x)[1];
        let dh = d / self.heads;
        let h = self.norm_attn.forward(tape, store, x)?;
        let q = self.query.forward(tape, store, h)?;
        let k = self.key.forward(tape, store, h)?;
        let v = self.value.forward(tape, store, h)?;
        let mut outs = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let (lo, hi) = (head * dh, (head + 1) * dh);
            let qh = tape.slice_cols(q, lo, hi)?;
            let kh = tape.slice_cols(k, lo, hi)?;
            let vh = tape.slice_cols(v, lo, hi)?;
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let attn = tape.softmax_rows(scores);
            outs.push(tape.matmul(attn, vh)?);
        }
        let merged = tape.concat_cols(&outs)?;
        let attn_out = self.out.forward(tape, store, merged)?;
        let x = tape.add(x, attn_out)?;
        let h = self.norm_ffn.forward(tape, store, x)?;
        let f = self.ffn.forward(tape, store, h)?;
        tape.add(x, f)
    }
}

#[derive(Debug, Clone)]
pub struct AnchorPredictor {
    embeddings: ParamId,
    layers: Vec<TransformerLayer>,
    final_norm: LayerNorm,
    location_head: Linear,
    anchors: usize,
    range: f64,
}

/// Anchor features `Z_c` (`M×d`), locations `X_c` (`M×3`) and the updated
/// global token `z` (`1×d`), as tape variables.
#[derive(Debug, Clone, Copy)]
pub struct AnchorVars {
    pub features: Var,
    pub locations: Var,
    pub global: Var,
}

impl AnchorPredictor {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        d: usize,
        anchors: usize,
        layers: usize,
        heads: usize,
        ffn: usize,
        range: f64,
    ) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let data = (0..anchors * d).map(|_| normal.sample(rng)).collect();
        let embeddings = store.add(
            "predictor.anchor_embeddings",
            Tensor::from_vec(anchors, d, data).expect("shape"),
        );
        let layers = (0..layers)
            .map(|i| TransformerLayer::new(store, rng, &format!("predictor.layer{i}"), d, heads, ffn))
            .collect();
        AnchorPredictor {
            embeddings,
            layers,
            final_norm: LayerNorm::new(store, "predictor.final_norm", d),
            location_head: Linear::new(store, rng, "predictor.location", d, 3),
            anchors,
            range,
        }
    }

    pub fn anchor_count(&self) -> usize {
        self.anchors
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, tokens: &EncoderTokens) -> Result<AnchorVars> {
        let [n, d] = tape.shape(tokens.tokens);
        let [gr, gd] = tape.shape(tokens.global);
        let e0 = tape.param(store, self.embeddings);
        if gr != 1 || gd != d || tape.shape(e0)[1] != d {
            return Err(Error::ShapeMismatch {
                op: "predict_anchors",
                lhs: [n, d],
                rhs: tape.shape(e0),
            });
        }
        let e = tape.add_row(e0, tokens.global)?;
        let mut x = tape.concat_rows(&[tokens.global, tokens.tokens, e])?;
        for layer in &self.layers {
            x = layer.forward(tape, store, x)?;
        }
        let x = self.final_norm.forward(tape, store, x)?;
        let global = tape.gather_rows(x, Arc::new(vec![0]))?;
        let anchor_rows = Arc::new((1 + n..1 + n + self.anchors).collect());
        let features = tape.gather_rows(x, anchor_rows)?;
        let raw = self.location_head.forward(tape, store, features)?;
        let bounded = tape.tanh(raw);
        let locations = tape.scale(bounded, self.range);
        Ok(AnchorVars {
            features,
            locations,
            global,
        })
    }
}
