//! Query head `Ψ(q, z*_q)`: frequency-encoded query through a ResNet-block MLP
//! conditioned on the aggregated feature, emitting one UDF value and
//! 3×256 color logits.

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::geometry::Point3;
use crate::rng::Rng;

use super::layers::Linear;

pub const COLOR_BINS: usize = 256;

/// `[sin(2^k q), cos(2^k q)]` for `k = 0..bands`, axes innermost: `6·bands` values.
pub fn frequency_encode(q: Point3, bands: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(6 * bands);
    let a = q.to_array();
    for k in 0..bands {
        let f = f64::from(1u32 << k);
        for v in a {
            out.push((f * v).sin());
        }
        for v in a {
            out.push((f * v).cos());
        }
    }
    out
}

pub fn frequency_encode_batch(queries: &[Point3], bands: usize) -> Tensor {
    let data = queries
        .iter()
        .flat_map(|&q| frequency_encode(q, bands))
        .collect();
    Tensor::from_vec(queries.len(), 6 * bands, data).expect("shape")
}

#[derive(Debug, Clone, Copy)]
struct ResnetBlock {
    fc0: Linear,
    fc1: Linear,
}

#[derive(Debug, Clone)]
pub struct QueryHead {
    input: Linear,
    conditioning: Vec<Linear>,
    blocks: Vec<ResnetBlock>,
    output: Linear,
    bands: usize,
}

/// Raw UDF column (`Nq×1`) and color logits (`3·Nq × 256`, channel rows
/// interleaved per query: r, g, b).
#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    pub udf: Var,
    pub color_logits: Var,
}

impl QueryHead {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, d: usize, width: usize, blocks: usize, bands: usize) -> Self {
        let input = Linear::new(store, rng, "head.fc_p", 6 * bands, width);
        // Band k oscillates 2^k times faster, so its input weights start 2^k
        // times smaller. Every band then adds a comparable slope to the
        // initial field instead of high-frequency ripple that swamps the
        // finite-difference gradients used for shifting.
        let w = store.get_mut(input.weight).data_mut();
        for k in 0..bands {
            let s = 0.5f64.powi(k as i32);
            w[6 * k * width..6 * (k + 1) * width].iter_mut().for_each(|v| *v *= s);
        }
        QueryHead {
            input,
            // Zero-initialized like the second layer of each block: the head
            // starts as a plain field of q and admits the aggregated feature
            // only as far as training finds it useful. A random start injects
            // neighbor-set noise that lr 1e-4 never removes.
            conditioning: (0..blocks)
                .map(|i| Linear::zeroed(store, &format!("head.fc_c{i}"), d, width))
                .collect(),
            blocks: (0..blocks)
                .map(|i| ResnetBlock {
                    fc0: Linear::new(store, rng, &format!("head.block{i}.fc0"), width, width),
                    fc1: Linear::zeroed(store, &format!("head.block{i}.fc1"), width, width),
                })
                .collect(),
            output: Linear::new(store, rng, "head.fc_out", width, 1 + 3 * COLOR_BINS),
            bands,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, queries: &[Point3], zstar: Var) -> Result<HeadOutput> {
        let enc = tape.constant(frequency_encode_batch(queries, self.bands));
        let mut net = self.input.forward(tape, store, enc)?;
        for (cond, block) in self.conditioning.iter().zip(&self.blocks) {
            let c = cond.forward(tape, store, zstar)?;
            net = tape.add(net, c)?;
            let h = tape.relu(net);
            let h = block.fc0.forward(tape, store, h)?;
            let h = tape.relu(h);
            let dx = block.fc1.forward(tape, store, h)?;
            net = tape.add(net, dx)?;
        }
        let act = tape.relu(net);
        let out = self.output.forward(tape, store, act)?;
        let udf = tape.slice_cols(out, 0, 1)?;
        let logits = tape.slice_cols(out, 1, 1 + 3 * COLOR_BINS)?;
        let color_logits = tape.reshape(logits, 3 * queries.len(), COLOR_BINS)?;
        Ok(HeadOutput { udf, color_logits })
    }
}

/// Argmax per channel, mapped to `{0..255}/255`.
pub fn decode_colors(logits: &Tensor) -> Vec<[f64; 3]> {
    let argmax = |r: usize| {
        let row = logits.row_slice(r);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        best as f64 / (COLOR_BINS - 1) as f64
    };
    (0..logits.rows() / 3)
        .map(|q| [argmax(3 * q), argmax(3 * q + 1), argmax(3 * q + 2)])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_head_damps_fast_bands_and_ignores_features() {
        let mut store = ParamStore::default();
        let mut rng = crate::rng::rng_from_seed(1);
        let head = QueryHead::new(&mut store, &mut rng, 4, 8, 2, 10);
        let w = store.get(head.input.weight).data();
        let bound = 1.0 / 60f64.sqrt();
        for k in 0..10 {
            let band = &w[6 * k * 8..6 * (k + 1) * 8];
            assert!(band.iter().all(|v| v.abs() <= bound * 0.5f64.powi(k as i32)));
        }
        for c in &head.conditioning {
            assert!(store.get(c.weight).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn encoding_has_sixty_dims() {
        let e = frequency_encode(Point3::new(0.1, -0.2, 0.3), 10);
        assert_eq!(e.len(), 60);
        assert_eq!(e[0], 0.1f64.sin());
        assert_eq!(e[3], 0.1f64.cos());
        assert_eq!(e[6], 0.2f64.sin());
    }

    #[test]
    fn argmax_colors() {
        let mut t = Tensor::zeros(3, COLOR_BINS);
        t.set(0, 255, 5.0);
        t.set(1, 0, 5.0);
        t.set(2, 51, 5.0);
        assert_eq!(decode_colors(&t), vec![[1.0, 0.0, 0.2]]);
    }
}
