use rand::seq::index::sample;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Denominator floor: the error of one entry is `|a - b| / max(|a|, |b|, floor)`.
    /// At `h = 1e-6` a loss near 0.1 carries difference-quotient noise around
    /// 1e-10, so gradients much smaller than 1e-5 are compared in absolute terms.
    pub floor: f64,
    /// Entries checked per tensor (sampled without replacement); `None` checks all.
    pub max_entries_per_tensor: Option<usize>,
    pub seed: u64,
}

impl GradCheckOptions {
    /// Defaults with at most `entries` entries per tensor, drawn with `seed`.
    /// The color head's output layer holds most of a model's entries, and a
    /// sample of it keeps a ten-seed check fast.
    pub fn sampled(entries: usize, seed: u64) -> Self {
        GradCheckOptions {
            max_entries_per_tensor: Some(entries),
            seed,
            ..GradCheckOptions::default()
        }
    }
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-6,
            floor: 1e-5,
            max_entries_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries whose perturbation crossed a non-differentiable branch
    /// (ReLU mask, clamp side, neighbor selection) and were not compared.
    pub skipped: usize,
    /// The worst entry: tensor name, flat index, analytic and numeric gradient.
    pub worst: Option<WorstEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares tape gradients of a scalar function of `params` with central
/// differences at step `h`.
pub fn grad_check<F>(params: &ParamStore, f: F, options: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, params)?;
    let base_branch = tape.branch_signature();
    let grads = tape.backward(out)?;
    drop(tape);

    let eval = |store: &ParamStore| -> Result<(f64, u64)> {
        let mut t = Tape::new();
        let v = f(&mut t, store)?;
        Ok((t.value(v).item(), t.branch_signature()))
    };

    let mut rng = rng_from_seed(options.seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        let n = params.get(id).len();
        let entries: Vec<usize> = match options.max_entries_per_tensor {
            Some(k) if k < n => {
                let mut e = sample(&mut rng, n, k).into_vec();
                e.sort_unstable();
                e
            }
            _ => (0..n).collect(),
        };
        for i in entries {
            let x0 = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = x0 + options.h;
            let (fp, bp) = eval(&work)?;
            work.get_mut(id).data_mut()[i] = x0 - options.h;
            let (fm, bm) = eval(&work)?;
            work.get_mut(id).data_mut()[i] = x0;
            if bp != base_branch || bm != base_branch {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * options.h);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let denom = numeric.abs().max(analytic.abs()).max(options.floor);
            let err = (numeric - analytic).abs() / denom;
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                if err > report.max_rel_error {
                    report.max_rel_error = err;
                }
                report.worst = Some(WorstEntry {
                    tensor: params.name(id).to_string(),
                    index: i,
                    analytic,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

type PrimitiveFn = fn(&mut Tape, &[Var], &[Tensor]) -> Result<Var>;

/// Every tape primitive, each applied to random inputs and reduced to a scalar
/// through a random weighting so all output entries carry gradient.
fn primitives() -> Vec<(&'static str, Vec<[usize; 2]>, PrimitiveFn)> {
    use std::sync::Arc;
    vec![
        ("matmul", vec![[3, 4], [4, 2]], |t, v, _| t.matmul(v[0], v[1])),
        ("add", vec![[3, 4], [3, 4]], |t, v, _| t.add(v[0], v[1])),
        ("sub", vec![[3, 4], [3, 4]], |t, v, _| t.sub(v[0], v[1])),
        ("mul", vec![[3, 4], [3, 4]], |t, v, _| t.mul(v[0], v[1])),
        ("add_row", vec![[3, 4], [1, 4]], |t, v, _| t.add_row(v[0], v[1])),
        ("mul_row", vec![[3, 4], [1, 4]], |t, v, _| t.mul_row(v[0], v[1])),
        ("scale", vec![[3, 4]], |t, v, _| Ok(t.scale(v[0], -1.7))),
        ("add_scalar", vec![[3, 4]], |t, v, _| Ok(t.add_scalar(v[0], 0.3))),
        ("mul_const", vec![[3, 4]], |t, v, c| t.mul_const(v[0], c[0].clone())),
        ("relu", vec![[3, 4]], |t, v, _| Ok(t.relu(v[0]))),
        ("tanh", vec![[3, 4]], |t, v, _| Ok(t.tanh(v[0]))),
        ("log", vec![[3, 4]], |t, v, _| {
            let a = t.abs(v[0]);
            let a = t.add_scalar(a, 0.5);
            Ok(t.log(a))
        }),
        ("abs", vec![[3, 4]], |t, v, _| Ok(t.abs(v[0]))),
        ("clamp_max", vec![[3, 4]], |t, v, _| Ok(t.clamp_max(v[0], 0.2))),
        ("clamp_min", vec![[3, 4]], |t, v, _| Ok(t.clamp_min(v[0], -0.2))),
        ("softmax_rows", vec![[3, 4]], |t, v, _| Ok(t.softmax_rows(v[0]))),
        ("group_softmax", vec![[6, 4]], |t, v, _| t.group_softmax(v[0], 3)),
        ("group_sum", vec![[6, 4]], |t, v, _| t.group_sum(v[0], 2)),
        ("log_softmax_rows", vec![[3, 5]], |t, v, _| Ok(t.log_softmax_rows(v[0]))),
        ("layer_norm_rows", vec![[3, 5]], |t, v, _| Ok(t.layer_norm_rows(v[0], 1e-5))),
        ("concat_cols", vec![[3, 2], [3, 3]], |t, v, _| t.concat_cols(&[v[0], v[1]])),
        ("concat_rows", vec![[2, 3], [4, 3]], |t, v, _| t.concat_rows(&[v[0], v[1]])),
        ("slice_cols", vec![[3, 5]], |t, v, _| t.slice_cols(v[0], 1, 4)),
        ("gather_rows", vec![[4, 3]], |t, v, _| t.gather_rows(v[0], Arc::new(vec![2, 0, 2, 3, 1]))),
        ("pick", vec![[3, 4]], |t, v, _| t.pick(v[0], Arc::new(vec![1, 3, 0]))),
        ("transpose", vec![[3, 4]], |t, v, _| Ok(t.transpose(v[0]))),
        ("reshape", vec![[3, 4]], |t, v, _| t.reshape(v[0], 6, 2)),
        ("sum", vec![[3, 4]], |t, v, _| Ok(t.sum(v[0]))),
        ("mean", vec![[3, 4]], |t, v, _| Ok(t.mean(v[0]))),
        ("sum_rows", vec![[3, 4]], |t, v, _| Ok(t.sum_rows(v[0]))),
        ("sum_cols", vec![[3, 4]], |t, v, _| Ok(t.sum_cols(v[0]))),
        ("mean_rows", vec![[3, 4]], |t, v, _| Ok(t.mean_rows(v[0]))),
        ("custom_unary", vec![[3, 4]], |t, v, _| Ok(t.custom_unary(v[0], f64::sin, f64::cos))),
    ]
}

/// Gradient checks of every primitive with inputs drawn from `seed`.
pub fn primitive_suite(seed: u64, options: GradCheckOptions) -> Result<Vec<(&'static str, GradCheckReport)>> {
    use rand_distr::{Distribution, StandardNormal};
    let mut out = Vec::new();
    for (k, (name, shapes, op)) in primitives().into_iter().enumerate() {
        let mut rng = rng_from_seed(crate::rng::derive_indexed(seed, "primitive", k as u64));
        let mut draw = |[r, c]: [usize; 2]| {
            let data = (0..r * c).map(|_| StandardNormal.sample(&mut rng)).collect();
            Tensor::from_vec(r, c, data).expect("shape")
        };
        let mut store = ParamStore::default();
        for (i, &s) in shapes.iter().enumerate() {
            store.add(format!("{name}.in{i}"), draw(s));
        }
        let consts = vec![draw(shapes[0])];
        // Probe the output shape once to draw matching reduction weights.
        let mut probe = Tape::new();
        let vars: Vec<Var> = store.ids().map(|id| probe.param(&store, id)).collect();
        let probed = op(&mut probe, &vars, &consts)?;
        let out_shape = probe.shape(probed);
        let weights = draw(out_shape);
        let report = grad_check(
            &store,
            |t, s| {
                let vars: Vec<Var> = s.ids().map(|id| t.param(s, id)).collect();
                let y = op(t, &vars, &consts)?;
                let y = t.mul_const(y, weights.clone())?;
                Ok(t.sum(y))
            },
            options,
        )?;
        out.push((name, report));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_primitives_pass() {
        for (name, r) in primitive_suite(1, GradCheckOptions::default()).unwrap() {
            assert!(r.max_rel_error < 1e-4, "{name}: {r:?}");
            assert!(r.checked > 0, "{name}");
        }
    }

    #[test]
    fn identity_is_exact() {
        let mut store = ParamStore::default();
        store.add("x", Tensor::row(&[0.0, 1.0, -2.0, 0.5]));
        let report = grad_check(
            &store,
            |t, s| {
                let x = t.param(s, ParamId(0));
                Ok(t.sum(x))
            },
            GradCheckOptions {
                h: 2f64.powi(-20),
                ..GradCheckOptions::default()
            },
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.checked, 4);
    }

    #[test]
    fn corrupted_backward_is_detected() {
        let mut store = ParamStore::default();
        store.add("x", Tensor::row(&[0.3, -0.7, 1.1]));
        // d/dx sin(x) deliberately reported as -cos(x).
        let report = grad_check(
            &store,
            |t, s| {
                let x = t.param(s, ParamId(0));
                let y = t.custom_unary(x, f64::sin, |x| -x.cos());
                Ok(t.sum(y))
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error > 1e-2);
    }
}
