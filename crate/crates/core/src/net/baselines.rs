//! Baselines sized to the same parameter budget: a stacked LSTM that emits a
//! mixture per step, and an MLP that maps all ten zero-padded slots to ten
//! mixtures at once.

use ndarray::{s, Array2};

use super::{Batch, Init, ModelConfig};
use crate::autograd::{Tape, Var};
use crate::encode::LiftConfig;
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub(crate) struct LstmLayer {
    wx: usize,
    wh: usize,
    b: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct LstmIds {
    layers: Vec<LstmLayer>,
    head_w: usize,
    head_b: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct MlpIds {
    hidden: Vec<(usize, usize)>,
    out_w: usize,
    out_b: usize,
}

pub(crate) fn build_lstm<T: Real>(cfg: &ModelConfig, lift: &LiftConfig, init: &mut Init<T>) -> LstmIds {
    let h = cfg.d_model;
    let mut input = lift.output_dim(2);
    let mut layers = Vec::new();
    for l in 0..cfg.num_encoder_layers {
        let wx = init.weight(format!("lstm.{l}.wx"), input, 4 * h, 1.0);
        let wh = init.weight(format!("lstm.{l}.wh"), h, 4 * h, 1.0);
        // forget gate starts open
        let mut bias = vec![0.0; 4 * h];
        bias[h..2 * h].fill(1.0);
        let b = init.store.push(
            format!("lstm.{l}.b"),
            Array2::from_shape_fn((1, 4 * h), |(_, c)| T::lit(bias[c])),
        );
        layers.push(LstmLayer { wx, wh, b });
        input = h;
    }
    LstmIds {
        layers,
        head_w: init.weight("head.w", h, cfg.head_width(), 0.1),
        head_b: init.fill("head.b", cfg.head_width(), 0.0),
    }
}

pub(crate) fn build_mlp<T: Real>(cfg: &ModelConfig, lift: &LiftConfig, init: &mut Init<T>) -> MlpIds {
    let mut input = cfg.max_objects * (lift.output_dim(2) + 1);
    let mut hidden = Vec::new();
    for l in 0..cfg.num_encoder_layers {
        let w = init.weight(format!("mlp.{l}.w"), input, cfg.d_model, 1.0);
        let b = init.fill(format!("mlp.{l}.b"), cfg.d_model, 0.0);
        hidden.push((w, b));
        input = cfg.d_model;
    }
    let out = cfg.max_objects * cfg.head_width();
    MlpIds {
        hidden,
        out_w: init.weight("head.w", input, out, 0.1),
        out_b: init.fill("head.b", out, 0.0),
    }
}

/// Reorders slot-major rows (`t * batch + b`) into scenario-major rows (`b * len + t`).
fn scenario_major(batch: usize, len: usize) -> Vec<usize> {
    (0..batch * len).map(|r| (r % len) * batch + r / len).collect()
}

pub(crate) fn lstm_forward<T: Real>(
    ids: &LstmIds,
    cfg: &ModelConfig,
    lift: &LiftConfig,
    tape: &mut Tape<T>,
    p: &[Var],
    batch: &Batch<T>,
) -> Var {
    let h = cfg.d_model;
    let feats = batch.size_features(lift);
    let zeros = Array2::<T>::zeros((batch.batch, h));
    let mut hs: Vec<Var> = (0..ids.layers.len()).map(|_| tape.constant(zeros.clone())).collect();
    let mut cs: Vec<Var> = (0..ids.layers.len()).map(|_| tape.constant(zeros.clone())).collect();
    let mut outputs = Vec::with_capacity(batch.len);
    for t in 0..batch.len {
        let rows: Vec<usize> = (0..batch.batch).map(|b| b * batch.len + t).collect();
        let mut x = tape.constant(feats.select(ndarray::Axis(0), &rows));
        for (l, layer) in ids.layers.iter().enumerate() {
            let gx = tape.matmul(x, p[layer.wx]);
            let gh = tape.matmul(hs[l], p[layer.wh]);
            let g = tape.add(gx, gh);
            let g = tape.add_bias(g, p[layer.b]);
            let i = tape.slice_cols(g, 0, h);
            let i = tape.sigmoid(i);
            let f = tape.slice_cols(g, h, 2 * h);
            let f = tape.sigmoid(f);
            let c_in = tape.slice_cols(g, 2 * h, 3 * h);
            let c_in = tape.tanh(c_in);
            let o = tape.slice_cols(g, 3 * h, 4 * h);
            let o = tape.sigmoid(o);
            let keep = tape.mul(f, cs[l]);
            let write = tape.mul(i, c_in);
            cs[l] = tape.add(keep, write);
            let squashed = tape.tanh(cs[l]);
            hs[l] = tape.mul(o, squashed);
            x = hs[l];
        }
        outputs.push(x);
    }
    let stacked = tape.concat_rows(&outputs);
    let ordered = tape.gather_rows(stacked, scenario_major(batch.batch, batch.len));
    tape.affine(ordered, p[ids.head_w], p[ids.head_b])
}

pub(crate) fn mlp_forward<T: Real>(
    ids: &MlpIds,
    cfg: &ModelConfig,
    lift: &LiftConfig,
    tape: &mut Tape<T>,
    p: &[Var],
    batch: &Batch<T>,
) -> Var {
    let feat = lift.output_dim(2);
    let block = feat + 1;
    let per_slot = batch.size_features(lift);
    let mut input = Array2::<T>::zeros((batch.batch, cfg.max_objects * block));
    for b in 0..batch.batch {
        for t in 0..batch.counts[b] {
            let r = b * batch.len + t;
            input
                .slice_mut(s![b, t * block..t * block + feat])
                .assign(&per_slot.row(r));
            input[[b, t * block + feat]] = T::one();
        }
    }
    let mut x = tape.constant(input);
    for &(w, b) in &ids.hidden {
        let h = tape.affine(x, p[w], p[b]);
        x = tape.gelu(h);
    }
    let out = tape.affine(x, p[ids.out_w], p[ids.out_b]);
    let width = cfg.head_width();
    let slots: Vec<Var> = (0..batch.len)
        .map(|t| tape.slice_cols(out, t * width, (t + 1) * width))
        .collect();
    let stacked = tape.concat_rows(&slots);
    tape.gather_rows(stacked, scenario_major(batch.batch, batch.len))
}
