//! Pre-norm encoder-decoder with a masked-seed autoregressive decoder.
//!
//! Decoder token `t` sums three streams: the lifted size of object `t`, the
//! lifted box (position and size) of slot `t - 1` (or the learned mask vector
//! when that slot is still unknown, and always at `t = 0`), and the index
//! encoding of `t`.
//! With causal self-attention the head row of slot `t` therefore depends only
//! on positions of slots `< t`.

use std::rc::Rc;

use ndarray::Array2;

use super::{slot_encodings, Batch, Init, ModelConfig};
use crate::autograd::{AttnSpec, Tape, Var};
use crate::encode::{lift_into, LiftConfig};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub(crate) struct Norm {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Attn {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct FeedForward {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderLayer {
    ln1: Norm,
    attn: Attn,
    ln2: Norm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
pub(crate) struct DecoderLayer {
    ln1: Norm,
    self_attn: Attn,
    ln2: Norm,
    cross_attn: Attn,
    ln3: Norm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
pub(crate) struct TransformerIds {
    enc_in_w: usize,
    enc_in_b: usize,
    dec_obj_w: usize,
    dec_obj_b: usize,
    dec_pos_w: usize,
    dec_pos_b: usize,
    mask_token: usize,
    encoder: Vec<EncoderLayer>,
    enc_norm: Norm,
    decoder: Vec<DecoderLayer>,
    dec_norm: Norm,
    head_w: usize,
    head_b: usize,
}

fn norm<T: Real>(init: &mut Init<T>, name: &str, d: usize) -> Norm {
    Norm {
        g: init.fill(format!("{name}.gain"), d, 1.0),
        b: init.fill(format!("{name}.bias"), d, 0.0),
    }
}

fn attn<T: Real>(init: &mut Init<T>, name: &str, d: usize) -> Attn {
    Attn {
        wq: init.weight(format!("{name}.wq"), d, d, 1.0),
        bq: init.fill(format!("{name}.bq"), d, 0.0),
        wk: init.weight(format!("{name}.wk"), d, d, 1.0),
        bk: init.fill(format!("{name}.bk"), d, 0.0),
        wv: init.weight(format!("{name}.wv"), d, d, 1.0),
        bv: init.fill(format!("{name}.bv"), d, 0.0),
        wo: init.weight(format!("{name}.wo"), d, d, 1.0),
        bo: init.fill(format!("{name}.bo"), d, 0.0),
    }
}

fn feed_forward<T: Real>(init: &mut Init<T>, name: &str, d: usize, f: usize) -> FeedForward {
    FeedForward {
        w1: init.weight(format!("{name}.w1"), d, f, 1.0),
        b1: init.fill(format!("{name}.b1"), f, 0.0),
        w2: init.weight(format!("{name}.w2"), f, d, 1.0),
        b2: init.fill(format!("{name}.b2"), d, 0.0),
    }
}

pub(crate) fn build<T: Real>(cfg: &ModelConfig, lift: &LiftConfig, init: &mut Init<T>) -> TransformerIds {
    let d = cfg.d_model;
    let f = cfg.feedforward_dim;
    let feat = lift.output_dim(2);
    let enc_in_w = init.weight("enc.in.w", feat, d, 1.0);
    let enc_in_b = init.fill("enc.in.b", d, 0.0);
    let dec_obj_w = init.weight("dec.obj.w", feat, d, 1.0);
    let dec_obj_b = init.fill("dec.obj.b", d, 0.0);
    let dec_pos_w = init.weight("dec.pos.w", 2 * feat, d, 1.0);
    let dec_pos_b = init.fill("dec.pos.b", d, 0.0);
    let mask_token = init.small("dec.mask", 1, d, 0.5);
    let encoder = (0..cfg.num_encoder_layers)
        .map(|l| EncoderLayer {
            ln1: norm(init, &format!("enc.{l}.ln1"), d),
            attn: attn(init, &format!("enc.{l}.attn"), d),
            ln2: norm(init, &format!("enc.{l}.ln2"), d),
            ff: feed_forward(init, &format!("enc.{l}.ff"), d, f),
        })
        .collect();
    let enc_norm = norm(init, "enc.norm", d);
    let decoder = (0..cfg.num_decoder_layers)
        .map(|l| DecoderLayer {
            ln1: norm(init, &format!("dec.{l}.ln1"), d),
            self_attn: attn(init, &format!("dec.{l}.self"), d),
            ln2: norm(init, &format!("dec.{l}.ln2"), d),
            cross_attn: attn(init, &format!("dec.{l}.cross"), d),
            ln3: norm(init, &format!("dec.{l}.ln3"), d),
            ff: feed_forward(init, &format!("dec.{l}.ff"), d, f),
        })
        .collect();
    let dec_norm = norm(init, "dec.norm", d);
    let head_w = init.weight("head.w", d, cfg.head_width(), 0.1);
    let head_b = init.fill("head.b", cfg.head_width(), 0.0);
    TransformerIds {
        enc_in_w,
        enc_in_b,
        dec_obj_w,
        dec_obj_b,
        dec_pos_w,
        dec_pos_b,
        mask_token,
        encoder,
        enc_norm,
        decoder,
        dec_norm,
        head_w,
        head_b,
    }
}

fn layer_norm<T: Real>(tape: &mut Tape<T>, p: &[Var], n: &Norm, x: Var) -> Var {
    tape.layer_norm(x, p[n.g], p[n.b])
}

fn attention<T: Real>(tape: &mut Tape<T>, p: &[Var], a: &Attn, x: Var, ctx: Var, spec: Rc<AttnSpec>) -> Var {
    let q = tape.affine(x, p[a.wq], p[a.bq]);
    let k = tape.affine(ctx, p[a.wk], p[a.bk]);
    let v = tape.affine(ctx, p[a.wv], p[a.bv]);
    let o = tape.attention(q, k, v, spec);
    tape.affine(o, p[a.wo], p[a.bo])
}

fn feed_forward_apply<T: Real>(tape: &mut Tape<T>, p: &[Var], f: &FeedForward, x: Var) -> Var {
    let h = tape.affine(x, p[f.w1], p[f.b1]);
    let h = tape.gelu(h);
    tape.affine(h, p[f.w2], p[f.b2])
}

fn valid_keys<T: Real>(batch: &Batch<T>) -> Vec<bool> {
    (0..batch.rows()).map(|r| batch.valid(r)).collect()
}

/// Contextual slot vectors `[batch * len, d]`; padding slots are masked keys.
pub(crate) fn encode<T: Real>(
    ids: &TransformerIds,
    cfg: &ModelConfig,
    lift: &LiftConfig,
    tape: &mut Tape<T>,
    p: &[Var],
    batch: &Batch<T>,
) -> Var {
    let feats = tape.constant(batch.size_features(lift));
    let slots = tape.constant(slot_encodings(batch.batch, batch.len, cfg.d_model));
    let x = tape.affine(feats, p[ids.enc_in_w], p[ids.enc_in_b]);
    let mut x = tape.add(x, slots);
    let spec = Rc::new(AttnSpec {
        batch: batch.batch,
        len_q: batch.len,
        len_k: batch.len,
        heads: cfg.num_heads,
        causal: false,
        key_valid: valid_keys(batch),
    });
    for layer in &ids.encoder {
        let h = layer_norm(tape, p, &layer.ln1, x);
        let a = attention(tape, p, &layer.attn, h, h, spec.clone());
        x = tape.add(x, a);
        let h = layer_norm(tape, p, &layer.ln2, x);
        let f = feed_forward_apply(tape, p, &layer.ff, h);
        x = tape.add(x, f);
    }
    layer_norm(tape, p, &ids.enc_norm, x)
}

/// Head rows for every slot given encoder `memory` and the known positions.
pub(crate) fn decode<T: Real>(
    ids: &TransformerIds,
    cfg: &ModelConfig,
    lift: &LiftConfig,
    tape: &mut Tape<T>,
    p: &[Var],
    memory: Var,
    batch: &Batch<T>,
) -> Var {
    let rows = batch.rows();
    let dim = lift.output_dim(2);
    let mut prev = Array2::<T>::zeros((rows, 2 * dim));
    let mut keep = vec![false; rows];
    let mut buf = Vec::with_capacity(2 * dim);
    for r in 0..rows {
        let t = r % batch.len;
        if t == 0 || !batch.valid(r) {
            continue;
        }
        if let Some(pos) = batch.placed[r - 1] {
            buf.clear();
            lift_into(&pos, lift, &mut buf).expect("finite positions");
            lift_into(&batch.sizes[r - 1], lift, &mut buf).expect("finite sizes");
            prev.row_mut(r).assign(&ndarray::ArrayView1::from(&buf));
            keep[r] = true;
        }
    }
    let feats = tape.constant(batch.size_features(lift));
    let prev = tape.constant(prev);
    let slots = tape.constant(slot_encodings(batch.batch, batch.len, cfg.d_model));
    let obj = tape.affine(feats, p[ids.dec_obj_w], p[ids.dec_obj_b]);
    let pos = tape.affine(prev, p[ids.dec_pos_w], p[ids.dec_pos_b]);
    let pos = tape.mask_rows(pos, p[ids.mask_token], keep);
    let x = tape.add(obj, pos);
    let mut x = tape.add(x, slots);
    let keys = valid_keys(batch);
    let self_spec = Rc::new(AttnSpec {
        batch: batch.batch,
        len_q: batch.len,
        len_k: batch.len,
        heads: cfg.num_heads,
        causal: true,
        key_valid: keys.clone(),
    });
    let cross_spec = Rc::new(AttnSpec {
        causal: false,
        ..(*self_spec).clone()
    });
    for layer in &ids.decoder {
        let h = layer_norm(tape, p, &layer.ln1, x);
        let a = attention(tape, p, &layer.self_attn, h, h, self_spec.clone());
        x = tape.add(x, a);
        let h = layer_norm(tape, p, &layer.ln2, x);
        let a = attention(tape, p, &layer.cross_attn, h, memory, cross_spec.clone());
        x = tape.add(x, a);
        let h = layer_norm(tape, p, &layer.ln3, x);
        let f = feed_forward_apply(tape, p, &layer.ff, h);
        x = tape.add(x, f);
    }
    let x = layer_norm(tape, p, &ids.dec_norm, x);
    tape.affine(x, p[ids.head_w], p[ids.head_b])
}
