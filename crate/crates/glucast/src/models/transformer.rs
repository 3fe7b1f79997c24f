//! Causal Transformer encoder: model width 64, 2 pre-norm layers, 4
//! attention heads, feedforward width 128 with GELU, sinusoidal position
//! encoding, final-timestep summary.

use autodiff::{concat, DropoutKey, ParamSet, Tape, Tensor, Var};

use super::{apply_dropout, Bound, Result};

const MODEL: usize = 64;
const HEADS: usize = 4;
const HEAD_DIM: usize = MODEL / HEADS;
const FF: usize = 128;
const LAYERS: usize = 2;
const LN_EPS: f64 = 1e-5;
/// Additive mask value; exp(x - max) underflows to exactly zero, so
/// masked positions contribute nothing.
const MASKED: f64 = -1e30;

pub(super) fn build(params: &mut ParamSet, out: usize) {
    params.insert("proj.w", Tensor::zeros(&[4, MODEL]));
    params.insert("proj.b", Tensor::zeros(&[MODEL]));
    for l in 0..LAYERS {
        let p = format!("l{l}");
        params.insert(&format!("{p}.ln1.g"), Tensor::zeros(&[MODEL]));
        params.insert(&format!("{p}.ln1.b"), Tensor::zeros(&[MODEL]));
        for proj in ["q", "k", "v", "o"] {
            params.insert(&format!("{p}.attn.{proj}.w"), Tensor::zeros(&[MODEL, MODEL]));
            params.insert(&format!("{p}.attn.{proj}.b"), Tensor::zeros(&[MODEL]));
        }
        params.insert(&format!("{p}.ln2.g"), Tensor::zeros(&[MODEL]));
        params.insert(&format!("{p}.ln2.b"), Tensor::zeros(&[MODEL]));
        params.insert(&format!("{p}.ff.w1"), Tensor::zeros(&[MODEL, FF]));
        params.insert(&format!("{p}.ff.b1"), Tensor::zeros(&[FF]));
        params.insert(&format!("{p}.ff.w2"), Tensor::zeros(&[FF, MODEL]));
        params.insert(&format!("{p}.ff.b2"), Tensor::zeros(&[MODEL]));
    }
    params.insert("final.ln.g", Tensor::zeros(&[MODEL]));
    params.insert("final.ln.b", Tensor::zeros(&[MODEL]));
    params.insert("head.out.w", Tensor::zeros(&[MODEL, out]));
    params.insert("head.out.b", Tensor::zeros(&[out]));
}

/// Fixed sinusoidal encoding: even columns sine, odd columns cosine.
/// Position 0 is the [0, 1, 0, 1, ...] pattern.
pub fn sinusoidal_encoding(len: usize, dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let rate = 10_000f64.powf(2.0 * pair / dim as f64);
            let angle = pos as f64 / rate;
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(vec![len, dim], data).expect("encoding shape")
}

fn causal_mask(len: usize) -> Tensor {
    let mut data = vec![0.0; len * len];
    for i in 0..len {
        for j in (i + 1)..len {
            data[i * len + j] = MASKED;
        }
    }
    Tensor::new(vec![len, len], data).expect("mask shape")
}

/// Per-timestep encoder states, (B, 36, 64), after the final layer norm.
pub(super) fn encode<'t>(
    tape: &'t Tape,
    bound: &Bound<'_, 't>,
    x: Var<'t>,
    batch: usize,
) -> Result<Var<'t>> {
    let steps = x.shape()[1];
    let mut h = x.matmul(bound.var("proj.w"))? + bound.var("proj.b");
    h = h.add(tape.constant(sinusoidal_encoding(steps, MODEL)))?;
    let mask = tape.constant(causal_mask(steps));
    let scale = 1.0 / (HEAD_DIM as f64).sqrt();

    for l in 0..LAYERS {
        let p = format!("l{l}");
        // attention sublayer, pre-norm
        let normed = h.layer_norm(
            bound.var(&format!("{p}.ln1.g")),
            bound.var(&format!("{p}.ln1.b")),
            LN_EPS,
        )?;
        let q = normed.matmul(bound.var(&format!("{p}.attn.q.w")))?
            + bound.var(&format!("{p}.attn.q.b"));
        let k = normed.matmul(bound.var(&format!("{p}.attn.k.w")))?
            + bound.var(&format!("{p}.attn.k.b"));
        let v = normed.matmul(bound.var(&format!("{p}.attn.v.w")))?
            + bound.var(&format!("{p}.attn.v.b"));
        let mut ctx_heads = Vec::with_capacity(HEADS);
        for head in 0..HEADS {
            let off = head * HEAD_DIM;
            let qh = q.slice(2, off, HEAD_DIM)?;
            let kh = k.slice(2, off, HEAD_DIM)?;
            let vh = v.slice(2, off, HEAD_DIM)?;
            let scores = qh
                .matmul(kh.transpose_last())?
                .mul_scalar(scale)
                .add(mask)?;
            let attn = scores.softmax_last();
            ctx_heads.push(attn.matmul(vh)?);
        }
        let ctx = concat(tape, &ctx_heads, 2)?;
        let attn_out = ctx.matmul(bound.var(&format!("{p}.attn.o.w")))?
            + bound.var(&format!("{p}.attn.o.b"));
        h = h + attn_out;

        // feedforward sublayer, pre-norm
        let normed = h.layer_norm(
            bound.var(&format!("{p}.ln2.g")),
            bound.var(&format!("{p}.ln2.b")),
            LN_EPS,
        )?;
        let ff = (normed.matmul(bound.var(&format!("{p}.ff.w1")))?
            + bound.var(&format!("{p}.ff.b1")))
        .gelu()
        .matmul(bound.var(&format!("{p}.ff.w2")))?
            + bound.var(&format!("{p}.ff.b2"));
        h = h + ff;
    }
    let _ = batch;
    Ok(h.layer_norm(bound.var("final.ln.g"), bound.var("final.ln.b"), LN_EPS)?)
}

pub(super) fn forward<'t>(
    tape: &'t Tape,
    bound: &Bound<'_, 't>,
    x: Var<'t>,
    batch: usize,
    dropout: Option<(f64, DropoutKey)>,
) -> Result<Var<'t>> {
    let steps = x.shape()[1];
    let encoded = encode(tape, bound, x, batch)?;
    let last = encoded.slice(1, steps - 1, 1)?.reshape(&[batch, MODEL])?;
    // Dropout site for the dropout-head variant sits on the sequence
    // summary, ahead of the linear output layer.
    let last = apply_dropout(tape, last, dropout);
    Ok(last.matmul(bound.var("head.out.w"))? + bound.var("head.out.b"))
}
