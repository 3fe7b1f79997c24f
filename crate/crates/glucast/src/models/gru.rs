//! 3-layer bidirectional GRU (hidden 40 per direction) with temporal
//! attention over the 36 timesteps and a 32-unit ReLU head.

use autodiff::{concat, DropoutKey, ParamSet, Tape, Tensor, Var};

use super::{apply_dropout, Bound, Result};

const HIDDEN: usize = 40;
const GATES: usize = 3 * HIDDEN;
const LAYERS: usize = 3;
const REP: usize = 2 * HIDDEN;
const ATTN: usize = 64;
const FC: usize = 32;

pub(super) fn build(params: &mut ParamSet, out: usize) {
    for layer in 0..LAYERS {
        let input = if layer == 0 { 4 } else { REP };
        for dir in ["fwd", "bwd"] {
            let p = format!("gru.l{layer}.{dir}");
            params.insert(&format!("{p}.w_x"), Tensor::zeros(&[input, GATES]));
            params.insert(&format!("{p}.w_h"), Tensor::zeros(&[HIDDEN, GATES]));
            params.insert(&format!("{p}.b_x"), Tensor::zeros(&[GATES]));
            params.insert(&format!("{p}.b_h"), Tensor::zeros(&[GATES]));
        }
    }
    params.insert("attn.w", Tensor::zeros(&[REP, ATTN]));
    params.insert("attn.b", Tensor::zeros(&[ATTN]));
    params.insert("attn.v", Tensor::zeros(&[ATTN, 1]));
    params.insert("head.fc.w", Tensor::zeros(&[REP, FC]));
    params.insert("head.fc.b", Tensor::zeros(&[FC]));
    params.insert("head.out.w", Tensor::zeros(&[FC, out]));
    params.insert("head.out.b", Tensor::zeros(&[out]));
}

/// One GRU cell step. Gate order r, z, n; the reset gate scales the
/// recurrent contribution of the candidate before tanh.
fn cell_step<'t>(
    x_t: Var<'t>,
    h: Var<'t>,
    w_x: Var<'t>,
    w_h: Var<'t>,
    b_x: Var<'t>,
    b_h: Var<'t>,
) -> Result<Var<'t>> {
    let gx = x_t.matmul(w_x)? + b_x;
    let gh = h.matmul(w_h)? + b_h;
    let r = (gx.slice(1, 0, HIDDEN)? + gh.slice(1, 0, HIDDEN)?).sigmoid();
    let z = (gx.slice(1, HIDDEN, HIDDEN)? + gh.slice(1, HIDDEN, HIDDEN)?).sigmoid();
    let n = (gx.slice(1, 2 * HIDDEN, HIDDEN)? + r * gh.slice(1, 2 * HIDDEN, HIDDEN)?).tanh();
    let one_minus_z = z.neg().add_scalar(1.0);
    Ok(one_minus_z * n + z * h)
}

/// Run one direction over the sequence; returns per-timestep states in
/// forward time order, each (B, 1, HIDDEN).
fn run_direction<'t>(
    tape: &'t Tape,
    bound: &Bound<'_, 't>,
    x: Var<'t>,
    batch: usize,
    input_width: usize,
    prefix: &str,
    reverse: bool,
) -> Result<Vec<Var<'t>>> {
    let w_x = bound.var(&format!("{prefix}.w_x"));
    let w_h = bound.var(&format!("{prefix}.w_h"));
    let b_x = bound.var(&format!("{prefix}.b_x"));
    let b_h = bound.var(&format!("{prefix}.b_h"));
    let steps = x.shape()[1];
    let mut h = tape.constant(Tensor::zeros(&[batch, HIDDEN]));
    let mut states = vec![None; steps];
    for i in 0..steps {
        let t = if reverse { steps - 1 - i } else { i };
        let x_t = x.slice(1, t, 1)?.reshape(&[batch, input_width])?;
        h = cell_step(x_t, h, w_x, w_h, b_x, b_h)?;
        states[t] = Some(h.reshape(&[batch, 1, HIDDEN])?);
    }
    Ok(states
        .into_iter()
        .map(|s| s.expect("all steps visited"))
        .collect())
}

#[allow(dead_code)] // reps/weights are read by tests and diagnostics
pub(super) struct Encoded<'t> {
    /// Per-timestep 80-wide representations, (B, 36, 80).
    pub reps: Var<'t>,
    /// Attention weights over time, (B, 36); rows sum to one.
    pub weights: Var<'t>,
    /// Attention-weighted context vector, (B, 80).
    pub context: Var<'t>,
}

pub(super) fn encode<'t>(
    tape: &'t Tape,
    bound: &Bound<'_, 't>,
    x: Var<'t>,
    batch: usize,
) -> Result<Encoded<'t>> {
    let steps = x.shape()[1];
    let mut layer_input = x;
    let mut input_width = 4;
    for layer in 0..LAYERS {
        let fwd = run_direction(
            tape,
            bound,
            layer_input,
            batch,
            input_width,
            &format!("gru.l{layer}.fwd"),
            false,
        )?;
        let bwd = run_direction(
            tape,
            bound,
            layer_input,
            batch,
            input_width,
            &format!("gru.l{layer}.bwd"),
            true,
        )?;
        let mut per_step = Vec::with_capacity(steps);
        for t in 0..steps {
            per_step.push(concat(tape, &[fwd[t], bwd[t]], 2)?);
        }
        layer_input = concat(tape, &per_step, 1)?; // (B, T, 80)
        input_width = REP;
    }

    // Additive attention: logits = tanh(rep W + b) v, softmaxed over time;
    // context is the weighted sum of representations.
    let scored = (layer_input.matmul(bound.var("attn.w"))? + bound.var("attn.b")).tanh();
    let logits = scored.matmul(bound.var("attn.v"))?.reshape(&[batch, steps])?;
    let weights = logits.softmax_last();
    let context = weights
        .reshape(&[batch, 1, steps])?
        .matmul(layer_input)?
        .reshape(&[batch, REP])?;
    Ok(Encoded {
        reps: layer_input,
        weights,
        context,
    })
}

pub(super) fn forward<'t>(
    tape: &'t Tape,
    bound: &Bound<'_, 't>,
    x: Var<'t>,
    batch: usize,
    dropout: Option<(f64, DropoutKey)>,
) -> Result<Var<'t>> {
    let encoded = encode(tape, bound, x, batch)?;
    let fc = (encoded.context.matmul(bound.var("head.fc.w"))? + bound.var("head.fc.b")).relu();
    let fc = apply_dropout(tape, fc, dropout);
    Ok(fc.matmul(bound.var("head.out.w"))? + bound.var("head.out.b"))
}
