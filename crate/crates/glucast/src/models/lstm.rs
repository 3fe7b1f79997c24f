//! Single-layer LSTM, hidden size 128, with a 64-unit prediction head.

use autodiff::{DropoutKey, ParamSet, Tape, Tensor, Var};

use super::{apply_dropout, Bound, Result};

const HIDDEN: usize = 128;
const FC: usize = 64;
const GATES: usize = 4 * HIDDEN;

pub(super) fn build(params: &mut ParamSet, out: usize) {
    params.insert("lstm.w_x", Tensor::zeros(&[4, GATES]));
    params.insert("lstm.w_h", Tensor::zeros(&[HIDDEN, GATES]));
    params.insert("lstm.b", Tensor::zeros(&[GATES]));
    params.insert("head.fc.w", Tensor::zeros(&[HIDDEN, FC]));
    params.insert("head.fc.b", Tensor::zeros(&[FC]));
    params.insert("head.out.w", Tensor::zeros(&[FC, out]));
    params.insert("head.out.b", Tensor::zeros(&[out]));
}

/// Forget-gate bias starts at +1 so early training keeps cell state.
pub(super) fn bias_forget_gate(params: &mut ParamSet) {
    let id = params.id_of("lstm.b").expect("lstm bias");
    let b = params.by_id_mut(id).value.data_mut();
    for v in &mut b[HIDDEN..2 * HIDDEN] {
        *v = 1.0;
    }
}

/// Gate order along the fused width: input, forget, cell, output.
pub(super) fn forward<'t>(
    tape: &'t Tape,
    bound: &Bound<'_, 't>,
    x: Var<'t>,
    batch: usize,
    dropout: Option<(f64, DropoutKey)>,
) -> Result<Var<'t>> {
    let w_x = bound.var("lstm.w_x");
    let w_h = bound.var("lstm.w_h");
    let b = bound.var("lstm.b");

    let mut h = tape.constant(Tensor::zeros(&[batch, HIDDEN]));
    let mut c = tape.constant(Tensor::zeros(&[batch, HIDDEN]));
    let steps = x.shape()[1];
    for t in 0..steps {
        let x_t = x.slice(1, t, 1)?.reshape(&[batch, 4])?;
        let z = x_t.matmul(w_x)? + h.matmul(w_h)? + b;
        let i = z.slice(1, 0, HIDDEN)?.sigmoid();
        let f = z.slice(1, HIDDEN, HIDDEN)?.sigmoid();
        let g = z.slice(1, 2 * HIDDEN, HIDDEN)?.tanh();
        let o = z.slice(1, 3 * HIDDEN, HIDDEN)?.sigmoid();
        c = f * c + i * g;
        h = o * c.tanh();
    }

    let fc = h.matmul(bound.var("head.fc.w"))? + bound.var("head.fc.b");
    let fc = apply_dropout(tape, fc, dropout);
    Ok(fc.matmul(bound.var("head.out.w"))? + bound.var("head.out.b"))
}
