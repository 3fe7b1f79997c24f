//! Randomized finite-difference checks for every differentiable primitive
//! and for a small composite MLP.

use autodiff::rng::SplitMix64;
use autodiff::{concat, Tape, Tensor, Var};

const REL_TOL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-6;
const FD_STEP: f64 = 1e-5;

/// Central-difference check of `f` at `x0`, comparing against the tape
/// gradient at every coordinate.
fn check_gradient(
    name: &str,
    x0: &Tensor,
    f: impl for<'a> Fn(&'a Tape, Var<'a>) -> Var<'a>,
) {
    // Analytic gradient.
    let tape = Tape::new();
    let x = tape.param(x0.clone());
    let loss = f(&tape, x);
    tape.backward(loss).unwrap();
    let analytic = tape.grad(x).unwrap();

    // One scalar re-evaluation per perturbed coordinate.
    let eval = |data: &[f64]| -> f64 {
        let tape = Tape::new();
        let x = tape.param(Tensor::new(x0.shape().to_vec(), data.to_vec()).unwrap());
        f(&tape, x).item()
    };
    let base = x0.data().to_vec();
    for i in 0..base.len() {
        let h = FD_STEP * base[i].abs().max(1.0);
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
        let got = analytic.data()[i];
        let denom = fd.abs().max(got.abs()).max(ABS_FLOOR / REL_TOL);
        assert!(
            (fd - got).abs() <= REL_TOL * denom,
            "{name}: coordinate {i}: analytic {got} vs central diff {fd}"
        );
    }
}

fn random_tensor(rng: &mut SplitMix64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
}

#[test]
fn unary_primitives_match_finite_differences() {
    let mut rng = SplitMix64::new(101);
    let x = random_tensor(&mut rng, &[3, 4], -2.0, 2.0);
    check_gradient("sigmoid", &x, |_, v| v.sigmoid().mean());
    check_gradient("tanh", &x, |_, v| v.tanh().mean());
    check_gradient("gelu", &x, |_, v| v.gelu().mean());
    check_gradient("softplus", &x, |_, v| v.softplus().mean());
    check_gradient("exp", &x, |_, v| v.exp().mean());
    check_gradient("neg+scalar", &x, |_, v| v.neg().mul_scalar(1.7).add_scalar(0.3).mean());
    check_gradient("softmax", &x, |t, v| {
        let w = t.constant(random_tensor(&mut SplitMix64::new(7), &[3, 4], -1.0, 1.0));
        (v.softmax_last() * w).mean()
    });

    // relu and abs away from their kinks
    let off = x.map(|v| if v.abs() < 0.1 { v + 0.35 } else { v });
    check_gradient("relu", &off, |_, v| v.relu().mean());
    check_gradient("abs", &off, |_, v| v.abs().mean());

    let pos = random_tensor(&mut rng, &[6], 0.3, 5.0);
    check_gradient("log", &pos, |_, v| v.log().unwrap().mean());
    check_gradient("ln_gamma", &pos, |_, v| v.ln_gamma().unwrap().mean());
}

#[test]
fn binary_and_structural_primitives_match_finite_differences() {
    let mut rng = SplitMix64::new(202);
    let x = random_tensor(&mut rng, &[2, 3, 4], -1.5, 1.5);
    let wt = random_tensor(&mut rng, &[4, 5], -1.0, 1.0);
    let bias = random_tensor(&mut rng, &[5], -0.5, 0.5);
    let other = random_tensor(&mut rng, &[2, 3, 4], 0.5, 2.0);

    check_gradient("matmul_shared", &x, |t, v| {
        let w = t.constant(wt.clone());
        let b = t.constant(bias.clone());
        (v.matmul(w).unwrap() + b).tanh().mean()
    });
    // gradient w.r.t. the weight side too
    check_gradient("matmul_weight", &wt, |t, w| {
        let v = t.constant(x.clone());
        v.matmul(w).unwrap().tanh().mean()
    });
    check_gradient("mul_div", &x, |t, v| {
        let o = t.constant(other.clone());
        ((v * o) / o.add_scalar(3.0)).mean()
    });
    check_gradient("sub_broadcast", &x, |t, v| {
        let b = t.constant(bias.reshaped(vec![5]).unwrap());
        let y = v.matmul(t.constant(wt.clone())).unwrap();
        (y.sub(b).unwrap()).mul(y).unwrap().mean()
    });
    check_gradient("transpose_slice_concat", &x, |t, v| {
        let a = v.slice(1, 0, 2).unwrap();
        let b = v.slice(1, 2, 1).unwrap();
        let joined = concat(t, &[a, b], 1).unwrap();
        joined.transpose_last().tanh().mean()
    });
    check_gradient("batched_matmul", &x, |t, v| {
        let k = t.constant(random_tensor(&mut SplitMix64::new(9), &[2, 4, 3], -1.0, 1.0));
        v.matmul(k).unwrap().sigmoid().mean()
    });

    let gain = random_tensor(&mut rng, &[4], 0.5, 1.5);
    let b2 = random_tensor(&mut rng, &[4], -0.3, 0.3);
    check_gradient("layer_norm_x", &x, |t, v| {
        let g = t.constant(gain.clone());
        let b = t.constant(b2.clone());
        v.layer_norm(g, b, 1e-5).unwrap().tanh().mean()
    });
    check_gradient("layer_norm_gain", &gain, |t, g| {
        let v = t.constant(x.clone());
        let b = t.constant(b2.clone());
        v.layer_norm(g, b, 1e-5).unwrap().tanh().mean()
    });
}

/// Randomized two-layer MLP, 64 sampled coordinates against central
/// differences with step 1e-5.
#[test]
fn random_mlp_matches_finite_differences_on_sampled_coordinates() {
    let mut rng = SplitMix64::new(303);
    let input = random_tensor(&mut rng, &[4, 6], -1.0, 1.0);
    let target = random_tensor(&mut rng, &[4, 2], -1.0, 1.0);
    let w1 = random_tensor(&mut rng, &[6, 16], -0.5, 0.5);
    let b1 = random_tensor(&mut rng, &[16], -0.1, 0.1);
    let w2 = random_tensor(&mut rng, &[16, 2], -0.5, 0.5);
    let b2 = random_tensor(&mut rng, &[2], -0.1, 0.1);

    let run = |w1: &Tensor, b1: &Tensor, w2: &Tensor, b2: &Tensor| -> (f64, Vec<Tensor>) {
        let tape = Tape::new();
        let x = tape.constant(input.clone());
        let y = tape.constant(target.clone());
        let vw1 = tape.param(w1.clone());
        let vb1 = tape.param(b1.clone());
        let vw2 = tape.param(w2.clone());
        let vb2 = tape.param(b2.clone());
        let h = (x.matmul(vw1).unwrap() + vb1).gelu();
        let out = h.matmul(vw2).unwrap() + vb2;
        let diff = out - y;
        let loss = (diff * diff).mean();
        let value = loss.item();
        tape.backward(loss).unwrap();
        (
            value,
            vec![
                tape.grad(vw1).unwrap(),
                tape.grad(vb1).unwrap(),
                tape.grad(vw2).unwrap(),
                tape.grad(vb2).unwrap(),
            ],
        )
    };

    let (_, grads) = run(&w1, &b1, &w2, &b2);
    let tensors = [&w1, &b1, &w2, &b2];
    let mut coord_rng = SplitMix64::new(404);
    for _ in 0..64 {
        let which = coord_rng.range(4);
        let mut perturbed: Vec<Tensor> = tensors.iter().map(|t| (*t).clone()).collect();
        let i = coord_rng.range(perturbed[which].len());
        let h = FD_STEP;
        perturbed[which].data_mut()[i] += h;
        let (up, _) = run(&perturbed[0], &perturbed[1], &perturbed[2], &perturbed[3]);
        perturbed[which].data_mut()[i] -= 2.0 * h;
        let (down, _) = run(&perturbed[0], &perturbed[1], &perturbed[2], &perturbed[3]);
        let fd = (up - down) / (2.0 * h);
        let got = grads[which].data()[i];
        let denom = fd.abs().max(got.abs()).max(ABS_FLOOR / REL_TOL);
        assert!(
            (fd - got).abs() <= REL_TOL * denom,
            "mlp tensor {which} coord {i}: analytic {got} vs fd {fd}"
        );
    }
}

/// Same seed, same arithmetic, same trajectory: the tape must be
/// bit-deterministic across runs and thread schedules.
#[test]
fn forward_backward_is_bit_deterministic() {
    let run = || -> (Vec<f64>, Vec<f64>) {
        let mut rng = SplitMix64::new(777);
        let x = random_tensor(&mut rng, &[16, 24], -1.0, 1.0);
        let w = random_tensor(&mut rng, &[24, 24], -0.5, 0.5);
        let tape = Tape::new();
        let xv = tape.constant(x);
        let wv = tape.param(w);
        let y = xv.matmul(wv).unwrap().gelu().matmul(wv).unwrap();
        let loss = (y * y).mean();
        let value = loss.value().into_data();
        tape.backward(loss).unwrap();
        (value, tape.grad(wv).unwrap().into_data())
    };
    let (v1, g1) = run();
    let (v2, g2) = run();
    assert_eq!(v1, v2);
    assert_eq!(g1, g2);
}
