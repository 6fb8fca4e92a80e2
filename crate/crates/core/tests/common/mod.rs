//! Shared helpers for integration tests: random tensors and a central
//! finite-difference gradient checker.

#![allow(dead_code)]

use evrecon::numerics::{ParamStore, Tape, Tensor, Var};
use evrecon::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Relative error with a floor so that vanishing gradients compare absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn probe_indices(rng: &mut impl Rng, len: usize, probes: usize) -> Vec<usize> {
    if len <= probes {
        (0..len).collect()
    } else {
        (0..probes).map(|_| rng.random_range(0..len)).collect()
    }
}

/// Worst relative error between tape gradients and central differences for
/// every input of `f`, probing up to `probes` coordinates per input.
pub fn check_inputs(
    inputs: &[Tensor],
    probes: usize,
    seed: u64,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> f64 {
    let eval = |xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vs).unwrap();
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vs: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let out = f(&mut tape, &vs).unwrap();
    let grads = tape.backward(out).unwrap();
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for (k, v) in vs.iter().enumerate() {
        let g = grads.get(&tape, *v).unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in probe_indices(&mut rng, inputs[k].numel(), probes) {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] += FD_STEP;
            let up = eval(&xs);
            xs[k].data_mut()[i] -= 2.0 * FD_STEP;
            let down = eval(&xs);
            worst = worst.max(rel_err(g.data()[i], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

/// Same check over the trainable parameters of a store. `f` builds the loss on
/// a tape made by `Tape::with_trainable(prefixes)`.
pub fn check_params(
    store: &ParamStore,
    prefixes: &[String],
    probes: usize,
    seed: u64,
    f: impl Fn(&mut Tape, &ParamStore) -> Result<Var>,
) -> (f64, usize) {
    let eval = |s: &ParamStore| -> f64 {
        let mut tape = Tape::new();
        let out = f(&mut tape, s).unwrap();
        tape.value(out).item()
    };
    let mut tape = Tape::with_trainable(prefixes);
    let out = f(&mut tape, store).unwrap();
    let grads = tape.backward(out).unwrap().params(&tape);
    assert!(!grads.is_empty(), "no trainable parameter reached");
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut work = store.clone();
    for (name, g) in &grads {
        for i in probe_indices(&mut rng, g.numel(), probes) {
            let orig = work.get(name).unwrap().data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + FD_STEP;
            let up = eval(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig - FD_STEP;
            let down = eval(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            worst = worst.max(rel_err(g.data()[i], (up - down) / (2.0 * FD_STEP)));
            checked += 1;
        }
    }
    (worst, checked)
}

/// Ordinary least squares `y ≈ a + b·x` and its coefficient of determination.
pub fn affine_r2(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(p, q)| (q - a - b * p).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
    (a, b, 1.0 - ss_res / ss_tot)
}
