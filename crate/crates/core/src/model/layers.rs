use crate::error::Result;
use crate::numerics::{ParamStore, Tape, Tensor, Var};

/// Inserts `{name}.w` (`k×k×cin×cout`) and a zero `{name}.b`.
pub(crate) fn init_conv(store: &mut ParamStore, seed: u64, name: &str, k: usize, cin: usize, cout: usize) {
    store.init_uniform(seed, &format!("{name}.w"), &[k, k, cin, cout], k * k * cin);
    store.init_zeros(&format!("{name}.b"), &[cout]);
}

pub(crate) fn conv(tape: &mut Tape, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let w = tape.param(store, &format!("{name}.w"))?;
    let b = tape.param(store, &format!("{name}.b"))?;
    let y = tape.conv2d(x, w)?;
    tape.add_bias(y, b)
}

pub(crate) fn conv_silu(tape: &mut Tape, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let y = conv(tape, store, name, x)?;
    Ok(tape.silu(y))
}

/// Transformer-style sinusoidal embedding of step `t` as a `1×dim` row.
pub fn sinusoidal_embedding(t: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut v = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        let a = t as f64 * freq;
        v[i] = a.sin();
        v[half + i] = a.cos();
    }
    Tensor::new(&[1, dim], v).expect("dim elements")
}
