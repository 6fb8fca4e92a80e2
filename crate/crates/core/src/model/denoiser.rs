use super::layers::{conv, conv_silu, init_conv, sinusoidal_embedding};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tape, Var};

pub const DENOISER: &str = "denoiser";

/// Noise predictor `ε(z; t)`: residual conv net with one 2× down/up pair and an
/// additive timestep embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Denoiser {
    pub latent: usize,
    pub hidden: usize,
    pub embed_dim: usize,
}

const BLOCKS: usize = 4;

impl Denoiser {
    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        let (c, p) = (self.hidden, DENOISER);
        store.init_uniform(seed, &format!("{p}.temb.w"), &[self.embed_dim, c], self.embed_dim);
        store.init_zeros(&format!("{p}.temb.b"), &[1, c]);
        init_conv(store, seed, &format!("{p}.in"), 3, self.latent, c);
        for b in 0..BLOCKS {
            init_conv(store, seed, &format!("{p}.b{b}.c1"), 3, c, c);
            init_conv(store, seed, &format!("{p}.b{b}.c2"), 3, c, c);
        }
        init_conv(store, seed, &format!("{p}.out"), 3, c, self.latent);
    }

    fn block(&self, tape: &mut Tape, store: &ParamStore, b: usize, x: Var) -> Result<Var> {
        let a = tape.silu(x);
        let a = conv_silu(tape, store, &format!("{DENOISER}.b{b}.c1"), a)?;
        let a = conv(tape, store, &format!("{DENOISER}.b{b}.c2"), a)?;
        tape.add(x, a)
    }

    /// Predicted noise, same shape as `z`. Spatial dims must be even.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, z: Var, t: usize) -> Result<Var> {
        let s = tape.shape(z).to_vec();
        if s.len() != 3 || s[2] != self.latent || s[0] % 2 != 0 || s[1] % 2 != 0 {
            return Err(Error::invalid(format!(
                "denoiser input must be even-sized h×w×{}, got {s:?}",
                self.latent
            )));
        }
        let e = tape.constant(sinusoidal_embedding(t, self.embed_dim));
        let we = tape.param(store, &format!("{DENOISER}.temb.w"))?;
        let be = tape.param(store, &format!("{DENOISER}.temb.b"))?;
        let e = tape.matmul(e, we)?;
        let e = tape.add(e, be)?;
        let e = tape.silu(e);
        let e = tape.reshape(e, &[self.hidden])?;

        let h = conv(tape, store, &format!("{DENOISER}.in"), z)?;
        let h = tape.add_bias(h, e)?;
        let h1 = self.block(tape, store, 0, h)?;
        let d = tape.downsample2(h1)?;
        let d = self.block(tape, store, 1, d)?;
        let d = self.block(tape, store, 2, d)?;
        let u = tape.upsample2(d)?;
        let u = tape.add(u, h1)?;
        let u = self.block(tape, store, 3, u)?;
        let u = tape.silu(u);
        conv(tape, store, &format!("{DENOISER}.out"), u)
    }
}
