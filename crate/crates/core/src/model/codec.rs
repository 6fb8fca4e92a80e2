use super::layers::{conv, conv_silu, init_conv};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tape, Var};

/// Parameter prefix of the frozen image encoder.
pub const ENCODER: &str = "codec.enc";
/// Parameter prefix of the trainable copy fine-tuned on degraded inputs.
pub const SURROGATE_ENCODER: &str = "surrogate.enc";
pub const DECODER: &str = "codec.dec";

/// Small convolutional VAE: 2× spatial reduction to `latent` channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatentCodec {
    pub image_channels: usize,
    pub hidden: usize,
    pub latent: usize,
}

impl LatentCodec {
    pub fn init_encoder(&self, store: &mut ParamStore, seed: u64, prefix: &str) {
        init_conv(store, seed, &format!("{prefix}.c1"), 3, self.image_channels, self.hidden);
        init_conv(store, seed, &format!("{prefix}.c2"), 3, self.hidden, self.hidden);
        init_conv(store, seed, &format!("{prefix}.out"), 3, self.hidden, 2 * self.latent);
    }

    pub fn init_decoder(&self, store: &mut ParamStore, seed: u64) {
        init_conv(store, seed, &format!("{DECODER}.c1"), 3, self.latent, self.hidden);
        init_conv(store, seed, &format!("{DECODER}.c2"), 3, self.hidden, self.hidden);
        init_conv(store, seed, &format!("{DECODER}.out"), 3, self.hidden, self.image_channels);
    }

    /// Latent shape for an `h×w` image.
    pub fn latent_shape(&self, h: usize, w: usize) -> [usize; 3] {
        [h / 2, w / 2, self.latent]
    }

    /// `(mean, logvar)` of an `h×w×image_channels` input with even `h`, `w`.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, prefix: &str, image: Var) -> Result<(Var, Var)> {
        let s = tape.shape(image).to_vec();
        if s.len() != 3 || s[2] != self.image_channels || s[0] % 2 != 0 || s[1] % 2 != 0 {
            return Err(Error::invalid(format!(
                "codec input must be even-sized h×w×{}, got {s:?}",
                self.image_channels
            )));
        }
        let h = conv_silu(tape, store, &format!("{prefix}.c1"), image)?;
        let h = tape.downsample2(h)?;
        let h = conv_silu(tape, store, &format!("{prefix}.c2"), h)?;
        let o = conv(tape, store, &format!("{prefix}.out"), h)?;
        Ok((tape.slice(o, 0, self.latent)?, tape.slice(o, self.latent, self.latent)?))
    }

    /// Image in `(0, 1)` at twice the latent resolution.
    pub fn decode(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        let s = tape.shape(z);
        if s.len() != 3 || s[2] != self.latent {
            return Err(Error::invalid(format!("latent must be h×w×{}, got {s:?}", self.latent)));
        }
        let h = conv_silu(tape, store, &format!("{DECODER}.c1"), z)?;
        let h = tape.upsample2(h)?;
        let h = conv_silu(tape, store, &format!("{DECODER}.c2"), h)?;
        let o = conv(tape, store, &format!("{DECODER}.out"), h)?;
        Ok(tape.sigmoid(o))
    }
}
