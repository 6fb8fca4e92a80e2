//! Event encoder, latent codec, denoiser and the one-step latent update.
//!
//! All parameters live in one [`ParamStore`] under fixed prefixes
//! (`codec.enc`, `surrogate.enc`, `codec.dec`, `denoiser`, `event`), so a
//! training stage selects what it updates by prefix.

mod attention;
mod codec;
mod denoiser;
mod encoder;
mod layers;
mod schedule;

pub use attention::self_attention_reference;
pub use codec::{LatentCodec, DECODER, ENCODER, SURROGATE_ENCODER};
pub use denoiser::{Denoiser, DENOISER};
pub use encoder::{etf_forward, etf_gate, etf_step, init_etf, EncoderState, EtfState, EvEncoder, EVENT_ENCODER};
pub use layers::sinusoidal_embedding;
pub use schedule::{DiffusionSchedule, ScheduleKind};

use std::path::{Path, PathBuf};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::events::{to_voxel_grid, EventStream, VoxelNormalization};
use crate::image::Image;
use crate::numerics::{checkpoint, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_channels: usize,
    pub latent_channels: usize,
    pub codec_hidden: usize,
    pub denoiser_hidden: usize,
    pub encoder_hidden: usize,
    pub embed_dim: usize,
    pub time_bins: usize,
    pub voxel_norm: VoxelNormalization,
    pub schedule: ScheduleKind,
    pub schedule_steps: usize,
    pub t_star: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_channels: 3,
            latent_channels: 4,
            codec_hidden: 16,
            denoiser_hidden: 16,
            encoder_hidden: 16,
            embed_dim: 16,
            time_bins: crate::events::DEFAULT_TIME_BINS,
            voxel_norm: VoxelNormalization::None,
            schedule: ScheduleKind::Linear,
            schedule_steps: 1000,
            t_star: 190,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.image_channels,
            self.latent_channels,
            self.codec_hidden,
            self.denoiser_hidden,
            self.encoder_hidden,
            self.embed_dim,
            self.time_bins,
        ];
        if dims.contains(&0) {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        self.schedule()?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::new(self.schedule, self.schedule_steps, self.t_star)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("image_channels", self.image_channels);
        kv.set("latent_channels", self.latent_channels);
        kv.set("codec_hidden", self.codec_hidden);
        kv.set("denoiser_hidden", self.denoiser_hidden);
        kv.set("encoder_hidden", self.encoder_hidden);
        kv.set("embed_dim", self.embed_dim);
        kv.set("time_bins", self.time_bins);
        kv.set("voxel_norm", self.voxel_norm.name());
        kv.set("schedule", self.schedule);
        kv.set("schedule_steps", self.schedule_steps);
        kv.set("t_star", self.t_star);
        kv.set("seed", self.seed);
        kv
    }

    /// Missing keys take their defaults; the schedule is validated.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let d = ModelConfig::default();
        let voxel_norm = match kv.raw("voxel_norm") {
            None => d.voxel_norm,
            Some(s) => VoxelNormalization::parse(s).ok_or_else(|| Error::invalid(format!("unknown voxel_norm {s:?}")))?,
        };
        let cfg = ModelConfig {
            image_channels: kv.get_or("image_channels", d.image_channels)?,
            latent_channels: kv.get_or("latent_channels", d.latent_channels)?,
            codec_hidden: kv.get_or("codec_hidden", d.codec_hidden)?,
            denoiser_hidden: kv.get_or("denoiser_hidden", d.denoiser_hidden)?,
            encoder_hidden: kv.get_or("encoder_hidden", d.encoder_hidden)?,
            embed_dim: kv.get_or("embed_dim", d.embed_dim)?,
            time_bins: kv.get_or("time_bins", d.time_bins)?,
            voxel_norm,
            schedule: kv.get_or("schedule", d.schedule)?,
            schedule_steps: kv.get_or("schedule_steps", d.schedule_steps)?,
            t_star: kv.get_or("t_star", d.t_star)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `ẑ = (z − β ε) / α` with the predicted noise `eps`.
pub fn invert_noise(z: &Tensor, eps: &Tensor, alpha: f64, beta: f64) -> Result<Tensor> {
    if z.shape() != eps.shape() {
        return Err(Error::Shape {
            op: "os_diff",
            lhs: z.shape().to_vec(),
            rhs: eps.shape().to_vec(),
        });
    }
    let data = z.data().iter().zip(eps.data()).map(|(a, e)| (a - beta * e) / alpha).collect();
    Tensor::new(z.shape(), data)
}

/// One-step denoising at step `t` with an arbitrary noise predictor.
pub fn os_diff(
    z: &Tensor,
    schedule: &DiffusionSchedule,
    t: usize,
    eps: impl FnOnce(&Tensor, usize) -> Result<Tensor>,
) -> Result<Tensor> {
    if t >= schedule.len() {
        return Err(Error::invalid(format!("timestep {t} outside schedule")));
    }
    let e = eps(z, t)?;
    invert_noise(z, &e, schedule.alpha(t), schedule.beta(t))
}

/// Differentiable one-step update at `t*` through the learned denoiser.
pub fn os_diff_var(tape: &mut Tape, store: &ParamStore, denoiser: &Denoiser, schedule: &DiffusionSchedule, z: Var) -> Result<Var> {
    let t = schedule.t_star();
    let eps = denoiser.forward(tape, store, z, t)?;
    let be = tape.scale(eps, schedule.beta(t));
    let d = tape.sub(z, be)?;
    Ok(tape.scale(d, 1.0 / schedule.alpha(t)))
}

pub fn image_to_tensor(img: &Image, channels: usize) -> Tensor {
    let img = if img.channels() == channels { img.clone() } else { img.to_gray().expand_channels(channels) };
    Tensor::new(&[img.height(), img.width(), channels], img.into_vec()).expect("image shape")
}

pub fn tensor_to_image(t: &Tensor) -> Result<Image> {
    let &[h, w, c] = t.shape() else {
        return Err(Error::invalid(format!("expected h×w×c tensor, got {:?}", t.shape())));
    };
    Image::from_vec(h, w, c, t.data().to_vec())
}

/// `<stem>.cfg` next to a checkpoint.
pub fn config_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("cfg")
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub schedule: DiffusionSchedule,
    pub codec: LatentCodec,
    pub denoiser: Denoiser,
    pub encoder: EvEncoder,
    pub params: ParamStore,
}

impl Model {
    /// Fresh parameters; the surrogate encoder starts as a copy of the image encoder.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let m = Self::skeleton(config, ParamStore::new())?;
        let seed = m.config.seed;
        m.codec.init_encoder(&mut params, seed, ENCODER);
        m.codec.init_decoder(&mut params, seed);
        params.copy_prefix(&format!("{ENCODER}."), &format!("{SURROGATE_ENCODER}."));
        m.denoiser.init(&mut params, seed);
        m.encoder.init(&mut params, seed);
        Ok(Model { params, ..m })
    }

    /// Wraps loaded parameters after checking names and shapes against the config.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let reference = Model::new(config.clone())?;
        for (name, t) in reference.params.iter() {
            match params.get(name) {
                None => return Err(Error::invalid(format!("checkpoint lacks parameter {name}"))),
                Some(p) if p.shape() != t.shape() => {
                    return Err(Error::Shape {
                        op: "load parameter",
                        lhs: t.shape().to_vec(),
                        rhs: p.shape().to_vec(),
                    })
                }
                _ => {}
            }
        }
        params.check_finite()?;
        Self::skeleton(config, params)
    }

    fn skeleton(config: ModelConfig, params: ParamStore) -> Result<Self> {
        Ok(Model {
            schedule: config.schedule()?,
            codec: LatentCodec {
                image_channels: config.image_channels,
                hidden: config.codec_hidden,
                latent: config.latent_channels,
            },
            denoiser: Denoiser {
                latent: config.latent_channels,
                hidden: config.denoiser_hidden,
                embed_dim: config.embed_dim,
            },
            encoder: EvEncoder {
                bins: config.time_bins,
                hidden: config.encoder_hidden,
                latent: config.latent_channels,
            },
            config,
            params,
        })
    }

    /// Writes the checkpoint and its sibling `.cfg`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        checkpoint::save(&self.params, path)?;
        let cfg = config_path(path);
        std::fs::write(&cfg, self.config.to_key_values().render()).map_err(|e| Error::io(&cfg, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let config = ModelConfig::from_key_values(&KeyValues::read(config_path(path))?)?;
        Self::from_params(config, checkpoint::load(path)?)
    }

    /// Mean latent of an image under the encoder at `prefix`.
    pub fn encode_mean(&self, img: &Image, prefix: &str) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(image_to_tensor(img, self.config.image_channels));
        let (mean, _) = self.codec.encode(&mut tape, &self.params, prefix, x)?;
        Ok(tape.value(mean).clone())
    }

    pub fn denoise(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let out = os_diff_var(&mut tape, &self.params, &self.denoiser, &self.schedule, zv)?;
        Ok(tape.value(out).clone())
    }

    pub fn decode(&self, z: &Tensor) -> Result<Image> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let out = self.codec.decode(&mut tape, &self.params, zv)?;
        tensor_to_image(tape.value(out))
    }

    /// One frame per `(events, t_start, t_end)` window, with the recurrent state
    /// carried across windows.
    pub fn reconstruct_windows(&self, windows: &[(EventStream, u64, u64)]) -> Result<Vec<Image>> {
        let Some((first, _, _)) = windows.first() else {
            return Ok(Vec::new());
        };
        let (h, w) = (first.height() as usize, first.width() as usize);
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::invalid(format!("sensor size {w}x{h} must be a positive multiple of 4")));
        }
        let mut state = self.encoder.zero_state(h, w);
        let mut frames = Vec::with_capacity(windows.len());
        for (events, t0, t1) in windows {
            let grid = to_voxel_grid(events, *t0, *t1, self.config.time_bins).normalized(self.config.voxel_norm);
            let (mean, _, next) = self.encoder.step_tensor(&self.params, &grid.to_tensor(), &state)?;
            state = next;
            frames.push(self.decode(&self.denoise(&mean)?)?);
        }
        Ok(frames)
    }

    /// Consecutive `dt` windows from the first event to the last; empty in, empty out.
    pub fn reconstruct(&self, stream: &EventStream, dt: u64) -> Result<Vec<Image>> {
        if dt == 0 {
            return Err(Error::invalid("window length must be positive"));
        }
        let (Some(first), Some(last)) = (stream.first_time(), stream.last_time()) else {
            return Ok(Vec::new());
        };
        let n = ((last - first) / dt + 1) as usize;
        let windows: Vec<(EventStream, u64, u64)> = stream
            .windows(first, dt, n)
            .into_iter()
            .enumerate()
            .map(|(i, win)| {
                let t0 = first + i as u64 * dt;
                (win, t0, t0 + dt)
            })
            .collect();
        self.reconstruct_windows(&windows)
    }
}
