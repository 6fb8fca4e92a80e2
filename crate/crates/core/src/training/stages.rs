//! Stage configuration, single optimisation steps and the stage runner.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::{read_corpus, RecipeRanges};
use super::losses::{
    codec_loss, stage1_loss, stage2_loss, stage3_loss, LossTerms, PerceptualProxy, Stage1Weights, Stage3Weights,
    StageGraph,
};
use super::toy::{toy_image, toy_video};
use crate::config::KeyValues;
use crate::degrade::apply_recipe;
use crate::error::{Error, Result};
use crate::events::{to_voxel_grid, EventStream, OnlineDegradation, RectRanges};
use crate::image::Image;
use crate::metrics::{mse, ssim};
use crate::model::{
    image_to_tensor, EncoderState, Model, ModelConfig, DECODER, DENOISER, ENCODER, EVENT_ENCODER, SURROGATE_ENCODER,
};
use crate::numerics::{clip_grad_norm, AdamW, Tape, Tensor};
use crate::simulator::{integrate_events, read_manifest, simulate, FrameSequence, SimConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub stage: u8,
    pub iterations: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Stage 1: latent, perceptual. Stage 2: KL, latent. Stage 3: perceptual, flow, latent.
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient norm limit; `0` disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    /// Recorded for provenance; all stages run single-threaded, which makes every run replayable.
    pub deterministic: bool,
    pub out_dir: PathBuf,
    /// Explicit checkpoint to start from instead of `out_dir/stage{n-1}.evdw`.
    pub init_checkpoint: Option<PathBuf>,
    /// Surrogate corpus manifest; procedural images are used when absent.
    pub corpus: Option<PathBuf>,
    /// Frame manifests; procedural videos are used when empty.
    pub videos: Vec<PathBuf>,
    pub toy_images: usize,
    /// Keep the chroma of toy stills; off by default since the degraded inputs are gray.
    pub toy_color: bool,
    pub image_size: usize,
    pub crop: usize,
    pub val_images: usize,
    pub toy_videos: usize,
    pub video_size: usize,
    pub video_frames: usize,
    pub frame_dt_us: u64,
    pub val_videos: usize,
    pub val_every: usize,
    pub codec_iterations: usize,
    pub codec_lr: f64,
    pub codec_kl: f64,
    pub ranges: RecipeRanges,
    pub sim: SimConfig,
    pub online: OnlineDegradation,
    pub model: ModelConfig,
}

impl TrainingConfig {
    /// Toy-scale defaults for `stage` (1, 2 or 3).
    pub fn for_stage(stage: u8) -> Self {
        let (iterations, lambdas, lr, seq_len) = match stage {
            1 => (500, (1.0, 2.0, 0.0), 1e-3, 4),
            2 => (500, (1.0, 1.0, 0.0), 1e-3, 8),
            _ => (200, (1.0, 2.0, 1.0), 3e-4, 4),
        };
        TrainingConfig {
            stage,
            iterations,
            batch_size: 4,
            seq_len,
            lambda1: lambdas.0,
            lambda2: lambdas.1,
            lambda3: lambdas.2,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            grad_clip: 1.0,
            seed: 0,
            deterministic: true,
            out_dir: PathBuf::from("runs"),
            init_checkpoint: None,
            corpus: None,
            videos: Vec::new(),
            toy_images: 512,
            toy_color: false,
            image_size: 64,
            crop: 32,
            val_images: 16,
            toy_videos: 20,
            video_size: 32,
            video_frames: 16,
            frame_dt_us: 10_000,
            val_videos: 1,
            val_every: 50,
            codec_iterations: 600,
            codec_lr: 3e-3,
            codec_kl: 1e-4,
            ranges: RecipeRanges::default(),
            sim: SimConfig::default(),
            online: OnlineDegradation::default(),
            model: ModelConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.stage) {
            return Err(Error::invalid(format!("stage must be 1, 2 or 3, got {}", self.stage)));
        }
        if self.iterations == 0 || self.batch_size == 0 || self.val_every == 0 {
            return Err(Error::invalid("iterations, batch_size and val_every must be positive"));
        }
        if [self.lambda1, self.lambda2, self.lambda3].iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::invalid("loss weights must be >= 0"));
        }
        if !(self.lr > 0.0 && self.codec_lr > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.stage > 1 && self.seq_len < 2 {
            return Err(Error::invalid("seq_len must be at least 2"));
        }
        if self.crop % 4 != 0 || self.image_size % 4 != 0 || self.video_size % 4 != 0 || self.crop > self.image_size {
            return Err(Error::invalid("crop, image_size and video_size must be multiples of 4 with crop <= image_size"));
        }
        if self.video_frames < self.seq_len + 1 {
            return Err(Error::invalid("video_frames must exceed seq_len"));
        }
        self.ranges.validate()?;
        self.sim.validate()?;
        self.model.validate()
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("stage", self.stage);
        kv.set("iterations", self.iterations);
        kv.set("batch_size", self.batch_size);
        kv.set("seq_len", self.seq_len);
        kv.set("lambda1", self.lambda1);
        kv.set("lambda2", self.lambda2);
        kv.set("lambda3", self.lambda3);
        kv.set("lr", self.lr);
        kv.set("beta1", self.beta1);
        kv.set("beta2", self.beta2);
        kv.set("eps", self.eps);
        kv.set("weight_decay", self.weight_decay);
        kv.set("grad_clip", self.grad_clip);
        kv.set("seed", self.seed);
        kv.set("deterministic", self.deterministic);
        kv.set("out_dir", self.out_dir.display());
        if let Some(p) = &self.init_checkpoint {
            kv.set("init_checkpoint", p.display());
        }
        if let Some(p) = &self.corpus {
            kv.set("corpus", p.display());
        }
        if !self.videos.is_empty() {
            let v: Vec<String> = self.videos.iter().map(|p| p.display().to_string()).collect();
            kv.set("videos", v.join(","));
        }
        kv.set("toy_images", self.toy_images);
        kv.set("toy_color", self.toy_color);
        kv.set("image_size", self.image_size);
        kv.set("crop", self.crop);
        kv.set("val_images", self.val_images);
        kv.set("toy_videos", self.toy_videos);
        kv.set("video_size", self.video_size);
        kv.set("video_frames", self.video_frames);
        kv.set("frame_dt_us", self.frame_dt_us);
        kv.set("val_videos", self.val_videos);
        kv.set("val_every", self.val_every);
        kv.set("codec_iterations", self.codec_iterations);
        kv.set("codec_lr", self.codec_lr);
        kv.set("codec_kl", self.codec_kl);
        kv.set("online.merge_window_us", self.online.merge_window);
        kv.set("online.drop_prob", self.online.drop_prob);
        kv.set("online.rect_min", self.online.rects.min_count);
        kv.set("online.rect_max", self.online.rects.max_count);
        kv.set("online.rect_max_frac", self.online.rects.max_frac);
        for (prefix, sub) in [
            ("degrade.", self.ranges.to_key_values()),
            ("sim.", self.sim.to_key_values()),
            ("model.", self.model.to_key_values()),
        ] {
            for k in sub.keys() {
                kv.set(&format!("{prefix}{k}"), sub.raw(k).unwrap_or_default());
            }
        }
        kv
    }

    /// Starts from [`TrainingConfig::for_stage`] of the `stage` key (default 1);
    /// `degrade.*`, `sim.*` and `model.*` keys configure the nested parts.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let stage: u8 = kv.get_or("stage", 1)?;
        let d = TrainingConfig::for_stage(stage);
        let sub = |prefix: &str| kv.subset(prefix);
        let videos = match kv.raw("videos") {
            None | Some("") => Vec::new(),
            Some(s) => s.split(',').map(|p| PathBuf::from(p.trim())).collect(),
        };
        let cfg = TrainingConfig {
            stage,
            iterations: kv.get_or("iterations", d.iterations)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            seq_len: kv.get_or("seq_len", d.seq_len)?,
            lambda1: kv.get_or("lambda1", d.lambda1)?,
            lambda2: kv.get_or("lambda2", d.lambda2)?,
            lambda3: kv.get_or("lambda3", d.lambda3)?,
            lr: kv.get_or("lr", d.lr)?,
            beta1: kv.get_or("beta1", d.beta1)?,
            beta2: kv.get_or("beta2", d.beta2)?,
            eps: kv.get_or("eps", d.eps)?,
            weight_decay: kv.get_or("weight_decay", d.weight_decay)?,
            grad_clip: kv.get_or("grad_clip", d.grad_clip)?,
            seed: kv.get_or("seed", d.seed)?,
            deterministic: kv.get_or("deterministic", d.deterministic)?,
            out_dir: kv.get_or("out_dir", d.out_dir)?,
            init_checkpoint: kv.get("init_checkpoint")?,
            corpus: kv.get("corpus")?,
            videos,
            toy_images: kv.get_or("toy_images", d.toy_images)?,
            toy_color: kv.get_or("toy_color", d.toy_color)?,
            image_size: kv.get_or("image_size", d.image_size)?,
            crop: kv.get_or("crop", d.crop)?,
            val_images: kv.get_or("val_images", d.val_images)?,
            toy_videos: kv.get_or("toy_videos", d.toy_videos)?,
            video_size: kv.get_or("video_size", d.video_size)?,
            video_frames: kv.get_or("video_frames", d.video_frames)?,
            frame_dt_us: kv.get_or("frame_dt_us", d.frame_dt_us)?,
            val_videos: kv.get_or("val_videos", d.val_videos)?,
            val_every: kv.get_or("val_every", d.val_every)?,
            codec_iterations: kv.get_or("codec_iterations", d.codec_iterations)?,
            codec_lr: kv.get_or("codec_lr", d.codec_lr)?,
            codec_kl: kv.get_or("codec_kl", d.codec_kl)?,
            ranges: RecipeRanges::from_key_values(&sub("degrade."))?,
            sim: SimConfig::from_key_values(&sub("sim."))?,
            online: OnlineDegradation {
                merge_window: kv.get_or("online.merge_window_us", d.online.merge_window)?,
                drop_prob: kv.get_or("online.drop_prob", d.online.drop_prob)?,
                rects: RectRanges {
                    min_count: kv.get_or("online.rect_min", d.online.rects.min_count)?,
                    max_count: kv.get_or("online.rect_max", d.online.rects.max_count)?,
                    max_frac: kv.get_or("online.rect_max_frac", d.online.rects.max_frac)?,
                },
            },
            model: ModelConfig::from_key_values(&sub("model."))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn optimizer(&self, lr: f64) -> AdamW {
        AdamW::new(lr, self.beta1, self.beta2, self.eps, self.weight_decay)
    }
}

/// Half-cosine decay from `base` at step 1 to a tenth of it at `total`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    let frac = if total > 1 { (step.saturating_sub(1)) as f64 / (total - 1) as f64 } else { 0.0 };
    base * (0.1 + 0.45 * (1.0 + (std::f64::consts::PI * frac.min(1.0)).cos()))
}

pub fn checkpoint_path(out_dir: &Path, stage: u8) -> PathBuf {
    out_dir.join(format!("stage{stage}.evdw"))
}

pub fn metrics_path(out_dir: &Path, stage: u8) -> PathBuf {
    out_dir.join(format!("stage{stage}_metrics.csv"))
}

/// Parameter prefixes updated by each stage.
pub fn trainable_prefixes(stage: u8) -> Vec<String> {
    let p: &[&str] = match stage {
        1 => &[SURROGATE_ENCODER, DENOISER],
        2 => &[EVENT_ENCODER],
        _ => &[EVENT_ENCODER, DENOISER, DECODER],
    };
    p.iter().map(|s| format!("{s}.")).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Validation {
    /// Mean squared latent error against the stage's latent target.
    pub latent: f64,
    pub mse: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub phase: &'static str,
    pub iteration: usize,
    pub terms: LossTerms,
    pub val: Option<Validation>,
}

pub const METRICS_HEADER: &str = "phase,iteration,loss,latent,perceptual,kl,flow,val_latent,val_mse,val_ssim";

impl MetricsRow {
    fn csv(&self) -> String {
        let t = &self.terms;
        let mut s = format!(
            "{},{},{:e},{:e},{:e},{:e},{:e}",
            self.phase, self.iteration, t.total, t.latent, t.perceptual, t.kl, t.flow
        );
        match self.val {
            Some(v) => {
                let _ = write!(s, ",{:e},{:e},{:e}", v.latent, v.mse, v.ssim);
            }
            None => s.push_str(",,,"),
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub rows: Vec<MetricsRow>,
    /// Validation before the first update of this stage.
    pub initial: Validation,
    pub last: Validation,
    pub model: Model,
}

fn finish_step(
    tape: &Tape,
    graph: StageGraph,
    model: &mut Model,
    opt: &mut AdamW,
    grad_clip: f64,
) -> Result<LossTerms> {
    if !graph.terms.is_finite() {
        return Err(Error::NonFinite(format!("loss terms {:?}", graph.terms)));
    }
    let mut grads = tape.backward(graph.loss)?.params(tape);
    if grad_clip > 0.0 {
        clip_grad_norm(&mut grads, grad_clip);
    }
    opt.step(&mut model.params, &grads)?;
    Ok(graph.terms)
}

/// One update of both codec halves on clean images.
pub fn codec_step(model: &mut Model, opt: &mut AdamW, images: &[Tensor], kl_weight: f64, grad_clip: f64) -> Result<LossTerms> {
    let mut tape = Tape::with_trainable(&[format!("{ENCODER}."), format!("{DECODER}.")]);
    let g = codec_loss(&mut tape, model, images, kl_weight)?;
    finish_step(&tape, g, model, opt, grad_clip)
}

/// One update of the surrogate encoder and denoiser on `(LQ, HQ)` pairs.
pub fn stage1_step(
    model: &mut Model,
    opt: &mut AdamW,
    proxy: &PerceptualProxy,
    batch: &[(Tensor, Tensor)],
    w: Stage1Weights,
    grad_clip: f64,
) -> Result<LossTerms> {
    let mut tape = Tape::with_trainable(&trainable_prefixes(1));
    let g = stage1_loss(&mut tape, model, proxy, batch, w)?;
    finish_step(&tape, g, model, opt, grad_clip)
}

/// One update of the event encoder toward frozen teacher latents.
pub fn stage2_step(
    model: &mut Model,
    opt: &mut AdamW,
    voxels: &[Tensor],
    targets: &[Tensor],
    kl_weight: f64,
    latent_weight: f64,
    initial: Option<&EncoderState>,
    grad_clip: f64,
) -> Result<LossTerms> {
    let mut tape = Tape::with_trainable(&trainable_prefixes(2));
    let g = stage2_loss(&mut tape, model, voxels, targets, kl_weight, latent_weight, initial)?;
    finish_step(&tape, g, model, opt, grad_clip)
}

/// One joint update of event encoder, denoiser and decoder.
pub fn stage3_step(
    model: &mut Model,
    opt: &mut AdamW,
    proxy: &PerceptualProxy,
    voxels: &[Tensor],
    frames: &[Tensor],
    w: Stage3Weights,
    initial: Option<&EncoderState>,
    grad_clip: f64,
) -> Result<LossTerms> {
    let mut tape = Tape::with_trainable(&trainable_prefixes(3));
    let g = stage3_loss(&mut tape, model, proxy, voxels, frames, w, initial)?;
    finish_step(&tape, g, model, opt, grad_clip)
}

/// Windows `[t_{k-1} + 1, t_k + 1)` for `k = 1..n`, each spanning one frame interval.
pub fn frame_windows(stream: &EventStream, timestamps: &[u64]) -> Vec<(EventStream, u64, u64)> {
    timestamps
        .windows(2)
        .map(|p| (stream.window(p[0] + 1, p[1] - p[0]), p[0], p[1]))
        .collect()
}

/// Direct event integration from a mid-gray start, at every frame time after the first.
pub fn integrate_baseline(stream: &EventStream, timestamps: &[u64], sim: &SimConfig) -> Result<Vec<Image>> {
    let init = Image::filled(stream.height() as usize, stream.width() as usize, 1, (0.5 + sim.log_eps).ln());
    Ok(integrate_events(stream, sim.c_pos, sim.c_neg, &init, &timestamps[1..])?
        .into_iter()
        .map(|f| f.map(|v| v - sim.log_eps).clamp01())
        .collect())
}

/// A video with its simulated events.
#[derive(Clone, Debug)]
pub struct VideoSample {
    pub frames: FrameSequence,
    pub events: EventStream,
}

impl VideoSample {
    /// Ground truth for each window: frames `1..n`.
    pub fn targets(&self) -> &[Image] {
        &self.frames.frames()[1..]
    }

    pub fn windows(&self) -> Vec<(EventStream, u64, u64)> {
        frame_windows(&self.events, self.frames.timestamps())
    }
}

/// Loads or synthesises the stage-2/3 videos and simulates their events.
pub fn prepare_videos(cfg: &TrainingConfig) -> Result<Vec<VideoSample>> {
    let seqs: Vec<FrameSequence> = if cfg.videos.is_empty() {
        (0..cfg.toy_videos as u64)
            .map(|i| toy_video(cfg.seed, i, cfg.video_size, cfg.video_frames, cfg.frame_dt_us))
            .collect()
    } else {
        cfg.videos.iter().map(read_manifest).collect::<Result<_>>()?
    };
    if seqs.len() <= cfg.val_videos {
        return Err(Error::invalid(format!(
            "{} videos leave none for training after holding out {}",
            seqs.len(),
            cfg.val_videos
        )));
    }
    seqs.into_iter()
        .enumerate()
        .map(|(i, frames)| {
            if frames.height() % 4 != 0 || frames.width() % 4 != 0 {
                return Err(Error::invalid("video frame size must be a multiple of 4"));
            }
            if frames.len() < cfg.seq_len + 1 {
                return Err(Error::invalid(format!("video {i} has fewer than seq_len + 1 frames")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x51_u64);
            rng.set_stream(i as u64);
            let events = simulate(&frames, &cfg.sim, &mut rng)?;
            Ok(VideoSample { frames, events })
        })
        .collect()
}

/// Loads or synthesises `(LQ, HQ)` pairs at `image_size`.
pub fn prepare_pairs(cfg: &TrainingConfig) -> Result<Vec<(Image, Image)>> {
    let pairs = match &cfg.corpus {
        Some(m) => read_corpus(m)?,
        None => (0..cfg.toy_images as u64)
            .map(|i| {
                let mut hq = toy_image(cfg.seed, i, cfg.image_size);
                if !cfg.toy_color {
                    hq = hq.to_gray().expand_channels(hq.channels());
                }
                let lq = apply_recipe(&hq, &cfg.ranges.sample(cfg.seed, i))?;
                Ok((lq, hq))
            })
            .collect::<Result<_>>()?,
    };
    if pairs.len() <= cfg.val_images {
        return Err(Error::invalid(format!(
            "{} pairs leave none for training after holding out {}",
            pairs.len(),
            cfg.val_images
        )));
    }
    Ok(pairs)
}

fn random_crop(rng: &mut impl Rng, pair: &(Image, Image), crop: usize, channels: usize) -> (Tensor, Tensor) {
    let (lq, hq) = pair;
    let (h, w) = (hq.height(), hq.width());
    let c = crop.min(h).min(w) & !3;
    let y = rng.random_range(0..=h - c);
    let x = rng.random_range(0..=w - c);
    (
        image_to_tensor(&lq.crop(y, x, c, c), channels),
        image_to_tensor(&hq.crop(y, x, c, c), channels),
    )
}

fn gray_mean_metrics(pred: &[Image], gt: &[Image]) -> Result<(f64, f64)> {
    let (mut m, mut s) = (0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        let (p, g) = (p.to_gray(), g.to_gray());
        m += mse(&p, &g)?;
        s += ssim(&p, &g)?;
    }
    let n = pred.len().max(1) as f64;
    Ok((m / n, s / n))
}

fn tensor_mse(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.numel().max(1) as f64
}

/// Restoration quality on held-out pairs: latent error of `ẑ(LQ)` against the
/// frozen encoder's `μ(HQ)` and gray MSE/SSIM of the decoded image.
pub fn validate_stage1(model: &Model, val: &[(Image, Image)]) -> Result<Validation> {
    let (mut lat, mut preds, mut gts) = (0.0, Vec::new(), Vec::new());
    for (lq, hq) in val {
        let z = model.denoise(&model.encode_mean(lq, SURROGATE_ENCODER)?)?;
        lat += tensor_mse(&z, &model.encode_mean(hq, ENCODER)?);
        preds.push(model.decode(&z)?);
        gts.push(hq.clone());
    }
    let (m, s) = gray_mean_metrics(&preds, &gts)?;
    Ok(Validation {
        latent: lat / val.len().max(1) as f64,
        mse: m,
        ssim: s,
    })
}

/// Mean latents of the recurrent encoder over every window of a clean stream.
pub fn encoder_means(model: &Model, video: &VideoSample) -> Result<Vec<Tensor>> {
    let mut state = model.encoder.zero_state(video.frames.height(), video.frames.width());
    let mut out = Vec::new();
    for (events, t0, t1) in video.windows() {
        let grid = to_voxel_grid(&events, t0, t1, model.config.time_bins).normalized(model.config.voxel_norm);
        let (mean, _, next) = model.encoder.step_tensor(&model.params, &grid.to_tensor(), &state)?;
        state = next;
        out.push(mean);
    }
    Ok(out)
}

/// Teacher latents: the surrogate encoder's mean of integrated-event coarse frames.
pub fn teacher_latents(model: &Model, video: &VideoSample, sim: &SimConfig) -> Result<Vec<Tensor>> {
    integrate_baseline(&video.events, video.frames.timestamps(), sim)?
        .iter()
        .map(|f| model.encode_mean(f, SURROGATE_ENCODER))
        .collect()
}

fn validate_video_stage(model: &Model, val: &[VideoSample], targets: &[Vec<Tensor>]) -> Result<Validation> {
    let (mut lat, mut m, mut s) = (0.0, 0.0, 0.0);
    for (video, tgt) in val.iter().zip(targets) {
        let means = encoder_means(model, video)?;
        lat += means.iter().zip(tgt).map(|(a, b)| tensor_mse(a, b)).sum::<f64>() / means.len() as f64;
        let frames = model.reconstruct_windows(&video.windows())?;
        let (fm, fs) = gray_mean_metrics(&frames, video.targets())?;
        m += fm;
        s += fs;
    }
    let n = val.len().max(1) as f64;
    Ok(Validation {
        latent: lat / n,
        mse: m / n,
        ssim: s / n,
    })
}

fn voxel_tensors(model: &Model, windows: &[(EventStream, u64, u64)]) -> Vec<Tensor> {
    windows
        .iter()
        .map(|(e, t0, t1)| {
            to_voxel_grid(e, *t0, *t1, model.config.time_bins)
                .normalized(model.config.voxel_norm)
                .to_tensor()
        })
        .collect()
}

fn load_prerequisite(cfg: &TrainingConfig) -> Result<Model> {
    let path = cfg
        .init_checkpoint
        .clone()
        .unwrap_or_else(|| checkpoint_path(&cfg.out_dir, cfg.stage - 1));
    if !path.exists() {
        return Err(Error::MissingCheckpoint {
            stage: cfg.stage - 1,
            path,
        });
    }
    Model::load(&path)
}

struct Log {
    rows: Vec<MetricsRow>,
}

impl Log {
    fn push(&mut self, phase: &'static str, iteration: usize, terms: LossTerms, val: Option<Validation>) {
        if let Some(v) = val {
            log::info!(
                "{phase} {iteration}: loss {:.5} val latent {:.5} mse {:.5} ssim {:.4}",
                terms.total,
                v.latent,
                v.mse,
                v.ssim
            );
        }
        self.rows.push(MetricsRow {
            phase,
            iteration,
            terms,
            val,
        });
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::from(METRICS_HEADER);
        text.push('\n');
        for r in &self.rows {
            text.push_str(&r.csv());
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn dump_diagnostics(cfg: &TrainingConfig, model: &Model, log: &Log, err: &Error) {
    let path = cfg.out_dir.join(format!("stage{}_diagnostics.txt", cfg.stage));
    let mut s = format!("error: {err}\n");
    if let Some(r) = log.rows.last() {
        let _ = writeln!(s, "last logged row: {}", r.csv());
    }
    for (name, t) in model.params.iter() {
        let _ = writeln!(s, "{name} norm² {:e} finite {}", t.sq_norm(), t.is_finite());
    }
    let _ = log.write(&metrics_path(&cfg.out_dir, cfg.stage));
    if let Err(e) = std::fs::write(&path, s) {
        log::error!("could not write {}: {e}", path.display());
    }
}

/// Runs one stage end to end: prerequisites, data, periodic validation,
/// checkpoint `stage{n}.evdw` (+ `.cfg`) and `stage{n}_metrics.csv` in `out_dir`.
pub fn run_stage(cfg: &TrainingConfig) -> Result<StageOutcome> {
    cfg.validate()?;
    let mut model = if cfg.stage == 1 {
        Model::new(cfg.model.clone())?
    } else {
        load_prerequisite(cfg)?
    };
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut log = Log { rows: Vec::new() };
    let result = match cfg.stage {
        1 => train_stage1(cfg, &mut model, &mut log),
        _ => train_video_stage(cfg, &mut model, &mut log),
    };
    let (initial, last) = match result {
        Ok(v) => v,
        Err(e) => {
            dump_diagnostics(cfg, &model, &log, &e);
            return Err(e);
        }
    };
    let checkpoint = checkpoint_path(&cfg.out_dir, cfg.stage);
    model.save(&checkpoint)?;
    let metrics = metrics_path(&cfg.out_dir, cfg.stage);
    log.write(&metrics)?;
    Ok(StageOutcome {
        checkpoint,
        metrics,
        rows: log.rows,
        initial,
        last,
        model,
    })
}

fn train_stage1(cfg: &TrainingConfig, model: &mut Model, log: &mut Log) -> Result<(Validation, Validation)> {
    let pairs = prepare_pairs(cfg)?;
    let (train, val) = pairs.split_at(pairs.len() - cfg.val_images);
    let ch = model.config.image_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut opt = cfg.optimizer(cfg.codec_lr);
    for it in 0..cfg.codec_iterations {
        let batch: Vec<Tensor> = (0..cfg.batch_size)
            .map(|_| {
                let pair = &train[rng.random_range(0..train.len())];
                random_crop(&mut rng, pair, cfg.crop, ch).1
            })
            .collect();
        opt.lr = cosine_lr(cfg.codec_lr, it + 1, cfg.codec_iterations);
        let terms = codec_step(model, &mut opt, &batch, cfg.codec_kl, cfg.grad_clip)?;
        log.push("codec", it, terms, None);
    }
    model
        .params
        .copy_prefix(&format!("{ENCODER}."), &format!("{SURROGATE_ENCODER}."));

    let proxy = PerceptualProxy::new(crate::training::PROXY_SEED, ch, 8);
    let w = Stage1Weights {
        latent: cfg.lambda1,
        perceptual: cfg.lambda2,
    };
    let initial = validate_stage1(model, val)?;
    log.push("stage1", 0, LossTerms::default(), Some(initial));
    let mut last = initial;
    let mut opt = cfg.optimizer(cfg.lr);
    for it in 1..=cfg.iterations {
        let batch: Vec<(Tensor, Tensor)> = (0..cfg.batch_size)
            .map(|_| {
                let pair = &train[rng.random_range(0..train.len())];
                random_crop(&mut rng, pair, cfg.crop, ch)
            })
            .collect();
        opt.lr = cosine_lr(cfg.lr, it, cfg.iterations);
        let terms = stage1_step(model, &mut opt, &proxy, &batch, w, cfg.grad_clip)?;
        let val = if it % cfg.val_every == 0 || it == cfg.iterations {
            last = validate_stage1(model, val)?;
            Some(last)
        } else {
            None
        };
        log.push("stage1", it, terms, val);
    }
    Ok((initial, last))
}

fn train_video_stage(cfg: &TrainingConfig, model: &mut Model, log: &mut Log) -> Result<(Validation, Validation)> {
    let videos = prepare_videos(cfg)?;
    let (train, val) = videos.split_at(videos.len() - cfg.val_videos);
    let ch = model.config.image_channels;
    // stage 2 distils toward the surrogate teacher, stage 3 toward the clean image encoder
    let latent_targets = |model: &Model, v: &VideoSample| -> Result<Vec<Tensor>> {
        if cfg.stage == 2 {
            teacher_latents(model, v, &cfg.sim)
        } else {
            v.targets().iter().map(|f| model.encode_mean(f, ENCODER)).collect()
        }
    };
    let train_targets: Vec<Vec<Tensor>> = train.iter().map(|v| latent_targets(model, v)).collect::<Result<_>>()?;
    let val_targets: Vec<Vec<Tensor>> = val.iter().map(|v| latent_targets(model, v)).collect::<Result<_>>()?;
    let phase = if cfg.stage == 2 { "stage2" } else { "stage3" };
    let proxy = PerceptualProxy::new(crate::training::PROXY_SEED, ch, 8);
    let w3 = Stage3Weights {
        perceptual: cfg.lambda1,
        flow: cfg.lambda2,
        latent: cfg.lambda3,
    };

    let initial = validate_video_stage(model, val, &val_targets)?;
    log.push(phase, 0, LossTerms::default(), Some(initial));
    let mut last = initial;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ u64::from(cfg.stage));
    let mut opt = cfg.optimizer(cfg.lr);
    for it in 1..=cfg.iterations {
        opt.lr = cosine_lr(cfg.lr, it, cfg.iterations);
        let vi = rng.random_range(0..train.len());
        let video = &train[vi];
        let n = video.frames.len() - 1;
        let start = rng.random_range(0..=n - cfg.seq_len);
        let events = cfg.online.apply(&video.events, &mut rng);
        let windows = frame_windows(&events, &video.frames.timestamps()[..=start + cfg.seq_len]);
        let mut voxels = voxel_tensors(model, &windows);
        // windows before the trained span only warm up the recurrent state
        let mut state = model.encoder.zero_state(voxels[0].shape()[0], voxels[0].shape()[1]);
        for v in voxels.drain(..start) {
            state = model.encoder.step_tensor(&model.params, &v, &state)?.2;
        }
        let terms = if cfg.stage == 2 {
            let targets = &train_targets[vi][start..start + cfg.seq_len];
            stage2_step(model, &mut opt, &voxels, targets, cfg.lambda1, cfg.lambda2, Some(&state), cfg.grad_clip)?
        } else {
            let frames: Vec<Tensor> = video.targets()[start..start + cfg.seq_len]
                .iter()
                .map(|f| image_to_tensor(f, ch))
                .collect();
            stage3_step(model, &mut opt, &proxy, &voxels, &frames, w3, Some(&state), cfg.grad_clip)?
        };
        let v = if it % cfg.val_every == 0 || it == cfg.iterations {
            last = validate_video_stage(model, val, &val_targets)?;
            Some(last)
        } else {
            None
        };
        log.push(phase, it, terms, v);
    }
    Ok((initial, last))
}
