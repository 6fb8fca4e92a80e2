//! Loss terms and the per-stage loss graphs.
//!
//! The stage builders are pure functions of the model parameters and their
//! inputs, so gradient checks can rebuild them with perturbed parameters.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{image_to_tensor, os_diff_var, EncoderState, Model, ENCODER, SURROGATE_ENCODER};
use crate::numerics::{ParamStore, Tape, Tensor, Var};

/// Fixed random-feature image distance: a 3-scale conv pyramid with tanh
/// activations whose weights come from a seed and are never trained.
#[derive(Clone, Debug)]
pub struct PerceptualProxy {
    params: ParamStore,
    channels: usize,
}

pub const PROXY_SEED: u64 = 0x5eed_f00d;
const PROXY_SCALES: usize = 3;

impl PerceptualProxy {
    pub fn new(seed: u64, channels: usize, width: usize) -> Self {
        let mut params = ParamStore::new();
        let mut cin = channels;
        for s in 0..PROXY_SCALES {
            // fan-in scaled by 1/3 so features are not saturated
            params.init_uniform(seed, &format!("proxy.s{s}.w"), &[3, 3, cin, width], (3 * 3 * cin).div_ceil(3));
            cin = width;
        }
        PerceptualProxy { params, channels }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn features(&self, tape: &mut Tape, x: Var) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(PROXY_SCALES);
        let mut h = x;
        for s in 0..PROXY_SCALES {
            if s > 0 {
                h = tape.downsample2(h)?;
            }
            let w = tape.param(&self.params, &format!("proxy.s{s}.w"))?;
            let c = tape.conv2d(h, w)?;
            h = tape.tanh(c);
            out.push(h);
        }
        Ok(out)
    }

    /// Sum over scales of the mean squared feature difference.
    pub fn distance(&self, tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
        if tape.shape(a) != tape.shape(b) {
            return Err(Error::Shape {
                op: "perceptual proxy",
                lhs: tape.shape(a).to_vec(),
                rhs: tape.shape(b).to_vec(),
            });
        }
        let fa = self.features(tape, a)?;
        let fb = self.features(tape, b)?;
        let mut total = None;
        for (p, q) in fa.into_iter().zip(fb) {
            let d = tape.mse(p, q)?;
            total = Some(match total {
                None => d,
                Some(t) => tape.add(t, d)?,
            });
        }
        Ok(total.expect("at least one scale"))
    }
}

impl Default for PerceptualProxy {
    fn default() -> Self {
        PerceptualProxy::new(PROXY_SEED, 3, 8)
    }
}

/// [`PerceptualProxy::distance`] between two images with the default proxy.
pub fn perceptual_proxy(a: &Image, b: &Image) -> Result<f64> {
    let proxy = PerceptualProxy::default();
    let mut tape = Tape::new();
    let av = tape.constant(image_to_tensor(a, proxy.channels));
    let bv = tape.constant(image_to_tensor(b, proxy.channels));
    let d = proxy.distance(&mut tape, av, bv)?;
    Ok(tape.value(d).item())
}

/// Closed-form `KL(N(μ, e^logvar) ‖ N(0, 1))` summed over elements.
pub fn kl_closed_form(mean: &[f64], logvar: &[f64]) -> f64 {
    mean.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

/// Per-element mean of the KL to the standard normal, on the tape.
pub fn kl_mean(tape: &mut Tape, mean: Var, logvar: Var) -> Result<Var> {
    let m2 = tape.square(mean);
    let v = tape.exp(logvar);
    let a = tape.add(m2, v)?;
    let b = tape.sub(a, logvar)?;
    let b = tape.offset(b, -1.0);
    let s = tape.mean(b);
    Ok(tape.scale(s, 0.5))
}

/// `Σ_t mean |(P_t − P_{t−1}) − (G_t − G_{t−1})|` over consecutive frame pairs.
pub fn flow_loss(tape: &mut Tape, pred: &[Var], gt: &[Var]) -> Result<Var> {
    if pred.len() != gt.len() || pred.len() < 2 {
        return Err(Error::invalid("flow loss needs two or more paired frames"));
    }
    let mut total = None;
    for t in 1..pred.len() {
        let dp = tape.sub(pred[t], pred[t - 1])?;
        let dg = tape.sub(gt[t], gt[t - 1])?;
        let d = tape.sub(dp, dg)?;
        let a = tape.abs(d);
        let m = tape.mean(a);
        total = Some(match total {
            None => m,
            Some(s) => tape.add(s, m)?,
        });
    }
    Ok(total.expect("two or more frames"))
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let mut it = vars.iter();
    let mut acc = *it.next().ok_or_else(|| Error::invalid("empty sum"))?;
    for &v in it {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

/// Loss terms recorded per iteration; unused terms stay zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub latent: f64,
    pub perceptual: f64,
    pub kl: f64,
    pub flow: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        [self.total, self.latent, self.perceptual, self.kl, self.flow]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub struct StageGraph {
    pub loss: Var,
    pub terms: LossTerms,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage1Weights {
    pub latent: f64,
    pub perceptual: f64,
}

/// Codec autoencoding: `mse(D(μ(x)), x) + kl_weight · KL` averaged over the batch.
pub fn codec_loss(tape: &mut Tape, model: &Model, images: &[Tensor], kl_weight: f64) -> Result<StageGraph> {
    let mut parts = Vec::new();
    let (mut rec, mut kl) = (0.0, 0.0);
    for img in images {
        let x = tape.constant(img.clone());
        let (mu, lv) = model.codec.encode(tape, &model.params, ENCODER, x)?;
        let y = model.codec.decode(tape, &model.params, mu)?;
        let r = tape.mse(y, x)?;
        let k = kl_mean(tape, mu, lv)?;
        rec += tape.value(r).item();
        kl += tape.value(k).item();
        let k = tape.scale(k, kl_weight);
        parts.push(tape.add(r, k)?);
    }
    let n = images.len() as f64;
    let s = sum_vars(tape, &parts)?;
    let loss = tape.scale(s, 1.0 / n);
    Ok(StageGraph {
        loss,
        terms: LossTerms {
            total: tape.value(loss).item(),
            latent: rec / n,
            kl: kl / n,
            ..Default::default()
        },
    })
}

/// Degraded-to-clean latent restoration, averaged over the batch:
/// `w.latent · mse(ẑ(LQ), μ_frozen(HQ)) + w.perceptual · proxy(D(ẑ), HQ)`.
pub fn stage1_loss(
    tape: &mut Tape,
    model: &Model,
    proxy: &PerceptualProxy,
    batch: &[(Tensor, Tensor)],
    w: Stage1Weights,
) -> Result<StageGraph> {
    let mut parts = Vec::new();
    let (mut lat, mut per) = (0.0, 0.0);
    for (lq, hq) in batch {
        let lqv = tape.constant(lq.clone());
        let hqv = tape.constant(hq.clone());
        let (z, _) = model.codec.encode(tape, &model.params, SURROGATE_ENCODER, lqv)?;
        let z_pred = os_diff_var(tape, &model.params, &model.denoiser, &model.schedule, z)?;
        let (z_gt, _) = model.codec.encode(tape, &model.params, ENCODER, hqv)?;
        let l = tape.mse(z_pred, z_gt)?;
        lat += tape.value(l).item();
        let mut term = tape.scale(l, w.latent);
        if w.perceptual != 0.0 {
            let img = model.codec.decode(tape, &model.params, z_pred)?;
            let p = proxy.distance(tape, img, hqv)?;
            per += tape.value(p).item();
            let p = tape.scale(p, w.perceptual);
            term = tape.add(term, p)?;
        }
        parts.push(term);
    }
    let n = batch.len() as f64;
    let s = sum_vars(tape, &parts)?;
    let loss = tape.scale(s, 1.0 / n);
    Ok(StageGraph {
        loss,
        terms: LossTerms {
            total: tape.value(loss).item(),
            latent: lat / n,
            perceptual: per / n,
            ..Default::default()
        },
    })
}

/// Distillation over one sequence, averaged over frames:
/// `kl_weight · KL(N(μ, σ²) ‖ N(0, I)) + latent_weight · mse(μ, z_vae)`.
pub fn stage2_loss(
    tape: &mut Tape,
    model: &Model,
    voxels: &[Tensor],
    targets: &[Tensor],
    kl_weight: f64,
    latent_weight: f64,
    initial: Option<&EncoderState>,
) -> Result<StageGraph> {
    if voxels.len() < 2 || voxels.len() != targets.len() {
        return Err(Error::invalid("distillation needs a sequence of two or more frames with one target each"));
    }
    let vs: Vec<Var> = voxels.iter().map(|v| tape.constant(v.clone())).collect();
    let latents = model.encoder.encode_sequence(tape, &model.params, &vs, initial)?;
    let mut parts = Vec::new();
    let (mut lat, mut kl) = (0.0, 0.0);
    for ((mu, lv), target) in latents.into_iter().zip(targets) {
        let t = tape.constant(target.clone());
        let l = tape.mse(mu, t)?;
        let k = kl_mean(tape, mu, lv)?;
        lat += tape.value(l).item();
        kl += tape.value(k).item();
        let k = tape.scale(k, kl_weight);
        let l = tape.scale(l, latent_weight);
        parts.push(tape.add(l, k)?);
    }
    let n = voxels.len() as f64;
    let s = sum_vars(tape, &parts)?;
    let loss = tape.scale(s, 1.0 / n);
    Ok(StageGraph {
        loss,
        terms: LossTerms {
            total: tape.value(loss).item(),
            latent: lat / n,
            kl: kl / n,
            ..Default::default()
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage3Weights {
    pub perceptual: f64,
    pub flow: f64,
    pub latent: f64,
}

/// Joint fine-tuning over one sequence:
/// `w.perceptual · Σ_t proxy(Î_t, I_t) + w.flow · L_flow + w.latent · Σ_t mse(ẑ_t, μ_frozen(I_t))`.
pub fn stage3_loss(
    tape: &mut Tape,
    model: &Model,
    proxy: &PerceptualProxy,
    voxels: &[Tensor],
    frames: &[Tensor],
    w: Stage3Weights,
    initial: Option<&EncoderState>,
) -> Result<StageGraph> {
    if voxels.len() < 2 || voxels.len() != frames.len() {
        return Err(Error::invalid("joint training needs a sequence of two or more frames"));
    }
    let vs: Vec<Var> = voxels.iter().map(|v| tape.constant(v.clone())).collect();
    let latents = model.encoder.encode_sequence(tape, &model.params, &vs, initial)?;
    let (mut preds, mut gts, mut per_parts, mut lat_parts) = (vec![], vec![], vec![], vec![]);
    for ((mu, _), frame) in latents.into_iter().zip(frames) {
        let gt = tape.constant(frame.clone());
        let z_pred = os_diff_var(tape, &model.params, &model.denoiser, &model.schedule, mu)?;
        let img = model.codec.decode(tape, &model.params, z_pred)?;
        let (z_gt, _) = model.codec.encode(tape, &model.params, ENCODER, gt)?;
        lat_parts.push(tape.mse(z_pred, z_gt)?);
        per_parts.push(proxy.distance(tape, img, gt)?);
        preds.push(img);
        gts.push(gt);
    }
    let per = sum_vars(tape, &per_parts)?;
    let lat = sum_vars(tape, &lat_parts)?;
    let flow = flow_loss(tape, &preds, &gts)?;
    let terms = LossTerms {
        perceptual: tape.value(per).item(),
        flow: tape.value(flow).item(),
        latent: tape.value(lat).item(),
        ..Default::default()
    };
    let a = tape.scale(per, w.perceptual);
    let b = tape.scale(flow, w.flow);
    let c = tape.scale(lat, w.latent);
    let ab = tape.add(a, b)?;
    let loss = tape.add(ab, c)?;
    Ok(StageGraph {
        loss,
        terms: LossTerms {
            total: tape.value(loss).item(),
            ..terms
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::filters::gaussian_blur;
    use crate::training::toy::toy_image;

    #[test]
    fn proxy_identity_symmetry_blur() {
        for seed in 0..4 {
            let x = toy_image(seed, 0, 24);
            let y = toy_image(seed, 1, 24);
            assert_eq!(perceptual_proxy(&x, &x).unwrap(), 0.0);
            assert!((perceptual_proxy(&x, &y).unwrap() - perceptual_proxy(&y, &x).unwrap()).abs() < 1e-15);
            let g = x.to_gray();
            let blurred = gaussian_blur(&g, 1.5);
            assert!(perceptual_proxy(&blurred, &g).unwrap() > 0.0);
        }
        assert!(perceptual_proxy(&Image::new(4, 4, 3), &Image::new(4, 6, 3)).is_err());
    }

    #[test]
    fn kl_known_values() {
        assert_eq!(kl_closed_form(&[0.0], &[0.0]), 0.0);
        assert!((kl_closed_form(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
        let mut tape = Tape::new();
        let m = tape.constant(Tensor::new(&[2], vec![1.0, 0.0]).unwrap());
        let l = tape.constant(Tensor::zeros(&[2]));
        let k = kl_mean(&mut tape, m, l).unwrap();
        assert!((tape.value(k).item() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn flow_zero_on_static_perfect_video() {
        let mut tape = Tape::new();
        let f = tape.constant(Tensor::full(&[4, 4, 3], 0.3));
        let l = flow_loss(&mut tape, &[f, f, f], &[f, f, f]).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
        assert!(flow_loss(&mut tape, &[f], &[f]).is_err());
    }
}
