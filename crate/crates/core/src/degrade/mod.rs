//! Synthesis of low-quality surrogate images from clean ones.
//!
//! A [`DegradationRecipe`] converts to gray and then applies five factor
//! families in a seeded order: dark blotches in smooth regions, edge
//! softening/displacement, Gaussian noise, motion blur and a down/up resize.
//! Everything is a pure function of `(image, recipe)`.

mod blotch;
mod edges;
pub mod filters;

pub use blotch::{low_detail_mask, synth_blotches, BlotchParams, RegionMask, ValueNoise};
pub use edges::degrade_edges;
pub use filters::{add_gaussian_noise, motion_blur, resize_cycle};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::image::Image;

/// Luma gray conversion of an RGB (or already gray) image.
pub fn to_grayscale(image: &Image) -> Image {
    image.to_gray()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Factor {
    Blotch,
    Edge,
    Noise,
    MotionBlur,
    Resize,
}

impl Factor {
    pub const ALL: [Factor; 5] = [
        Factor::Blotch,
        Factor::Edge,
        Factor::Noise,
        Factor::MotionBlur,
        Factor::Resize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Factor::Blotch => "blotch",
            Factor::Edge => "edge",
            Factor::Noise => "noise",
            Factor::MotionBlur => "motion_blur",
            Factor::Resize => "resize",
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Factor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Factor::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown degradation factor {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradationRecipe {
    pub seed: u64,
    pub order: [Factor; 5],
    pub mask_percentile: f64,
    pub mask_window: usize,
    pub blotch: BlotchParams,
    pub edge_blur_sigma: f64,
    pub edge_break_prob: f64,
    pub edge_max_shift: f64,
    pub noise_sigma: f64,
    pub motion_length: usize,
    pub motion_angle: f64,
    /// Down/up resize factor in `(0, 1]`; `1` disables the factor.
    pub resize_scale: f64,
}

impl Default for DegradationRecipe {
    fn default() -> Self {
        DegradationRecipe {
            seed: 0,
            order: Factor::ALL,
            mask_percentile: 40.0,
            mask_window: 5,
            blotch: BlotchParams::default(),
            edge_blur_sigma: 1.0,
            edge_break_prob: 0.3,
            edge_max_shift: 1.5,
            noise_sigma: 0.03,
            motion_length: 3,
            motion_angle: 0.0,
            resize_scale: 0.5,
        }
    }
}

impl DegradationRecipe {
    /// Every factor at its no-op setting.
    pub fn identity(seed: u64) -> Self {
        DegradationRecipe {
            seed,
            blotch: BlotchParams::disabled(),
            edge_blur_sigma: 0.0,
            edge_break_prob: 0.0,
            noise_sigma: 0.0,
            motion_length: 1,
            resize_scale: 1.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; 5];
        for f in self.order {
            let i = Factor::ALL.iter().position(|g| *g == f).unwrap();
            if seen[i] {
                return Err(Error::invalid(format!("factor {f} repeated in order")));
            }
            seen[i] = true;
        }
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(self.edge_break_prob) {
            return Err(Error::invalid("edge_break_prob must be in [0, 1]"));
        }
        if !(self.resize_scale > 0.0 && self.resize_scale <= 1.0) {
            return Err(Error::invalid("resize_scale must be in (0, 1]"));
        }
        if !(self.mask_percentile > 0.0 && self.mask_percentile < 100.0) {
            return Err(Error::invalid("mask_percentile must be in (0, 100)"));
        }
        if self.noise_sigma < 0.0 || self.edge_blur_sigma < 0.0 || self.motion_length == 0 {
            return Err(Error::invalid("negative sigma or zero motion length"));
        }
        let b = &self.blotch;
        if b.count_min > b.count_max || b.radius_min <= 0.0 || b.radius_min > b.radius_max {
            return Err(Error::invalid("bad blotch count or radius range"));
        }
        if !(prob_ok(b.darkness_min) && prob_ok(b.darkness_max) && b.darkness_min <= b.darkness_max) {
            return Err(Error::invalid("blotch darkness must be an ordered range in [0, 1]"));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("seed", self.seed);
        kv.set(
            "order",
            self.order.iter().map(|f| f.name()).collect::<Vec<_>>().join(","),
        );
        kv.set("mask_percentile", self.mask_percentile);
        kv.set("mask_window", self.mask_window);
        kv.set("blotch_count_min", self.blotch.count_min);
        kv.set("blotch_count_max", self.blotch.count_max);
        kv.set("blotch_radius_min", self.blotch.radius_min);
        kv.set("blotch_radius_max", self.blotch.radius_max);
        kv.set("blotch_darkness_min", self.blotch.darkness_min);
        kv.set("blotch_darkness_max", self.blotch.darkness_max);
        kv.set("blotch_softness", self.blotch.softness);
        kv.set("blotch_octaves", self.blotch.octaves);
        kv.set("blotch_noise_scale", self.blotch.noise_scale);
        kv.set("edge_blur_sigma", self.edge_blur_sigma);
        kv.set("edge_break_prob", self.edge_break_prob);
        kv.set("edge_max_shift", self.edge_max_shift);
        kv.set("noise_sigma", self.noise_sigma);
        kv.set("motion_length", self.motion_length);
        kv.set("motion_angle", self.motion_angle);
        kv.set("resize_scale", self.resize_scale);
        kv
    }

    /// Missing keys fall back to [`DegradationRecipe::default`].
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let d = DegradationRecipe::default();
        let order = match kv.raw("order") {
            None => d.order,
            Some(s) => {
                let v = s.split(',').map(|t| t.trim().parse()).collect::<Result<Vec<Factor>>>()?;
                <[Factor; 5]>::try_from(v).map_err(|_| Error::invalid("order must list all five factors"))?
            }
        };
        let b = &d.blotch;
        let r = DegradationRecipe {
            seed: kv.get_or("seed", d.seed)?,
            order,
            mask_percentile: kv.get_or("mask_percentile", d.mask_percentile)?,
            mask_window: kv.get_or("mask_window", d.mask_window)?,
            blotch: BlotchParams {
                count_min: kv.get_or("blotch_count_min", b.count_min)?,
                count_max: kv.get_or("blotch_count_max", b.count_max)?,
                radius_min: kv.get_or("blotch_radius_min", b.radius_min)?,
                radius_max: kv.get_or("blotch_radius_max", b.radius_max)?,
                darkness_min: kv.get_or("blotch_darkness_min", b.darkness_min)?,
                darkness_max: kv.get_or("blotch_darkness_max", b.darkness_max)?,
                softness: kv.get_or("blotch_softness", b.softness)?,
                octaves: kv.get_or("blotch_octaves", b.octaves)?,
                noise_scale: kv.get_or("blotch_noise_scale", b.noise_scale)?,
            },
            edge_blur_sigma: kv.get_or("edge_blur_sigma", d.edge_blur_sigma)?,
            edge_break_prob: kv.get_or("edge_break_prob", d.edge_break_prob)?,
            edge_max_shift: kv.get_or("edge_max_shift", d.edge_max_shift)?,
            noise_sigma: kv.get_or("noise_sigma", d.noise_sigma)?,
            motion_length: kv.get_or("motion_length", d.motion_length)?,
            motion_angle: kv.get_or("motion_angle", d.motion_angle)?,
            resize_scale: kv.get_or("resize_scale", d.resize_scale)?,
        };
        r.validate()?;
        Ok(r)
    }
}

/// Gray conversion followed by every factor in `recipe.order`; all randomness
/// comes from one ChaCha stream seeded with `recipe.seed`.
pub fn apply_recipe(image: &Image, recipe: &DegradationRecipe) -> Result<Image> {
    recipe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let mut img = to_grayscale(image).clamp01();
    for factor in recipe.order {
        img = match factor {
            Factor::Blotch => {
                let mask = low_detail_mask(&img, recipe.mask_window, recipe.mask_percentile);
                synth_blotches(&img, &mask, &mut rng, &recipe.blotch)
            }
            Factor::Edge => degrade_edges(
                &img,
                &mut rng,
                recipe.edge_blur_sigma,
                recipe.edge_break_prob,
                recipe.edge_max_shift,
            ),
            Factor::Noise => add_gaussian_noise(&img, &mut rng, recipe.noise_sigma),
            Factor::MotionBlur => motion_blur(&img, recipe.motion_length, recipe.motion_angle),
            Factor::Resize => resize_cycle(&img, recipe.resize_scale),
        };
    }
    Ok(img.clamp01())
}
