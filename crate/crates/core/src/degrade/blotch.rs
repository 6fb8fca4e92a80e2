//! Low-detail region detection and dark blotch synthesis.

use rand::Rng;

use super::filters::{gradient_magnitude, local_variance, percentile};
use crate::image::Image;

/// Per-pixel flags marking low-detail (smooth) regions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMask {
    height: usize,
    width: usize,
    mask: Vec<bool>,
}

impl RegionMask {
    pub fn all(height: usize, width: usize, value: bool) -> Self {
        RegionMask {
            height,
            width,
            mask: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.mask[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.mask.len().max(1) as f64
    }

    fn marked(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (y, x)))
            .filter(|&(y, x)| self.get(y, x))
            .collect()
    }
}

/// Marks pixels whose local variance and gradient magnitude are both at or
/// below their `percentile`-th value over the image.
pub fn low_detail_mask(gray: &Image, var_window: usize, percentile_pct: f64) -> RegionMask {
    let var = local_variance(gray, var_window.max(3) | 1);
    let grad = gradient_magnitude(gray);
    let tv = percentile(var.data(), percentile_pct);
    let tg = percentile(grad.data(), percentile_pct);
    let mask = var
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| v <= tv && g <= tg)
        .collect();
    RegionMask {
        height: gray.height(),
        width: gray.width(),
        mask,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlotchParams {
    pub count_min: usize,
    pub count_max: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Peak fractional darkening in `[0, 1]`.
    pub darkness_min: f64,
    pub darkness_max: f64,
    /// Edge feather as a fraction of the radius.
    pub softness: f64,
    /// Value-noise octaves modulating each patch.
    pub octaves: usize,
    /// Lattice spacing of the coarsest octave, in pixels.
    pub noise_scale: f64,
}

impl Default for BlotchParams {
    fn default() -> Self {
        BlotchParams {
            count_min: 2,
            count_max: 6,
            radius_min: 3.0,
            radius_max: 10.0,
            darkness_min: 0.25,
            darkness_max: 0.6,
            softness: 0.5,
            octaves: 3,
            noise_scale: 16.0,
        }
    }
}

impl BlotchParams {
    pub fn disabled() -> Self {
        BlotchParams {
            count_min: 0,
            count_max: 0,
            ..Default::default()
        }
    }
}

/// Multi-octave value noise in `[0, 1]`.
pub struct ValueNoise {
    octaves: Vec<(f64, usize, Vec<f64>)>,
}

impl ValueNoise {
    pub fn new(rng: &mut impl Rng, height: usize, width: usize, octaves: usize, base_scale: f64) -> Self {
        let octaves = (0..octaves.max(1))
            .map(|o| {
                let scale = (base_scale / (1 << o) as f64).max(1.0);
                let gw = (width as f64 / scale).ceil() as usize + 2;
                let gh = (height as f64 / scale).ceil() as usize + 2;
                let lattice = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
                (scale, gw, lattice)
            })
            .collect();
        ValueNoise { octaves }
    }

    pub fn at(&self, y: f64, x: f64) -> f64 {
        let (mut acc, mut norm, mut amp) = (0.0, 0.0, 1.0);
        for (scale, gw, lattice) in &self.octaves {
            let (fy, fx) = (y / scale, x / scale);
            let (iy, ix) = (fy.floor() as usize, fx.floor() as usize);
            let (ty, tx) = (smooth(fy - iy as f64), smooth(fx - ix as f64));
            let l = |r: usize, c: usize| lattice[r * gw + c];
            let top = l(iy, ix) * (1.0 - tx) + l(iy, ix + 1) * tx;
            let bot = l(iy + 1, ix) * (1.0 - tx) + l(iy + 1, ix + 1) * tx;
            acc += amp * (top * (1.0 - ty) + bot * ty);
            norm += amp;
            amp *= 0.5;
        }
        acc / norm
    }
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

struct Patch {
    cy: f64,
    cx: f64,
    radius: f64,
    // ellipse: semi-axes and rotation
    a: f64,
    b: f64,
    rot: (f64, f64),
    // convex polygon vertices relative to the centre
    poly: Vec<(f64, f64)>,
    blend: f64,
    darkness: f64,
    softness: f64,
}

impl Patch {
    fn sample(rng: &mut impl Rng, cy: f64, cx: f64, p: &BlotchParams) -> Self {
        let radius = rng.random_range(p.radius_min..=p.radius_max.max(p.radius_min));
        let a = radius * rng.random_range(0.6..=1.0);
        let b = radius * rng.random_range(0.4..=1.0);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        // points on a circle in angular order form a convex polygon, and an
        // anisotropic scale plus rotation keeps it convex. Jittered even
        // spacing keeps every angular gap below pi so the centre stays inside.
        let k = rng.random_range(5..=8);
        let step = std::f64::consts::TAU / k as f64;
        let offset = rng.random_range(0.0..step);
        let angles: Vec<f64> = (0..k)
            .map(|i| offset + (i as f64 + rng.random_range(-0.3..0.3)) * step)
            .collect();
        let (sx, sy) = (rng.random_range(0.6..=1.0), rng.random_range(0.6..=1.0));
        let phi = rng.random_range(0.0..std::f64::consts::PI);
        let (ps, pc) = phi.sin_cos();
        let poly = angles
            .iter()
            .map(|t| {
                let (u, v) = (radius * sx * t.cos(), radius * sy * t.sin());
                (u * ps + v * pc, u * pc - v * ps)
            })
            .collect();
        Patch {
            cy,
            cx,
            radius,
            a,
            b,
            rot: theta.sin_cos(),
            poly,
            blend: rng.random_range(0.0..=1.0),
            darkness: rng.random_range(p.darkness_min..=p.darkness_max.max(p.darkness_min)),
            softness: p.softness.max(1e-3),
        }
    }

    fn ellipse_alpha(&self, dy: f64, dx: f64) -> f64 {
        let (s, c) = self.rot;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        let r = ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt();
        ((1.0 - r) / self.softness).clamp(0.0, 1.0)
    }

    fn polygon_alpha(&self, dy: f64, dx: f64) -> f64 {
        let n = self.poly.len();
        let mut inside = f64::INFINITY;
        let orient = signed_area(&self.poly).signum();
        for i in 0..n {
            let (y0, x0) = self.poly[i];
            let (y1, x1) = self.poly[(i + 1) % n];
            let (ey, ex) = (y1 - y0, x1 - x0);
            let len = ey.hypot(ex);
            if len == 0.0 {
                continue;
            }
            // signed distance to the edge line, positive inside
            let d = orient * (ex * (dy - y0) - ey * (dx - x0)) / len;
            inside = inside.min(d);
        }
        (inside / (self.softness * self.radius)).clamp(0.0, 1.0)
    }

    fn alpha(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let e = self.ellipse_alpha(dy, dx);
        let p = self.polygon_alpha(dy, dx);
        self.blend * e + (1.0 - self.blend) * p
    }
}

fn signed_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (y0, x0) = poly[i];
            let (y1, x1) = poly[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum::<f64>()
        / 2.0
}

/// Darkens soft, noise-modulated patches centred inside `mask`. Pixels outside
/// the mask are returned bit-for-bit unchanged.
pub fn synth_blotches(gray: &Image, mask: &RegionMask, rng: &mut impl Rng, params: &BlotchParams) -> Image {
    assert_eq!((mask.height(), mask.width()), (gray.height(), gray.width()), "mask shape");
    let candidates = mask.marked();
    if candidates.is_empty() || params.count_max == 0 {
        return gray.clone();
    }
    let n = rng.random_range(params.count_min..=params.count_max.max(params.count_min));
    if n == 0 {
        return gray.clone();
    }
    let noise = ValueNoise::new(rng, gray.height(), gray.width(), params.octaves, params.noise_scale);
    let mut out = gray.clone();
    for _ in 0..n {
        let (cy, cx) = candidates[rng.random_range(0..candidates.len())];
        let patch = Patch::sample(rng, cy as f64, cx as f64, params);
        let reach = patch.radius.ceil() as isize + 1;
        for y in (cy as isize - reach).max(0)..=(cy as isize + reach).min(gray.height() as isize - 1) {
            for x in (cx as isize - reach).max(0)..=(cx as isize + reach).min(gray.width() as isize - 1) {
                let (y, x) = (y as usize, x as usize);
                if !mask.get(y, x) {
                    continue;
                }
                let alpha = patch.alpha(y as f64, x as f64);
                if alpha <= 0.0 {
                    continue;
                }
                let modulation = 0.4 + 0.6 * noise.at(y as f64, x as f64);
                let v = out.px(y, x) * (1.0 - patch.darkness * alpha * modulation);
                out.set(y, x, 0, v.clamp(0.0, 1.0));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise_image(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| rng.random())
    }

    #[test]
    fn constant_image_fully_marked() {
        let m = low_detail_mask(&Image::filled(12, 10, 1, 0.4), 5, 30.0);
        assert_eq!(m.count(), 120);
    }

    #[test]
    fn white_noise_percentile_one() {
        for seed in 0..4 {
            let m = low_detail_mask(&noise_image(seed, 128, 128), 5, 1.0);
            let pct = 100.0 * m.fraction();
            assert!((pct - 1.0).abs() <= 1.0, "seed {seed}: {pct}%");
        }
    }

    #[test]
    fn half_flat_mask_stays_in_flat_half() {
        for seed in 0..4 {
            let noise = noise_image(seed, 64, 64);
            // flat part exceeds the percentile, so both thresholds are zero
            let img = Image::from_fn(64, 64, |y, x| if x < 40 { 0.5 } else { noise.px(y, x) });
            let m = low_detail_mask(&img, 3, 50.0);
            assert!(m.count() > 0);
            for y in 0..64 {
                for x in 40..64 {
                    assert!(!m.get(y, x), "seed {seed}: ({y}, {x}) marked");
                }
            }
        }
    }

    #[test]
    fn identity_cases() {
        let img = noise_image(1, 20, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty = RegionMask::all(20, 20, false);
        assert_eq!(synth_blotches(&img, &empty, &mut rng, &BlotchParams::default()), img);
        let full = RegionMask::all(20, 20, true);
        assert_eq!(synth_blotches(&img, &full, &mut rng, &BlotchParams::disabled()), img);
    }

    #[test]
    fn blotches_darken_only_masked_pixels() {
        for seed in 0..16 {
            let img = noise_image(seed, 48, 48).map(|v| 0.3 + 0.6 * v);
            let mut mask = RegionMask::all(48, 48, false);
            for y in 10..40 {
                for x in 5..30 {
                    mask.set(y, x, true);
                }
            }
            let a = synth_blotches(&img, &mask, &mut ChaCha8Rng::seed_from_u64(seed), &BlotchParams::default());
            let b = synth_blotches(&img, &mask, &mut ChaCha8Rng::seed_from_u64(seed), &BlotchParams::default());
            assert_eq!(a, b);
            let (mut before, mut after) = (0.0, 0.0);
            for y in 0..48 {
                for x in 0..48 {
                    if mask.get(y, x) {
                        before += img.px(y, x);
                        after += a.px(y, x);
                    } else {
                        assert_eq!(a.px(y, x).to_bits(), img.px(y, x).to_bits());
                    }
                }
            }
            assert!(after < before, "seed {seed}");
        }
    }

    #[test]
    fn value_noise_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = ValueNoise::new(&mut rng, 30, 40, 3, 8.0);
        for y in 0..30 {
            for x in 0..40 {
                let v = n.at(y as f64, x as f64);
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
