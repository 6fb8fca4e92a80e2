//! Procedural images and videos: smooth backgrounds with discs and bars.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;
use crate::simulator::FrameSequence;

fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Disc { cy: f64, cx: f64, r: f64 },
    Bar { cy: f64, cx: f64, half_len: f64, half_wid: f64, angle: f64 },
}

impl Shape {
    fn random(rng: &mut impl Rng, size: f64) -> Shape {
        let cy = rng.random_range(0.1..0.9) * size;
        let cx = rng.random_range(0.1..0.9) * size;
        if rng.random_bool(0.5) {
            Shape::Disc {
                cy,
                cx,
                r: rng.random_range(0.08..0.25) * size,
            }
        } else {
            Shape::Bar {
                cy,
                cx,
                half_len: rng.random_range(0.15..0.4) * size,
                half_wid: rng.random_range(0.03..0.1) * size,
                angle: rng.random_range(0.0..std::f64::consts::PI),
            }
        }
    }

    fn moved(self, dy: f64, dx: f64) -> Shape {
        match self {
            Shape::Disc { cy, cx, r } => Shape::Disc { cy: cy + dy, cx: cx + dx, r },
            Shape::Bar {
                cy,
                cx,
                half_len,
                half_wid,
                angle,
            } => Shape::Bar {
                cy: cy + dy,
                cx: cx + dx,
                half_len,
                half_wid,
                angle,
            },
        }
    }

    /// Anti-aliased coverage in `[0, 1]` at a pixel centre.
    fn coverage(&self, y: f64, x: f64) -> f64 {
        let d = match *self {
            Shape::Disc { cy, cx, r } => (y - cy).hypot(x - cx) - r,
            Shape::Bar {
                cy,
                cx,
                half_len,
                half_wid,
                angle,
            } => {
                let (s, c) = angle.sin_cos();
                let (u, v) = ((x - cx) * c + (y - cy) * s, -(x - cx) * s + (y - cy) * c);
                ((u.abs() - half_len).max(v.abs() - half_wid)).max(-1.0)
            }
        };
        (0.5 - d).clamp(0.0, 1.0)
    }
}

fn background(rng: &mut impl Rng, lo: f64, hi: f64) -> [f64; 4] {
    [(); 4].map(|_| rng.random_range(lo..hi))
}

fn bilerp(corners: &[f64; 4], v: f64, u: f64) -> f64 {
    let top = corners[0] * (1.0 - u) + corners[1] * u;
    let bot = corners[2] * (1.0 - u) + corners[3] * u;
    top * (1.0 - v) + bot * v
}

/// Color `size×size` image number `index` of the family seeded by `seed`.
pub fn toy_image(seed: u64, index: u64, size: usize) -> Image {
    let mut rng = item_rng(seed, index);
    let bg: Vec<[f64; 4]> = (0..3).map(|_| background(&mut rng, 0.1, 0.9)).collect();
    let n = rng.random_range(1..=4);
    let shapes: Vec<(Shape, [f64; 3])> = (0..n)
        .map(|_| {
            let s = Shape::random(&mut rng, size as f64);
            (s, [(); 3].map(|_| rng.random_range(0.0..1.0)))
        })
        .collect();
    let ripple = (rng.random_range(0.0..0.08), rng.random_range(0.1..0.5), rng.random_range(0.0..6.3));
    let mut img = Image::new(size, size, 3);
    let last = (size - 1).max(1) as f64;
    for y in 0..size {
        for x in 0..size {
            let (v, u) = (y as f64 / last, x as f64 / last);
            let wave = ripple.0 * (ripple.1 * (x as f64 + 0.7 * y as f64) + ripple.2).sin();
            for (c, corners) in bg.iter().enumerate() {
                let mut p = bilerp(corners, v, u) + wave;
                for (s, col) in &shapes {
                    let a = s.coverage(y as f64, x as f64);
                    p = p * (1.0 - a) + col[c] * a;
                }
                img.set(y, x, c, p.clamp(0.0, 1.0));
            }
        }
    }
    img
}

/// Gray video of `frames` frames `dt_us` apart: one or two shapes moving at
/// constant velocity over a static smooth background. Intensities stay in
/// `[0.1, 0.9]`.
pub fn toy_video(seed: u64, index: u64, size: usize, frames: usize, dt_us: u64) -> FrameSequence {
    let mut rng = item_rng(seed, index);
    let bg = background(&mut rng, 0.2, 0.8);
    let n = rng.random_range(1..=2);
    let sz = size as f64;
    let movers: Vec<(Shape, f64, f64, f64)> = (0..n)
        .map(|_| {
            let s = Shape::random(&mut rng, sz);
            let speed = rng.random_range(0.3..1.2);
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            let level = if rng.random_bool(0.5) { 0.9 } else { 0.1 };
            (s, speed * dir.sin(), speed * dir.cos(), level)
        })
        .collect();
    let last = (size - 1).max(1) as f64;
    let imgs: Vec<Image> = (0..frames)
        .map(|k| {
            Image::from_fn(size, size, |y, x| {
                let mut p = bilerp(&bg, y as f64 / last, x as f64 / last);
                for (s, vy, vx, level) in &movers {
                    let a = s.moved(vy * k as f64, vx * k as f64).coverage(y as f64, x as f64);
                    p = p * (1.0 - a) + level * a;
                }
                p.clamp(0.1, 0.9)
            })
        })
        .collect();
    let ts = (0..frames as u64).map(|k| k * dt_us).collect();
    FrameSequence::new(imgs, ts).expect("at least two increasing frames")
}
