//! Pointwise and convolutional image filters shared by the degradation factors.
//! All functions take and return single-channel images.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::image::{resize_area, resize_bilinear, Image};

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with reflective borders; `sigma <= 0` copies.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = (img.height(), img.width());
    let mut tmp = Image::new(h, w, 1);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * img.at_reflect(y as isize, x as isize + i as isize - r, 0);
            }
            tmp.set(y, x, 0, acc);
        }
    }
    let mut out = Image::new(h, w, 1);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * tmp.at_reflect(y as isize + i as isize - r, x as isize, 0);
            }
            out.set(y, x, 0, acc);
        }
    }
    out
}

/// Sobel derivatives `(gx, gy)` with reflective borders.
pub fn sobel(img: &Image) -> (Image, Image) {
    let (h, w) = (img.height(), img.width());
    let mut gx = Image::new(h, w, 1);
    let mut gy = Image::new(h, w, 1);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dy: isize, dx: isize| img.at_reflect(y + dy, x + dx, 0);
            let dx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let dy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            gx.set(y as usize, x as usize, 0, dx / 8.0);
            gy.set(y as usize, x as usize, 0, dy / 8.0);
        }
    }
    (gx, gy)
}

pub fn gradient_magnitude(img: &Image) -> Image {
    let (gx, gy) = sobel(img);
    let data = gx.data().iter().zip(gy.data()).map(|(a, b)| a.hypot(*b)).collect();
    Image::from_vec(img.height(), img.width(), 1, data).expect("same shape")
}

/// Local variance over a `window × window` box with reflective borders.
pub fn local_variance(img: &Image, window: usize) -> Image {
    let r = (window / 2) as isize;
    let n = (window * window) as f64;
    Image::from_fn(img.height(), img.width(), |y, x| {
        let (mut s, mut s2) = (0.0, 0.0);
        for dy in -r..=r {
            for dx in -r..=r {
                let v = img.at_reflect(y as isize + dy, x as isize + dx, 0);
                s += v;
                s2 += v * v;
            }
        }
        let m = s / n;
        (s2 / n - m * m).max(0.0)
    })
}

/// Nearest-rank percentile (`p` in percent).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// Otsu threshold over a 256-bin histogram of `values`; `None` when all values are equal.
pub fn otsu_threshold(values: &[f64]) -> Option<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return None;
    }
    const BINS: usize = 256;
    let mut hist = [0usize; BINS];
    for &v in values {
        let b = (((v - lo) / (hi - lo)) * (BINS - 1) as f64).round() as usize;
        hist[b] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_t) = (-1.0, 0);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_t = t;
        }
    }
    Some(lo + (best_t as f64 + 0.5) / (BINS - 1) as f64 * (hi - lo))
}

/// Adds i.i.d. `N(0, sigma²)` noise and clamps to `[0, 1]`. `sigma == 0` draws nothing.
pub fn add_gaussian_noise(img: &Image, rng: &mut impl Rng, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
    }
    out
}

/// Average of `length` bilinear samples along a line at `angle_deg`, centred on
/// each pixel, with reflective borders. The implied kernel sums to one.
pub fn motion_blur(img: &Image, length: usize, angle_deg: f64) -> Image {
    if length <= 1 {
        return img.clone();
    }
    let (s, c) = angle_deg.to_radians().sin_cos();
    let offsets: Vec<(f64, f64)> = (0..length)
        .map(|i| {
            let d = i as f64 - (length - 1) as f64 / 2.0;
            (d * s, d * c)
        })
        .collect();
    let n = length as f64;
    Image::from_fn(img.height(), img.width(), |y, x| {
        offsets
            .iter()
            .map(|(dy, dx)| img.sample_bilinear(y as f64 + dy, x as f64 + dx, 0))
            .sum::<f64>()
            / n
    })
}

/// Area-average downsample by `scale` followed by bilinear upsample to the original size.
pub fn resize_cycle(img: &Image, scale: f64) -> Image {
    if scale >= 1.0 {
        return img.clone();
    }
    let (h, w) = (img.height(), img.width());
    let sh = ((h as f64 * scale).round() as usize).max(1);
    let sw = ((w as f64 * scale).round() as usize).max(1);
    let small = resize_area(img, sh, sw);
    resize_bilinear(&small, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noise_moments() {
        let img = Image::filled(256, 256, 1, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = add_gaussian_noise(&img, &mut rng, 0.1);
        let m = out.mean();
        let var = out.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / out.data().len() as f64;
        assert!((var.sqrt() - 0.1).abs() < 0.005, "{}", var.sqrt());
        assert_eq!(add_gaussian_noise(&img, &mut rng, 0.0), img);

        let a = add_gaussian_noise(&img, &mut ChaCha8Rng::seed_from_u64(1), 0.2);
        let b = add_gaussian_noise(&img, &mut ChaCha8Rng::seed_from_u64(1), 0.2);
        assert_eq!(a, b);
    }

    #[test]
    fn motion_blur_identity_and_constant() {
        let img = Image::from_fn(9, 7, |y, x| ((y * 7 + x) % 5) as f64 / 4.0);
        assert_eq!(motion_blur(&img, 1, 33.0), img);
        let flat = Image::filled(9, 7, 1, 0.3);
        let out = motion_blur(&flat, 5, 27.0);
        assert!(out.data().iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn horizontal_blur_doubles_line_width() {
        // 2-pixel wide vertical line; half-maximum width is counted in pixels
        let img = Image::from_fn(5, 15, |_, x| if x == 7 || x == 8 { 1.0 } else { 0.0 });
        let out = motion_blur(&img, 3, 0.0);

        // direct convolution oracle with the box [1/3, 1/3, 1/3]
        for x in 0..15isize {
            let want: f64 = (-1..=1).map(|d| img.at_reflect(2, x + d, 0)).sum::<f64>() / 3.0;
            assert!((out.px(2, x as usize) - want).abs() < 1e-12);
        }
        let width = |im: &Image| {
            let row: Vec<f64> = (0..15).map(|x| im.px(2, x)).collect();
            let half = row.iter().cloned().fold(0.0, f64::max) / 2.0;
            row.iter().filter(|v| **v >= half - 1e-12).count()
        };
        assert_eq!(width(&img), 2);
        assert_eq!(width(&out), 4);
    }

    #[test]
    fn resize_cycle_flattens_checkerboard() {
        let img = Image::from_fn(16, 16, |y, x| ((x + y) % 2) as f64);
        let out = resize_cycle(&img, 0.5);
        assert_eq!(out.shape(), img.shape());
        assert!(out.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
        let flat = Image::filled(13, 11, 1, 0.8);
        assert!(resize_cycle(&flat, 0.37).data().iter().all(|v| (v - 0.8).abs() < 1e-12));
        assert_eq!(resize_cycle(&img, 0.3).shape(), img.shape());
    }

    #[test]
    fn otsu_splits_bimodal() {
        let mut v = vec![0.1; 50];
        v.extend(vec![0.9; 50]);
        let t = otsu_threshold(&v).unwrap();
        assert!(t > 0.1 && t < 0.9);
        assert!(otsu_threshold(&[0.4; 10]).is_none());
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(percentile(&v, 1.0), 1.0);
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 100.0), 100.0);
    }
}
