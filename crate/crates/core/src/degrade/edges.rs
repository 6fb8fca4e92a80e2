//! Edge softening and boundary displacement.

use std::collections::VecDeque;

use rand::Rng;

use super::filters::{gaussian_blur, otsu_threshold, sobel};
use crate::image::Image;

/// Edge pixels per independently displaced run.
const SEGMENT_LEN: usize = 8;

/// Blurs around edges (Sobel magnitude above the Otsu threshold) and, with
/// probability `break_prob` per edge run, shifts the run's pixels by up to
/// `max_shift` along the local gradient direction.
pub fn degrade_edges(gray: &Image, rng: &mut impl Rng, blur_sigma: f64, break_prob: f64, max_shift: f64) -> Image {
    if blur_sigma <= 0.0 && (break_prob <= 0.0 || max_shift <= 0.0) {
        return gray.clone();
    }
    let (h, w) = (gray.height(), gray.width());
    let (gx, gy) = sobel(gray);
    let mag: Vec<f64> = gx.data().iter().zip(gy.data()).map(|(a, b)| a.hypot(*b)).collect();
    let Some(thr) = otsu_threshold(&mag) else {
        return gray.clone();
    };
    let edge: Vec<bool> = mag.iter().map(|&m| m > thr).collect();

    let mut out = gray.clone();
    if blur_sigma > 0.0 {
        let blurred = gaussian_blur(gray, blur_sigma);
        let edge_img = Image::from_fn(h, w, |y, x| edge[y * w + x] as u8 as f64);
        let weight = gaussian_blur(&edge_img, blur_sigma);
        for i in 0..h * w {
            let a = (2.0 * weight.data()[i]).clamp(0.0, 1.0);
            out.data_mut()[i] = a * blurred.data()[i] + (1.0 - a) * gray.data()[i];
        }
    }

    if break_prob > 0.0 && max_shift > 0.0 {
        let src = out.clone();
        for component in components(&edge, h, w) {
            for run in component.chunks(SEGMENT_LEN) {
                if !rng.random_bool(break_prob.clamp(0.0, 1.0)) {
                    continue;
                }
                let shift = rng.random_range(-max_shift..=max_shift);
                for &(y, x) in run {
                    let (dx, dy) = (gx.px(y, x), gy.px(y, x));
                    let m = dx.hypot(dy);
                    if m == 0.0 {
                        continue;
                    }
                    let v = src.sample_bilinear(y as f64 + shift * dy / m, x as f64 + shift * dx / m, 0);
                    out.set(y, x, 0, v);
                }
            }
        }
    }
    out.clamp01()
}

// 8-connected components in breadth-first order, so consecutive entries are spatially adjacent.
fn components(mask: &[bool], h: usize, w: usize) -> Vec<Vec<(usize, usize)>> {
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            let (y, x) = (i / w, i % w);
            comp.push((y, x));
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn step() -> Image {
        Image::from_fn(32, 32, |_, x| if x < 16 { 0.2 } else { 0.8 })
    }

    // columns over which a row profile goes from 10% to 90% of the step
    fn transition_width(img: &Image, row: usize) -> usize {
        let (lo, hi) = (0.2 + 0.06, 0.8 - 0.06);
        (0..img.width()).filter(|&x| img.px(row, x) > lo && img.px(row, x) < hi).count()
    }

    #[test]
    fn identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = step();
        assert_eq!(degrade_edges(&img, &mut rng, 0.0, 0.0, 2.0), img);
        let flat = Image::filled(16, 16, 1, 0.5);
        assert_eq!(degrade_edges(&flat, &mut rng, 2.0, 0.5, 2.0), flat);
    }

    #[test]
    fn step_edge_widens_and_keeps_mean() {
        let img = step();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = degrade_edges(&img, &mut rng, 1.0, 0.0, 0.0);
        assert_eq!(transition_width(&img, 16), 0);
        assert!(transition_width(&out, 16) >= 2, "{}", transition_width(&out, 16));
        assert!((out.mean() - img.mean()).abs() / img.mean() < 0.01);
    }

    #[test]
    fn breaks_only_touch_edge_pixels_and_replay() {
        let img = Image::from_fn(32, 32, |y, x| if (x as f64 - 16.0).hypot(y as f64 - 16.0) < 9.0 { 0.9 } else { 0.1 });
        let a = degrade_edges(&img, &mut ChaCha8Rng::seed_from_u64(5), 0.0, 1.0, 2.0);
        let b = degrade_edges(&img, &mut ChaCha8Rng::seed_from_u64(5), 0.0, 1.0, 2.0);
        assert_eq!(a, b);
        assert_ne!(a, img);
        // far from the boundary nothing moves
        assert_eq!(a.px(16, 16), img.px(16, 16));
        assert_eq!(a.px(0, 0), img.px(0, 0));
    }
}
