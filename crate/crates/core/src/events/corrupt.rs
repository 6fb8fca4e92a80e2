//! Training-time corruption of simulated streams: merging of adjacent
//! same-pixel events, random dropping, and polarity removal inside rectangles.

use std::collections::HashMap;

use rand::Rng;

use super::{Event, EventStream, Polarity};

/// Events of `polarity` inside `[x0, x0+w) × [y0, y0+h)` are removed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KillRect {
    pub x0: u16,
    pub y0: u16,
    pub w: u16,
    pub h: u16,
    pub polarity: Polarity,
}

impl KillRect {
    fn contains(&self, e: &Event) -> bool {
        e.p == self.polarity
            && e.x >= self.x0
            && e.y >= self.y0
            && (e.x - self.x0) < self.w
            && (e.y - self.y0) < self.h
    }
}

/// Ranges the kill rectangles are drawn from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RectRanges {
    pub min_count: usize,
    pub max_count: usize,
    /// Largest rectangle side as a fraction of the sensor side.
    pub max_frac: f64,
}

impl Default for RectRanges {
    fn default() -> Self {
        RectRanges {
            min_count: 0,
            max_count: 3,
            max_frac: 0.25,
        }
    }
}

impl RectRanges {
    pub fn none() -> Self {
        RectRanges {
            min_count: 0,
            max_count: 0,
            max_frac: 0.0,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng, width: u16, height: u16) -> Vec<KillRect> {
        if self.max_count == 0 || self.max_frac <= 0.0 {
            return Vec::new();
        }
        let n = rng.random_range(self.min_count..=self.max_count.max(self.min_count));
        let side = |dim: u16| ((dim as f64 * self.max_frac).floor() as u16).max(1);
        let (mw, mh) = (side(width), side(height));
        (0..n)
            .map(|_| {
                let w = rng.random_range(1..=mw);
                let h = rng.random_range(1..=mh);
                KillRect {
                    x0: rng.random_range(0..=width - w),
                    y0: rng.random_range(0..=height - h),
                    w,
                    h,
                    polarity: if rng.random_bool(0.5) {
                        Polarity::Positive
                    } else {
                        Polarity::Negative
                    },
                }
            })
            .collect()
    }
}

/// Bundled corruption settings, as used by the training loops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OnlineDegradation {
    pub merge_window: u64,
    pub drop_prob: f64,
    pub rects: RectRanges,
}

impl OnlineDegradation {
    pub fn identity() -> Self {
        OnlineDegradation {
            merge_window: 0,
            drop_prob: 0.0,
            rects: RectRanges::none(),
        }
    }

    pub fn apply(&self, stream: &EventStream, rng: &mut impl Rng) -> EventStream {
        let rects = self.rects.sample(rng, stream.width(), stream.height());
        degrade_online(stream, rng, self.merge_window, self.drop_prob, &rects)
    }
}

impl Default for OnlineDegradation {
    fn default() -> Self {
        OnlineDegradation {
            merge_window: 1_000,
            drop_prob: 0.1,
            rects: RectRanges::default(),
        }
    }
}

/// Merge, drop, then polarity-kill. Never adds events; output stays sorted.
///
/// Same-pixel same-polarity events less than `merge_window` µs after the
/// first event of their group are absorbed into it.
pub fn degrade_online(
    stream: &EventStream,
    rng: &mut impl Rng,
    merge_window: u64,
    drop_prob: f64,
    rects: &[KillRect],
) -> EventStream {
    let drop_prob = drop_prob.clamp(0.0, 1.0);
    let mut anchors: HashMap<(u16, u16, Polarity), u64> = HashMap::new();
    let mut out = Vec::with_capacity(stream.len());
    for e in stream.events() {
        if merge_window > 0 {
            let key = (e.x, e.y, e.p);
            match anchors.get(&key) {
                Some(&t0) if e.t - t0 < merge_window => continue,
                _ => {
                    anchors.insert(key, e.t);
                }
            }
        }
        if drop_prob > 0.0 && rng.random::<f64>() < drop_prob {
            continue;
        }
        if rects.iter().any(|r| r.contains(e)) {
            continue;
        }
        out.push(*e);
    }
    EventStream::new(stream.width(), stream.height(), out).expect("subset of a valid stream")
}
