//! Frame-to-event simulation by log-intensity threshold crossing, and the
//! inverse direct-integration baseline.

mod frames;

pub use frames::{read_manifest, write_manifest, FrameSequence};

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::events::{Event, EventStream, Polarity};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    /// Positive contrast threshold in log-intensity units.
    pub c_pos: f64,
    pub c_neg: f64,
    /// Minimum µs between two events of the same pixel.
    pub refractory: u64,
    pub log_eps: f64,
    /// First-order low-pass coefficient applied per frame to log intensity; `None` disables.
    pub bandwidth_cutoff: Option<f64>,
    /// Background events per pixel per second.
    pub noise_rate: f64,
    /// Per-pixel standard deviation added once to each threshold.
    pub threshold_jitter: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            c_pos: 0.2,
            c_neg: 0.2,
            refractory: 0,
            log_eps: 1e-3,
            bandwidth_cutoff: None,
            noise_rate: 0.0,
            threshold_jitter: 0.0,
        }
    }
}

impl SimConfig {
    pub fn ideal(c: f64) -> Self {
        SimConfig {
            c_pos: c,
            c_neg: c,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_pos > 0.0 && self.c_neg > 0.0) {
            return Err(Error::invalid("contrast thresholds must be positive"));
        }
        if !(self.noise_rate >= 0.0 && self.threshold_jitter >= 0.0 && self.log_eps > 0.0) {
            return Err(Error::invalid("noise_rate, threshold_jitter must be >= 0 and log_eps > 0"));
        }
        if let Some(a) = self.bandwidth_cutoff {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::invalid("bandwidth_cutoff must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> crate::config::KeyValues {
        let mut kv = crate::config::KeyValues::new();
        kv.set("c_pos", self.c_pos);
        kv.set("c_neg", self.c_neg);
        kv.set("refractory_us", self.refractory);
        kv.set("log_eps", self.log_eps);
        kv.set(
            "bandwidth_cutoff",
            self.bandwidth_cutoff.map_or("none".to_string(), |v| v.to_string()),
        );
        kv.set("noise_rate", self.noise_rate);
        kv.set("threshold_jitter", self.threshold_jitter);
        kv
    }

    pub fn from_key_values(kv: &crate::config::KeyValues) -> Result<Self> {
        let d = SimConfig::default();
        let bandwidth_cutoff = match kv.raw("bandwidth_cutoff") {
            None | Some("none") => None,
            Some(_) => kv.get("bandwidth_cutoff")?,
        };
        let cfg = SimConfig {
            c_pos: kv.get_or("c_pos", d.c_pos)?,
            c_neg: kv.get_or("c_neg", d.c_neg)?,
            refractory: kv.get_or("refractory_us", d.refractory)?,
            log_eps: kv.get_or("log_eps", d.log_eps)?,
            bandwidth_cutoff,
            noise_rate: kv.get_or("noise_rate", d.noise_rate)?,
            threshold_jitter: kv.get_or("threshold_jitter", d.threshold_jitter)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Emits an event each time a pixel's log intensity, linearly interpolated in
/// time between frames, crosses its reference level by a contrast threshold.
/// The reference moves by exactly one threshold per event.
///
/// `rng` is only consumed when jitter or noise is enabled.
pub fn simulate(frames: &FrameSequence, cfg: &SimConfig, rng: &mut impl Rng) -> Result<EventStream> {
    cfg.validate()?;
    let (h, w) = (frames.height(), frames.width());
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(Error::invalid("frame larger than the u16 sensor range"));
    }
    for (i, f) in frames.frames().iter().enumerate() {
        if !f.is_finite() {
            return Err(Error::NonFinite(format!("frame {i}")));
        }
    }
    let ts = frames.timestamps();
    let n = frames.len();

    let thresholds: Vec<(f64, f64)> = if cfg.threshold_jitter > 0.0 {
        let normal = Normal::new(0.0, cfg.threshold_jitter).expect("finite std");
        (0..h * w)
            .map(|_| {
                let jp = normal.sample(rng);
                let jn = normal.sample(rng);
                ((cfg.c_pos + jp).max(0.01 * cfg.c_pos), (cfg.c_neg + jn).max(0.01 * cfg.c_neg))
            })
            .collect()
    } else {
        vec![(cfg.c_pos, cfg.c_neg); h * w]
    };

    let mut events = Vec::new();
    let mut log_series = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            for (k, f) in frames.frames().iter().enumerate() {
                log_series[k] = (f.px(y, x) + cfg.log_eps).ln();
            }
            if let Some(a) = cfg.bandwidth_cutoff {
                for k in 1..n {
                    log_series[k] = log_series[k - 1] + a * (log_series[k] - log_series[k - 1]);
                }
            }
            let (cp, cn) = thresholds[y * w + x];
            let mut pixel = PixelState {
                reference: log_series[0],
                last_emit: None,
            };
            for k in 1..n {
                pixel.crossings(
                    (log_series[k - 1], log_series[k]),
                    (ts[k - 1] as f64, ts[k] as f64),
                    (cp, cn),
                    cfg.refractory as f64,
                    |t, p| events.push(Event::new(x as u16, y as u16, t, p)),
                );
            }
        }
    }

    if cfg.noise_rate > 0.0 {
        let (t0, t1) = (ts[0], ts[n - 1]);
        let lambda = cfg.noise_rate * (t1 - t0) as f64 * 1e-6;
        if lambda > 0.0 {
            let poisson = Poisson::new(lambda).expect("positive rate");
            for y in 0..h {
                for x in 0..w {
                    let count = poisson.sample(rng) as usize;
                    for _ in 0..count {
                        let t = rng.random_range(t0..=t1);
                        let p = if rng.random_bool(0.5) {
                            Polarity::Positive
                        } else {
                            Polarity::Negative
                        };
                        events.push(Event::new(x as u16, y as u16, t, p));
                    }
                }
            }
        }
    }

    EventStream::new(w as u16, h as u16, events)
}

struct PixelState {
    reference: f64,
    last_emit: Option<f64>,
}

impl PixelState {
    fn crossings(
        &mut self,
        (a, b): (f64, f64),
        (t0, t1): (f64, f64),
        (cp, cn): (f64, f64),
        refractory: f64,
        mut emit: impl FnMut(u64, Polarity),
    ) {
        let mut fire = |level: f64, p: Polarity, last: &mut Option<f64>| {
            let tau = t0 + (level - a) / (b - a) * (t1 - t0);
            if last.is_some_and(|l| tau - l < refractory) {
                return;
            }
            *last = Some(tau);
            // ceil keeps the event strictly after the previous frame time
            emit(tau.ceil().clamp(t0, t1) as u64, p);
        };
        if b > a {
            while b >= self.reference + cp {
                self.reference += cp;
                fire(self.reference, Polarity::Positive, &mut self.last_emit);
            }
        } else if b < a {
            while b <= self.reference - cn {
                self.reference -= cn;
                fire(self.reference, Polarity::Negative, &mut self.last_emit);
            }
        }
    }
}

/// Log-domain integration: `init_log + c_pos·#pos − c_neg·#neg` per pixel,
/// snapshotted after all events with `t <= snapshot`.
pub fn integrate_log(
    stream: &EventStream,
    c_pos: f64,
    c_neg: f64,
    init_log: &Image,
    snapshots: &[u64],
) -> Result<Vec<Image>> {
    let (w, h) = (stream.width() as usize, stream.height() as usize);
    if init_log.shape() != [h, w, 1] {
        return Err(Error::Shape {
            op: "integrate_events",
            lhs: init_log.shape().to_vec(),
            rhs: vec![h, w, 1],
        });
    }
    let mut order: Vec<usize> = (0..snapshots.len()).collect();
    order.sort_by_key(|&i| snapshots[i]);
    let mut state = init_log.clone();
    let mut out = vec![Image::new(0, 0, 1); snapshots.len()];
    let evs = stream.events();
    let mut next = 0;
    for i in order {
        while next < evs.len() && evs[next].t <= snapshots[i] {
            let e = evs[next];
            let v = state.px(e.y as usize, e.x as usize);
            let d = match e.p {
                Polarity::Positive => c_pos,
                Polarity::Negative => -c_neg,
            };
            state.set(e.y as usize, e.x as usize, 0, v + d);
            next += 1;
        }
        out[i] = state.clone();
    }
    Ok(out)
}

/// [`integrate_log`] mapped back to intensity with `exp`.
pub fn integrate_events(
    stream: &EventStream,
    c_pos: f64,
    c_neg: f64,
    init_log: &Image,
    snapshots: &[u64],
) -> Result<Vec<Image>> {
    Ok(integrate_log(stream, c_pos, c_neg, init_log, snapshots)?
        .into_iter()
        .map(|img| img.map(f64::exp))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    /// Frames whose log(I + eps) equals the given per-frame values.
    fn log_pixel_video(logs: &[f64], ts: &[u64], eps: f64) -> FrameSequence {
        let frames = logs.iter().map(|&l| Image::filled(1, 1, 1, l.exp() - eps)).collect();
        FrameSequence::new(frames, ts.to_vec()).unwrap()
    }

    #[test]
    fn constant_video_is_silent() {
        let f = Image::from_fn(4, 5, |y, x| 0.1 + 0.05 * (x + y) as f64);
        let seq = FrameSequence::new(vec![f.clone(), f.clone(), f], vec![0, 1000, 2000]).unwrap();
        assert!(simulate(&seq, &SimConfig::default(), &mut rng()).unwrap().is_empty());
    }

    #[test]
    fn ramp_crossings_match_dense_grid_oracle() {
        let eps = 1e-3;
        let seq = log_pixel_video(&[0.0, 0.45], &[0, 1000], eps);
        let s = simulate(&seq, &SimConfig::ideal(0.2), &mut rng()).unwrap();

        // oracle: walk a dense time grid and count reference-level crossings
        let mut oracle = Vec::new();
        let mut reference = 0.0;
        let steps = 1_000_000;
        for i in 0..=steps {
            let t = i as f64 * 1000.0 / steps as f64;
            let l = 0.45 * t / 1000.0;
            while l >= reference + 0.2 - 1e-12 {
                reference += 0.2;
                oracle.push(t);
            }
        }
        assert_eq!(s.len(), oracle.len());
        assert_eq!(s.len(), 2);
        for (e, t) in s.events().iter().zip(&oracle) {
            assert_eq!(e.p, Polarity::Positive);
            assert!((e.t as f64 - t).abs() <= 1.0, "{} vs {t}", e.t);
        }
        // interpolated crossing times 0.2/0.45 and 0.4/0.45 of the interval
        assert_eq!(s.events()[0].t, 445);
        assert_eq!(s.events()[1].t, 889);
    }

    #[test]
    fn negative_step_of_three_thresholds() {
        let c = 0.2;
        let seq = log_pixel_video(&[0.0, -3.0 * c - 1e-9], &[0, 500], 1e-3);
        let s = simulate(&seq, &SimConfig::ideal(c), &mut rng()).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.events().iter().all(|e| e.p == Polarity::Negative));
    }

    #[test]
    fn refractory_suppresses_close_events() {
        let seq = log_pixel_video(&[0.0, 1.0], &[0, 1000], 1e-3);
        let mut cfg = SimConfig::ideal(0.1);
        let all = simulate(&seq, &cfg, &mut rng()).unwrap().len();
        cfg.refractory = 250;
        let some = simulate(&seq, &cfg, &mut rng()).unwrap().len();
        assert_eq!(all, 10);
        assert!(some < all && some >= 4, "{some}");
    }

    #[test]
    fn noise_only_adds_events() {
        let f = Image::filled(3, 3, 1, 0.5);
        let seq = FrameSequence::new(vec![f.clone(), f], vec![0, 1_000_000]).unwrap();
        let cfg = SimConfig {
            noise_rate: 20.0,
            ..SimConfig::default()
        };
        let s = simulate(&seq, &cfg, &mut rng()).unwrap();
        // 9 pixels · 20 Hz · 1 s
        assert!(s.len() > 100 && s.len() < 260, "{}", s.len());
    }

    #[test]
    fn rejects_bad_config_and_frames() {
        let f = Image::filled(1, 1, 1, 0.5);
        let seq = FrameSequence::new(vec![f.clone(), f], vec![0, 10]).unwrap();
        assert!(simulate(&seq, &SimConfig::ideal(0.0), &mut rng()).is_err());
        let nan = FrameSequence::new(vec![Image::filled(1, 1, 1, f64::NAN), Image::filled(1, 1, 1, 0.5)], vec![0, 10]).unwrap();
        assert!(matches!(simulate(&nan, &SimConfig::default(), &mut rng()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn integrate_empty_and_single_event() {
        let init = Image::filled(2, 2, 1, 0.3f64.ln());
        let empty = EventStream::empty(2, 2);
        let out = integrate_events(&empty, 0.2, 0.2, &init, &[0, 5, 10]).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|f| f.data().iter().all(|v| (v - 0.3).abs() < 1e-12)));

        let one = EventStream::new(2, 2, vec![Event::new(1, 0, 4, Polarity::Positive)]).unwrap();
        let out = integrate_events(&one, 0.2, 0.2, &init, &[3, 4]).unwrap();
        assert!((out[0].px(0, 1) - 0.3).abs() < 1e-12);
        assert!((out[1].px(0, 1) - 0.3 * 0.2f64.exp()).abs() < 1e-12);
        assert!((out[1].px(0, 0) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn config_key_values_round_trip() {
        let cfg = SimConfig {
            bandwidth_cutoff: Some(0.5),
            noise_rate: 0.25,
            ..SimConfig::ideal(0.3)
        };
        assert_eq!(SimConfig::from_key_values(&cfg.to_key_values()).unwrap(), cfg);
    }
}
