//! Event-camera simulation from intensity frames.
//!
//! Each pixel keeps a reference log-brightness level. Whenever the current
//! log-brightness departs from it by the contrast threshold `C`, an event of
//! polarity `sign(ΔL)` fires and the reference moves by `p·C`; the residual
//! below `C` carries over to the next frame.

use std::io::{self, Write};

use nalgebra::Point2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{warp_image_with_border, Border};
use crate::estimators::{homography_from_points, image_corners};
use crate::geometry::{Homography, Pixel};
use crate::raster::Raster;
use crate::seeding::derive_seed;

/// Floor added before taking the log so black pixels stay finite.
pub const LOG_EPSILON: f64 = 1e-3;
/// Contrast thresholds are drawn from this range.
pub const CONTRAST_RANGE: (f64, f64) = (0.05, 0.5);
pub const DEFAULT_GAIN: f64 = 32.0;
pub const MID_GRAY: f64 = 128.0;
/// Default bound on corner displacement for the synthetic motion, pixels.
pub const DEFAULT_MOTION_PX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum EventSimError {
    #[error("frame size mismatch: {0:?} vs {1:?}")]
    SizeMismatch((u32, u32), (u32, u32)),
    #[error("invalid event config: {0}")]
    InvalidConfig(String),
    #[error("event ({x}, {y}) outside {width}x{height}")]
    OutOfBounds { x: u32, y: u32, width: u32, height: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub x: u32,
    pub y: u32,
    pub t: f64,
    /// +1 or -1.
    pub p: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarityMode {
    /// Emit both ON (+1) and OFF (-1) events.
    #[default]
    Both,
    PositiveOnly,
    NegativeOnly,
}

impl PolarityMode {
    fn keeps(self, p: i8) -> bool {
        match self {
            PolarityMode::Both => true,
            PolarityMode::PositiveOnly => p > 0,
            PolarityMode::NegativeOnly => p < 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventSimConfig {
    /// Log-intensity contrast threshold `C`.
    pub contrast: f64,
    pub polarity: PolarityMode,
    /// Max corner displacement of the synthetic motion, pixels.
    pub motion_px: f64,
    pub seed: u64,
}

impl EventSimConfig {
    pub fn new(contrast: f64, motion_px: f64, seed: u64) -> Self {
        Self { contrast, polarity: PolarityMode::Both, motion_px, seed }
    }

    /// Draws `C` uniformly from [`CONTRAST_RANGE`] using `seed`.
    pub fn sampled(motion_px: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let contrast = rng.random_range(CONTRAST_RANGE.0..=CONTRAST_RANGE.1);
        Self { contrast, polarity: PolarityMode::Both, motion_px, seed }
    }

    /// Per-item config: the item key and global seed fix both `C` and the motion.
    pub fn for_item(global_seed: u64, key: &str, motion_px: f64) -> Self {
        Self::sampled(motion_px, derive_seed(global_seed, key))
    }

    pub fn validate(&self) -> Result<(), EventSimError> {
        if !(self.contrast > 0.0 && self.contrast.is_finite()) {
            return Err(EventSimError::InvalidConfig(format!("contrast must be > 0, got {}", self.contrast)));
        }
        if !(self.motion_px >= 0.0 && self.motion_px.is_finite()) {
            return Err(EventSimError::InvalidConfig(format!("motion must be >= 0, got {}", self.motion_px)));
        }
        Ok(())
    }
}

/// `ln(I + ε)` for brightness in `[0, 1]`.
pub fn log_brightness(image: &Raster) -> Raster {
    image.to_gray().map(|v| (v + LOG_EPSILON).ln())
}

/// Stateful per-pixel simulator over a sequence of frames.
#[derive(Debug, Clone)]
pub struct EventSimulator {
    contrast: f64,
    polarity: PolarityMode,
    reference: Raster,
    last_log: Raster,
    time: f64,
}

impl EventSimulator {
    pub fn new(frame0: &Raster, t0: f64, cfg: &EventSimConfig) -> Result<Self, EventSimError> {
        cfg.validate()?;
        let log0 = log_brightness(frame0);
        Ok(Self { contrast: cfg.contrast, polarity: cfg.polarity, reference: log0.clone(), last_log: log0, time: t0 })
    }

    /// Reference log-levels after the events emitted so far.
    pub fn reference(&self) -> &Raster {
        &self.reference
    }

    /// Advances to `frame` at time `t`, returning events sorted by `(t, y, x)`.
    /// Timestamps assume log-brightness varies linearly between frames.
    pub fn step(&mut self, frame: &Raster, t: f64) -> Result<Vec<EventRecord>, EventSimError> {
        if frame.dimensions() != self.reference.dimensions() {
            return Err(EventSimError::SizeMismatch(self.reference.dimensions(), frame.dimensions()));
        }
        let log1 = log_brightness(frame);
        let (w, h) = frame.dimensions();
        let c = self.contrast;
        let dt = t - self.time;
        let mut events = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let prev = self.last_log.at(x, y);
                let cur = log1.at(x, y);
                let reference = self.reference.at(x, y);
                let delta = cur - reference;
                let count = (delta.abs() / c).floor();
                if count < 1.0 {
                    continue;
                }
                let p: i8 = if delta > 0.0 { 1 } else { -1 };
                let sign = p as f64;
                let slope = cur - prev;
                for k in 1..=count as u64 {
                    if !self.polarity.keeps(p) {
                        break;
                    }
                    let level = reference + sign * k as f64 * c;
                    let frac = if slope != 0.0 { ((level - prev) / slope).clamp(0.0, 1.0) } else { 1.0 };
                    events.push(EventRecord { x, y, t: self.time + dt * frac, p });
                }
                self.reference.set(x, y, 0, reference + sign * count * c);
            }
        }
        self.last_log = log1;
        self.time = t;
        events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.y.cmp(&b.y)).then(a.x.cmp(&b.x)));
        Ok(events)
    }
}

/// Events between two frames at times 0 and 1.
pub fn simulate_events(frame0: &Raster, frame1: &Raster, cfg: &EventSimConfig) -> Result<Vec<EventRecord>, EventSimError> {
    if frame0.dimensions() != frame1.dimensions() {
        return Err(EventSimError::SizeMismatch(frame0.dimensions(), frame1.dimensions()));
    }
    EventSimulator::new(frame0, 0.0, cfg)?.step(frame1, 1.0)
}

/// A frame pair related by a small random homography.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionPair {
    pub frame0: Raster,
    pub frame1: Raster,
    pub motion: Homography,
}

/// Converts `image` (8-bit range, any channel count) to normalized gray and
/// warps it by a random homography whose corners each move between
/// `cfg.motion_px / 2` and `cfg.motion_px` pixels.
/// Border pixels replicate the nearest source pixel.
pub fn synthesize_motion_pair(image: &Raster, cfg: &EventSimConfig) -> Result<MotionPair, EventSimError> {
    cfg.validate()?;
    let frame0 = image.to_gray().normalized();
    if cfg.motion_px == 0.0 {
        return Ok(MotionPair { frame1: frame0.clone(), frame0, motion: Homography::identity() });
    }
    let (w, h) = frame0.dimensions();
    let corners = image_corners(w, h);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d6f_7469_6f6e);
    let motion = loop {
        // Shared drift of 3/4 the bound plus per-corner jitter within the
        // remaining quarter: every corner moves between m/2 and m.
        let drift = rng.random::<f64>() * std::f64::consts::TAU;
        let (dx, dy) = (0.75 * cfg.motion_px * drift.cos(), 0.75 * cfg.motion_px * drift.sin());
        let moved: Vec<Pixel> = corners
            .iter()
            .map(|c| {
                let r = 0.25 * cfg.motion_px * rng.random::<f64>().sqrt();
                let a = rng.random::<f64>() * std::f64::consts::TAU;
                Point2::new(c.x + dx + r * a.cos(), c.y + dy + r * a.sin())
            })
            .collect();
        if let Ok(hm) = homography_from_points(&corners, &moved) {
            break hm;
        }
    };
    let frame1 = warp_image_with_border(&frame0, &motion, w, h, Border::Replicate);
    Ok(MotionPair { frame0, frame1, motion })
}

/// Signed per-pixel event counts, rendered as `128 + gain · count`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFrame {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<i64>,
    pub baseline: f64,
    pub gain: f64,
}

impl EventFrame {
    pub fn to_raster(&self) -> Raster {
        Raster::from_fn(self.width, self.height, |x, y| {
            let c = self.counts[(y * self.width + x) as usize] as f64;
            (self.baseline + self.gain * c).clamp(0.0, 255.0)
        })
    }
}

pub fn accumulate_events(events: &[EventRecord], width: u32, height: u32, gain: f64) -> Result<EventFrame, EventSimError> {
    let mut counts = vec![0i64; width as usize * height as usize];
    for e in events {
        if e.x >= width || e.y >= height {
            return Err(EventSimError::OutOfBounds { x: e.x, y: e.y, width, height });
        }
        counts[(e.y * width + e.x) as usize] += e.p as i64;
    }
    Ok(EventFrame { width, height, counts, baseline: MID_GRAY, gain })
}

/// Renders events as an 8-bit image: mid-gray background, `gain` per unit count.
pub fn render_event_frame(events: &[EventRecord], width: u32, height: u32, gain: f64) -> Result<Raster, EventSimError> {
    Ok(accumulate_events(events, width, height, gain)?.to_raster())
}

/// The full event modality for one RGB image: motion, simulation, rendering.
pub fn generate_event_image(image: &Raster, cfg: &EventSimConfig) -> Result<Raster, EventSimError> {
    let pair = synthesize_motion_pair(image, cfg)?;
    let events = simulate_events(&pair.frame0, &pair.frame1, cfg)?;
    render_event_frame(&events, image.width(), image.height(), DEFAULT_GAIN)
}

/// Writes `x,y,t,p` lines.
pub fn write_events_csv<W: Write>(events: &[EventRecord], mut out: W) -> io::Result<()> {
    for e in events {
        writeln!(out, "{},{},{},{}", e.x, e.y, e.t, e.p)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_frame(rng: &mut impl Rng, w: u32, h: u32) -> Raster {
        let data = (0..w * h).map(|_| rng.random::<f64>()).collect();
        Raster::new(w, h, 1, data).unwrap()
    }

    #[test]
    fn log_brightness_floor() {
        let ones = Raster::filled(3, 2, 1.0);
        assert!(log_brightness(&ones).data().iter().all(|&v| v == (1.0 + 1e-3f64).ln()));
        let zero = Raster::filled(1, 1, 0.0);
        let v = log_brightness(&zero).at(0, 0);
        assert!(v.is_finite() && v == 1e-3f64.ln());
    }

    #[test]
    fn log_brightness_matches_series_oracle() {
        // ln via atanh series: ln(z) = 2 Σ u^{2k+1}/(2k+1), u = (z-1)/(z+1),
        // after range reduction by powers of two.
        fn ln_oracle(z: f64) -> f64 {
            let mut m = z;
            let mut k = 0i32;
            while m > 1.5 {
                m /= 2.0;
                k += 1;
            }
            while m < 0.75 {
                m *= 2.0;
                k -= 1;
            }
            let u = (m - 1.0) / (m + 1.0);
            let (mut term, mut sum, mut n) = (u, 0.0, 1.0);
            while term.abs() > 1e-20 {
                sum += term / n;
                term *= u * u;
                n += 2.0;
            }
            2.0 * sum + k as f64 * std::f64::consts::LN_2
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_frame(&mut rng, 16, 16);
        let lb = log_brightness(&img);
        for (i, &v) in img.data().iter().enumerate() {
            assert!((lb.data()[i] - ln_oracle(v + 1e-3)).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_frames_give_no_events() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_frame(&mut rng, 8, 8);
        assert!(simulate_events(&f, &f, &EventSimConfig::new(0.05, 0.0, 0)).unwrap().is_empty());
    }

    #[test]
    fn threshold_equality_fires_once() {
        let f0 = Raster::filled(1, 1, 0.2);
        let f1 = Raster::filled(1, 1, 0.5);
        let c = log_brightness(&f1).at(0, 0) - log_brightness(&f0).at(0, 0);
        let ev = simulate_events(&f0, &f1, &EventSimConfig::new(c, 0.0, 0)).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].p, 1);
        assert_eq!(ev[0].t, 1.0);
    }

    /// Per-pixel floor(|ΔL| / C) computed straight from the definition.
    #[test]
    fn counts_match_per_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f0 = random_frame(&mut rng, 4, 4);
        let f1 = random_frame(&mut rng, 4, 4);
        let c = 0.2;
        let ev = simulate_events(&f0, &f1, &EventSimConfig::new(c, 0.0, 0)).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let dl = (f1.at(x, y) + 1e-3).ln() - (f0.at(x, y) + 1e-3).ln();
                let expected = (dl.abs() / c).floor() as usize;
                let here: Vec<_> = ev.iter().filter(|e| e.x == x && e.y == y).collect();
                assert_eq!(here.len(), expected);
                assert!(here.iter().all(|e| e.p as f64 == dl.signum()));
                assert!(here.windows(2).all(|w| w[0].t <= w[1].t));
            }
        }
    }

    #[test]
    fn residual_carries_over() {
        let c = 0.3;
        let f0 = Raster::filled(1, 1, 0.1);
        let f1 = Raster::filled(1, 1, 0.15);
        let f2 = Raster::filled(1, 1, 0.2);
        let cfg = EventSimConfig::new(c, 0.0, 0);
        let mut sim = EventSimulator::new(&f0, 0.0, &cfg).unwrap();
        let first = sim.step(&f1, 1.0).unwrap();
        let second = sim.step(&f2, 2.0).unwrap();
        let l = |v: f64| (v + 1e-3).ln();
        assert_eq!(first.len(), ((l(0.15) - l(0.1)) / c).floor() as usize);
        let total = ((l(0.2) - l(0.1)) / c).floor() as usize;
        assert_eq!(first.len() + second.len(), total);
        let residual = sim.reference().at(0, 0) - l(0.1);
        assert!((residual - total as f64 * c).abs() < 1e-12);
    }

    #[test]
    fn size_mismatch() {
        let r = simulate_events(&Raster::zeros(2, 2, 1), &Raster::zeros(3, 2, 1), &EventSimConfig::new(0.1, 0.0, 0));
        assert!(matches!(r, Err(EventSimError::SizeMismatch(..))));
    }

    #[test]
    fn intensity_scaling_is_nearly_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f0 = random_frame(&mut rng, 16, 16).map(|v| 0.1 + 0.4 * v);
        let f1 = random_frame(&mut rng, 16, 16).map(|v| 0.1 + 0.4 * v);
        let cfg = EventSimConfig::new(0.1, 0.0, 0);
        let base = accumulate_events(&simulate_events(&f0, &f1, &cfg).unwrap(), 16, 16, 1.0).unwrap();
        for k in [0.5, 0.8, 1.7, 2.0] {
            let ev = simulate_events(&f0.map(|v| v * k), &f1.map(|v| v * k), &cfg).unwrap();
            let scaled = accumulate_events(&ev, 16, 16, 1.0).unwrap();
            for (a, b) in base.counts.iter().zip(&scaled.counts) {
                assert!((a - b).abs() <= 1);
            }
        }
    }

    #[test]
    fn motion_pair_zero_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = random_frame(&mut rng, 32, 24).map(|v| v * 255.0);
        let still = synthesize_motion_pair(&img, &EventSimConfig::new(0.1, 0.0, 9)).unwrap();
        assert_eq!(still.frame0, still.frame1);
        assert_eq!(still.motion, Homography::identity());

        let cfg = EventSimConfig::new(0.1, 2.0, 9);
        let a = synthesize_motion_pair(&img, &cfg).unwrap();
        let b = synthesize_motion_pair(&img, &cfg).unwrap();
        assert_eq!(a, b);
        for c in image_corners(32, 24) {
            let moved = a.motion.apply(&c).unwrap();
            let d = (moved - c).norm();
            assert!((1.0 - 1e-9..=2.0 + 1e-9).contains(&d), "{d}");
        }
        let ea = simulate_events(&a.frame0, &a.frame1, &cfg).unwrap();
        let eb = simulate_events(&b.frame0, &b.frame1, &cfg).unwrap();
        assert_eq!(ea, eb);
    }

    #[test]
    fn render_cases() {
        let empty = render_event_frame(&[], 4, 3, DEFAULT_GAIN).unwrap();
        assert!(empty.data().iter().all(|&v| v == 128.0));
        let one = render_event_frame(&[EventRecord { x: 0, y: 0, t: 0.5, p: 1 }], 4, 3, DEFAULT_GAIN).unwrap();
        assert_eq!(one.at(0, 0), 160.0);
        assert!(one.data()[1..].iter().all(|&v| v == 128.0));
        assert!(render_event_frame(&[EventRecord { x: 4, y: 0, t: 0.0, p: 1 }], 4, 3, 32.0).is_err());
    }

    #[test]
    fn render_matches_accumulate_then_clamp_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let events: Vec<EventRecord> = (0..500)
            .map(|_| EventRecord { x: rng.random_range(0..8), y: rng.random_range(0..6), t: 0.0, p: if rng.random::<bool>() { 1 } else { -1 } })
            .collect();
        let img = render_event_frame(&events, 8, 6, 32.0).unwrap();
        let mut grid = [[0i64; 8]; 6];
        for e in &events {
            grid[e.y as usize][e.x as usize] += e.p as i64;
        }
        for (y, row) in grid.iter().enumerate() {
            for (x, &net) in row.iter().enumerate() {
                let expected = (128 + 32 * net).clamp(0, 255) as f64;
                assert_eq!(img.at(x as u32, y as u32), expected);
            }
        }
    }

    #[test]
    fn sampled_contrast_in_range() {
        for seed in 0..200 {
            let c = EventSimConfig::sampled(2.0, seed).contrast;
            assert!((CONTRAST_RANGE.0..=CONTRAST_RANGE.1).contains(&c));
        }
    }

    #[test]
    fn csv_lines() {
        let mut buf = Vec::new();
        write_events_csv(&[EventRecord { x: 3, y: 1, t: 0.25, p: -1 }], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "3,1,0.25,-1\n");
    }
}
