//! Classical baseline matcher (Harris corners, gradient-histogram patches,
//! mutual nearest neighbours) and the on-disk correspondence format.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::geometry::{Match, MatchSet};
use crate::raster::Raster;

pub const DEFAULT_MAX_KEYPOINTS: usize = 2048;
pub const HARRIS_K: f64 = 0.04;
pub const NMS_RADIUS: i64 = 4;
/// Responses below this fraction of the strongest one are discarded.
pub const RELATIVE_RESPONSE_THRESHOLD: f64 = 1e-3;
pub const DEFAULT_RATIO: f64 = 0.9;
pub const DEFAULT_SMOOTHING: f64 = 0.0;
pub const PATCH_SIZE: usize = 16;
/// Keypoints closer than this to the border cannot be described.
pub const PATCH_RADIUS: f64 = 9.0;
pub const DESCRIPTOR_LEN: usize = 128;
pub const MATCHES_HEADER: &str = "MDSYN-MATCHES v1";

const CELLS: usize = 4;
const ORIENTATION_BINS: usize = 8;
const DESCRIPTOR_CLIP: f64 = 0.2;

#[derive(Debug, Error)]
pub enum MatcherError {
    #[error("keypoint ({x:.2}, {y:.2}) is within {PATCH_RADIUS} px of the border")]
    BorderKeypoint { x: f64, y: f64 },
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: {message}")]
    BoundsError { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub response: f64,
}

/// Unit-norm descriptor of length [`DESCRIPTOR_LEN`].
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(pub Vec<f64>);

impl Descriptor {
    pub fn distance(&self, other: &Descriptor) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

/// Keypoints and their descriptors, index-aligned.
#[derive(Debug, Clone, Default)]
pub struct Features {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

fn sobel(gray: &Raster) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let d = gray.data();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let p = |dx: isize, dy: isize| d[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
            gx[y * w + x] = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1) - p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1)) / 8.0;
            gy[y * w + x] = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1) - p(-1, -1) - 2.0 * p(0, -1) - p(1, -1)) / 8.0;
        }
    }
    (gx, gy)
}

fn box_blur(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
            tmp[y * w + x] = src[y * w + lo..=y * w + hi].iter().sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|yy| tmp[yy * w + x]).sum();
        }
    }
    out
}

/// Harris corner response on a grayscale image; zero within 2 px of the border.
pub fn harris_response(gray: &Raster) -> Vec<f64> {
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    if w < 5 || h < 5 {
        return vec![0.0; w * h];
    }
    let (gx, gy) = sobel(gray);
    let xx: Vec<f64> = gx.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = gy.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a * b).collect();
    let (sxx, syy, sxy) = (box_blur(&xx, w, h, 1), box_blur(&yy, w, h, 1), box_blur(&xy, w, h, 1));
    let mut r = vec![0.0; w * h];
    for y in 2..h - 2 {
        for x in 2..w - 2 {
            let i = y * w + x;
            let tr = sxx[i] + syy[i];
            r[i] = sxx[i] * syy[i] - sxy[i] * sxy[i] - HARRIS_K * tr * tr;
        }
    }
    r
}

fn refine(r: &[f64], w: usize, x: usize, y: usize) -> (f64, f64) {
    let off = |a: f64, c: f64, b: f64| {
        let den = a - 2.0 * c + b;
        if den < 0.0 {
            (0.5 * (a - b) / den).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    };
    let c = r[y * w + x];
    let dx = off(r[y * w + x - 1], c, r[y * w + x + 1]);
    let dy = off(r[(y - 1) * w + x], c, r[(y + 1) * w + x]);
    (x as f64 + dx, y as f64 + dy)
}

/// Harris corners after radius-4 non-maximum suppression, strongest first,
/// ties broken by `(y, x)`, refined to sub-pixel accuracy.
pub fn detect(image: &Raster, max_kp: usize) -> Vec<Keypoint> {
    let gray = image.to_gray();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let r = harris_response(&gray);
    let peak = r.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Vec::new();
    }
    let floor = peak * RELATIVE_RESPONSE_THRESHOLD;
    // Total order: higher response first, then smaller (y, x).
    let beats = |i: usize, j: usize| r[i] > r[j] || (r[i] == r[j] && i < j);
    let mut kps = Vec::new();
    for y in 2..h.saturating_sub(2) {
        for x in 2..w.saturating_sub(2) {
            let i = y * w + x;
            if r[i] <= floor {
                continue;
            }
            let mut is_max = true;
            'nms: for dy in -NMS_RADIUS..=NMS_RADIUS {
                for dx in -NMS_RADIUS..=NMS_RADIUS {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 || dx * dx + dy * dy > NMS_RADIUS * NMS_RADIUS {
                        continue;
                    }
                    if beats(ny as usize * w + nx as usize, i) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                kps.push((i, x, y));
            }
        }
    }
    kps.sort_by(|a, b| r[b.0].total_cmp(&r[a.0]).then(a.0.cmp(&b.0)));
    kps.truncate(max_kp);
    kps.into_iter()
        .map(|(i, x, y)| {
            let (fx, fy) = refine(&r, w, x, y);
            Keypoint { x: fx, y: fy, response: r[i] }
        })
        .collect()
}

pub fn is_describable(width: u32, height: u32, kp: &Keypoint) -> bool {
    kp.x >= PATCH_RADIUS && kp.y >= PATCH_RADIUS && kp.x <= width as f64 - 1.0 - PATCH_RADIUS && kp.y <= height as f64 - 1.0 - PATCH_RADIUS
}

fn unit_normalize(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 1e-12 {
        v.iter_mut().for_each(|x| *x /= n);
        true
    } else {
        false
    }
}

/// 4×4 cells × 8 unsigned-orientation bins over a 16×16 patch centred on
/// the keypoint. Orientation is taken modulo 180° so contrast reversals
/// between modalities map to the same bins.
pub fn describe(image: &Raster, kp: &Keypoint) -> Result<Descriptor, MatcherError> {
    if !is_describable(image.width(), image.height(), kp) {
        return Err(MatcherError::BorderKeypoint { x: kp.x, y: kp.y });
    }
    let gray = if image.channels() == 1 { None } else { Some(image.to_gray()) };
    let img = gray.as_ref().unwrap_or(image);
    let n = PATCH_SIZE + 2;
    let half = (PATCH_SIZE as f64 + 1.0) / 2.0;
    let mut patch = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            let (sx, sy) = (kp.x - half + i as f64, kp.y - half + j as f64);
            patch[j * n + i] = img.sample_bilinear(sx, sy, 0).expect("describable keypoint");
        }
    }
    let mean = patch.iter().sum::<f64>() / patch.len() as f64;
    patch.iter_mut().for_each(|v| *v -= mean);

    let mut desc = vec![0.0; DESCRIPTOR_LEN];
    let sigma = PATCH_SIZE as f64 / 2.0;
    let bin_width = std::f64::consts::PI / ORIENTATION_BINS as f64;
    let cell = PATCH_SIZE / CELLS;
    for j in 0..PATCH_SIZE {
        for i in 0..PATCH_SIZE {
            let at = |di: usize, dj: usize| patch[(j + dj) * n + i + di];
            let gx = 0.5 * (at(2, 1) - at(0, 1));
            let gy = 0.5 * (at(1, 2) - at(1, 0));
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let (cx, cy) = (i as f64 - (PATCH_SIZE as f64 - 1.0) / 2.0, j as f64 - (PATCH_SIZE as f64 - 1.0) / 2.0);
            let weight = mag * (-(cx * cx + cy * cy) / (2.0 * sigma * sigma)).exp();
            let theta = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
            let pos = theta / bin_width - 0.5;
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = (lo as i64).rem_euclid(ORIENTATION_BINS as i64) as usize;
            let b1 = (b0 + 1) % ORIENTATION_BINS;
            let c = ((j / cell) * CELLS + i / cell) * ORIENTATION_BINS;
            desc[c + b0] += weight * (1.0 - frac);
            desc[c + b1] += weight * frac;
        }
    }
    if !unit_normalize(&mut desc) {
        desc.iter_mut().for_each(|v| *v = 1.0);
        unit_normalize(&mut desc);
        return Ok(Descriptor(desc));
    }
    desc.iter_mut().for_each(|v| *v = v.min(DESCRIPTOR_CLIP));
    unit_normalize(&mut desc);
    Ok(Descriptor(desc))
}

/// Detects, drops keypoints too close to the border and describes the rest.
pub fn extract(image: &Raster, max_kp: usize) -> Features {
    extract_smoothed(image, max_kp, 0.0)
}

/// Separable Gaussian blur of a grayscale image with replicated borders.
pub fn gaussian_blur(gray: &Raster, sigma: f64) -> Raster {
    if sigma <= 0.0 {
        return gray.clone();
    }
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = k.iter().sum();
    let (w, h) = (gray.width() as i64, gray.height() as i64);
    let d = gray.data();
    let mut tmp = vec![0.0; d.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[(y * w + x) as usize] = (-r..=r).map(|i| k[(i + r) as usize] * d[(y * w + (x + i).clamp(0, w - 1)) as usize]).sum::<f64>() / norm;
        }
    }
    let mut out = vec![0.0; d.len()];
    for y in 0..h {
        for x in 0..w {
            out[(y * w + x) as usize] = (-r..=r).map(|i| k[(i + r) as usize] * tmp[((y + i).clamp(0, h - 1) * w + x) as usize]).sum::<f64>() / norm;
        }
    }
    Raster::new(gray.width(), gray.height(), 1, out).expect("same shape")
}

/// [`extract`] on a Gaussian-smoothed copy of the image.
pub fn extract_smoothed(image: &Raster, max_kp: usize, sigma: f64) -> Features {
    let gray = gaussian_blur(&image.to_gray(), sigma);
    let (w, h) = gray.dimensions();
    let keypoints: Vec<Keypoint> = detect(&gray, usize::MAX).into_iter().filter(|k| is_describable(w, h, k)).take(max_kp).collect();
    let descriptors = keypoints.iter().map(|k| describe(&gray, k).expect("filtered")).collect();
    Features { keypoints, descriptors }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexMatch {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

fn nearest_two(dist: impl Iterator<Item = f64>) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut second = f64::INFINITY;
    for (k, d) in dist.enumerate() {
        match best {
            Some((_, bd)) if d >= bd => second = second.min(d),
            Some((_, bd)) => {
                second = bd;
                best = Some((k, d));
            }
            None => best = Some((k, d)),
        }
    }
    best.map(|(k, d)| (k, d, second))
}

/// Pairs that are each other's nearest neighbour and pass the ratio test
/// `d1 < ratio · d2` in both directions. Output is ordered by index in A.
pub fn mutual_nn(desc_a: &[Descriptor], desc_b: &[Descriptor], ratio: f64) -> Vec<IndexMatch> {
    if desc_a.is_empty() || desc_b.is_empty() {
        return Vec::new();
    }
    let nb = desc_b.len();
    let dist: Vec<f64> = desc_a.iter().flat_map(|a| desc_b.iter().map(move |b| a.distance(b))).collect();
    let best_b: Vec<(usize, f64, f64)> =
        (0..desc_a.len()).map(|i| nearest_two(dist[i * nb..(i + 1) * nb].iter().copied()).expect("non-empty")).collect();
    let best_a: Vec<(usize, f64, f64)> = (0..nb).map(|j| nearest_two((0..desc_a.len()).map(|i| dist[i * nb + j])).expect("non-empty")).collect();
    let passes = |d1: f64, d2: f64| d2.is_infinite() || d1 < ratio * d2;
    best_b
        .iter()
        .enumerate()
        .filter_map(|(i, &(j, d1, d2))| {
            let (back, e1, e2) = best_a[j];
            (back == i && passes(d1, d2) && passes(e1, e2)).then_some(IndexMatch { a: i, b: j, distance: d1 })
        })
        .collect()
}

/// Mutual-NN matching of two feature sets; score is `1 − distance/2`.
pub fn match_mutual_nn(fa: &Features, fb: &Features, ratio: f64, image_a: &str, image_b: &str) -> MatchSet {
    let matches = mutual_nn(&fa.descriptors, &fb.descriptors, ratio)
        .into_iter()
        .map(|m| {
            let (ka, kb) = (fa.keypoints[m.a], fb.keypoints[m.b]);
            Match::new(ka.x, ka.y, kb.x, kb.y, 1.0 - m.distance / 2.0)
        })
        .collect();
    MatchSet::new(image_a, image_b, matches)
}

/// Anything that turns two images into correspondences.
pub trait Matcher: Send + Sync {
    /// Stable identifier recorded in drop reports and evaluation metadata.
    fn id(&self) -> String;
    fn match_images(&self, a: &Raster, b: &Raster, image_a: &str, image_b: &str) -> Result<MatchSet, MatcherError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineMatcher {
    pub max_keypoints: usize,
    pub ratio: f64,
    /// Gaussian pre-smoothing, pixels.
    pub smoothing: f64,
}

impl Default for BaselineMatcher {
    fn default() -> Self {
        Self { max_keypoints: DEFAULT_MAX_KEYPOINTS, ratio: DEFAULT_RATIO, smoothing: DEFAULT_SMOOTHING }
    }
}

impl Matcher for BaselineMatcher {
    fn id(&self) -> String {
        format!("baseline-harris-mnn(kp={},ratio={},sigma={})", self.max_keypoints, self.ratio, self.smoothing)
    }

    fn match_images(&self, a: &Raster, b: &Raster, image_a: &str, image_b: &str) -> Result<MatchSet, MatcherError> {
        let fa = extract_smoothed(a, self.max_keypoints, self.smoothing);
        let fb = extract_smoothed(b, self.max_keypoints, self.smoothing);
        Ok(match_mutual_nn(&fa, &fb, self.ratio, image_a, image_b))
    }
}

pub fn write_matches<W: Write>(matches: &MatchSet, mut out: W) -> io::Result<()> {
    writeln!(out, "{MATCHES_HEADER} {} {}", matches.image_a, matches.image_b)?;
    for m in &matches.matches {
        writeln!(out, "{} {} {} {} {}", m.a.x, m.a.y, m.b.x, m.b.y, m.score)?;
    }
    Ok(())
}

pub fn save_matches(matches: &MatchSet, path: &Path) -> io::Result<()> {
    let mut buf = Vec::new();
    write_matches(matches, &mut buf)?;
    fs::write(path, buf)
}

/// Image extents used to validate ingested coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairBounds {
    pub a: (u32, u32),
    pub b: (u32, u32),
}

pub fn parse_matches(text: &str, bounds: Option<PairBounds>) -> Result<MatchSet, MatcherError> {
    let mut lines = text.split('\n').enumerate();
    let (_, header) = lines.next().ok_or(MatcherError::ParseError { line: 1, message: "missing header".into() })?;
    let rest = header
        .strip_prefix(MATCHES_HEADER)
        .ok_or_else(|| MatcherError::ParseError { line: 1, message: format!("expected header `{MATCHES_HEADER} <idA> <idB>`") })?;
    let ids: Vec<&str> = rest.split_whitespace().collect();
    if ids.len() != 2 || !rest.starts_with(' ') {
        return Err(MatcherError::ParseError { line: 1, message: "header must name exactly two image ids".into() });
    }
    let mut matches = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != 5 {
            return Err(MatcherError::ParseError { line: line_no, message: format!("expected 5 fields, found {}", fields.len()) });
        }
        let mut v = [0.0; 5];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| MatcherError::ParseError { line: line_no, message: format!("invalid number `{f}`") })?;
        }
        if v.iter().any(|x: &f64| !x.is_finite()) {
            return Err(MatcherError::BoundsError { line: line_no, message: "non-finite value".into() });
        }
        if !(0.0..=1.0).contains(&v[4]) {
            return Err(MatcherError::BoundsError { line: line_no, message: format!("score {} outside [0, 1]", v[4]) });
        }
        let inside = |x: f64, y: f64, (w, h): (u32, u32)| x >= 0.0 && y >= 0.0 && x <= w as f64 - 1.0 && y <= h as f64 - 1.0;
        let ok = match bounds {
            Some(b) => inside(v[0], v[1], b.a) && inside(v[2], v[3], b.b),
            None => v[..4].iter().all(|&x| x >= 0.0),
        };
        if !ok {
            return Err(MatcherError::BoundsError { line: line_no, message: "coordinate outside image".into() });
        }
        matches.push(Match::new(v[0], v[1], v[2], v[3], v[4]));
    }
    Ok(MatchSet::new(ids[0], ids[1], matches))
}

pub fn ingest_matches(path: &Path) -> Result<MatchSet, MatcherError> {
    parse_matches(&fs::read_to_string(path)?, None)
}

pub fn ingest_matches_within(path: &Path, bounds: PairBounds) -> Result<MatchSet, MatcherError> {
    parse_matches(&fs::read_to_string(path)?, Some(bounds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::warp_image;
    use crate::geometry::Homography;
    use crate::metrics::{classify_matches, GroundTruth};
    use crate::synth::textured_image as textured;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_image_has_no_keypoints() {
        assert!(detect(&Raster::filled(40, 30, 90.0), 100).is_empty());
    }

    #[test]
    fn impulse_gives_top_keypoint_nearby() {
        let img = Raster::from_fn(41, 41, |x, y| if (x, y) == (20, 17) { 255.0 } else { 0.0 });
        let kps = detect(&img, 10);
        assert!(!kps.is_empty());
        assert!((kps[0].x - 20.0).abs() <= 1.0 && (kps[0].y - 17.0).abs() <= 1.0, "{:?}", kps[0]);
    }

    /// Interior corners of an 8-px checkerboard sit at pixel boundaries
    /// `(8k − 0.5, 8l − 0.5)`.
    #[test]
    fn checkerboard_corners_near_grid() {
        let img = Raster::from_fn(64, 64, |x, y| if ((x / 8) + (y / 8)) % 2 == 0 { 220.0 } else { 30.0 });
        let kps = detect(&img, 1000);
        let mut found = 0;
        for gy in 1..8 {
            for gx in 1..8 {
                let (cx, cy) = (8.0 * gx as f64 - 0.5, 8.0 * gy as f64 - 0.5);
                if kps.iter().any(|k| (k.x - cx).hypot(k.y - cy) < 1.0) {
                    found += 1;
                }
            }
        }
        assert!(found >= 45, "found {found} of 49");
        for k in &kps {
            let dx = (k.x + 0.5) / 8.0;
            let dy = (k.y + 0.5) / 8.0;
            assert!(((dx - dx.round()) * 8.0).abs() < 1.0 && ((dy - dy.round()) * 8.0).abs() < 1.0, "{k:?}");
        }
    }

    #[test]
    fn detect_is_sorted_and_budgeted() {
        let img = textured(1, 96, 80);
        let kps = detect(&img, 25);
        assert!(kps.len() <= 25);
        assert!(kps.windows(2).all(|w| w[0].response >= w[1].response));
    }

    #[test]
    fn descriptor_invariances() {
        let img = textured(2, 64, 64);
        let kp = Keypoint { x: 30.3, y: 31.6, response: 1.0 };
        let d = describe(&img, &kp).unwrap();
        assert!((d.0.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(d.0.len(), DESCRIPTOR_LEN);
        assert_eq!(describe(&img, &kp).unwrap(), d);
        let shifted = img.map(|v| v + 17.0);
        assert!(describe(&shifted, &kp).unwrap().distance(&d) < 1e-9);
        let scaled = img.map(|v| 0.6 * v);
        assert!(describe(&scaled, &kp).unwrap().distance(&d) < 1e-6);
        assert!(matches!(describe(&img, &Keypoint { x: 3.0, y: 30.0, response: 1.0 }), Err(MatcherError::BorderKeypoint { .. })));
    }

    fn random_descriptors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Descriptor> {
        (0..n)
            .map(|_| {
                let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                unit_normalize(&mut v);
                Descriptor(v)
            })
            .collect()
    }

    #[test]
    fn self_matching_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_descriptors(&mut rng, 50, 16);
        let m = mutual_nn(&d, &d, DEFAULT_RATIO);
        assert_eq!(m.len(), 50);
        assert!(m.iter().all(|x| x.a == x.b && x.distance == 0.0));
    }

    #[test]
    fn orthogonal_singletons_match() {
        let fa = Features { keypoints: vec![Keypoint { x: 1.0, y: 2.0, response: 1.0 }], descriptors: vec![Descriptor(vec![1.0, 0.0])] };
        let fb = Features { keypoints: vec![Keypoint { x: 3.0, y: 4.0, response: 1.0 }], descriptors: vec![Descriptor(vec![0.0, 1.0])] };
        let ms = match_mutual_nn(&fa, &fb, DEFAULT_RATIO, "a", "b");
        assert_eq!(ms.len(), 1);
        assert!((ms.matches[0].score - (1.0 - 2f64.sqrt() / 2.0)).abs() < 1e-12);
    }

    /// Exhaustive mutual-NN with the ratio test applied from both sides.
    pub(crate) fn brute_force_mnn(a: &[Descriptor], b: &[Descriptor], ratio: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..a.len() {
            for j in 0..b.len() {
                let d = a[i].distance(&b[j]);
                let row: Vec<f64> = b.iter().map(|y| a[i].distance(y)).collect();
                let col: Vec<f64> = a.iter().map(|x| x.distance(&b[j])).collect();
                let nearest_row = row.iter().enumerate().all(|(k, &e)| e > d || (e == d && k >= j));
                let nearest_col = col.iter().enumerate().all(|(k, &e)| e > d || (e == d && k >= i));
                let second = |v: &[f64], skip: usize| v.iter().enumerate().filter(|&(k, _)| k != skip).map(|(_, &e)| e).fold(f64::INFINITY, f64::min);
                let (r2, c2) = (second(&row, j), second(&col, i));
                let ratio_ok = (r2.is_infinite() || d < ratio * r2) && (c2.is_infinite() || d < ratio * c2);
                if nearest_row && nearest_col && ratio_ok {
                    out.push((i, j));
                }
            }
        }
        out
    }

    #[test]
    fn mutual_nn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let (na, nb, dim) = (rng.random_range(1..30), rng.random_range(1..30), rng.random_range(2..12));
            let a = random_descriptors(&mut rng, na, dim);
            let b = random_descriptors(&mut rng, nb, dim);
            let ratio = rng.random_range(0.5..1.0);
            let got: Vec<(usize, usize)> = mutual_nn(&a, &b, ratio).iter().map(|m| (m.a, m.b)).collect();
            assert_eq!(got, brute_force_mnn(&a, &b, ratio));
        }
    }

    #[test]
    fn mutual_nn_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = random_descriptors(&mut rng, 20, 8);
            let b = random_descriptors(&mut rng, 25, 8);
            let mut ab: Vec<(usize, usize)> = mutual_nn(&a, &b, 0.9).iter().map(|m| (m.a, m.b)).collect();
            let mut ba: Vec<(usize, usize)> = mutual_nn(&b, &a, 0.9).iter().map(|m| (m.b, m.a)).collect();
            ab.sort();
            ba.sort();
            assert_eq!(ab, ba);
        }
    }

    #[test]
    fn self_match_precision_is_one() {
        let img = textured(6, 160, 120);
        let ms = BaselineMatcher::default().match_images(&img, &img, "a", "a").unwrap();
        assert!(ms.len() > 20);
        let stats = classify_matches(&ms, &GroundTruth::Homography(Homography::identity()));
        assert_eq!(stats.precision, 1.0);
    }

    #[test]
    fn translation_recovers_most_keypoints() {
        for seed in 0..3 {
            let img = textured(10 + seed, 200, 160);
            let h = Homography::from_translation(5.0, 0.0);
            let moved = warp_image(&img, &h, 200, 160);
            let ms = BaselineMatcher::default().match_images(&img, &moved, "a", "b").unwrap();
            let fa = extract(&img, DEFAULT_MAX_KEYPOINTS);
            // keypoints whose translated location stays describable in B
            let interior = fa.keypoints.iter().filter(|k| is_describable(200, 160, &Keypoint { x: k.x + 5.0, ..**k })).count();
            let correct = classify_matches(&ms, &GroundTruth::Homography(h)).correct;
            assert!(correct as f64 >= 0.8 * interior as f64, "seed {seed}: {correct} of {interior}");
        }
    }

    #[test]
    fn matches_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m: Vec<Match> = (0..40)
            .map(|_| {
                Match::new(
                    rng.random_range(0.0..639.0),
                    rng.random_range(0.0..479.0),
                    rng.random_range(0.0..639.0),
                    rng.random_range(0.0..479.0),
                    rng.random(),
                )
            })
            .collect();
        let ms = MatchSet::new("img_a", "img_b", m);
        let mut buf = Vec::new();
        write_matches(&ms, &mut buf).unwrap();
        let back = parse_matches(std::str::from_utf8(&buf).unwrap(), Some(PairBounds { a: (640, 480), b: (640, 480) })).unwrap();
        assert_eq!(back, ms);
    }

    #[test]
    fn matches_file_errors() {
        let empty = parse_matches("MDSYN-MATCHES v1 a b\n", None).unwrap();
        assert!(empty.is_empty() && empty.image_a == "a");
        match parse_matches("MDSYN-MATCHES v1 a b\n1 2 3 4 0.5\n1 2 x 4 0.5\n", None) {
            Err(MatcherError::ParseError { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains('x'));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_matches("MATCHES a b\n", None), Err(MatcherError::ParseError { line: 1, .. })));
        assert!(matches!(parse_matches("MDSYN-MATCHES v1 a b\n1 2 3\n", None), Err(MatcherError::ParseError { line: 2, .. })));
        let bounds = Some(PairBounds { a: (10, 10), b: (10, 10) });
        assert!(matches!(parse_matches("MDSYN-MATCHES v1 a b\n1 2 30 4 0.5\n", bounds), Err(MatcherError::BoundsError { line: 2, .. })));
        assert!(matches!(parse_matches("MDSYN-MATCHES v1 a b\n1 2 3 4 1.5\n", None), Err(MatcherError::BoundsError { .. })));
    }
}
