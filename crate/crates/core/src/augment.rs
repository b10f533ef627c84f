//! Synthetic homographies, image warping and the resize conventions used by
//! the evaluation and generation pipelines.

use nalgebra::{Matrix3, Point2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{homography_from_points, image_corners};
use crate::geometry::{apply_matrix, Homography, Pixel};
use crate::raster::Raster;

/// Resampling attempts before a non-convex sample is reported.
pub const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid warp config: {0}")]
    InvalidConfig(String),
    #[error("no convex quadrilateral after {0} samples")]
    DegenerateSample(usize),
    #[error("resize target must be positive")]
    InvalidTarget,
}

/// Distribution of synthetic deformations: independent corner jitter
/// followed by a random similarity about the image center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpConfig {
    /// Max per-axis corner offset as a fraction of `min(width, height)`.
    pub max_perturbation: f64,
    pub max_rotation_deg: f64,
    /// Scale is drawn from `[1 - max_scale_delta, 1 + max_scale_delta]`.
    pub max_scale_delta: f64,
    /// Max translation as a fraction of width (x) and height (y).
    pub max_translation: f64,
    pub seed: u64,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self { max_perturbation: 0.15, max_rotation_deg: 15.0, max_scale_delta: 0.15, max_translation: 0.1, seed: 0 }
    }
}

impl WarpConfig {
    pub fn none() -> Self {
        Self { max_perturbation: 0.0, max_rotation_deg: 0.0, max_scale_delta: 0.0, max_translation: 0.0, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let fields = [
            ("max_perturbation", self.max_perturbation),
            ("max_rotation_deg", self.max_rotation_deg),
            ("max_scale_delta", self.max_scale_delta),
            ("max_translation", self.max_translation),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(AugmentError::InvalidConfig(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.max_perturbation >= 0.5 {
            return Err(AugmentError::InvalidConfig("max_perturbation must be < 0.5".into()));
        }
        if self.max_scale_delta >= 1.0 {
            return Err(AugmentError::InvalidConfig("max_scale_delta must be < 1".into()));
        }
        Ok(())
    }
}

/// A sampled deformation with its two factors: `homography = similarity ∘ perturbation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledWarp {
    pub homography: Homography,
    pub perturbation: Homography,
    pub similarity: Homography,
}

fn symmetric(rng: &mut impl Rng, bound: f64) -> f64 {
    bound * (2.0 * rng.random::<f64>() - 1.0)
}

fn is_convex(quad: &[Pixel; 4]) -> bool {
    let mut sign = 0.0;
    for i in 0..4 {
        let (a, b, c) = (quad[i], quad[(i + 1) % 4], quad[(i + 2) % 4]);
        let cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
        if cross == 0.0 || !cross.is_finite() {
            return false;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    true
}

fn similarity_about_center(width: u32, height: u32, angle_deg: f64, scale: f64, tx: f64, ty: f64) -> Matrix3<f64> {
    let cx = (width.max(1) - 1) as f64 / 2.0;
    let cy = (height.max(1) - 1) as f64 / 2.0;
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (a, b) = (scale * c, scale * s);
    // T(center + t) · sR · T(-center)
    Matrix3::new(a, -b, cx + tx - a * cx + b * cy, b, a, cy + ty - b * cx - a * cy, 0.0, 0.0, 1.0)
}

/// Draws one deformation for a `width × height` frame from `rng`.
pub fn sample_warp(rng: &mut impl Rng, cfg: &WarpConfig, width: u32, height: u32) -> Result<SampledWarp, AugmentError> {
    cfg.validate()?;
    let corners = image_corners(width, height);
    let bound = cfg.max_perturbation * width.min(height) as f64;
    for _ in 0..MAX_RESAMPLES {
        let offsets: [(f64, f64); 4] = std::array::from_fn(|_| (symmetric(rng, bound), symmetric(rng, bound)));
        let angle = symmetric(rng, cfg.max_rotation_deg);
        let scale = 1.0 + symmetric(rng, cfg.max_scale_delta);
        let tx = symmetric(rng, cfg.max_translation) * width as f64;
        let ty = symmetric(rng, cfg.max_translation) * height as f64;

        let perturbation = if bound > 0.0 {
            let moved: Vec<Pixel> = corners.iter().zip(&offsets).map(|(c, (dx, dy))| Point2::new(c.x + dx, c.y + dy)).collect();
            match homography_from_points(&corners, &moved) {
                Ok(h) => h,
                Err(_) => continue,
            }
        } else {
            Homography::identity()
        };
        let Ok(similarity) = Homography::new(similarity_about_center(width, height, angle, scale, tx, ty)) else {
            continue;
        };
        let homography = if perturbation == Homography::identity() {
            similarity
        } else if similarity == Homography::identity() {
            perturbation
        } else {
            let Ok(h) = similarity.compose(&perturbation) else { continue };
            h
        };
        let quad = corners.map(|c| apply_matrix(homography.matrix(), &c).unwrap_or(Point2::new(f64::NAN, f64::NAN)));
        if is_convex(&quad) {
            return Ok(SampledWarp { homography, perturbation, similarity });
        }
    }
    Err(AugmentError::DegenerateSample(MAX_RESAMPLES))
}

/// Deterministic deformation for `cfg.seed`.
pub fn sample_homography(cfg: &WarpConfig, width: u32, height: u32) -> Result<Homography, AugmentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(sample_warp(&mut rng, cfg, width, height)?.homography)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Border {
    Zero,
    Replicate,
}

/// Backward warp: each output pixel samples the source at `H⁻¹(x, y)` with
/// bilinear interpolation; pixels mapping outside the source are zero.
pub fn warp_image(image: &Raster, h: &Homography, out_width: u32, out_height: u32) -> Raster {
    warp_image_with_border(image, h, out_width, out_height, Border::Zero)
}

pub fn warp_image_with_border(image: &Raster, h: &Homography, out_width: u32, out_height: u32, border: Border) -> Raster {
    let inv = h.inverse().unit_corner_matrix();
    let ch = image.channels();
    let mut out = Raster::zeros(out_width, out_height, ch);
    let (max_x, max_y) = ((image.width() - 1) as f64, (image.height() - 1) as f64);
    for y in 0..out_height {
        for x in 0..out_width {
            let Ok(src) = apply_matrix(&inv, &Point2::new(x as f64, y as f64)) else { continue };
            let (sx, sy) = match border {
                Border::Zero => (src.x, src.y),
                Border::Replicate => (src.x.clamp(0.0, max_x), src.y.clamp(0.0, max_y)),
            };
            for c in 0..ch {
                if let Some(v) = image.sample_bilinear(sx, sy, c) {
                    out.set(x, y, c, v);
                }
            }
        }
    }
    out
}

fn round_dim(v: f64) -> u32 {
    ((v + 0.5).floor() as u32).max(1)
}

/// Isotropic rescale by `scale`, sampling the source at `p / scale` so pixel
/// coordinates map as `p' = scale · p`. Downscaling averages a box of
/// bilinear samples covering each output pixel's footprint.
pub fn resize(image: &Raster, scale: f64, out_width: u32, out_height: u32) -> Raster {
    let ch = image.channels();
    let mut out = Raster::zeros(out_width, out_height, ch);
    let (max_x, max_y) = ((image.width() - 1) as f64, (image.height() - 1) as f64);
    let taps = if scale < 1.0 { (1.0 / scale).ceil() as usize } else { 1 };
    let step = 1.0 / (scale * taps as f64);
    let first = -0.5 / scale + 0.5 * step;
    for y in 0..out_height {
        for x in 0..out_width {
            let (cx, cy) = (x as f64 / scale, y as f64 / scale);
            for c in 0..ch {
                let mut acc = 0.0;
                for j in 0..taps {
                    for i in 0..taps {
                        let (sx, sy) = if taps == 1 { (cx, cy) } else { (cx + first + i as f64 * step, cy + first + j as f64 * step) };
                        acc += image.sample_bilinear(sx.clamp(0.0, max_x), sy.clamp(0.0, max_y), c).unwrap_or(0.0);
                    }
                }
                out.set(x, y, c, acc / (taps * taps) as f64);
            }
        }
    }
    out
}

/// Rescales so the longer side equals `target`; returns the scale factor.
pub fn resize_long_side(image: &Raster, target: u32) -> Result<(Raster, f64), AugmentError> {
    if target == 0 {
        return Err(AugmentError::InvalidTarget);
    }
    let (w, h) = image.dimensions();
    let long = w.max(h);
    if long == target {
        return Ok((image.clone(), 1.0));
    }
    let scale = target as f64 / long as f64;
    let (nw, nh) = if w >= h { (target, round_dim(h as f64 * scale)) } else { (round_dim(w as f64 * scale), target) };
    Ok((resize(image, scale, nw, nh), scale))
}

/// Scales the long side to `target`, then zero-pads the short side after
/// the content to a `target × target` square.
pub fn resize_pad_square(image: &Raster, target: u32) -> Result<Raster, AugmentError> {
    let (scaled, _) = resize_long_side(image, target)?;
    if scaled.dimensions() == (target, target) {
        return Ok(scaled);
    }
    let ch = scaled.channels();
    let mut out = Raster::zeros(target, target, ch);
    for y in 0..scaled.height() {
        for x in 0..scaled.width() {
            for c in 0..ch {
                out.set(x, y, c, scaled.get(x, y, c));
            }
        }
    }
    Ok(out)
}

/// Ground truth expressed between resized images: `S_b · H · S_a⁻¹`.
pub fn rescale_homography(h: &Homography, scale_a: f64, scale_b: f64) -> Homography {
    let sa_inv = Matrix3::new(1.0 / scale_a, 0.0, 0.0, 0.0, 1.0 / scale_a, 0.0, 0.0, 0.0, 1.0);
    let sb = Matrix3::new(scale_b, 0.0, 0.0, 0.0, scale_b, 0.0, 0.0, 0.0, 1.0);
    Homography::new(sb * h.matrix() * sa_inv).expect("scaling preserves invertibility")
}
