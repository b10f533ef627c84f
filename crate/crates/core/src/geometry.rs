//! Projective-geometry primitives shared by every other module: pinhole
//! cameras, rigid poses, depth maps, homographies and match sets.
//!
//! Pixel coordinates follow the convention that integer coordinates address
//! pixel centers, so an image of width `w` spans `[0, w - 1]` horizontally.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Point2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A pixel position (or any 2-D point in image space).
pub type Pixel = Point2<f64>;

/// Dehomogenization guard: `|w|` below this is treated as a point at infinity.
pub const W_EPSILON: f64 = 1e-12;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Default relative depth tolerance for dense ground-truth correspondences.
pub const DEFAULT_DEPTH_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point maps to infinity (|w| = {0:e})")]
    PointAtInfinity(f64),
    #[error("invalid depth at pixel ({x}, {y})")]
    InvalidDepth { x: f64, y: f64 },
    #[error("pixel ({x}, {y}) lies outside the {width}x{height} image")]
    OutOfBounds { x: f64, y: f64, width: u32, height: u32 },
    #[error("singular homography")]
    SingularHomography,
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid depth map: {0}")]
    InvalidDepthMap(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

/// Pinhole intrinsics together with the image size they apply to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let cam = Self { fx, fy, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidCamera(format!("focal lengths must be positive, got fx={} fy={}", self.fx, self.fy)));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidCamera(format!("principal point ({}, {}) outside {}x{}", self.cx, self.cy, self.width, self.height)));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(1.0 / self.fx, 0.0, -self.cx / self.fx, 0.0, 1.0 / self.fy, -self.cy / self.fy, 0.0, 0.0, 1.0)
    }

    /// Pixel to normalized image-plane coordinates (z = 1).
    pub fn normalize(&self, p: &Pixel) -> Point2<f64> {
        Point2::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy)
    }

    pub fn project(&self, x_cam: &Vector3<f64>) -> Pixel {
        Point2::new(self.fx * x_cam.x / x_cam.z + self.cx, self.fy * x_cam.y / x_cam.z + self.cy)
    }

    pub fn contains(&self, p: &Pixel) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= (self.width - 1) as f64 && p.y <= (self.height - 1) as f64
    }

    /// Intrinsics after the image is isotropically resized by `scale`.
    pub fn scaled(&self, scale: f64, width: u32, height: u32) -> Self {
        Self { fx: self.fx * scale, fy: self.fy * scale, cx: self.cx * scale, cy: self.cy * scale, width, height }
    }

    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }
}

/// Rigid world-to-camera transform: `x_cam = R * x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    #[serde(rename = "R")]
    r: [[f64; 3]; 3],
    t: [f64; 3],
}

impl TryFrom<PoseRepr> for Pose {
    type Error = GeometryError;

    fn try_from(repr: PoseRepr) -> Result<Self, Self::Error> {
        let r = Matrix3::from_fn(|i, j| repr.r[i][j]);
        Pose::new(r, Vector3::from(repr.t))
    }
}

impl From<Pose> for PoseRepr {
    fn from(pose: Pose) -> Self {
        let r = &pose.rotation;
        PoseRepr { r: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])), t: [pose.translation.x, pose.translation.y, pose.translation.z] }
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidRotation("non-finite translation".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose { rotation: self.rotation * other.rotation, translation: self.rotation * other.translation + self.translation }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }
}

fn check_rotation(r: &Matrix3<f64>) -> Result<(), GeometryError> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::InvalidRotation("non-finite entries".into()));
    }
    let dev = (r.transpose() * r - Matrix3::identity()).amax();
    if dev > ROTATION_TOLERANCE {
        return Err(GeometryError::InvalidRotation(format!("RᵀR deviates from I by {dev:e}")));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(GeometryError::InvalidRotation(format!("det(R) = {det}")));
    }
    Ok(())
}

/// Relative pose taking camera-A coordinates to camera-B coordinates.
pub fn relative_pose(world_to_a: &Pose, world_to_b: &Pose) -> Pose {
    let rotation = world_to_b.rotation * world_to_a.rotation.transpose();
    let translation = world_to_b.translation - rotation * world_to_a.translation;
    Pose { rotation, translation }
}

/// Projective map between two images, kept in a canonical scale: unit
/// Frobenius norm with the largest-magnitude entry positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Homography(Matrix3<f64>);

impl TryFrom<[[f64; 3]; 3]> for Homography {
    type Error = GeometryError;

    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self, Self::Error> {
        Homography::new(Matrix3::from_fn(|i, j| rows[i][j]))
    }
}

impl From<Homography> for [[f64; 3]; 3] {
    fn from(h: Homography) -> Self {
        std::array::from_fn(|i| std::array::from_fn(|j| h.0[(i, j)]))
    }
}

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let norm = m.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(GeometryError::SingularHomography);
        }
        let mut h = m / norm;
        let sv = h.singular_values();
        if !(sv.min() > 1e-14 * sv.max()) {
            return Err(GeometryError::SingularHomography);
        }
        let lead = h.iter().fold(0.0_f64, |best, &v| if v.abs() > best.abs() { v } else { best });
        if lead < 0.0 {
            h = -h;
        }
        Ok(Self(h))
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity()).expect("identity is invertible")
    }

    pub fn from_translation(tx: f64, ty: f64) -> Self {
        Self::new(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0)).expect("translation is invertible")
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Homography {
        let inv = self.0.try_inverse().expect("canonical homography is invertible");
        Homography::new(inv).expect("inverse of an invertible matrix is invertible")
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Homography, GeometryError> {
        Homography::new(self.0 * other.0)
    }

    /// Same map, scaled so the bottom-right entry equals one (when nonzero).
    /// Keeps integer-valued maps exact when applied pointwise.
    pub fn unit_corner_matrix(&self) -> Matrix3<f64> {
        let c = self.0[(2, 2)];
        if c.abs() > W_EPSILON {
            self.0 / c
        } else {
            self.0
        }
    }

    pub fn apply(&self, p: &Pixel) -> Result<Pixel, GeometryError> {
        apply_matrix(&self.0, p)
    }
}

pub(crate) fn apply_matrix(m: &Matrix3<f64>, p: &Pixel) -> Result<Pixel, GeometryError> {
    let v = m * Vector3::new(p.x, p.y, 1.0);
    if v.z.abs() < W_EPSILON {
        return Err(GeometryError::PointAtInfinity(v.z.abs()));
    }
    Ok(Point2::new(v.x / v.z, v.y / v.z))
}

pub fn apply_homography(h: &Homography, p: &Pixel) -> Result<Pixel, GeometryError> {
    h.apply(p)
}

/// Dense depth in scene units; zero marks pixels without a measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

const DEPTH_MAGIC: &[u8; 4] = b"DPTH";

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self, GeometryError> {
        if values.len() != width as usize * height as usize {
            return Err(GeometryError::InvalidDepthMap(format!("expected {} values, got {}", width as usize * height as usize, values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(GeometryError::InvalidDepthMap(format!("depth {v} is not finite and non-negative")));
        }
        Ok(Self { width, height, values })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> f32) -> Result<Self, GeometryError> {
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[(y * self.width + x) as usize]
    }

    /// Bilinear depth at a sub-pixel location. `None` if outside the grid or
    /// if any contributing neighbour is invalid.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64) {
            return None;
        }
        let x0 = x.floor() as u32;
        let y0 = y.floor() as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let mut acc = 0.0;
        for (xi, yi, w) in [(x0, y0, (1.0 - fx) * (1.0 - fy)), (x1, y0, fx * (1.0 - fy)), (x0, y1, (1.0 - fx) * fy), (x1, y1, fx * fy)] {
            if w == 0.0 {
                continue;
            }
            let d = self.get(xi, yi) as f64;
            if d <= 0.0 {
                return None;
            }
            acc += w * d;
        }
        Some(acc)
    }

    /// Reads a depth map. `.png` files are 16-bit grayscale where depth is
    /// `value / png_scale`; anything else is the raw `DPTH` float32 grid.
    pub fn load(path: &Path, png_scale: f32) -> Result<Self, GeometryError> {
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            let img = image::open(path)?.into_luma16();
            let (w, h) = img.dimensions();
            let values = img.into_raw().into_iter().map(|v| v as f32 / png_scale).collect();
            Self::new(w, h, values)
        } else {
            let mut bytes = Vec::new();
            fs::File::open(path)?.read_to_end(&mut bytes)?;
            Self::from_raw_bytes(&bytes)
        }
    }

    pub fn from_raw_bytes(bytes: &[u8]) -> Result<Self, GeometryError> {
        if bytes.len() < 16 || &bytes[..4] != DEPTH_MAGIC {
            return Err(GeometryError::InvalidDepthMap("missing DPTH header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let (w, h) = (word(4), word(8));
        let body = &bytes[16..];
        if body.len() != w as usize * h as usize * 4 {
            return Err(GeometryError::InvalidDepthMap(format!("payload has {} bytes, expected {}", body.len(), w as usize * h as usize * 4)));
        }
        let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Self::new(w, h, values)
    }

    pub fn to_raw_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.values.len() * 4);
        out.extend_from_slice(DEPTH_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn save_raw(&self, path: &Path) -> Result<(), GeometryError> {
        fs::File::create(path)?.write_all(&self.to_raw_bytes())?;
        Ok(())
    }
}

/// Outcome of a dense ground-truth lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correspondence {
    Match(Pixel),
    NoMatch,
}

/// Ground-truth correspondence of pixel `p` in image A, derived from depth
/// and relative pose. The reprojected point must land inside B and agree
/// with B's (bilinearly sampled) depth within `depth_tol` relative error.
pub fn gt_correspondence(
    depth_a: &DepthMap,
    cam_a: &CameraModel,
    cam_b: &CameraModel,
    a_to_b: &Pose,
    depth_b: &DepthMap,
    p: &Pixel,
    depth_tol: f64,
) -> Result<Correspondence, GeometryError> {
    if !cam_a.contains(p) {
        return Err(GeometryError::OutOfBounds { x: p.x, y: p.y, width: cam_a.width, height: cam_a.height });
    }
    let z = depth_a.sample_bilinear(p.x, p.y).ok_or(GeometryError::InvalidDepth { x: p.x, y: p.y })?;
    let ray = cam_a.normalize(p);
    let x_a = Vector3::new(ray.x * z, ray.y * z, z);
    let x_b = a_to_b.transform(&x_a);
    if x_b.z <= 0.0 {
        return Ok(Correspondence::NoMatch);
    }
    let q = cam_b.project(&x_b);
    if !cam_b.contains(&q) {
        return Ok(Correspondence::NoMatch);
    }
    match depth_b.sample_bilinear(q.x, q.y) {
        Some(d) if ((d - x_b.z) / x_b.z).abs() <= depth_tol => Ok(Correspondence::Match(q)),
        _ => Ok(Correspondence::NoMatch),
    }
}

/// One scored correspondence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub a: Pixel,
    pub b: Pixel,
    pub score: f64,
}

impl Match {
    pub fn new(xa: f64, ya: f64, xb: f64, yb: f64, score: f64) -> Self {
        Self { a: Point2::new(xa, ya), b: Point2::new(xb, yb), score }
    }
}

/// Scored correspondences between two images.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSet {
    pub image_a: String,
    pub image_b: String,
    pub matches: Vec<Match>,
}

impl MatchSet {
    pub fn new(image_a: impl Into<String>, image_b: impl Into<String>, matches: Vec<Match>) -> Self {
        Self { image_a: image_a.into(), image_b: image_b.into(), matches }
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn points_a(&self) -> Vec<Pixel> {
        self.matches.iter().map(|m| m.a).collect()
    }

    pub fn points_b(&self) -> Vec<Pixel> {
        self.matches.iter().map(|m| m.b).collect()
    }

    /// Both coordinate sets multiplied by their image's resize factor.
    pub fn rescaled(&self, scale_a: f64, scale_b: f64) -> MatchSet {
        let matches = self
            .matches
            .iter()
            .map(|m| Match { a: Point2::new(m.a.x * scale_a, m.a.y * scale_a), b: Point2::new(m.b.x * scale_b, m.b.y * scale_b), score: m.score })
            .collect();
        MatchSet { image_a: self.image_a.clone(), image_b: self.image_b.clone(), matches }
    }

    pub fn swapped(&self) -> MatchSet {
        MatchSet {
            image_a: self.image_b.clone(),
            image_b: self.image_a.clone(),
            matches: self.matches.iter().map(|m| Match { a: m.b, b: m.a, score: m.score }).collect(),
        }
    }
}

/// Skew-symmetric cross-product matrix `[v]×`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation about a unit axis (Rodrigues).
pub fn rotation_from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = axis.normalize();
    let kx = skew(&k);
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        rotation_from_axis_angle(&axis, rng.random_range(-3.0..3.0))
    }

    fn random_pose(rng: &mut impl Rng) -> Pose {
        let t = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        Pose::new(random_rotation(rng), t).unwrap()
    }

    #[test]
    fn identity_homography_is_noop() {
        let p = apply_homography(&Homography::identity(), &Point2::new(10.0, 20.0)).unwrap();
        assert!((p.x - 10.0).abs() < 1e-12 && (p.y - 20.0).abs() < 1e-12);
    }

    #[test]
    fn translation_homography() {
        let h = Homography::from_translation(3.0, -4.0);
        let p = h.apply(&Point2::new(0.0, 0.0)).unwrap();
        assert!((p.x - 3.0).abs() < 1e-12 && (p.y + 4.0).abs() < 1e-12);
    }

    #[test]
    fn point_at_infinity_is_reported() {
        let h = Homography::new(Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0)).unwrap();
        assert!(matches!(h.apply(&Point2::new(-1.0, 5.0)), Err(GeometryError::PointAtInfinity(_))));
    }

    #[test]
    fn canonical_form() {
        let h = Homography::new(Matrix3::new(-2.0, 0.1, 3.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0)).unwrap();
        assert!((h.matrix().norm() - 1.0).abs() < 1e-15);
        assert!(h.matrix()[(0, 2)] > 0.0 && h.matrix()[(0, 0)] < 0.0);
        let scaled = Homography::new(h.matrix() * -7.5).unwrap();
        assert!((scaled.matrix() - h.matrix()).amax() < 1e-15);
        assert!(Homography::new(Matrix3::zeros()).is_err());
        assert!(Homography::new(Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 1.0)).is_err());
    }

    /// Exact rational-free oracle: evaluate with compensated (double-double)
    /// products so the reference carries ~106 bits of precision.
    fn two_prod(a: f64, b: f64) -> (f64, f64) {
        let p = a * b;
        (p, a.mul_add(b, -p))
    }

    fn dd_dot(row: [f64; 3], v: [f64; 3]) -> (f64, f64) {
        let mut hi = 0.0;
        let mut lo = 0.0;
        for k in 0..3 {
            let (p, e) = two_prod(row[k], v[k]);
            let s = hi + p;
            let bb = s - hi;
            let err = (hi - (s - bb)) + (p - bb);
            hi = s;
            lo += err + e;
        }
        (hi, lo)
    }

    #[test]
    fn apply_matches_extended_precision_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = Matrix3::new(1.1, 0.05, 12.0, -0.03, 0.95, -7.0, 1e-4, -2e-4, 1.0);
        let h = Homography::new(m).unwrap();
        let hm = *h.matrix();
        let row = |i: usize| [hm[(i, 0)], hm[(i, 1)], hm[(i, 2)]];
        for _ in 0..100 {
            let p = Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let v = [p.x, p.y, 1.0];
            let (xh, xl) = dd_dot(row(0), v);
            let (yh, yl) = dd_dot(row(1), v);
            let (wh, wl) = dd_dot(row(2), v);
            let w = wh + wl;
            let expected = Point2::new((xh + xl) / w, (yh + yl) / w);
            let got = h.apply(&p).unwrap();
            assert!((got - expected).norm() < 1e-9);
        }
    }

    #[test]
    fn relative_pose_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_pose(&mut rng);
        let rel = relative_pose(&a, &a);
        assert!((rel.rotation() - Matrix3::identity()).amax() < 1e-9);
        assert!(rel.translation().norm() < 1e-9);

        let b = random_pose(&mut rng);
        let anchored = relative_pose(&Pose::identity(), &b);
        assert_eq!(anchored.rotation(), b.rotation());
        assert_eq!(anchored.translation(), b.translation());

        for _ in 0..50 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let rel = relative_pose(&a, &b);
            let composed = rel.compose(&a);
            assert!((composed.rotation() - b.rotation()).amax() < 1e-9);
            assert!((composed.translation() - b.translation()).amax() < 1e-9);
            Pose::new(*rel.rotation(), *rel.translation()).expect("relative pose stays a valid pose");
        }
    }

    #[test]
    fn pose_rejects_non_rotation() {
        let bad = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::new(bad, Vector3::zeros()).is_err());
        assert!(Pose::new(Matrix3::identity() * 1.01, Vector3::zeros()).is_err());
    }

    #[test]
    fn pose_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_pose(&mut rng);
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"R\""));
        let back: Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    fn cam() -> CameraModel {
        CameraModel::new(100.0, 100.0, 31.5, 23.5, 64, 48).unwrap()
    }

    #[test]
    fn gt_correspondence_identity() {
        let c = cam();
        let d = DepthMap::from_fn(64, 48, |_, _| 3.0).unwrap();
        let p = Point2::new(10.0, 7.0);
        let q = gt_correspondence(&d, &c, &c, &Pose::identity(), &d, &p, DEFAULT_DEPTH_TOLERANCE).unwrap();
        match q {
            Correspondence::Match(q) => assert!((q - p).norm() < 1e-12),
            Correspondence::NoMatch => panic!("expected match"),
        }
    }

    #[test]
    fn gt_correspondence_invalid_depth() {
        let c = cam();
        let d = DepthMap::from_fn(64, 48, |x, _| if x < 20 { 0.0 } else { 2.0 }).unwrap();
        let r = gt_correspondence(&d, &c, &c, &Pose::identity(), &d, &Point2::new(5.0, 5.0), 0.05);
        assert!(matches!(r, Err(GeometryError::InvalidDepth { .. })));
    }

    #[test]
    fn gt_correspondence_rejects_occlusion() {
        let c = cam();
        let da = DepthMap::from_fn(64, 48, |_, _| 3.0).unwrap();
        let db = DepthMap::from_fn(64, 48, |_, _| 1.0).unwrap();
        let r = gt_correspondence(&da, &c, &c, &Pose::identity(), &db, &Point2::new(5.0, 5.0), 0.05).unwrap();
        assert_eq!(r, Correspondence::NoMatch);
    }

    /// Fronto-parallel plane z = d in camera A. B sees it through the
    /// plane-induced homography K_B (R + t nᵀ / d) K_A⁻¹ with n = (0, 0, 1).
    #[test]
    fn planar_scene_matches_induced_homography() {
        let cam_a = CameraModel::new(120.0, 118.0, 40.0, 30.0, 80, 60).unwrap();
        let cam_b = CameraModel::new(110.0, 112.0, 41.0, 29.0, 80, 60).unwrap();
        let plane_d = 5.0;
        let r = rotation_from_axis_angle(&Vector3::new(0.2, 1.0, 0.1), 0.05);
        let t = Vector3::new(0.3, -0.1, 0.2);
        let rel = Pose::new(r, t).unwrap();
        let n = Vector3::new(0.0, 0.0, 1.0);
        let h_mat = cam_b.matrix() * (r + t * n.transpose() / plane_d) * cam_a.inverse_matrix();
        let h = Homography::new(h_mat).unwrap();

        let depth_a = DepthMap::from_fn(80, 60, |_, _| plane_d as f32).unwrap();
        // Depth of the same plane seen from B, along each B ray.
        let rt = r.transpose();
        let offset = (rt * t).dot(&n);
        let depth_b = DepthMap::from_fn(80, 60, |x, y| {
            let ray = cam_b.inverse_matrix() * Vector3::new(x as f64, y as f64, 1.0);
            ((plane_d + offset) / (rt * ray).dot(&n)) as f32
        })
        .unwrap();

        let mut checked = 0;
        for y in 0..60 {
            for x in 0..80 {
                let p = Point2::new(x as f64, y as f64);
                if let Correspondence::Match(q) = gt_correspondence(&depth_a, &cam_a, &cam_b, &rel, &depth_b, &p, 0.05).unwrap() {
                    let expected = h.apply(&p).unwrap();
                    assert!((q - expected).norm() < 1e-6, "pixel {p:?}: {q:?} vs {expected:?}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 2000, "only {checked} valid pixels");
    }

    #[test]
    fn depth_raw_round_trip_and_errors() {
        let d = DepthMap::from_fn(5, 3, |x, y| (x + 10 * y) as f32 * 0.5).unwrap();
        let bytes = d.to_raw_bytes();
        assert_eq!(&bytes[..4], b"DPTH");
        assert_eq!(bytes.len(), 16 + 15 * 4);
        assert_eq!(DepthMap::from_raw_bytes(&bytes).unwrap(), d);
        assert!(DepthMap::from_raw_bytes(&bytes[..20]).is_err());
        assert!(DepthMap::new(2, 2, vec![1.0, f32::NAN, 0.0, 1.0]).is_err());
        assert!(DepthMap::new(2, 2, vec![1.0, -1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn depth_png16() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_fn(4, 2, |x, y| image::Luma([(x * 1000 + y) as u16]));
        img.save(&path).unwrap();
        let d = DepthMap::load(&path, 1000.0).unwrap();
        assert_eq!(d.width(), 4);
        assert!((d.get(3, 1) - 3.001).abs() < 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn homography_inverse_round_trip(
                a in 0.7f64..1.3, b in -0.2f64..0.2, c in -50.0f64..50.0,
                d in -0.2f64..0.2, e in 0.7f64..1.3, f in -50.0f64..50.0,
                g in -5e-4f64..5e-4, h in -5e-4f64..5e-4,
                x in 0.0f64..640.0, y in 0.0f64..480.0,
            ) {
                let m = Matrix3::new(a, b, c, d, e, f, g, h, 1.0);
                let svd = m.svd(false, false);
                prop_assume!(svd.singular_values.max() / svd.singular_values.min() < 1e6);
                let hom = Homography::new(m).unwrap();
                let p = Point2::new(x, y);
                if let Ok(q) = hom.apply(&p) {
                    let back = hom.inverse().apply(&q).unwrap();
                    prop_assert!((back - p).norm() < 1e-6);
                }
            }
        }
    }
}
