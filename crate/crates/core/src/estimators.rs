//! Robust two-view model fitting and the geometric errors used for scoring.
//!
//! Homographies come from the Hartley-normalized DLT, essential matrices from
//! the normalized 8-point algorithm; both are wrapped in a seeded
//! hypothesize-and-verify RANSAC loop with an adaptive iteration bound.

use nalgebra::{DMatrix, Matrix2x1, Matrix3, Matrix3x2, Point2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraModel, GeometryError, Homography, Match, MatchSet, Pixel, Pose};

/// Minimal sample sizes.
pub const HOMOGRAPHY_SAMPLE: usize = 4;
pub const ESSENTIAL_SAMPLE: usize = 8;

/// Default essential-matrix inlier threshold in normalized image coordinates.
pub const DEFAULT_ESSENTIAL_THRESHOLD: f64 = 5e-4;
/// Default homography inlier threshold in pixels.
pub const DEFAULT_HOMOGRAPHY_THRESHOLD: f64 = 3.0;

const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("need at least {required} correspondences, got {got}")]
    NotEnoughMatches { required: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("estimation failed: {0}")]
    EstimationFailed(String),
    #[error("no pose candidate puts a majority of inliers in front of both cameras")]
    CheiralityAmbiguous,
    #[error("invalid ransac config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Pixels for homographies, normalized image units for essential matrices.
    pub threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl RansacConfig {
    pub fn homography() -> Self {
        Self { threshold: DEFAULT_HOMOGRAPHY_THRESHOLD, max_iterations: 10_000, confidence: 0.999, seed: 0 }
    }

    pub fn essential() -> Self {
        Self { threshold: DEFAULT_ESSENTIAL_THRESHOLD, max_iterations: 10_000, confidence: 0.999, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.threshold > 0.0) {
            return Err(EstimatorError::InvalidConfig(format!("threshold must be > 0, got {}", self.threshold)));
        }
        if self.max_iterations < 1 {
            return Err(EstimatorError::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(EstimatorError::InvalidConfig(format!("confidence must lie in (0, 1), got {}", self.confidence)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult<M> {
    pub model: M,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    pub iterations: usize,
}

/// Relative pose recovered from an essential matrix; `pose` has unit-norm translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub pose: Pose,
    pub essential: Matrix3<f64>,
}

/// Similarity taking the points to zero mean and mean distance √2.
fn normalizing_transform(points: &[Pixel]) -> Result<Matrix3<f64>, EstimatorError> {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(ax, ay), p| (ax + p.x, ay + p.y));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points.iter().map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt()).sum::<f64>() / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return Err(EstimatorError::DegenerateConfiguration("coincident points"));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform_points(t: &Matrix3<f64>, points: &[Pixel]) -> Vec<Pixel> {
    points.iter().map(|p| Point2::new(t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])).collect()
}

/// Right null vector of a design matrix with 9 columns, plus the two smallest
/// singular values relative to the largest (for rank checks).
fn null_vector(design: DMatrix<f64>) -> Option<([f64; 9], f64)> {
    let design = if design.nrows() < 9 { design.resize_vertically(9, 0.0) } else { design };
    let svd = design.svd(false, true);
    let v_t = svd.v_t?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let largest = sv[order[0]];
    if !(largest > 0.0) {
        return None;
    }
    let second_smallest = sv[order[7]] / largest;
    let row = v_t.row(order[8]);
    Some((std::array::from_fn(|i| row[i]), second_smallest))
}

fn dlt(points_a: &[Pixel], points_b: &[Pixel]) -> Result<Homography, EstimatorError> {
    let n = points_a.len();
    if n < HOMOGRAPHY_SAMPLE {
        return Err(EstimatorError::NotEnoughMatches { required: HOMOGRAPHY_SAMPLE, got: n });
    }
    let ta = normalizing_transform(points_a)?;
    let tb = normalizing_transform(points_b)?;
    let na = transform_points(&ta, points_a);
    let nb = transform_points(&tb, points_b);
    let mut design = DMatrix::<f64>::zeros(2 * n, 9);
    for (i, (p, q)) in na.iter().zip(&nb).enumerate() {
        let (x, y, u, v) = (p.x, p.y, q.x, q.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            design[(2 * i, j)] = r0[j];
            design[(2 * i + 1, j)] = r1[j];
        }
    }
    let (h, second_smallest) = null_vector(design).ok_or(EstimatorError::DegenerateConfiguration("svd failed"))?;
    if second_smallest < RANK_TOLERANCE {
        return Err(EstimatorError::DegenerateConfiguration("design matrix rank < 8"));
    }
    let hn = Matrix3::from_row_slice(&h);
    let tb_inv = tb.try_inverse().expect("similarity is invertible");
    Homography::new(tb_inv * hn * ta).map_err(|_| EstimatorError::DegenerateConfiguration("singular homography"))
}

/// Normalized direct linear transform over every correspondence in `matches`.
pub fn estimate_homography_dlt(matches: &MatchSet) -> Result<Homography, EstimatorError> {
    dlt(&matches.points_a(), &matches.points_b())
}

/// Exact homography through four point correspondences.
pub fn homography_from_points(points_a: &[Pixel], points_b: &[Pixel]) -> Result<Homography, EstimatorError> {
    dlt(points_a, points_b)
}

/// Root-mean-square of the forward and backward transfer distances.
pub fn symmetric_transfer_error(h: &Homography, h_inv: &Homography, m: &Match) -> f64 {
    let fwd = match h.apply(&m.a) {
        Ok(p) => (p - m.b).norm_squared(),
        Err(_) => return f64::INFINITY,
    };
    let bwd = match h_inv.apply(&m.b) {
        Ok(p) => (p - m.a).norm_squared(),
        Err(_) => return f64::INFINITY,
    };
    (0.5 * (fwd + bwd)).sqrt()
}

fn collinear(a: &Pixel, b: &Pixel, c: &Pixel) -> bool {
    let area = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    let scale = ((b - a).norm() * (c - a).norm()).max(f64::MIN_POSITIVE);
    area.abs() / scale < 1e-9
}

fn any_three_collinear(points: &[Pixel]) -> bool {
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if collinear(&points[i], &points[j], &points[k]) {
                    return true;
                }
            }
        }
    }
    false
}

/// Iteration bound for `confidence` given the current inlier ratio.
fn adaptive_bound(inlier_ratio: f64, sample: usize, confidence: f64, cap: usize) -> usize {
    let good = inlier_ratio.powi(sample as i32);
    if good >= 1.0 {
        return 1;
    }
    if good <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - good).ln();
    if !n.is_finite() {
        cap
    } else {
        (n.ceil() as usize).clamp(1, cap)
    }
}

struct Consensus<M> {
    model: M,
    mask: Vec<bool>,
    count: usize,
    cost: f64,
}

fn evaluate<M>(model: M, n: usize, threshold: f64, residual: &impl Fn(&M, usize) -> f64) -> Consensus<M> {
    let mut mask = vec![false; n];
    let mut count = 0;
    let mut cost = 0.0;
    for (i, slot) in mask.iter_mut().enumerate() {
        let r = residual(&model, i);
        if r < threshold {
            *slot = true;
            count += 1;
            cost += r;
        }
    }
    Consensus { model, mask, count, cost }
}

/// Generic seeded RANSAC. `fit` gets sample indices and may reject them.
fn ransac<M: Clone>(
    n: usize,
    sample: usize,
    cfg: &RansacConfig,
    fit: impl Fn(&[usize]) -> Option<M>,
    residual: impl Fn(&M, usize) -> f64,
) -> Option<(Consensus<M>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<Consensus<M>> = None;
    let mut bound = cfg.max_iterations;
    let mut iterations = 0;
    while iterations < bound {
        iterations += 1;
        let idx = rand::seq::index::sample(&mut rng, n, sample).into_vec();
        let Some(model) = fit(&idx) else { continue };
        let c = evaluate(model, n, cfg.threshold, &residual);
        let better = match &best {
            None => true,
            Some(b) => c.count > b.count || (c.count == b.count && c.cost < b.cost),
        };
        if better {
            bound = adaptive_bound(c.count as f64 / n as f64, sample, cfg.confidence, cfg.max_iterations);
            best = Some(c);
        }
    }
    let best = best?;
    if best.count < sample {
        return Some((best, iterations));
    }
    // Least-squares refit on the consensus set.
    let inlier_idx: Vec<usize> = (0..n).filter(|&i| best.mask[i]).collect();
    if let Some(refit) = fit(&inlier_idx) {
        let c = evaluate(refit, n, cfg.threshold, &residual);
        if c.count >= best.count {
            return Some((c, iterations));
        }
    }
    Some((best, iterations))
}

/// Robust homography: 4-point DLT hypotheses scored by symmetric transfer
/// error, adaptive stopping, final refit on the inliers.
pub fn ransac_homography(matches: &MatchSet, cfg: &RansacConfig) -> Result<EstimateResult<Homography>, EstimatorError> {
    cfg.validate()?;
    let n = matches.len();
    if n < HOMOGRAPHY_SAMPLE {
        return Err(EstimatorError::EstimationFailed(format!("{n} matches, need at least {HOMOGRAPHY_SAMPLE}")));
    }
    let pa = matches.points_a();
    let pb = matches.points_b();
    let fit = |idx: &[usize]| -> Option<(Homography, Homography)> {
        let a: Vec<Pixel> = idx.iter().map(|&i| pa[i]).collect();
        let b: Vec<Pixel> = idx.iter().map(|&i| pb[i]).collect();
        if idx.len() == HOMOGRAPHY_SAMPLE && (any_three_collinear(&a) || any_three_collinear(&b)) {
            return None;
        }
        let h = dlt(&a, &b).ok()?;
        Some((h, h.inverse()))
    };
    let residual = |m: &(Homography, Homography), i: usize| symmetric_transfer_error(&m.0, &m.1, &matches.matches[i]);
    let (best, iterations) = ransac(n, HOMOGRAPHY_SAMPLE, cfg, fit, residual)
        .ok_or_else(|| EstimatorError::EstimationFailed("every minimal sample was degenerate".into()))?;
    if best.count < HOMOGRAPHY_SAMPLE {
        return Err(EstimatorError::EstimationFailed(format!("best hypothesis has {} inliers", best.count)));
    }
    Ok(EstimateResult { model: best.model.0, inliers: best.mask, inlier_count: best.count, iterations })
}

fn normalized_points(matches: &MatchSet, cam_a: &CameraModel, cam_b: &CameraModel) -> (Vec<Pixel>, Vec<Pixel>) {
    let a = matches.matches.iter().map(|m| cam_a.normalize(&m.a)).collect();
    let b = matches.matches.iter().map(|m| cam_b.normalize(&m.b)).collect();
    (a, b)
}

/// Closest essential matrix (singular values `(1, 1, 0)`).
pub fn project_to_essential(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let mut s = Matrix3::zeros();
    s[(order[0], order[0])] = 1.0;
    s[(order[1], order[1])] = 1.0;
    u * s * v_t
}

fn eight_point(xa: &[Pixel], xb: &[Pixel]) -> Result<Matrix3<f64>, EstimatorError> {
    let n = xa.len();
    if n < ESSENTIAL_SAMPLE {
        return Err(EstimatorError::NotEnoughMatches { required: ESSENTIAL_SAMPLE, got: n });
    }
    let ta = normalizing_transform(xa)?;
    let tb = normalizing_transform(xb)?;
    let na = transform_points(&ta, xa);
    let nb = transform_points(&tb, xb);
    let mut design = DMatrix::<f64>::zeros(n, 9);
    for (i, (p, q)) in na.iter().zip(&nb).enumerate() {
        let row = [q.x * p.x, q.x * p.y, q.x, q.y * p.x, q.y * p.y, q.y, p.x, p.y, 1.0];
        for j in 0..9 {
            design[(i, j)] = row[j];
        }
    }
    let (f, second_smallest) = null_vector(design).ok_or(EstimatorError::DegenerateConfiguration("svd failed"))?;
    if second_smallest < RANK_TOLERANCE {
        return Err(EstimatorError::DegenerateConfiguration("design matrix rank < 8"));
    }
    let fn_ = Matrix3::from_row_slice(&f);
    let e = tb.transpose() * fn_ * ta;
    Ok(project_to_essential(&e))
}

/// Normalized 8-point essential matrix, projected onto the essential
/// manifold. Satisfies `x_bᵀ E x_a = 0` for normalized points.
pub fn estimate_essential_8pt(matches: &MatchSet, cam_a: &CameraModel, cam_b: &CameraModel) -> Result<Matrix3<f64>, EstimatorError> {
    let (a, b) = normalized_points(matches, cam_a, cam_b);
    eight_point(&a, &b)
}

/// Symmetric epipolar distance in normalized coordinates:
/// `sqrt((x'ᵀEx)² · (1/‖(Ex)₁₂‖² + 1/‖(Eᵀx')₁₂‖²))`.
pub fn epipolar_distance(e: &Matrix3<f64>, xa: &Pixel, xb: &Pixel) -> f64 {
    let a = Vector3::new(xa.x, xa.y, 1.0);
    let b = Vector3::new(xb.x, xb.y, 1.0);
    let ea = e * a;
    let etb = e.transpose() * b;
    let num = b.dot(&ea);
    let d1 = ea.x * ea.x + ea.y * ea.y;
    let d2 = etb.x * etb.x + etb.y * etb.y;
    if num == 0.0 {
        return 0.0;
    }
    if d1 == 0.0 || d2 == 0.0 {
        return f64::INFINITY;
    }
    (num * num * (1.0 / d1 + 1.0 / d2)).sqrt()
}

/// Epipolar error of a pixel match under `e`.
pub fn epipolar_error(e: &Matrix3<f64>, m: &Match, cam_a: &CameraModel, cam_b: &CameraModel) -> f64 {
    epipolar_distance(e, &cam_a.normalize(&m.a), &cam_b.normalize(&m.b))
}

/// The four `(R, t)` factorizations of an essential matrix.
pub fn decompose_essential(e: &Matrix3<f64>) -> [(Matrix3<f64>, Vector3<f64>); 4] {
    let svd = e.svd(true, true);
    let (mut u, mut v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    // Put the null direction last.
    let sv = svd.singular_values;
    let zero = (0..3).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).unwrap();
    if zero != 2 {
        u.swap_columns(zero, 2);
        v_t.swap_rows(zero, 2);
    }
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v_t.determinant() < 0.0 {
        v_t.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vector3<f64> = u.column(2).into_owned().normalize();
    [(r1, t), (r1, -t), (r2, t), (r2, -t)]
}

/// Depths of a normalized correspondence in both cameras (least squares).
fn triangulate_depths(r: &Matrix3<f64>, t: &Vector3<f64>, xa: &Pixel, xb: &Pixel) -> Option<(f64, f64)> {
    let a = Vector3::new(xa.x, xa.y, 1.0);
    let b = Vector3::new(xb.x, xb.y, 1.0);
    let ra = r * a;
    let m = Matrix3x2::from_columns(&[ra, -b]);
    let mtm = m.transpose() * m;
    let rhs: Matrix2x1<f64> = m.transpose() * (-t);
    let sol = mtm.try_inverse()? * rhs;
    Some((sol[0], sol[1]))
}

/// Robust relative pose: 8-point hypotheses, symmetric epipolar distance in
/// normalized coordinates, cheirality selection among the four candidates.
pub fn ransac_essential(
    matches: &MatchSet,
    cam_a: &CameraModel,
    cam_b: &CameraModel,
    cfg: &RansacConfig,
) -> Result<EstimateResult<RelativePose>, EstimatorError> {
    cfg.validate()?;
    let n = matches.len();
    if n < ESSENTIAL_SAMPLE {
        return Err(EstimatorError::EstimationFailed(format!("{n} matches, need at least {ESSENTIAL_SAMPLE}")));
    }
    let (xa, xb) = normalized_points(matches, cam_a, cam_b);
    let fit = |idx: &[usize]| -> Option<Matrix3<f64>> {
        let a: Vec<Pixel> = idx.iter().map(|&i| xa[i]).collect();
        let b: Vec<Pixel> = idx.iter().map(|&i| xb[i]).collect();
        eight_point(&a, &b).ok()
    };
    let residual = |e: &Matrix3<f64>, i: usize| epipolar_distance(e, &xa[i], &xb[i]);
    let (best, iterations) = ransac(n, ESSENTIAL_SAMPLE, cfg, fit, residual)
        .ok_or_else(|| EstimatorError::EstimationFailed("every minimal sample was degenerate".into()))?;
    if best.count < ESSENTIAL_SAMPLE {
        return Err(EstimatorError::EstimationFailed(format!("best hypothesis has {} inliers", best.count)));
    }
    let e = best.model;
    let inlier_idx: Vec<usize> = (0..n).filter(|&i| best.mask[i]).collect();
    let mut best_candidate = None;
    let mut best_positive = 0usize;
    for (r, t) in decompose_essential(&e) {
        let positive =
            inlier_idx.iter().filter(|&&i| matches!(triangulate_depths(&r, &t, &xa[i], &xb[i]), Some((za, zb)) if za > 0.0 && zb > 0.0)).count();
        if positive > best_positive {
            best_positive = positive;
            best_candidate = Some((r, t));
        }
    }
    let Some((r, t)) = best_candidate.filter(|_| 2 * best_positive > inlier_idx.len()) else {
        return Err(EstimatorError::CheiralityAmbiguous);
    };
    let pose = Pose::new(orthonormalize(&r), t)?;
    Ok(EstimateResult { model: RelativePose { pose, essential: e }, inliers: best.mask, inlier_count: best.count, iterations })
}

/// Nearest rotation (removes round-off drift from SVD products).
fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut out = u * v_t;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * v_t;
    }
    out
}

/// Angle in degrees of the rotation `R_aᵀ R_b`.
pub fn rotation_angle_deg(ra: &Matrix3<f64>, rb: &Matrix3<f64>) -> f64 {
    let m = ra.transpose() * rb;
    let cos = 0.5 * (m.trace() - 1.0);
    let axis = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin = 0.5 * axis.norm();
    sin.atan2(cos).to_degrees()
}

/// Angle in degrees between two translation directions.
pub fn direction_angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseErrors {
    pub rotation_deg: f64,
    pub translation_deg: f64,
    /// Ground truth has no baseline, so the translation error is defined as 0.
    pub zero_baseline: bool,
}

impl PoseErrors {
    pub fn max(&self) -> f64 {
        self.rotation_deg.max(self.translation_deg)
    }
}

pub fn pose_errors(estimated: &Pose, ground_truth: &Pose) -> PoseErrors {
    let rotation_deg = rotation_angle_deg(estimated.rotation(), ground_truth.rotation());
    let (te, tg) = (estimated.translation(), ground_truth.translation());
    let zero_baseline = tg.norm() == 0.0;
    let translation_deg = if zero_baseline {
        0.0
    } else if te.norm() == 0.0 {
        180.0
    } else {
        direction_angle_deg(te, tg)
    };
    PoseErrors { rotation_deg, translation_deg, zero_baseline }
}

/// Pose error in degrees: the larger of the rotation angle and the
/// translation-direction angle.
pub fn pose_error(estimated: &Pose, ground_truth: &Pose) -> f64 {
    pose_errors(estimated, ground_truth).max()
}

/// The four corners used for homography scoring (pixel-center convention).
pub fn image_corners(width: u32, height: u32) -> [Pixel; 4] {
    let (w, h) = ((width.max(1) - 1) as f64, (height.max(1) - 1) as f64);
    [Point2::new(0.0, 0.0), Point2::new(w, 0.0), Point2::new(w, h), Point2::new(0.0, h)]
}

/// Mean distance between the four image corners mapped by each homography.
pub fn corner_error(h_est: &Homography, h_gt: &Homography, width: u32, height: u32) -> Result<f64, GeometryError> {
    let mut total = 0.0;
    for c in image_corners(width, height) {
        total += (h_est.apply(&c)? - h_gt.apply(&c)?).norm();
    }
    Ok(total / 4.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_from_axis_angle;
    use rand::{Rng, SeedableRng};

    fn square_matches(h: &Homography, pts: &[Pixel]) -> MatchSet {
        let m = pts
            .iter()
            .map(|p| {
                let q = h.apply(p).unwrap();
                Match::new(p.x, p.y, q.x, q.y, 1.0)
            })
            .collect();
        MatchSet::new("a", "b", m)
    }

    fn random_homography(rng: &mut impl Rng) -> Homography {
        let corners = image_corners(640, 480);
        let moved: Vec<Pixel> =
            corners.iter().map(|c| Point2::new(c.x + rng.random_range(-80.0..80.0), c.y + rng.random_range(-80.0..80.0))).collect();
        homography_from_points(&corners, &moved).unwrap()
    }

    fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Pixel> {
        (0..n).map(|_| Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0))).collect()
    }

    #[test]
    fn dlt_identity_on_unit_square() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(1.0, 1.0), Point2::new(0.0, 1.0)];
        let h = estimate_homography_dlt(&square_matches(&Homography::identity(), &pts)).unwrap();
        assert!((h.matrix() - Homography::identity().matrix()).amax() < 1e-12);
    }

    #[test]
    fn dlt_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = Homography::from_translation(12.5, -3.0);
        let h = estimate_homography_dlt(&square_matches(&gt, &random_points(&mut rng, 10))).unwrap();
        assert!((h.matrix() - gt.matrix()).amax() < 1e-9);
    }

    #[test]
    fn dlt_recovers_random_projective_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let gt = random_homography(&mut rng);
            let h = estimate_homography_dlt(&square_matches(&gt, &random_points(&mut rng, 20))).unwrap();
            assert!((h.matrix() - gt.matrix()).amax() < 1e-6);
        }
    }

    #[test]
    fn dlt_degenerate_cases() {
        let collinear: Vec<Pixel> = (0..6).map(|i| Point2::new(i as f64, 2.0 * i as f64)).collect();
        let ms = square_matches(&Homography::identity(), &collinear);
        assert!(matches!(estimate_homography_dlt(&ms), Err(EstimatorError::DegenerateConfiguration(_))));
        let three = square_matches(&Homography::identity(), &collinear[..3]);
        assert!(matches!(estimate_homography_dlt(&three), Err(EstimatorError::NotEnoughMatches { .. })));
    }

    /// Conjugation: if both point sets move by a similarity S, the recovered
    /// map becomes S H S⁻¹.
    #[test]
    fn dlt_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = random_homography(&mut rng);
        let pts = random_points(&mut rng, 15);
        let ms = square_matches(&gt, &pts);
        let h = estimate_homography_dlt(&ms).unwrap();
        let (c, s) = (0.3f64.cos() * 1.7, 0.3f64.sin() * 1.7);
        let sim = Matrix3::new(c, -s, 40.0, s, c, -25.0, 0.0, 0.0, 1.0);
        let moved: Vec<Match> = ms
            .matches
            .iter()
            .map(|m| {
                let a = crate::geometry::apply_matrix(&sim, &m.a).unwrap();
                let b = crate::geometry::apply_matrix(&sim, &m.b).unwrap();
                Match::new(a.x, a.y, b.x, b.y, 1.0)
            })
            .collect();
        let h2 = estimate_homography_dlt(&MatchSet::new("a", "b", moved)).unwrap();
        let expected = Homography::new(sim * h.matrix() * sim.try_inverse().unwrap()).unwrap();
        assert!((h2.matrix() - expected.matrix()).amax() < 1e-8);
    }

    #[test]
    fn ransac_noiseless_all_inliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = random_homography(&mut rng);
        let ms = square_matches(&gt, &random_points(&mut rng, 40));
        let r = ransac_homography(&ms, &RansacConfig::homography()).unwrap();
        assert!(r.inliers.iter().all(|&b| b));
        assert!((r.model.matrix() - gt.matrix()).amax() < 1e-6);
    }

    fn contaminate(rng: &mut impl Rng, ms: &mut MatchSet, count: usize) {
        for _ in 0..count {
            let p = Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let q = Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            ms.matches.push(Match::new(p.x, p.y, q.x, q.y, 0.5));
        }
    }

    #[test]
    fn ransac_half_outliers() {
        let mut failures = 0;
        for trial in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
            let gt = random_homography(&mut rng);
            let mut ms = square_matches(&gt, &random_points(&mut rng, 50));
            contaminate(&mut rng, &mut ms, 50);
            let r = ransac_homography(&ms, &RansacConfig::homography().with_seed(trial)).unwrap();
            let err = corner_error(&r.model, &gt, 640, 480).unwrap();
            let kept = r.inliers[..50].iter().filter(|&&b| b).count();
            if err >= 1.0 || kept < 48 {
                failures += 1;
            }
        }
        assert_eq!(failures, 0);
    }

    #[test]
    fn ransac_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gt = random_homography(&mut rng);
        let mut ms = square_matches(&gt, &random_points(&mut rng, 30));
        contaminate(&mut rng, &mut ms, 30);
        let cfg = RansacConfig::homography().with_seed(77);
        let a = ransac_homography(&ms, &cfg).unwrap();
        let b = ransac_homography(&ms, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ransac_below_minimal_sample() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(1.0, 1.0)];
        let ms = square_matches(&Homography::identity(), &pts);
        assert!(matches!(ransac_homography(&ms, &RansacConfig::homography()), Err(EstimatorError::EstimationFailed(_))));
        let bad = RansacConfig { threshold: 0.0, ..RansacConfig::homography() };
        assert!(matches!(bad.validate(), Err(EstimatorError::InvalidConfig(_))));
    }

    struct Rig {
        cam: CameraModel,
        rel: Pose,
        matches: MatchSet,
    }

    fn rig(rng: &mut impl Rng, n: usize, rotation: f64, baseline: Vector3<f64>) -> Rig {
        let cam = CameraModel::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let rel = Pose::new(rotation_from_axis_angle(&axis, rotation), baseline).unwrap();
        let mut m = Vec::new();
        while m.len() < n {
            let p = Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let z = rng.random_range(4.0..8.0);
            let ray = cam.normalize(&p);
            let xb = rel.transform(&Vector3::new(ray.x * z, ray.y * z, z));
            if xb.z <= 0.1 {
                continue;
            }
            let q = cam.project(&xb);
            if cam.contains(&q) {
                m.push(Match::new(p.x, p.y, q.x, q.y, 1.0));
            }
        }
        Rig { cam, rel, matches: MatchSet::new("a", "b", m) }
    }

    fn unit_pose(p: &Pose) -> Pose {
        Pose::new(*p.rotation(), p.translation().normalize()).unwrap()
    }

    fn angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        // Angle between the vectorized matrices, up to sign.
        let (a, b) = (a / a.norm(), b / b.norm());
        let b = b * a.dot(&b).signum();
        2.0 * (0.5 * (a - b).norm()).asin()
    }

    #[test]
    fn eight_point_recovers_rig_essential() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let r = rig(&mut rng, 30, 0.2, Vector3::new(0.8, 0.1, -0.2));
            let e = estimate_essential_8pt(&r.matches, &r.cam, &r.cam).unwrap();
            let gt = crate::geometry::skew(r.rel.translation()) * r.rel.rotation();
            assert!(angle_between(&e, &gt) < 1e-4);
            let sv = e.svd(false, false).singular_values;
            let mut s: Vec<f64> = sv.iter().copied().collect();
            s.sort_by(|a, b| b.total_cmp(a));
            assert!((s[0] - s[1]).abs() / s[0] < 1e-9 && s[2] / s[0] < 1e-9);
        }
    }

    #[test]
    fn eight_point_pure_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let r = rig(&mut rng, 20, 0.0, Vector3::new(1.0, 0.0, 0.0));
        let e = estimate_essential_8pt(&r.matches, &r.cam, &r.cam).unwrap();
        let tx = crate::geometry::skew(&Vector3::new(1.0, 0.0, 0.0));
        assert!(angle_between(&e, &tx) < 1e-6);
    }

    #[test]
    fn eight_point_needs_eight() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut r = rig(&mut rng, 7, 0.1, Vector3::new(1.0, 0.0, 0.0));
        r.matches.matches.truncate(7);
        assert!(estimate_essential_8pt(&r.matches, &r.cam, &r.cam).is_err());
    }

    #[test]
    fn ransac_essential_noiseless() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for trial in 0..10 {
            let r = rig(&mut rng, 100, 0.3, Vector3::new(0.7, -0.2, 0.3));
            let est = ransac_essential(&r.matches, &r.cam, &r.cam, &RansacConfig::essential().with_seed(trial)).unwrap();
            let errs = pose_errors(&est.model.pose, &unit_pose(&r.rel));
            assert!(errs.rotation_deg < 0.1 && errs.translation_deg < 0.1, "{errs:?}");
            assert!((est.model.pose.translation().norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ransac_essential_with_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for trial in 0..50 {
            let mut r = rig(&mut rng, 70, 0.25, Vector3::new(-0.6, 0.3, 0.4));
            contaminate(&mut rng, &mut r.matches, 30);
            let cfg = RansacConfig::essential().with_threshold(1e-3).with_seed(trial);
            let est = ransac_essential(&r.matches, &r.cam, &r.cam, &cfg).unwrap();
            let errs = pose_errors(&est.model.pose, &unit_pose(&r.rel));
            assert!(errs.rotation_deg < 1.0, "trial {trial}: {errs:?}");
        }
    }

    #[test]
    fn zero_baseline_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let r = rig(&mut rng, 60, 0.2, Vector3::zeros());
        let res = ransac_essential(&r.matches, &r.cam, &r.cam, &RansacConfig::essential());
        assert!(matches!(res, Err(EstimatorError::CheiralityAmbiguous) | Err(EstimatorError::EstimationFailed(_))));
    }

    #[test]
    fn pose_error_cases() {
        let p = Pose::new(rotation_from_axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.4), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert!(pose_error(&p, &p) < 1e-12);
        let rz = rotation_from_axis_angle(&Vector3::z(), 10f64.to_radians());
        let q = Pose::new(rz * p.rotation(), *p.translation()).unwrap();
        assert!((pose_error(&q, &p) - 10.0).abs() < 1e-9);
        let zero = Pose::new(*p.rotation(), Vector3::zeros()).unwrap();
        let e = pose_errors(&p, &zero);
        assert!(e.zero_baseline && e.translation_deg == 0.0);
    }

    /// Quaternion route: angle = 2·atan2(|v|, |w|) of q_estᵀ q_gt.
    #[test]
    fn rotation_error_matches_quaternion_oracle() {
        use nalgebra::{Rotation3, UnitQuaternion};
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for _ in 0..200 {
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let ra = rotation_from_axis_angle(&axis, rng.random_range(-3.0..3.0));
            let axis2 = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let rb = rotation_from_axis_angle(&axis2, rng.random_range(-0.5..0.5)) * ra;
            let qa = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(ra));
            let qb = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rb));
            let d = qa.inverse() * qb;
            let oracle = (2.0 * d.imag().norm().atan2(d.w.abs())).to_degrees();
            assert!((rotation_angle_deg(&ra, &rb) - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn corner_error_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let gt = random_homography(&mut rng);
        assert_eq!(corner_error(&gt, &gt, 640, 480).unwrap(), 0.0);
        let shifted = Homography::from_translation(2.0, 0.0).compose(&gt).unwrap();
        assert!((corner_error(&shifted, &gt, 640, 480).unwrap() - 2.0).abs() < 1e-9);

        let est = random_homography(&mut rng);
        let (w, h) = (640.0 - 1.0, 480.0 - 1.0);
        let mut manual = 0.0;
        for (x, y) in [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)] {
            let map = |m: &Matrix3<f64>| {
                let d = m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)];
                ((m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)]) / d, (m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)]) / d)
            };
            let (a, b) = (map(est.matrix()), map(gt.matrix()));
            manual += ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        }
        assert!((corner_error(&est, &gt, 640, 480).unwrap() - manual / 4.0).abs() < 1e-9);
    }

    #[test]
    fn epipolar_error_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let r = rig(&mut rng, 10, 0.2, Vector3::new(1.0, 0.2, 0.0));
        let e = crate::geometry::skew(r.rel.translation()) * r.rel.rotation();
        let m = r.matches.matches[0];
        assert!(epipolar_error(&e, &m, &r.cam, &r.cam) < 1e-12);
        let scaled = epipolar_error(&(e * -3.7), &Match::new(m.a.x, m.a.y, m.b.x + 2.0, m.b.y, 1.0), &r.cam, &r.cam);
        let base = epipolar_error(&e, &Match::new(m.a.x, m.a.y, m.b.x + 2.0, m.b.y, 1.0), &r.cam, &r.cam);
        assert!((scaled - base).abs() < 1e-12 * base.max(1.0));

        // Sweep along the epipolar-line normal in B.
        let xa = r.cam.normalize(&m.a);
        let line = e * Vector3::new(xa.x, xa.y, 1.0);
        let normal = Point2::new(line.x, line.y).coords.normalize() * r.cam.fx;
        let mut last = 0.0;
        for k in 1..20 {
            let d = k as f64 * 0.25;
            let mm = Match::new(m.a.x, m.a.y, m.b.x + normal.x * d / r.cam.fx, m.b.y + normal.y * d / r.cam.fy, 1.0);
            let err = epipolar_error(&e, &mm, &r.cam, &r.cam);
            assert!(err > last);
            last = err;
        }
    }
}
