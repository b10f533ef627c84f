//! Aggregate quantities: AUC tables, match correctness, image quality,
//! intensity statistics and the serialized evaluation report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::Matrix3;
use serde::de::Deserializer;
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::epipolar_error;
use crate::geometry::{skew, CameraModel, Homography, MatchSet, Pose};
use crate::raster::Raster;

/// Pose AUC thresholds, degrees.
pub const POSE_THRESHOLDS_DEG: [f64; 3] = [5.0, 10.0, 20.0];
/// Homography (corner error) AUC thresholds, pixels.
pub const HOMOGRAPHY_THRESHOLDS_PX: [f64; 3] = [3.0, 5.0, 10.0];
/// A match is correct below this epipolar error (normalized coordinates).
pub const EPIPOLAR_CORRECT_THRESHOLD: f64 = 5e-4;
/// A match is correct below this projection error (pixels).
pub const PROJECTION_CORRECT_THRESHOLD_PX: f64 = 3.0;
/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_DYNAMIC_RANGE: f64 = 255.0;

pub const AUC_METHOD: &str = "exact integral of the empirical recall step function; failures count as infinite error";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("image size mismatch: {0:?} vs {1:?}")]
    SizeMismatch((u32, u32, usize), (u32, u32, usize)),
    #[error("invalid threshold {0}")]
    InvalidThreshold(f64),
    #[error("histogram needs at least 2 bins, got {0}")]
    InvalidBins(usize),
    #[error("cannot merge reports: {0}")]
    Incompatible(String),
}

/// Area under the recall curve up to `t`, as a percentage:
/// `100 · Σ max(0, t − eᵢ) / (n · t)`. Non-finite errors count as failures.
pub fn auc(errors: &[f64], t: f64) -> Result<f64, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(MetricsError::InvalidThreshold(t));
    }
    let area: f64 = errors.iter().filter(|e| e.is_finite()).map(|&e| (t - e.max(0.0)).max(0.0)).sum();
    Ok(100.0 * area / (errors.len() as f64 * t))
}

/// AUC values at several thresholds. Serializes as `{"<threshold>": value}`
/// in threshold order.
#[derive(Debug, Clone, PartialEq)]
pub struct AucTable {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

impl AucTable {
    pub fn compute(errors: &[f64], thresholds: &[f64]) -> Result<Self, MetricsError> {
        let values = thresholds.iter().map(|&t| auc(errors, t)).collect::<Result<_, _>>()?;
        Ok(Self { thresholds: thresholds.to_vec(), values })
    }

    pub fn get(&self, threshold: f64) -> Option<f64> {
        self.thresholds.iter().position(|&t| t == threshold).map(|i| self.values[i])
    }
}

impl Serialize for AucTable {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.thresholds.len()))?;
        for (t, v) in self.thresholds.iter().zip(&self.values) {
            map.serialize_entry(&format!("{t}"), v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for AucTable {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, f64>::deserialize(deserializer)?;
        let mut pairs =
            raw.into_iter().map(|(k, v)| k.parse::<f64>().map(|t| (t, v)).map_err(serde::de::Error::custom)).collect::<Result<Vec<_>, _>>()?;
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { thresholds: pairs.iter().map(|p| p.0).collect(), values: pairs.iter().map(|p| p.1).collect() })
    }
}

/// Ground truth a match set is checked against.
#[derive(Debug, Clone, Copy)]
pub enum GroundTruth {
    Pose { a_to_b: Pose, cam_a: CameraModel, cam_b: CameraModel },
    Homography(Homography),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchStats {
    pub total: usize,
    pub correct: usize,
    /// `correct / total`, or 0 for an empty set.
    pub precision: f64,
    /// Per-match geometric error (epipolar or pixel), in match order.
    #[serde(skip)]
    pub errors: Vec<f64>,
}

/// Essential matrix of a ground-truth relative pose.
pub fn essential_from_pose(a_to_b: &Pose) -> Matrix3<f64> {
    skew(a_to_b.translation()) * a_to_b.rotation()
}

/// Labels each match correct or not against the ground truth.
pub fn classify_matches(matches: &MatchSet, gt: &GroundTruth) -> MatchStats {
    let (errors, threshold): (Vec<f64>, f64) = match gt {
        GroundTruth::Pose { a_to_b, cam_a, cam_b } => {
            let e = essential_from_pose(a_to_b);
            (matches.matches.iter().map(|m| epipolar_error(&e, m, cam_a, cam_b)).collect(), EPIPOLAR_CORRECT_THRESHOLD)
        }
        GroundTruth::Homography(h) => (
            matches.matches.iter().map(|m| h.apply(&m.a).map(|q| (q - m.b).norm()).unwrap_or(f64::INFINITY)).collect(),
            PROJECTION_CORRECT_THRESHOLD_PX,
        ),
    };
    let correct = errors.iter().filter(|&&e| e < threshold).count();
    let total = errors.len();
    let precision = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
    MatchStats { total, correct, precision, errors }
}

fn check_same_shape(a: &Raster, b: &Raster) -> Result<(), MetricsError> {
    if a.dimensions() != b.dimensions() || a.channels() != b.channels() {
        return Err(MetricsError::SizeMismatch((a.width(), a.height(), a.channels()), (b.width(), b.height(), b.channels())));
    }
    Ok(())
}

/// PSNR in dB for 8-bit range images; identical images give [`PSNR_CAP_DB`].
pub fn psnr(reference: &Raster, candidate: &Raster) -> Result<f64, MetricsError> {
    check_same_shape(reference, candidate)?;
    if reference.data().is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let sse: f64 = reference.data().iter().zip(candidate.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    if sse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    let mse = sse / reference.data().len() as f64;
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

fn gaussian_kernel(len: usize, sigma: f64) -> Vec<f64> {
    let c = (len as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..len).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of a row-major grid.
fn filter_valid(data: &[f64], w: usize, h: usize, kx: &[f64], ky: &[f64]) -> (Vec<f64>, usize, usize) {
    let ow = w - kx.len() + 1;
    let oh = h - ky.len() + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = kx.iter().enumerate().map(|(i, k)| k * data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = ky.iter().enumerate().map(|(j, k)| k * tmp[(y + j) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM over all fully-contained 11×11 Gaussian windows (σ = 1.5).
/// Images smaller than the window use a window truncated to the image.
pub fn ssim(reference: &Raster, candidate: &Raster) -> Result<f64, MetricsError> {
    check_same_shape(reference, candidate)?;
    let (a, b) = (reference.to_gray(), candidate.to_gray());
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w == 0 || h == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let kx = gaussian_kernel(SSIM_WINDOW.min(w), SSIM_SIGMA);
    let ky = gaussian_kernel(SSIM_WINDOW.min(h), SSIM_SIGMA);
    let c1 = (SSIM_K1 * SSIM_DYNAMIC_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_DYNAMIC_RANGE).powi(2);
    let (x, y) = (a.data(), b.data());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let (mx, ow, oh) = filter_valid(x, w, h, &kx, &ky);
    let (my, _, _) = filter_valid(y, w, h, &kx, &ky);
    let (sxx, _, _) = filter_valid(&xx, w, h, &kx, &ky);
    let (syy, _, _) = filter_valid(&yy, w, h, &kx, &ky);
    let (sxy, _, _) = filter_valid(&xy, w, h, &kx, &ky);
    let mut total = 0.0;
    for i in 0..ow * oh {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cov = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / (ow * oh) as f64)
}

/// Probability mass per bin over the 8-bit range `[0, 256)`.
pub fn intensity_histogram(image: &Raster, bins: usize) -> Result<Vec<f64>, MetricsError> {
    if bins < 2 {
        return Err(MetricsError::InvalidBins(bins));
    }
    let data = image.data();
    if data.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut counts = vec![0u64; bins];
    for &v in data {
        let b = ((v.clamp(0.0, 255.0) / 256.0) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let n = data.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Pose,
    Homography,
}

impl Task {
    pub fn thresholds(self) -> &'static [f64] {
        match self {
            Task::Pose => &POSE_THRESHOLDS_DEG,
            Task::Homography => &HOMOGRAPHY_THRESHOLDS_PX,
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Task::Pose => "deg",
            Task::Homography => "px",
        }
    }
}

/// Outcome of evaluating one image pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub pair_id: String,
    /// Modality case, e.g. `rgb-event`.
    pub case: String,
    /// Geometric error (deg or px); `None` when estimation failed.
    pub error: Option<f64>,
    pub matches: usize,
    pub correct_matches: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub zero_baseline: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl PairResult {
    pub fn precision(&self) -> f64 {
        if self.matches == 0 {
            0.0
        } else {
            self.correct_matches as f64 / self.matches as f64
        }
    }

    fn error_or_inf(&self) -> f64 {
        self.error.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub samples: usize,
    pub failures: usize,
    pub auc: AucTable,
    pub mean_precision: f64,
    pub total_matches: usize,
    pub correct_matches: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_runtime_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub zero_baseline_pairs: usize,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

impl CaseSummary {
    fn from_results(results: &[&PairResult], thresholds: &[f64]) -> Result<Self, MetricsError> {
        let errors: Vec<f64> = results.iter().map(|r| r.error_or_inf()).collect();
        let auc = AucTable::compute(&errors, thresholds)?;
        let n = results.len();
        let runtimes: Vec<f64> = results.iter().filter_map(|r| r.runtime_ms).collect();
        Ok(Self {
            samples: n,
            failures: results.iter().filter(|r| r.error.is_none()).count(),
            auc,
            mean_precision: results.iter().map(|r| r.precision()).sum::<f64>() / n as f64,
            total_matches: results.iter().map(|r| r.matches).sum(),
            correct_matches: results.iter().map(|r| r.correct_matches).sum(),
            mean_runtime_ms: (runtimes.len() == n).then(|| runtimes.iter().sum::<f64>() / n as f64),
            zero_baseline_pairs: results.iter().filter(|r| r.zero_baseline).count(),
        })
    }

    /// Sample-weighted combination of two disjoint summaries.
    pub fn merge(&self, other: &CaseSummary) -> Result<CaseSummary, MetricsError> {
        if self.auc.thresholds != other.auc.thresholds {
            return Err(MetricsError::Incompatible("threshold sets differ".into()));
        }
        let (n1, n2) = (self.samples as f64, other.samples as f64);
        let n = n1 + n2;
        let weighted = |a: f64, b: f64| (a * n1 + b * n2) / n;
        Ok(CaseSummary {
            samples: self.samples + other.samples,
            failures: self.failures + other.failures,
            auc: AucTable {
                thresholds: self.auc.thresholds.clone(),
                values: self.auc.values.iter().zip(&other.auc.values).map(|(a, b)| weighted(*a, *b)).collect(),
            },
            mean_precision: weighted(self.mean_precision, other.mean_precision),
            total_matches: self.total_matches + other.total_matches,
            correct_matches: self.correct_matches + other.correct_matches,
            mean_runtime_ms: match (self.mean_runtime_ms, other.mean_runtime_ms) {
                (Some(a), Some(b)) => Some(weighted(a, b)),
                _ => None,
            },
            zero_baseline_pairs: self.zero_baseline_pairs + other.zero_baseline_pairs,
        })
    }
}

/// Constants and provenance carried by every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub task: Task,
    pub thresholds: Vec<f64>,
    pub threshold_unit: String,
    pub epipolar_correct_threshold: f64,
    pub projection_correct_threshold_px: f64,
    pub resize_long_side: u32,
    pub clean_threshold_px: f64,
    pub keypoint_budget: usize,
    pub auc_method: String,
    /// Resolved pipeline configuration (including seeds), if any.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl ReportMetadata {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            thresholds: task.thresholds().to_vec(),
            threshold_unit: task.unit().to_string(),
            epipolar_correct_threshold: EPIPOLAR_CORRECT_THRESHOLD,
            projection_correct_threshold_px: PROJECTION_CORRECT_THRESHOLD_PX,
            resize_long_side: crate::engine::DEFAULT_EVAL_LONG_SIDE,
            clean_threshold_px: crate::engine::DEFAULT_CLEAN_THRESHOLD_PX,
            keypoint_budget: crate::matcher::DEFAULT_MAX_KEYPOINTS,
            auc_method: AUC_METHOD.to_string(),
            config: serde_json::Value::Null,
        }
    }
}

pub const REPORT_SCHEMA: &str = "mdsyn-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub version: u32,
    pub metadata: ReportMetadata,
    /// Modality case → summary (AUC per threshold, counts, precision).
    pub cases: BTreeMap<String, CaseSummary>,
    /// Per-pair rows ordered by `(case, pair_id)`.
    pub pairs: Vec<PairResult>,
}

/// Groups per-pair results by modality case and computes every summary.
pub fn aggregate_report(results: &[PairResult], metadata: ReportMetadata) -> Result<EvalReport, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut pairs = results.to_vec();
    pairs.sort_by(|a, b| a.case.cmp(&b.case).then_with(|| a.pair_id.cmp(&b.pair_id)));
    let mut grouped: BTreeMap<&str, Vec<&PairResult>> = BTreeMap::new();
    for r in &pairs {
        grouped.entry(r.case.as_str()).or_default().push(r);
    }
    let cases = grouped
        .into_iter()
        .map(|(case, rs)| CaseSummary::from_results(&rs, &metadata.thresholds).map(|s| (case.to_string(), s)))
        .collect::<Result<_, _>>()?;
    Ok(EvalReport { schema: REPORT_SCHEMA.into(), version: REPORT_VERSION, metadata, cases, pairs })
}

impl EvalReport {
    /// Combines reports over disjoint pair sets without revisiting the pairs.
    pub fn merge(&self, other: &EvalReport) -> Result<EvalReport, MetricsError> {
        if self.metadata.task != other.metadata.task || self.metadata.thresholds != other.metadata.thresholds {
            return Err(MetricsError::Incompatible("task or thresholds differ".into()));
        }
        let mut cases = self.cases.clone();
        for (k, v) in &other.cases {
            let merged = match cases.get(k) {
                Some(existing) => existing.merge(v)?,
                None => v.clone(),
            };
            cases.insert(k.clone(), merged);
        }
        let mut pairs = self.pairs.clone();
        pairs.extend(other.pairs.iter().cloned());
        pairs.sort_by(|a, b| a.case.cmp(&b.case).then_with(|| a.pair_id.cmp(&b.pair_id)));
        Ok(EvalReport { schema: self.schema.clone(), version: self.version, metadata: self.metadata.clone(), cases, pairs })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is serializable");
        s.push('\n');
        s
    }

    /// One row per modality case, AUC columns in threshold order.
    pub fn to_csv(&self) -> String {
        let unit = &self.metadata.threshold_unit;
        let mut out = String::from("case,samples,failures");
        for t in &self.metadata.thresholds {
            let _ = write!(out, ",AUC@{t}{unit}");
        }
        out.push_str(",precision,matches\n");
        for (case, s) in &self.cases {
            let _ = write!(out, "{case},{},{}", s.samples, s.failures);
            for v in &s.auc.values {
                let _ = write!(out, ",{v:.2}");
            }
            let _ = writeln!(out, ",{:.4},{}", s.mean_precision, s.total_matches);
        }
        out
    }

    /// Grouped bar chart: one group per case, one bar per threshold.
    pub fn to_svg(&self) -> String {
        let palette = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3"];
        let n_t = self.metadata.thresholds.len().max(1);
        let group_w = 24.0 * n_t as f64 + 24.0;
        let (left, top, plot_h) = (50.0, 30.0, 200.0);
        let width = left + group_w * self.cases.len().max(1) as f64 + 20.0;
        let height = top + plot_h + 60.0;
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#);
        let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + plot_h);
        for tick in [0, 25, 50, 75, 100] {
            let y = top + plot_h * (1.0 - tick as f64 / 100.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{tick}</text>"#, left - 4.0, y + 3.0);
        }
        for (gi, (case, summary)) in self.cases.iter().enumerate() {
            let gx = left + 12.0 + gi as f64 * group_w;
            for (ti, v) in summary.auc.values.iter().enumerate() {
                let bh = plot_h * v.clamp(0.0, 100.0) / 100.0;
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{:.3}" width="22" height="{:.3}" fill="{}"/>"#,
                    gx + ti as f64 * 24.0,
                    top + plot_h - bh,
                    bh,
                    palette[ti % palette.len()]
                );
            }
            let _ = writeln!(s, r#"<text x="{:.1}" y="{}">{case}</text>"#, gx, top + plot_h + 14.0);
        }
        for (ti, t) in self.metadata.thresholds.iter().enumerate() {
            let x = left + ti as f64 * 70.0;
            let y = top + plot_h + 34.0;
            let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/>"#, y - 9.0, palette[ti % palette.len()]);
            let _ = writeln!(s, r#"<text x="{}" y="{y}">AUC@{t}{}</text>"#, x + 14.0, self.metadata.threshold_unit);
        }
        s.push_str("</svg>\n");
        s
    }
}
