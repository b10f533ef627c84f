//! Pipeline configuration file (JSON).

use std::path::{Path, PathBuf};

use mdsyn_core::augment::WarpConfig;
use mdsyn_core::engine::{GeneratorSpec, DEFAULT_CLEAN_THRESHOLD_PX, DEFAULT_EVAL_LONG_SIDE};
use mdsyn_core::eventsim::DEFAULT_MOTION_PX;
use mdsyn_core::matcher::{BaselineMatcher, DEFAULT_MAX_KEYPOINTS, DEFAULT_RATIO, DEFAULT_SMOOTHING};
use mdsyn_core::RansacConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventOptions {
    /// Bound on corner displacement of the synthetic motion, pixels.
    pub motion_px: f64,
}

impl Default for EventOptions {
    fn default() -> Self {
        Self { motion_px: DEFAULT_MOTION_PX }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacSettings {
    pub homography: RansacConfig,
    pub pose: RansacConfig,
}

impl Default for RansacSettings {
    fn default() -> Self {
        Self { homography: RansacConfig::homography(), pose: RansacConfig::essential() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub clean_px: f64,
    pub eval_long_side: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { clean_px: DEFAULT_CLEAN_THRESHOLD_PX, eval_long_side: DEFAULT_EVAL_LONG_SIDE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherSettings {
    pub max_keypoints: usize,
    pub ratio: f64,
    pub smoothing: f64,
}

impl Default for MatcherSettings {
    fn default() -> Self {
        Self { max_keypoints: DEFAULT_MAX_KEYPOINTS, ratio: DEFAULT_RATIO, smoothing: DEFAULT_SMOOTHING }
    }
}

impl MatcherSettings {
    pub fn baseline(&self) -> BaselineMatcher {
        BaselineMatcher { max_keypoints: self.max_keypoints, ratio: self.ratio, smoothing: self.smoothing }
    }
}

/// Everything a pipeline run depends on. Relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub output: PathBuf,
    pub seed: u64,
    pub workers: usize,
    pub warp: WarpConfig,
    pub event: EventOptions,
    pub ransac: RansacSettings,
    pub thresholds: Thresholds,
    pub matcher: MatcherSettings,
    pub generators: Vec<GeneratorSpec>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            cache: None,
            output: PathBuf::from("mdsyn-out"),
            seed: 0,
            workers: 1,
            warp: WarpConfig::default(),
            event: EventOptions::default(),
            ransac: RansacSettings::default(),
            thresholds: Thresholds::default(),
            matcher: MatcherSettings::default(),
            generators: Vec::new(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [cfg.manifest.as_mut(), cfg.cache.as_mut(), Some(&mut cfg.output)].into_iter().flatten() {
            resolve(base, p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(m) = &self.manifest {
            if !m.is_file() {
                return Err(CliError::Config(format!("manifest {} does not exist", m.display())));
            }
        }
        if self.workers == 0 {
            return Err(CliError::Config("workers must be >= 1".into()));
        }
        self.warp.validate().map_err(|e| CliError::Config(e.to_string()))?;
        for r in [&self.ransac.homography, &self.ransac.pose] {
            r.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        if !(self.thresholds.clean_px > 0.0) || self.thresholds.eval_long_side == 0 {
            return Err(CliError::Config("thresholds must be positive".into()));
        }
        if !(self.event.motion_px >= 0.0 && self.event.motion_px.is_finite()) {
            return Err(CliError::Config("event.motion_px must be >= 0".into()));
        }
        for g in &self.generators {
            g.mode().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config is serializable")
    }
}
