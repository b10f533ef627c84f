//! Dataset orchestration: manifests, generator plugins, cross-modal pairing,
//! cleaning, splitting, training-pair sampling and per-pair evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::augment::{rescale_homography, resize_long_side, AugmentError};
use crate::estimators::{corner_error, pose_errors, ransac_essential, ransac_homography, RansacConfig};
use crate::eventsim::{generate_event_image, EventSimConfig, EventSimError};
use crate::geometry::{relative_pose, CameraModel, GeometryError, Homography, MatchSet, Pose};
use crate::matcher::{ingest_matches_within, Matcher, MatcherError, PairBounds};
use crate::metrics::{classify_matches, GroundTruth, PairResult, Task};
use crate::raster::{Raster, RasterError};
use crate::seeding::derive_seed;

pub const MANIFEST_VERSION: u32 = 1;
/// Long-side resolution for evaluation.
pub const DEFAULT_EVAL_LONG_SIDE: u32 = 640;
/// Generated images whose recovered homography against their source moves
/// the corners by more than this (mean, pixels) are dropped.
pub const DEFAULT_CLEAN_THRESHOLD_PX: f64 = 10.0;
pub const DEFAULT_GENERATOR_TIMEOUT_SECS: f64 = 600.0;
pub const CACHE_ENV: &str = "MDSYN_CACHE";
pub const BUILTIN_EVENT_GENERATOR: &str = "builtin-event";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("generator `{name}` failed: {reason}\n{output}")]
    GeneratorFailed { name: String, reason: String, output: String },
    #[error("generator `{name}` produced incomplete output; missing: {}", missing.join(", "))]
    IncompleteOutput { name: String, missing: Vec<String> },
    #[error("generator `{name}` output {path} is invalid: {reason}")]
    InvalidOutput { name: String, path: PathBuf, reason: String },
    #[error("missing generated modalities: {}", missing.join(", "))]
    MissingModality { missing: Vec<String> },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("invalid generator spec: {0}")]
    InvalidGenerator(String),
    #[error("case `{case}` has {available} test pairs, {requested} requested")]
    InsufficientPairs { case: String, available: usize, requested: usize },
    #[error("modality subset is empty or has no training pairs: {0}")]
    EmptySubset(String),
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
    #[error("no pairs to evaluate")]
    EmptyInput,
    #[error("pair {pair}: {message}")]
    Evaluation { pair: String, message: String },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Matcher(#[from] MatcherError),
    #[error(transparent)]
    EventSim(#[from] EventSimError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EngineError + '_ {
    move |source| EngineError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Rgb,
    Infrared,
    Depth,
    Normal,
    Event,
    Sketch,
    Paint,
    External(String),
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Rgb => f.write_str("rgb"),
            Modality::Infrared => f.write_str("infrared"),
            Modality::Depth => f.write_str("depth"),
            Modality::Normal => f.write_str("normal"),
            Modality::Event => f.write_str("event"),
            Modality::Sketch => f.write_str("sketch"),
            Modality::Paint => f.write_str("paint"),
            Modality::External(name) => write!(f, "external:{name}"),
        }
    }
}

impl FromStr for Modality {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "rgb" => Modality::Rgb,
            "infrared" => Modality::Infrared,
            "depth" => Modality::Depth,
            "normal" => Modality::Normal,
            "event" => Modality::Event,
            "sketch" => Modality::Sketch,
            "paint" => Modality::Paint,
            other => match other.strip_prefix("external:") {
                Some(name) if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) => {
                    Modality::External(name.to_string())
                }
                _ => return Err(EngineError::Unknown { kind: "modality", name: s.to_string() }),
            },
        })
    }
}

impl Serialize for Modality {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Modality {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Modality case of a pair, e.g. `rgb-event`; RGB-RGB pairs are `rgb-rgb`.
pub fn case_name(a: &Modality, b: &Modality) -> String {
    match (a, b) {
        (Modality::Rgb, other) | (other, Modality::Rgb) => format!("rgb-{other}"),
        (x, y) => format!("{x}-{y}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub scene: String,
    pub path: PathBuf,
    pub modality: Modality,
    /// Id of the RGB image this one was generated from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraModel>,
    /// World-to-camera pose.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
    /// Hex SHA-256 of the image file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    /// `name@version` of the generator that produced the image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Label {
    #[serde(rename = "pose+depth")]
    PoseDepth,
    /// `h` maps pixels of A to pixels of B.
    #[serde(rename = "homography")]
    Homography { h: Homography },
    /// Pixel-aligned views (identity homography).
    #[serde(rename = "aligned")]
    Aligned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub id: String,
    pub a: String,
    pub b: String,
    pub label: Label,
    #[serde(default)]
    pub split: Split,
    pub case: String,
    /// RGB pair this cross-modal pair was derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub name: String,
    pub version: String,
    pub modality: Modality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    pub mdsyn_manifest: u32,
    pub scenes: Vec<String>,
    pub images: Vec<ImageEntry>,
    pub pairs: Vec<PairEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub generators: Vec<GeneratorRecord>,
}

impl Default for PairManifest {
    fn default() -> Self {
        Self { mdsyn_manifest: MANIFEST_VERSION, scenes: Vec::new(), images: Vec::new(), pairs: Vec::new(), generators: Vec::new() }
    }
}

impl PairManifest {
    /// Parses and validates; relative paths are resolved against the
    /// manifest's directory.
    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut m: PairManifest = serde_json::from_str(&text)?;
        let base = std::path::absolute(path).map_err(io_err(path))?.parent().map(Path::to_path_buf).unwrap_or_default();
        for img in &mut m.images {
            if img.path.is_relative() {
                img.path = base.join(&img.path);
            }
            if let Some(d) = &mut img.depth {
                if d.is_relative() {
                    *d = base.join(&*d);
                }
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest is serializable");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), EngineError> {
        fs::write(path, self.to_json()).map_err(io_err(path))
    }

    pub fn image(&self, id: &str) -> Option<&ImageEntry> {
        self.images.iter().find(|i| i.id == id)
    }

    fn image_index(&self) -> BTreeMap<&str, &ImageEntry> {
        self.images.iter().map(|i| (i.id.as_str(), i)).collect()
    }

    /// Structural invariants: unique ids, known scenes, resolvable references
    /// and labels backed by the data they need.
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::InvalidManifest(msg));
        if self.mdsyn_manifest != MANIFEST_VERSION {
            return bad(format!("unsupported version {}", self.mdsyn_manifest));
        }
        let scenes: BTreeSet<&str> = self.scenes.iter().map(String::as_str).collect();
        let mut ids = BTreeSet::new();
        for img in &self.images {
            if !ids.insert(img.id.as_str()) {
                return bad(format!("duplicate image id `{}`", img.id));
            }
            if !scenes.contains(img.scene.as_str()) {
                return bad(format!("image `{}` references unknown scene `{}`", img.id, img.scene));
            }
        }
        let index = self.image_index();
        for img in &self.images {
            if let Some(src) = &img.source {
                if !index.contains_key(src.as_str()) {
                    return bad(format!("image `{}` references unknown source `{src}`", img.id));
                }
            }
        }
        let mut pair_ids = BTreeSet::new();
        for p in &self.pairs {
            if !pair_ids.insert(p.id.as_str()) {
                return bad(format!("duplicate pair id `{}`", p.id));
            }
            let (Some(a), Some(b)) = (index.get(p.a.as_str()), index.get(p.b.as_str())) else {
                return bad(format!("pair `{}` references a missing image", p.id));
            };
            if p.label == Label::PoseDepth && [a, b].iter().any(|i| i.camera.is_none() || i.pose.is_none()) {
                return bad(format!("pair `{}` has a pose label but an image lacks camera or pose", p.id));
            }
        }
        Ok(())
    }

    /// Checks that every image and depth path exists on disk.
    pub fn validate_files(&self) -> Result<(), EngineError> {
        for img in &self.images {
            for p in std::iter::once(&img.path).chain(img.depth.as_ref()) {
                if !p.exists() {
                    return Err(EngineError::InvalidManifest(format!("image `{}`: {} does not exist", img.id, p.display())));
                }
            }
        }
        Ok(())
    }

    /// RGB-RGB pairs, the roots of cross-modal pairing.
    pub fn rgb_pairs(&self) -> Vec<&PairEntry> {
        let index = self.image_index();
        self.pairs.iter().filter(|p| index[p.a.as_str()].modality == Modality::Rgb && index[p.b.as_str()].modality == Modality::Rgb).collect()
    }

    pub fn cases(&self) -> BTreeSet<String> {
        self.pairs.iter().map(|p| p.case.clone()).collect()
    }

    /// Drops pairs whose scene (that of image A) is listed; keeps images.
    fn scene_of(&self, pair: &PairEntry) -> &str {
        &self.image(&pair.a).expect("validated").scene
    }
}

pub fn file_sha256(path: &Path) -> Result<String, EngineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Id of the image generated from `source` in `modality`.
pub fn generated_id(source: &str, modality: &Modality) -> String {
    format!("{source}@{modality}")
}

/// For every RGB pair `(A₀, B₀)` and every requested modality `i`, emits
/// `(A₀, Bᵢ)` and `(Aᵢ, B₀)` with the RGB pair's label and split. With no
/// modalities the input pairs are returned unchanged.
pub fn build_cross_modal_pairs(manifest: &PairManifest, modalities: &[Modality]) -> Result<PairManifest, EngineError> {
    if modalities.is_empty() {
        return Ok(manifest.clone());
    }
    let index = manifest.image_index();
    let mut generated: BTreeMap<(&str, &Modality), &ImageEntry> = BTreeMap::new();
    for img in &manifest.images {
        if let Some(src) = &img.source {
            generated.insert((src.as_str(), &img.modality), img);
        }
    }
    let rgb = manifest.rgb_pairs();
    let mut missing = BTreeSet::new();
    for p in &rgb {
        for m in modalities {
            for id in [&p.a, &p.b] {
                if !generated.contains_key(&(id.as_str(), m)) {
                    missing.insert(format!("{id}/{m}"));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(EngineError::MissingModality { missing: missing.into_iter().collect() });
    }
    let mut pairs = Vec::with_capacity(2 * modalities.len() * rgb.len());
    for p in &rgb {
        for m in modalities {
            let ai = generated[&(p.a.as_str(), m)];
            let bi = generated[&(p.b.as_str(), m)];
            let case = case_name(&index[p.a.as_str()].modality, m);
            for (suffix, a, b) in [(format!("rgb-{m}"), &p.a, &bi.id), (format!("{m}-rgb"), &ai.id, &p.b)] {
                pairs.push(PairEntry {
                    id: format!("{}/{suffix}", p.id),
                    a: a.clone(),
                    b: b.clone(),
                    label: p.label.clone(),
                    split: p.split,
                    case: case.clone(),
                    parent: Some(p.id.clone()),
                });
            }
        }
    }
    Ok(PairManifest { pairs, ..manifest.clone() })
}

/// Runs `f` over `items` on up to `workers` threads; results keep input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("no poisoned workers").into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// An external image-to-image generator invoked as a subprocess.
///
/// `command` is an argv template. Per-image mode uses `{input}` and
/// `{output}`; batch mode uses `{input_dir}` and `{output_dir}` and runs once.
/// Every input `<key>` must yield `<output dir>/<key>.png` with the input's
/// dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub name: String,
    #[serde(default = "default_version")]
    pub version: String,
    pub modality: Modality,
    pub command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_version() -> String {
    "unversioned".into()
}

fn default_timeout() -> f64 {
    DEFAULT_GENERATOR_TIMEOUT_SECS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorMode {
    PerImage,
    Batch,
}

impl GeneratorSpec {
    pub fn mode(&self) -> Result<GeneratorMode, EngineError> {
        let has = |p: &str| self.command.iter().any(|a| a.contains(p));
        if self.command.is_empty() {
            return Err(EngineError::InvalidGenerator(format!("`{}` has an empty command", self.name)));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(EngineError::InvalidGenerator(format!("invalid generator name `{}`", self.name)));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(EngineError::InvalidGenerator(format!("`{}` timeout must be positive", self.name)));
        }
        match (has("{input}") && has("{output}"), has("{input_dir}") && has("{output_dir}")) {
            (true, false) => Ok(GeneratorMode::PerImage),
            (false, true) => Ok(GeneratorMode::Batch),
            _ => Err(EngineError::InvalidGenerator(format!(
                "`{}` command must contain either {{input}}/{{output}} or {{input_dir}}/{{output_dir}}",
                self.name
            ))),
        }
    }

    pub fn tag(&self) -> String {
        format!("{}@{}", self.name, self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorInput {
    /// Output stem; the generated file is `<key>.png`.
    pub key: String,
    pub path: PathBuf,
}

fn spawn_reader(pipe: Option<impl Read + Send + 'static>) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut s = String::new();
        if let Some(mut p) = pipe {
            let mut buf = Vec::new();
            let _ = p.read_to_end(&mut buf);
            s = String::from_utf8_lossy(&buf).into_owned();
        }
        s
    })
}

fn run_command(spec: &GeneratorSpec, argv: &[String]) -> Result<(), EngineError> {
    let failed = |reason: String, output: String| EngineError::GeneratorFailed { name: spec.name.clone(), reason, output };
    let mut child = Command::new(&argv[0])
        .args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| failed(format!("cannot start `{}`: {e}", argv[0]), String::new()))?;
    let out = spawn_reader(child.stdout.take());
    let err = spawn_reader(child.stderr.take());
    let status = child.wait_timeout(Duration::from_secs_f64(spec.timeout_secs)).map_err(|e| failed(e.to_string(), String::new()))?;
    let status = match status {
        Some(s) => s,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            let output = format!("{}{}", out.join().unwrap_or_default(), err.join().unwrap_or_default());
            return Err(failed(format!("timed out after {} s", spec.timeout_secs), output));
        }
    };
    let output = format!("{}{}", out.join().unwrap_or_default(), err.join().unwrap_or_default());
    if !status.success() {
        return Err(failed(format!("exit status {status}"), output));
    }
    Ok(())
}

fn fill(template: &[String], vars: &[(&str, &Path)]) -> Vec<String> {
    template.iter().map(|arg| vars.iter().fold(arg.clone(), |acc, (k, v)| acc.replace(k, &v.to_string_lossy()))).collect()
}

/// Invokes the generator on every input and verifies the outputs.
pub fn run_generator(spec: &GeneratorSpec, inputs: &[GeneratorInput], out_dir: &Path, workers: usize) -> Result<Vec<PathBuf>, EngineError> {
    let mode = spec.mode()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let outputs: Vec<PathBuf> = inputs.iter().map(|i| out_dir.join(format!("{}.png", i.key))).collect();
    match mode {
        GeneratorMode::PerImage => {
            let jobs: Vec<(&GeneratorInput, &PathBuf)> = inputs.iter().zip(&outputs).collect();
            let results = parallel_map(&jobs, workers, |(input, output)| {
                run_command(spec, &fill(&spec.command, &[("{input}", &input.path), ("{output}", output)]))
            });
            results.into_iter().collect::<Result<Vec<()>, _>>()?;
        }
        GeneratorMode::Batch => {
            let staging = out_dir.join(format!(".staging-{}", spec.name));
            if staging.exists() {
                fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
            }
            fs::create_dir_all(&staging).map_err(io_err(&staging))?;
            for input in inputs {
                let ext = input.path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
                let dst = staging.join(format!("{}{ext}", input.key));
                fs::copy(&input.path, &dst).map_err(io_err(&input.path))?;
            }
            let result = run_command(spec, &fill(&spec.command, &[("{input_dir}", &staging), ("{output_dir}", out_dir)]));
            let _ = fs::remove_dir_all(&staging);
            result?;
        }
    }
    let missing: Vec<String> = outputs.iter().filter(|p| !p.is_file()).map(|p| p.display().to_string()).collect();
    if !missing.is_empty() {
        return Err(EngineError::IncompleteOutput { name: spec.name.clone(), missing });
    }
    for (input, output) in inputs.iter().zip(&outputs) {
        let invalid = |reason: String| EngineError::InvalidOutput { name: spec.name.clone(), path: output.clone(), reason };
        let got = image::image_dimensions(output).map_err(|e| invalid(e.to_string()))?;
        let want = image::image_dimensions(&input.path).map_err(|e| invalid(format!("input unreadable: {e}")))?;
        if got != want {
            return Err(invalid(format!("dimensions {got:?} differ from input {want:?}")));
        }
    }
    Ok(outputs)
}

/// Output directory for a generator: `$MDSYN_CACHE/<name>` when the variable
/// is set, otherwise `<fallback>/<name>`.
pub fn generator_output_dir(fallback: &Path, generator: &str) -> PathBuf {
    match std::env::var_os(CACHE_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(generator),
        _ => fallback.join(generator),
    }
}

/// RGB images of the manifest, in manifest order.
pub fn rgb_images(manifest: &PairManifest) -> Vec<&ImageEntry> {
    manifest.images.iter().filter(|i| i.modality == Modality::Rgb).collect()
}

/// Adds one generated image per `(source id, file)` with the source's scene,
/// camera, pose and depth, and records the generator.
pub fn register_generated(manifest: &PairManifest, record: GeneratorRecord, outputs: &[(String, PathBuf)]) -> Result<PairManifest, EngineError> {
    let mut m = manifest.clone();
    for (src_id, path) in outputs {
        let src = manifest.image(src_id).ok_or_else(|| EngineError::Unknown { kind: "image", name: src_id.clone() })?;
        let id = generated_id(src_id, &record.modality);
        m.images.retain(|i| i.id != id);
        m.images.push(ImageEntry {
            id,
            scene: src.scene.clone(),
            path: path.clone(),
            modality: record.modality.clone(),
            source: Some(src_id.clone()),
            camera: src.camera,
            pose: src.pose,
            depth: src.depth.clone(),
            sha256: Some(file_sha256(path)?),
            generator: Some(format!("{}@{}", record.name, record.version)),
        });
    }
    m.generators.retain(|g| !(g.name == record.name && g.modality == record.modality));
    m.generators.push(record);
    m.validate()?;
    Ok(m)
}

/// Runs an external generator over every RGB image and registers the results.
pub fn generate_with_plugin(manifest: &PairManifest, spec: &GeneratorSpec, out_dir: &Path, workers: usize) -> Result<PairManifest, EngineError> {
    let inputs: Vec<GeneratorInput> = rgb_images(manifest).iter().map(|i| GeneratorInput { key: i.id.clone(), path: i.path.clone() }).collect();
    let outputs = run_generator(spec, &inputs, out_dir, workers)?;
    let pairs: Vec<(String, PathBuf)> = inputs.into_iter().map(|i| i.key).zip(outputs).collect();
    register_generated(manifest, GeneratorRecord { name: spec.name.clone(), version: spec.version.clone(), modality: spec.modality.clone() }, &pairs)
}

/// Event frame for one source image, keyed by its id for seeding.
pub fn event_image_for(image: &Raster, key: &str, seed: u64, motion_px: f64) -> Result<Raster, EngineError> {
    Ok(generate_event_image(image, &EventSimConfig::for_item(seed, key, motion_px))?)
}

/// Built-in event generator: simulates an event frame for every RGB image.
pub fn generate_events(manifest: &PairManifest, out_dir: &Path, seed: u64, motion_px: f64, workers: usize) -> Result<PairManifest, EngineError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let sources = rgb_images(manifest);
    let results = parallel_map(&sources, workers, |img| -> Result<(String, PathBuf), EngineError> {
        let raster = Raster::load(&img.path)?;
        let out = out_dir.join(format!("{}.png", img.id));
        event_image_for(&raster, &img.id, seed, motion_px)?.save_png(&out)?;
        Ok((img.id.clone(), out))
    });
    let outputs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let record = GeneratorRecord {
        name: BUILTIN_EVENT_GENERATOR.into(),
        version: format!("{}/seed={seed}/motion={motion_px}", env!("CARGO_PKG_VERSION")),
        modality: Modality::Event,
    };
    register_generated(manifest, record, &outputs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedImage {
    pub image: String,
    pub source: String,
    /// Mean corner error against the identity; absent when estimation failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corner_error_px: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropReport {
    pub matcher: String,
    pub threshold_px: f64,
    pub images_checked: usize,
    pub images_dropped: usize,
    /// Drops caused by matcher or estimator failure (subset of `images_dropped`).
    pub failures: usize,
    pub pairs_total: usize,
    pub pairs_dropped: usize,
    /// `pairs_dropped / pairs_total`, or 0 with no pairs.
    pub drop_rate: f64,
    pub dropped: Vec<DroppedImage>,
}

#[derive(Debug, Clone)]
pub struct CleanOptions {
    pub threshold_px: f64,
    pub ransac: RansacConfig,
    pub workers: usize,
}

impl Default for CleanOptions {
    fn default() -> Self {
        Self { threshold_px: DEFAULT_CLEAN_THRESHOLD_PX, ransac: RansacConfig::homography(), workers: 1 }
    }
}

/// Alignment check of one generated image against its RGB source. Returns
/// the mean corner error of the recovered homography versus the identity.
pub fn alignment_error(source: &Raster, generated: &Raster, matcher: &dyn Matcher, ransac: &RansacConfig, key: &str) -> Result<f64, String> {
    let ms = matcher.match_images(source, generated, "source", "generated").map_err(|e| e.to_string())?;
    let cfg = ransac.with_seed(derive_seed(ransac.seed, key));
    let est = ransac_homography(&ms, &cfg).map_err(|e| e.to_string())?;
    corner_error(&est.model, &Homography::identity(), source.width(), source.height()).map_err(|e| e.to_string())
}

/// Checks every generated image against its source and drops the misaligned
/// ones together with every pair that uses them.
pub fn clean_dataset(manifest: &PairManifest, matcher: &dyn Matcher, opts: &CleanOptions) -> Result<(PairManifest, DropReport), EngineError> {
    let generated: Vec<&ImageEntry> = manifest.images.iter().filter(|i| i.source.is_some()).collect();
    let checks = parallel_map(&generated, opts.workers, |img| -> Result<Option<DroppedImage>, EngineError> {
        let src_entry = manifest.image(img.source.as_deref().expect("filtered")).expect("validated");
        let src = Raster::load(&src_entry.path)?;
        let gen = Raster::load(&img.path)?;
        let verdict = if src.dimensions() != gen.dimensions() {
            Err(format!("size {:?} differs from source {:?}", gen.dimensions(), src.dimensions()))
        } else {
            alignment_error(&src, &gen, matcher, &opts.ransac, &img.id)
        };
        let drop = |corner_error_px, failure| Some(DroppedImage { image: img.id.clone(), source: src_entry.id.clone(), corner_error_px, failure });
        Ok(match verdict {
            Ok(e) if e <= opts.threshold_px => None,
            Ok(e) => drop(Some(e), None),
            Err(f) => drop(None, Some(f)),
        })
    });
    let dropped: Vec<DroppedImage> = checks.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().flatten().collect();
    let gone: BTreeSet<&str> = dropped.iter().map(|d| d.image.as_str()).collect();
    let mut kept = manifest.clone();
    kept.images.retain(|i| !gone.contains(i.id.as_str()));
    kept.pairs.retain(|p| !gone.contains(p.a.as_str()) && !gone.contains(p.b.as_str()));
    let pairs_total = manifest.pairs.len();
    let pairs_dropped = pairs_total - kept.pairs.len();
    let report = DropReport {
        matcher: matcher.id(),
        threshold_px: opts.threshold_px,
        images_checked: generated.len(),
        images_dropped: dropped.len(),
        failures: dropped.iter().filter(|d| d.failure.is_some()).count(),
        pairs_total,
        pairs_dropped,
        drop_rate: if pairs_total == 0 { 0.0 } else { pairs_dropped as f64 / pairs_total as f64 },
        dropped,
    };
    Ok((kept, report))
}

/// Marks pairs in `test_scenes` as test and the rest as train. With
/// `per_case`, each case's test pairs are subsampled (seeded) to exactly that
/// many; unselected test-scene pairs are removed so no scene spans both splits.
pub fn split_train_test(manifest: &PairManifest, test_scenes: &[String], per_case: Option<usize>, seed: u64) -> Result<PairManifest, EngineError> {
    for s in test_scenes {
        if !manifest.scenes.contains(s) {
            return Err(EngineError::Unknown { kind: "scene", name: s.clone() });
        }
    }
    let test: BTreeSet<&str> = test_scenes.iter().map(String::as_str).collect();
    let mut out = manifest.clone();
    for p in &mut out.pairs {
        p.split = if test.contains(manifest.scene_of(p)) { Split::Test } else { Split::Train };
    }
    if let Some(n) = per_case {
        let mut by_case: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for p in out.pairs.iter().filter(|p| p.split == Split::Test) {
            by_case.entry(p.case.as_str()).or_default().push(p.id.as_str());
        }
        let mut keep = BTreeSet::new();
        for (case, mut ids) in by_case {
            if ids.len() < n {
                return Err(EngineError::InsufficientPairs { case: case.to_string(), available: ids.len(), requested: n });
            }
            ids.sort_unstable();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, case));
            ids.shuffle(&mut rng);
            keep.extend(ids.into_iter().take(n).map(str::to_string));
        }
        out.pairs.retain(|p| p.split == Split::Train || keep.contains(&p.id));
    }
    Ok(out)
}

/// Infinite, seeded stream of training pair ids: a case is drawn uniformly
/// from the subset, then a pair uniformly from that case's training pairs.
#[derive(Debug, Clone)]
pub struct TrainingSampler {
    cases: Vec<(String, Vec<String>)>,
    rng: ChaCha8Rng,
}

impl TrainingSampler {
    pub fn cases(&self) -> impl Iterator<Item = &str> {
        self.cases.iter().map(|(c, _)| c.as_str())
    }
}

impl Iterator for TrainingSampler {
    type Item = String;

    fn next(&mut self) -> Option<String> {
        let (_, ids) = &self.cases[self.rng.random_range(0..self.cases.len())];
        Some(ids[self.rng.random_range(0..ids.len())].clone())
    }
}

pub fn sample_training_pairs(manifest: &PairManifest, subset: &[String], seed: u64) -> Result<TrainingSampler, EngineError> {
    if subset.is_empty() {
        return Err(EngineError::EmptySubset("no cases requested".into()));
    }
    let known = manifest.cases();
    let mut wanted: Vec<&String> = subset.iter().collect();
    wanted.sort();
    wanted.dedup();
    let mut cases = Vec::new();
    for case in wanted {
        if !known.contains(case) {
            return Err(EngineError::Unknown { kind: "case", name: case.clone() });
        }
        let ids: Vec<String> = manifest.pairs.iter().filter(|p| &p.case == case && p.split == Split::Train).map(|p| p.id.clone()).collect();
        if ids.is_empty() {
            return Err(EngineError::EmptySubset(format!("case `{case}` has no training pairs")));
        }
        cases.push((case.clone(), ids));
    }
    Ok(TrainingSampler { cases, rng: ChaCha8Rng::seed_from_u64(seed) })
}

/// Where correspondences come from during evaluation.
pub enum MatchSource<'a> {
    Matcher(&'a dyn Matcher),
    /// `<dir>/<pair id with '/' replaced by '__'>.txt`, in original-resolution
    /// pixel coordinates.
    Ingest(PathBuf),
}

pub fn match_file_name(pair_id: &str) -> String {
    format!("{}.txt", pair_id.replace('/', "__"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOptions {
    pub task: Task,
    pub long_side: u32,
    pub ransac: RansacConfig,
    #[serde(default)]
    pub timing: bool,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    1
}

impl EvalOptions {
    pub fn new(task: Task) -> Self {
        let ransac = match task {
            Task::Pose => RansacConfig::essential(),
            Task::Homography => RansacConfig::homography(),
        };
        Self { task, long_side: DEFAULT_EVAL_LONG_SIDE, ransac, timing: false, workers: 1 }
    }
}

fn load_resized(path: &Path, long_side: u32) -> Result<(Raster, f64, (u32, u32)), EngineError> {
    let img = Raster::load(path)?;
    let original = img.dimensions();
    let (r, s) = resize_long_side(&img, long_side)?;
    Ok((r, s, original))
}

/// Matches, estimates and scores one pair at the evaluation resolution.
/// Estimation failures are recorded in the result, not raised.
pub fn evaluate_pair(manifest: &PairManifest, pair: &PairEntry, opts: &EvalOptions, source: &MatchSource) -> Result<PairResult, EngineError> {
    let start = Instant::now();
    let eval_err = |message: String| EngineError::Evaluation { pair: pair.id.clone(), message };
    let ia = manifest.image(&pair.a).ok_or_else(|| eval_err(format!("missing image {}", pair.a)))?;
    let ib = manifest.image(&pair.b).ok_or_else(|| eval_err(format!("missing image {}", pair.b)))?;
    let (ra, sa, dim_a) = load_resized(&ia.path, opts.long_side)?;
    let (rb, sb, dim_b) = load_resized(&ib.path, opts.long_side)?;
    let matches: MatchSet = match source {
        MatchSource::Matcher(m) => m.match_images(&ra, &rb, &pair.a, &pair.b)?,
        MatchSource::Ingest(dir) => {
            let ms = ingest_matches_within(&dir.join(match_file_name(&pair.id)), PairBounds { a: dim_a, b: dim_b })?;
            ms.rescaled(sa, sb)
        }
    };
    let cfg = opts.ransac.with_seed(derive_seed(opts.ransac.seed, &pair.id));
    let mut result = PairResult {
        pair_id: pair.id.clone(),
        case: pair.case.clone(),
        error: None,
        matches: matches.len(),
        correct_matches: 0,
        runtime_ms: None,
        zero_baseline: false,
        failure: None,
    };
    match opts.task {
        Task::Homography => {
            let h_gt = match &pair.label {
                Label::Homography { h } => *h,
                Label::Aligned => Homography::identity(),
                Label::PoseDepth => return Err(eval_err("pose-labelled pair in a homography evaluation".into())),
            };
            let h_gt = rescale_homography(&h_gt, sa, sb);
            result.correct_matches = classify_matches(&matches, &GroundTruth::Homography(h_gt)).correct;
            match ransac_homography(&matches, &cfg) {
                Ok(est) => match corner_error(&est.model, &h_gt, ra.width(), ra.height()) {
                    Ok(e) => result.error = Some(e),
                    Err(e) => result.failure = Some(e.to_string()),
                },
                Err(e) => result.failure = Some(e.to_string()),
            }
        }
        Task::Pose => {
            if pair.label != Label::PoseDepth {
                return Err(eval_err("pair has no pose label".into()));
            }
            let scaled = |img: &ImageEntry, s: f64, r: &Raster| -> Result<CameraModel, EngineError> {
                let cam = img.camera.ok_or_else(|| eval_err(format!("image {} has no camera", img.id)))?;
                Ok(cam.scaled(s, r.width(), r.height()))
            };
            let (cam_a, cam_b) = (scaled(ia, sa, &ra)?, scaled(ib, sb, &rb)?);
            let gt = relative_pose(&ia.pose.expect("validated"), &ib.pose.expect("validated"));
            result.correct_matches = classify_matches(&matches, &GroundTruth::Pose { a_to_b: gt, cam_a, cam_b }).correct;
            match ransac_essential(&matches, &cam_a, &cam_b, &cfg) {
                Ok(est) => {
                    let errs = pose_errors(&est.model.pose, &gt);
                    result.error = Some(errs.max());
                    result.zero_baseline = errs.zero_baseline;
                }
                Err(e) => result.failure = Some(e.to_string()),
            }
        }
    }
    if opts.timing {
        result.runtime_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(result)
}

/// Evaluates every test pair (or every pair if none is marked test).
pub fn evaluate_pairs(manifest: &PairManifest, opts: &EvalOptions, source: &MatchSource) -> Result<Vec<PairResult>, EngineError> {
    let pairs: Vec<&PairEntry> = manifest.pairs.iter().filter(|p| p.split == Split::Test).collect();
    if pairs.is_empty() {
        return Err(EngineError::EmptyInput);
    }
    let results = match source {
        MatchSource::Matcher(m) => {
            let m: &dyn Matcher = *m;
            parallel_map(&pairs, opts.workers, |p| evaluate_pair(manifest, p, opts, &MatchSource::Matcher(m)))
        }
        MatchSource::Ingest(dir) => parallel_map(&pairs, opts.workers, |p| evaluate_pair(manifest, p, opts, &MatchSource::Ingest(dir.clone()))),
    };
    results.into_iter().collect()
}
