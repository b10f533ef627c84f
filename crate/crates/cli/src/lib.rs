//! `mdsyn` command-line pipeline: synthesize toy data, generate modalities,
//! pair, clean, split, sample, evaluate and summarize.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | invalid command line |
//! | 10 | I/O or other engine failure |
//! | 11 | generator failed (nonzero exit, timeout, missing binary) |
//! | 12 | generator output incomplete or invalid |
//! | 13 | generated modality missing for pairing |
//! | 14 | invalid manifest |
//! | 15 | not enough pairs for the requested split |
//! | 16 | empty training subset |
//! | 17 | unknown scene, case, modality or generator |
//! | 18 | invalid configuration |
//! | 19 | image, geometry or simulation error |
//! | 20 | evaluation failure |
//! | 21 | nothing to evaluate (empty input) |
//! | 22 | malformed ingested correspondences |
//! | 23 | some pairs hit pipeline errors (see `errors.log`) |
//! | 24 | metric computation error |

// NaN-rejecting comparisons are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mdsyn_core::augment::{sample_homography, warp_image};
use mdsyn_core::engine::{
    self, build_cross_modal_pairs, clean_dataset, evaluate_pair, generate_events, generate_with_plugin, generator_output_dir, parallel_map,
    sample_training_pairs, split_train_test, CleanOptions, EngineError, EvalOptions, ImageEntry, Label, MatchSource, Modality, PairEntry,
    PairManifest, Split, BUILTIN_EVENT_GENERATOR,
};
use mdsyn_core::matcher::{Matcher, MatcherError};
use mdsyn_core::metrics::{aggregate_report, intensity_histogram, psnr, ssim, MetricsError, ReportMetadata, Task, PSNR_CAP_DB};
use mdsyn_core::raster::Raster;
use mdsyn_core::seeding::derive_seed;
use mdsyn_core::synth::textured_image;
use serde::Serialize;
use thiserror::Error;

pub use config::PipelineConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("evaluation: {0}")]
    Eval(EngineError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("unknown {0}")]
    Unknown(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{failed} of {total} pairs failed; see {log}")]
    PairErrors { failed: usize, total: usize, log: PathBuf },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Engine(e) => engine_code(e),
            CliError::Eval(EngineError::EmptyInput) => 21,
            CliError::Eval(EngineError::Matcher(MatcherError::ParseError { .. } | MatcherError::BoundsError { .. })) => 22,
            CliError::Eval(e) => match engine_code(e) {
                10 | 19 => 20,
                c => c,
            },
            CliError::Config(_) => 18,
            CliError::Unknown(_) => 17,
            CliError::Metrics(MetricsError::EmptyInput) => 21,
            CliError::Metrics(_) => 24,
            CliError::Io { .. } => 10,
            CliError::PairErrors { .. } => 23,
        }
    }
}

fn engine_code(e: &EngineError) -> i32 {
    match e {
        EngineError::GeneratorFailed { .. } => 11,
        EngineError::IncompleteOutput { .. } | EngineError::InvalidOutput { .. } => 12,
        EngineError::MissingModality { .. } => 13,
        EngineError::InvalidManifest(_) | EngineError::Json(_) => 14,
        EngineError::InsufficientPairs { .. } => 15,
        EngineError::EmptySubset(_) => 16,
        EngineError::Unknown { .. } => 17,
        EngineError::InvalidGenerator(_) => 18,
        EngineError::Raster(_) | EngineError::Geometry(_) | EngineError::EventSim(_) | EngineError::Augment(_) => 19,
        EngineError::EmptyInput => 21,
        EngineError::Matcher(MatcherError::ParseError { .. } | MatcherError::BoundsError { .. }) => 22,
        EngineError::Evaluation { .. } => 20,
        EngineError::Io { .. } | EngineError::Matcher(_) => 10,
    }
}

#[derive(Debug, Parser)]
#[command(name = "mdsyn", version, about = "Pseudo-modality matching data engine and evaluation harness")]
pub struct Cli {
    /// Pipeline config file (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; overrides the config.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ManifestArg {
    /// Input manifest; defaults to the config's `manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub manifest: ManifestArg,
    /// Read correspondences from `<dir>/<pair id>.txt` instead of running the baseline matcher.
    #[arg(long)]
    pub ingest: Option<PathBuf>,
    /// Long-side resolution for evaluation; overrides the config.
    #[arg(long)]
    pub long_side: Option<u32>,
    /// Also write an SVG bar chart.
    #[arg(long)]
    pub svg: bool,
    /// Record per-pair runtime (makes reports non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a toy dataset of textured RGB pairs related by known homographies.
    Synth {
        #[arg(long, default_value_t = 5)]
        pairs: usize,
        #[arg(long, default_value_t = 2)]
        scenes: usize,
        #[arg(long, default_value_t = 640)]
        width: u32,
        #[arg(long, default_value_t = 480)]
        height: u32,
    },
    /// Generate one modality for every RGB image (built-in `event` or a configured plugin).
    Generate {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long)]
        modality: String,
    },
    /// Build the cross-modal pairs {A0, Bi} and {Ai, B0}.
    Pair {
        #[command(flatten)]
        manifest: ManifestArg,
        /// Modalities to pair; defaults to every generated modality.
        #[arg(long, value_delimiter = ',')]
        modalities: Vec<String>,
    },
    /// Drop generated images misaligned with their RGB source.
    Clean {
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Assign train/test splits by scene.
    Split {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, value_delimiter = ',')]
        test_scenes: Vec<String>,
        /// Test pairs to keep per cross-modal case.
        #[arg(long)]
        per_case: Option<usize>,
    },
    /// Draw training pair ids from the given cases.
    Sample {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, value_delimiter = ',', required = true)]
        cases: Vec<String>,
        #[arg(long, default_value_t = 1000)]
        count: usize,
    },
    /// Relative-pose AUC at 5/10/20 degrees over test pairs.
    EvaluatePose(EvalArgs),
    /// Corner-error AUC at 3/5/10 px over test pairs.
    EvaluateHomography(EvalArgs),
    /// PSNR and SSIM between two images or two directories of same-named images.
    Quality {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
    },
    /// Intensity histograms per image, or per modality over a manifest.
    Stats {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, default_value_t = 256)]
        bins: usize,
        images: Vec<PathBuf>,
    },
    /// Event generator plugin: one RGB image in, one event frame out.
    #[command(hide = true)]
    GenEvent {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Seeding key; defaults to the output file stem.
        #[arg(long)]
        key: Option<String>,
        #[arg(long)]
        motion: Option<f64>,
    },
}

/// Runs a parsed command line; returns the process exit code.
pub fn run_cli(cli: Cli) -> i32 {
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(o) = &cli.out {
        cfg.output = o.clone();
    }
    cfg.output = std::path::absolute(&cfg.output).map_err(|source| CliError::Io { path: cfg.output.clone(), source })?;
    if let Some(c) = &cfg.cache {
        cfg.cache = Some(std::path::absolute(c).map_err(|source| CliError::Io { path: c.clone(), source })?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, bytes).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn load_manifest(arg: &ManifestArg, cfg: &PipelineConfig) -> Result<PairManifest, CliError> {
    let path = arg
        .manifest
        .clone()
        .or_else(|| cfg.manifest.clone())
        .ok_or_else(|| CliError::Config("no manifest given (--manifest or config `manifest`)".into()))?;
    Ok(PairManifest::load(&path)?)
}

fn save_manifest(m: &PairManifest, cfg: &PipelineConfig) -> Result<PathBuf, CliError> {
    let path = cfg.output.join("manifest.json");
    write_file(&path, m.to_json())?;
    Ok(path)
}

fn parse_modality(s: &str) -> Result<Modality, CliError> {
    s.parse().map_err(|_| CliError::Unknown(format!("modality `{s}`")))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli)?;
    match &cli.command {
        Command::Synth { pairs, scenes, width, height } => cmd_synth(&cfg, *pairs, *scenes, *width, *height),
        Command::Generate { manifest, modality } => cmd_generate(&cfg, &load_manifest(manifest, &cfg)?, modality),
        Command::Pair { manifest, modalities } => cmd_pair(&cfg, &load_manifest(manifest, &cfg)?, modalities),
        Command::Clean { manifest } => cmd_clean(&cfg, &load_manifest(manifest, &cfg)?),
        Command::Split { manifest, test_scenes, per_case } => {
            let m = split_train_test(&load_manifest(manifest, &cfg)?, test_scenes, *per_case, cfg.seed)?;
            save_manifest(&m, &cfg).map(|_| ())
        }
        Command::Sample { manifest, cases, count } => {
            let sampler = sample_training_pairs(&load_manifest(manifest, &cfg)?, cases, cfg.seed)?;
            let mut text = String::new();
            for id in sampler.take(*count) {
                text.push_str(&id);
                text.push('\n');
            }
            write_file(&cfg.output.join("samples.txt"), text)
        }
        Command::EvaluatePose(args) => cmd_evaluate(&cfg, Task::Pose, args),
        Command::EvaluateHomography(args) => cmd_evaluate(&cfg, Task::Homography, args),
        Command::Quality { reference, candidate } => cmd_quality(&cfg, reference, candidate),
        Command::Stats { manifest, bins, images } => cmd_stats(&cfg, manifest, *bins, images),
        Command::GenEvent { input, output, key, motion } => {
            let key = match key {
                Some(k) => k.clone(),
                None => {
                    output.file_stem().map(|s| s.to_string_lossy().into_owned()).ok_or_else(|| CliError::Config("output has no file name".into()))?
                }
            };
            let img = Raster::load(input).map_err(EngineError::from)?;
            let ev = engine::event_image_for(&img, &key, cfg.seed, motion.unwrap_or(cfg.event.motion_px))?;
            if let Some(dir) = output.parent() {
                fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
            }
            ev.save_png(output).map_err(EngineError::from)?;
            Ok(())
        }
    }
}

fn cmd_synth(cfg: &PipelineConfig, pairs: usize, scenes: usize, width: u32, height: u32) -> Result<(), CliError> {
    if scenes == 0 || width < 32 || height < 32 {
        return Err(CliError::Config("synth needs at least one scene and 32x32 images".into()));
    }
    let dir = cfg.output.join("images");
    let mut m = PairManifest { scenes: (0..scenes).map(|s| format!("scene{s}")).collect(), ..Default::default() };
    let jobs: Vec<usize> = (0..pairs).collect();
    let rendered = parallel_map(&jobs, cfg.workers, |&k| -> Result<_, CliError> {
        let id = format!("pair{k:03}");
        let a = textured_image(derive_seed(cfg.seed, &format!("{id}/a")), width, height);
        let warp = cfg.warp.with_seed(derive_seed(cfg.seed, &format!("{id}/h")));
        let h = sample_homography(&warp, width, height).map_err(EngineError::from)?;
        let b = warp_image(&a, &h, width, height);
        let (pa, pb) = (dir.join(format!("{id}_a.png")), dir.join(format!("{id}_b.png")));
        fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
        a.save_png(&pa).map_err(EngineError::from)?;
        b.save_png(&pb).map_err(EngineError::from)?;
        Ok((id, pa, pb, h))
    });
    for (k, r) in rendered.into_iter().enumerate() {
        let (id, pa, pb, h) = r?;
        let scene = format!("scene{}", k % scenes);
        for (suffix, path) in [("a", pa), ("b", pb)] {
            m.images.push(ImageEntry {
                id: format!("{id}_{suffix}"),
                scene: scene.clone(),
                sha256: Some(engine::file_sha256(&path)?),
                // Relative to the manifest so the dataset can be moved.
                path: path.strip_prefix(&cfg.output).map(Path::to_path_buf).unwrap_or(path),
                modality: Modality::Rgb,
                source: None,
                camera: None,
                pose: None,
                depth: None,
                generator: None,
            });
        }
        m.pairs.push(PairEntry {
            id: id.clone(),
            a: format!("{id}_a"),
            b: format!("{id}_b"),
            label: Label::Homography { h },
            split: Split::Train,
            case: "rgb-rgb".into(),
            parent: None,
        });
    }
    m.validate()?;
    save_manifest(&m, cfg).map(|_| ())
}

fn cmd_generate(cfg: &PipelineConfig, m: &PairManifest, modality: &str) -> Result<(), CliError> {
    let modality = parse_modality(modality)?;
    let fallback = cfg.cache.clone().unwrap_or_else(|| cfg.output.join("generated"));
    let out = if modality == Modality::Event && !cfg.generators.iter().any(|g| g.modality == Modality::Event) {
        let dir = generator_output_dir(&fallback, BUILTIN_EVENT_GENERATOR);
        generate_events(m, &dir, cfg.seed, cfg.event.motion_px, cfg.workers)?
    } else {
        let spec = cfg
            .generators
            .iter()
            .find(|g| g.modality == modality)
            .ok_or_else(|| CliError::Unknown(format!("generator for modality `{modality}`")))?;
        generate_with_plugin(m, spec, &generator_output_dir(&fallback, &spec.name), cfg.workers)?
    };
    save_manifest(&out, cfg).map(|_| ())
}

fn cmd_pair(cfg: &PipelineConfig, m: &PairManifest, modalities: &[String]) -> Result<(), CliError> {
    let mods: Vec<Modality> = if modalities.is_empty() {
        let mut found: Vec<Modality> = m.images.iter().filter(|i| i.source.is_some()).map(|i| i.modality.clone()).collect();
        found.sort();
        found.dedup();
        found
    } else {
        modalities.iter().map(|s| parse_modality(s)).collect::<Result<_, _>>()?
    };
    save_manifest(&build_cross_modal_pairs(m, &mods)?, cfg).map(|_| ())
}

fn cmd_clean(cfg: &PipelineConfig, m: &PairManifest) -> Result<(), CliError> {
    let matcher = cfg.matcher.baseline();
    let opts = CleanOptions {
        threshold_px: cfg.thresholds.clean_px,
        ransac: cfg.ransac.homography.with_seed(derive_seed(cfg.seed, "clean")),
        workers: cfg.workers,
    };
    let (kept, report) = clean_dataset(m, &matcher, &opts)?;
    save_manifest(&kept, cfg)?;
    write_file(&cfg.output.join("drop_report.json"), to_json(&report))
}

fn cmd_evaluate(cfg: &PipelineConfig, task: Task, args: &EvalArgs) -> Result<(), CliError> {
    let m = load_manifest(&args.manifest, cfg)?;
    let base_ransac = match task {
        Task::Pose => cfg.ransac.pose,
        Task::Homography => cfg.ransac.homography,
    };
    let opts = EvalOptions {
        task,
        long_side: args.long_side.unwrap_or(cfg.thresholds.eval_long_side),
        ransac: base_ransac.with_seed(derive_seed(cfg.seed, "evaluate")),
        timing: args.timing,
        workers: cfg.workers,
    };
    if opts.long_side == 0 {
        return Err(CliError::Config("long side must be positive".into()));
    }
    let matcher = cfg.matcher.baseline();
    let source_desc = match &args.ingest {
        Some(dir) => format!("ingest:{}", dir.display()),
        None => matcher.id(),
    };
    let pairs: Vec<&PairEntry> = m.pairs.iter().filter(|p| p.split == Split::Test).collect();
    if pairs.is_empty() {
        return Err(CliError::Eval(EngineError::EmptyInput));
    }
    let outcomes = parallel_map(&pairs, cfg.workers, |p| {
        let source = match &args.ingest {
            Some(dir) => MatchSource::Ingest(dir.clone()),
            None => MatchSource::Matcher(&matcher as &dyn Matcher),
        };
        evaluate_pair(&m, p, &opts, &source)
    });
    let mut results = Vec::new();
    let mut log = String::new();
    let mut first_err = None;
    for (p, o) in pairs.iter().zip(outcomes) {
        match o {
            Ok(r) => results.push(r),
            Err(e) => {
                log.push_str(&format!("{}\t{e}\n", p.id));
                first_err.get_or_insert(e);
            }
        }
    }
    let log_path = cfg.output.join("errors.log");
    if !log.is_empty() {
        write_file(&log_path, &log)?;
    } else if log_path.exists() {
        fs::remove_file(&log_path).map_err(|source| CliError::Io { path: log_path.clone(), source })?;
    }
    if results.is_empty() {
        return Err(CliError::Eval(first_err.expect("pairs were non-empty")));
    }
    let mut meta = ReportMetadata::new(task);
    meta.resize_long_side = opts.long_side;
    meta.clean_threshold_px = cfg.thresholds.clean_px;
    meta.keypoint_budget = cfg.matcher.max_keypoints;
    meta.config = serde_json::json!({
        "pipeline": cfg.to_value(),
        "evaluation": {
            "manifest": args.manifest.manifest.as_ref().or(cfg.manifest.as_ref()),
            "matches": source_desc,
            "long_side": opts.long_side,
            "ransac": opts.ransac,
            "timing": opts.timing,
        },
    });
    let report = aggregate_report(&results, meta)?;
    write_file(&cfg.output.join("report.json"), report.to_json())?;
    write_file(&cfg.output.join("report.csv"), report.to_csv())?;
    if args.svg {
        write_file(&cfg.output.join("report.svg"), report.to_svg())?;
    }
    if first_err.is_some() {
        return Err(CliError::PairErrors { failed: pairs.len() - results.len(), total: pairs.len(), log: log_path });
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct QualityEntry {
    name: String,
    psnr_db: f64,
    ssim: f64,
}

#[derive(Debug, Serialize)]
struct QualityReport {
    entries: Vec<QualityEntry>,
    mean_psnr_db: f64,
    mean_ssim: f64,
    psnr_cap_db: f64,
    not_computed: Vec<&'static str>,
    note: &'static str,
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let rd = fs::read_dir(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    let mut files: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
    files.sort();
    Ok(files)
}

fn cmd_quality(cfg: &PipelineConfig, reference: &Path, candidate: &Path) -> Result<(), CliError> {
    let jobs: Vec<(String, PathBuf, PathBuf)> = if reference.is_dir() {
        image_files(reference)?
            .into_iter()
            .map(|r| {
                let name = r.file_name().expect("file").to_string_lossy().into_owned();
                (name.clone(), r, candidate.join(&name))
            })
            .collect()
    } else {
        vec![(reference.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(), reference.to_path_buf(), candidate.to_path_buf())]
    };
    let scored = parallel_map(&jobs, cfg.workers, |(name, r, c)| -> Result<QualityEntry, CliError> {
        let a = Raster::load(r).map_err(EngineError::from)?.to_gray();
        let b = Raster::load(c).map_err(EngineError::from)?.to_gray();
        Ok(QualityEntry { name: name.clone(), psnr_db: psnr(&a, &b)?, ssim: ssim(&a, &b)? })
    });
    let entries = scored.into_iter().collect::<Result<Vec<_>, _>>()?;
    if entries.is_empty() {
        return Err(CliError::Metrics(MetricsError::EmptyInput));
    }
    let n = entries.len() as f64;
    let report = QualityReport {
        mean_psnr_db: entries.iter().map(|e| e.psnr_db).sum::<f64>() / n,
        mean_ssim: entries.iter().map(|e| e.ssim).sum::<f64>() / n,
        entries,
        psnr_cap_db: PSNR_CAP_DB,
        not_computed: vec!["LPIPS", "FID"],
        note: "LPIPS and FID need pretrained networks and are out of scope",
    };
    write_file(&cfg.output.join("quality.json"), to_json(&report))
}

#[derive(Debug, Serialize)]
struct StatsReport {
    bins: usize,
    histograms: std::collections::BTreeMap<String, Vec<f64>>,
}

fn cmd_stats(cfg: &PipelineConfig, manifest: &ManifestArg, bins: usize, images: &[PathBuf]) -> Result<(), CliError> {
    let jobs: Vec<(String, PathBuf)> = if images.is_empty() {
        load_manifest(manifest, cfg)?.images.into_iter().map(|i| (i.modality.to_string(), i.path)).collect()
    } else {
        images.iter().map(|p| (p.display().to_string(), p.clone())).collect()
    };
    let hists = parallel_map(&jobs, cfg.workers, |(_, p)| -> Result<(Vec<f64>, usize), CliError> {
        let img = Raster::load(p).map_err(EngineError::from)?.to_gray();
        let n = img.data().len();
        Ok((intensity_histogram(&img, bins)?, n))
    });
    // Pool per key, weighting each image by its pixel count.
    let mut pooled: std::collections::BTreeMap<String, (Vec<f64>, usize)> = Default::default();
    for ((key, _), h) in jobs.iter().zip(hists) {
        let (hist, n) = h?;
        let entry = pooled.entry(key.clone()).or_insert_with(|| (vec![0.0; bins], 0));
        for (acc, v) in entry.0.iter_mut().zip(&hist) {
            *acc += v * n as f64;
        }
        entry.1 += n;
    }
    let histograms = pooled.into_iter().map(|(k, (h, n))| (k, h.into_iter().map(|v| v / n as f64).collect())).collect();
    let report = StatsReport { bins, histograms };
    let mut csv = String::from("key");
    for b in 0..bins {
        csv.push_str(&format!(",bin{b}"));
    }
    csv.push('\n');
    for (k, h) in &report.histograms {
        csv.push_str(k);
        for v in h {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    write_file(&cfg.output.join("stats.json"), to_json(&report))?;
    write_file(&cfg.output.join("stats.csv"), csv)
}
