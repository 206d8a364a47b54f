//! Batch front end: `synth`, `build-maps`, `fit`, `train --stage {1,2}`, `eval`.
//!
//! Exit codes: 0 success, 2 configuration or parse error, 3 I/O error,
//! 4 evaluation error. Scene-level failures are reported one per line on stderr
//! and do not stop the batch; the exit code reflects the worst failure seen.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::car_models::{build_default_maps, build_maps_from_profiles, load_maps, save_maps, ScoreConfig, ScoreMap, ScoringMode};
use crate::config::{ConfigError, KvConfig};
use crate::detection::Detection;
use crate::evalkit::{assign_difficulty, evaluate, EvalReport, IouMode, SceneEval};
use crate::geometry::{Box3, Calibration, PointCloud, Vec3};
use crate::kitti_io::{self, Detection2DInput, KittiError, LabelRecord};
use crate::pipeline::{fit_scene, fitted_samples, oracle_detections, scene_samples, FitConfig, Refiners, SampleConfig, StopAfter};
use crate::proposals::ProposalConfig;
use crate::refine_net::train::{train, ProgressRecord, RefineStage, TrainConfig};
use crate::refine_net::{load_params, save_params, CanonicalAnchor, NetArch, NetParams, Network, RefineError};
use crate::synth::{make_scene, random_scene_spec, scene_seed, CarCategory, CarProfile, RandomSceneConfig, SceneSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Eval(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Eval(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<KittiError> for CliError {
    fn from(e: KittiError) -> Self {
        match e {
            KittiError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<RefineError> for CliError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "frustum3d", version, about = "Frustum-based 3D car detection from LiDAR and 2D boxes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StopArg {
    Fit,
    Stage1,
    Stage2,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic KITTI-layout dataset.
    Synth {
        /// Scene-set spec (`key = value`); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// `key=value` override, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Build the three category score maps.
    BuildMaps {
        #[arg(long)]
        out: PathBuf,
        /// Side profiles, one `category x,z x,z …` line per category.
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
    },
    /// Run the detection pipeline over a split and write KITTI detection files.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        stop_after: Option<StopArg>,
        /// Derive 2D inputs from ground-truth labels.
        #[arg(long = "oracle-2d")]
        oracle_2d: bool,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train a refinement network.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate detection files against labels.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth { spec, out, set } => {
            let cfg = load_kv(spec.as_deref(), &set)?;
            let s = SynthSettings::from_kv(&cfg)?;
            cfg.finish()?;
            let n = cmd_synth(&s, &out)?;
            println!("wrote {n} scenes to {}", out.display());
            Ok(())
        }
        Command::BuildMaps { out, profiles, alpha } => cmd_build_maps(profiles.as_deref(), alpha, &out),
        Command::Fit { config, stop_after, oracle_2d, workers, set } => {
            let mut kv = load_kv(Some(&config), &set)?;
            if let Some(s) = stop_after {
                kv.set("stop_after", format!("{s:?}").to_lowercase());
            }
            if oracle_2d {
                kv.set("oracle_2d", "true");
            }
            if let Some(w) = workers {
                kv.set("workers", w.to_string());
            }
            let cfg = PipelineConfig::from_kv(&kv)?;
            let summary = cmd_fit(&cfg)?;
            println!("{} scenes, {} detections, {} failed scenes", summary.scenes, summary.detections, summary.failed);
            summary.into_result()
        }
        Command::Train { config, stage, set } => {
            let cfg = PipelineConfig::from_kv(&load_kv(Some(&config), &set)?)?;
            let stage = RefineStage::from_number(stage).expect("clap restricts the range");
            let stdout = std::io::stdout();
            cmd_train(&cfg, stage, |r| {
                let _ = writeln!(stdout.lock(), "{r}");
            })
        }
        Command::Eval { config, set } => {
            let cfg = PipelineConfig::from_kv(&load_kv(Some(&config), &set)?)?;
            let report = cmd_eval(&cfg)?;
            print!("{}", report.to_table());
            Ok(())
        }
    }
}

/// Reads a config file (if any) and applies `key=value` overrides on top.
pub fn load_kv(path: Option<&Path>, overrides: &[String]) -> Result<KvConfig, CliError> {
    let mut kv = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            KvConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => KvConfig::default(),
    };
    for o in overrides {
        kv.set_assignment(o)?;
    }
    Ok(kv)
}

fn parse_bool(kv: &KvConfig, key: &str, default: bool) -> Result<bool, CliError> {
    match kv.raw(key) {
        None => Ok(default),
        Some("true" | "1" | "yes") => Ok(true),
        Some("false" | "0" | "no") => Ok(false),
        Some(v) => Err(CliError::Config(format!("key `{key}`: expected a boolean, found {v:?}"))),
    }
}

/// Scene-set generation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSettings {
    pub scenes: usize,
    pub seed: u64,
    pub random: RandomSceneConfig,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings { scenes: 10, seed: 0, random: RandomSceneConfig::default() }
    }
}

impl SynthSettings {
    pub fn from_kv(kv: &KvConfig) -> Result<Self, CliError> {
        let d = SynthSettings::default();
        let r = &d.random;
        let t = &r.template;
        let template = SceneSpec {
            car_density: kv.get_or("car_density", t.car_density)?,
            ground_density: kv.get_or("ground_density", t.ground_density)?,
            ground_z: kv.get_or("ground_z", t.ground_z)?,
            noise: kv.get_or("noise", t.noise)?,
            radius: kv.get_or("radius", t.radius)?,
            ..t.clone()
        };
        let random = RandomSceneConfig {
            min_cars: kv.get_or("min_cars", r.min_cars)?,
            max_cars: kv.get_or("max_cars", r.max_cars)?,
            min_range: kv.get_or("min_range", r.min_range)?,
            max_range: kv.get_or("max_range", r.max_range)?,
            dim_jitter: kv.get_or("dim_jitter", r.dim_jitter)?,
            clutter_density: kv.get_or("clutter_density", r.clutter_density)?,
            walls: parse_bool(kv, "walls", r.walls)?,
            template,
        };
        let s = SynthSettings { scenes: kv.get_or("scenes", d.scenes)?, seed: kv.get_or("seed", d.seed)?, random };
        if s.random.min_cars > s.random.max_cars || !(s.random.min_range < s.random.max_range) {
            return Err(CliError::Config("car count or range bounds are inverted".into()));
        }
        Ok(s)
    }
}

/// On-disk layout of a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn velodyne(&self, id: &str) -> PathBuf {
        self.root.join("velodyne").join(format!("{id}.bin"))
    }
    pub fn calib(&self, id: &str) -> PathBuf {
        self.root.join("calib").join(format!("{id}.txt"))
    }
    pub fn labels(&self, id: &str) -> PathBuf {
        self.root.join("label_2").join(format!("{id}.txt"))
    }
    pub fn split(&self) -> PathBuf {
        self.root.join("split.txt")
    }
}

pub fn scene_id(i: usize) -> String {
    format!("{i:06}")
}

/// Writes `velodyne/`, `calib/`, `label_2/` and `split.txt`; returns the scene count.
pub fn cmd_synth(s: &SynthSettings, out: &Path) -> Result<usize, CliError> {
    let layout = DatasetLayout { root: out.to_path_buf() };
    for sub in ["velodyne", "calib", "label_2"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| io_error(&d, e))?;
    }
    let mut split = String::new();
    for i in 0..s.scenes {
        let id = scene_id(i);
        let spec = random_scene_spec(&s.random, scene_seed(s.seed, i as u64));
        let scene = make_scene(&spec).map_err(|e| CliError::Config(format!("scene {id}: {e}")))?;
        kitti_io::write_velodyne(layout.velodyne(&id), &scene.cloud)?;
        kitti_io::write_calib(layout.calib(&id), &spec.calib)?;
        kitti_io::write_labels(layout.labels(&id), &scene.labels)?;
        split.push_str(&id);
        split.push('\n');
    }
    fs::write(layout.split(), split).map_err(|e| io_error(&layout.split(), e))?;
    Ok(s.scenes)
}

/// `category x,z x,z …` per line; categories not listed keep their built-in profile.
pub fn parse_profiles(text: &str) -> Result<[CarProfile; 3], CliError> {
    let mut profiles = CarCategory::ALL.map(CarProfile::builtin);
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        let mut toks = line.split_whitespace();
        let Some(name) = toks.next() else { continue };
        let bad = |m: String| CliError::Config(format!("profiles line {}: {m}", i + 1));
        let cat = CarCategory::parse(name).ok_or_else(|| bad(format!("unknown category {name:?}")))?;
        let poly = toks
            .map(|t| {
                let (x, z) = t.split_once(',').ok_or_else(|| bad(format!("expected x,z, found {t:?}")))?;
                let p = |v: &str| v.parse::<f64>().map_err(|e| bad(format!("{v:?}: {e}")));
                Ok([p(x)?, p(z)?])
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        profiles[cat.index()] = CarProfile::new(cat, poly).map_err(|e| bad(e.to_string()))?;
    }
    Ok(profiles)
}

pub fn cmd_build_maps(profiles: Option<&Path>, alpha: f64, out: &Path) -> Result<(), CliError> {
    if !(alpha > 0.0) {
        return Err(CliError::Config(format!("alpha must be positive, got {alpha}")));
    }
    let maps = match profiles {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            build_maps_from_profiles(&parse_profiles(&text)?, alpha)
        }
        None => build_default_maps(alpha),
    };
    save_maps(out, &maps).map_err(|e| io_error(out, e))
}

/// Settings for `train`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub data: DatasetLayout,
    pub split: PathBuf,
    pub arch_widths: Vec<usize>,
    pub hidden: usize,
    pub config: TrainConfig,
    pub samples: SampleConfig,
    /// Also learn from the pipeline's own outputs on the training scenes.
    pub fitted_samples: bool,
    pub sample_seed: u64,
    pub progress: Option<PathBuf>,
}

/// Settings for `eval`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub thresholds: Vec<f64>,
    pub modes: Vec<IouMode>,
    pub points: usize,
    pub report: PathBuf,
}

/// Everything `fit`, `train` and `eval` read from a run config.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub data: DatasetLayout,
    pub split: PathBuf,
    pub detections_dir: PathBuf,
    pub output_dir: PathBuf,
    pub maps: Option<PathBuf>,
    pub map_alpha: f64,
    pub stage1_params: PathBuf,
    pub stage2_params: PathBuf,
    pub fit: FitConfig,
    pub oracle_2d: bool,
    pub oracle_dim_sigma: f64,
    pub oracle_seed: u64,
    pub workers: usize,
    pub train: TrainSettings,
    pub eval: EvalSettings,
}

impl PipelineConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self, CliError> {
        let root = kv.path("data_dir")?;
        let data = DatasetLayout { root: root.clone() };
        let output_dir = kv.path("output_dir")?;
        let dp = ProposalConfig::default();
        let proposals = ProposalConfig {
            iterations: kv.get_or("proposal.iterations", dp.iterations)?,
            inlier_threshold: kv.get_or("proposal.inlier_threshold", dp.inlier_threshold)?,
            max_seed_points: kv.get_or("proposal.max_seed_points", dp.max_seed_points)?,
            seed_cube_factor: kv.get_or("proposal.seed_cube_factor", dp.seed_cube_factor)?,
            ground_expand_factor: kv.get_or("proposal.ground_expand_factor", dp.ground_expand_factor)?,
            seed: kv.get_or("proposal.seed", dp.seed)?,
        };
        proposals.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let ds = ScoreConfig::default();
        let mode = match kv.raw("score.mode").unwrap_or("occupancy") {
            "occupancy" => ScoringMode::Occupancy,
            "per_point" => ScoringMode::PerPoint,
            m => return Err(CliError::Config(format!("score.mode: expected occupancy or per_point, found {m:?}"))),
        };
        let score = ScoreConfig { alpha: kv.get_or("score.alpha", ds.alpha)?, beta: kv.get_or("score.beta", ds.beta)?, mode };
        let stop_after = match kv.raw("stop_after") {
            None => StopAfter::Stage2,
            Some(s) => StopAfter::parse(s)
                .ok_or_else(|| CliError::Config(format!("stop_after: expected fit, stage1 or stage2, found {s:?}")))?,
        };
        let df = FitConfig::default();
        let fit = FitConfig {
            proposals,
            score,
            view_origin: Vec3::ZERO,
            min_frustum_points: kv.get_or("fit.min_frustum_points", df.min_frustum_points)?,
            stop_after,
        };

        let dt = TrainConfig::default();
        let config = TrainConfig {
            batch_size: kv.get_or("train.batch_size", dt.batch_size)?,
            positive_fraction: kv.get_or("train.positive_fraction", dt.positive_fraction)?,
            iterations: kv.get_or("train.iterations", dt.iterations)?,
            learning_rate: kv.get_or("train.learning_rate", dt.learning_rate)?,
            momentum: kv.get_or("train.momentum", dt.momentum)?,
            reg_weight: kv.get_or("train.reg_weight", dt.reg_weight)?,
            seed: kv.get_or("train.seed", dt.seed)?,
            log_every: kv.get_or("train.log_every", dt.log_every)?,
        };
        config.validate()?;
        let dsc = SampleConfig::default();
        let samples = SampleConfig {
            jitters_per_box: kv.get_or("sample.jitters_per_box", dsc.jitters_per_box)?,
            center_sigma: kv.get_or("sample.center_sigma", dsc.center_sigma)?,
            yaw_sigma_deg: kv.get_or("sample.yaw_sigma_deg", dsc.yaw_sigma_deg)?,
            dim_sigma: kv.get_or("sample.dim_sigma", dsc.dim_sigma)?,
            wide_jitters_per_box: kv.get_or("sample.wide_jitters_per_box", dsc.wide_jitters_per_box)?,
            wide_center_sigma: kv.get_or("sample.wide_center_sigma", dsc.wide_center_sigma)?,
            wide_yaw_sigma_deg: kv.get_or("sample.wide_yaw_sigma_deg", dsc.wide_yaw_sigma_deg)?,
            background_per_scene: kv.get_or("sample.background_per_scene", dsc.background_per_scene)?,
        };
        let desk = NetArch::desk(true);
        let train_root = kv.path_or("train.data_dir", &root);
        let train_layout = DatasetLayout { root: train_root };
        let train = TrainSettings {
            split: kv.path_or("train.split", train_layout.split()),
            data: train_layout,
            arch_widths: kv.list_or("net.widths", &desk.widths)?,
            hidden: kv.get_or("net.hidden", desk.hidden)?,
            config,
            samples,
            fitted_samples: parse_bool(kv, "train.fitted_samples", true)?,
            sample_seed: kv.get_or("train.sample_seed", 0u64)?,
            progress: kv.opt_path("train.progress"),
        };
        NetArch { widths: train.arch_widths.clone(), hidden: train.hidden, regression: true }.validate()?;

        let thresholds = kv.list_or("eval.thresholds", &[0.5, 0.7])?;
        let modes = kv
            .list_or("eval.modes", &["bev".to_string(), "3d".to_string()])?
            .iter()
            .map(|m| match m.as_str() {
                "bev" => Ok(IouMode::Bev),
                "3d" => Ok(IouMode::Box3D),
                _ => Err(CliError::Config(format!("eval.modes: unknown mode {m:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let eval = EvalSettings {
            thresholds,
            modes,
            points: kv.get_or("eval.points", 11usize)?,
            report: kv.path_or("eval.report", output_dir.join("report.txt")),
        };
        for &t in &eval.thresholds {
            crate::evalkit::EvalConfig { iou_threshold: t, mode: IouMode::Bev, points: eval.points }
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }

        let cfg = PipelineConfig {
            split: kv.path_or("split", data.split()),
            detections_dir: kv.path_or("detections_dir", root.join("detections_2d")),
            data,
            maps: kv.opt_path("maps"),
            map_alpha: score.alpha,
            stage1_params: kv.path_or("stage1_params", output_dir.join("stage1.f3np")),
            stage2_params: kv.path_or("stage2_params", output_dir.join("stage2.f3np")),
            output_dir,
            fit,
            oracle_2d: parse_bool(kv, "oracle_2d", false)?,
            oracle_dim_sigma: kv.get_or("oracle_dim_sigma", 0.05)?,
            oracle_seed: kv.get_or("oracle_seed", 0u64)?,
            workers: kv.get_or("workers", 1usize)?.max(1),
            train,
            eval,
        };
        kv.finish()?;
        Ok(cfg)
    }

    pub fn load_maps(&self) -> Result<[ScoreMap; 3], CliError> {
        match &self.maps {
            Some(p) => load_maps(p).map_err(|e| match e {
                crate::car_models::CarModelError::Io(_) => io_error(p, e),
                _ => CliError::Config(format!("{}: {e}", p.display())),
            }),
            None => Ok(build_default_maps(self.map_alpha)),
        }
    }

    /// Loads a stage's parameters if the file exists.
    fn optional_params(path: &Path) -> Result<Option<NetParams>, CliError> {
        if path.exists() {
            Ok(Some(load_params(path)?))
        } else {
            Ok(None)
        }
    }
}

/// One scene read from disk.
pub struct SceneData {
    pub cloud: PointCloud,
    pub calib: Calibration,
    pub labels: Option<Vec<LabelRecord>>,
}

pub fn load_scene(layout: &DatasetLayout, id: &str, with_labels: bool) -> Result<SceneData, CliError> {
    let cloud = kitti_io::load_velodyne(layout.velodyne(id))?;
    let calib = kitti_io::load_calib(layout.calib(id))?;
    let labels = if with_labels { Some(kitti_io::load_labels(layout.labels(id))?) } else { None };
    Ok(SceneData { cloud, calib, labels })
}

/// Oracle 2D seed of the scene at split position `index`.
pub fn oracle_scene_seed(base: u64, index: usize) -> u64 {
    scene_seed(base ^ 0x0a11_ce2d, index as u64)
}

fn lidar_boxes(labels: &[LabelRecord], calib: &Calibration) -> Vec<Box3> {
    labels.iter().filter(|r| r.class == "Car").filter_map(|r| r.to_lidar_box(calib).ok()).collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitSummary {
    pub scenes: usize,
    pub detections: usize,
    pub failed: usize,
    /// Worst scene-level error, if any.
    pub worst: Option<(i32, String)>,
}

impl FitSummary {
    fn into_result(self) -> Result<(), CliError> {
        match self.worst {
            None => Ok(()),
            Some((3, m)) => Err(CliError::Io(format!("{} scene(s) failed; last: {m}", self.failed))),
            Some((_, m)) => Err(CliError::Config(format!("{} scene(s) failed; last: {m}", self.failed))),
        }
    }
}

fn fit_one(
    cfg: &PipelineConfig,
    maps: &[ScoreMap; 3],
    refiners: Refiners<'_>,
    index: usize,
    id: &str,
) -> Result<(Vec<Detection>, Calibration, Vec<String>), CliError> {
    let scene = load_scene(&cfg.data, id, cfg.oracle_2d)?;
    let dets2d: Vec<Detection2DInput> = match &scene.labels {
        Some(labels) => oracle_detections(labels, cfg.oracle_dim_sigma, oracle_scene_seed(cfg.oracle_seed, index)),
        None => kitti_io::load_detections(cfg.detections_dir.join(format!("{id}.txt")))?,
    };
    let fit = fit_scene(&scene.cloud, &scene.calib, &dets2d, maps, refiners, &cfg.fit);
    let notes = fit.failures.iter().map(|(i, why)| format!("scene {id}: 2D detection {i}: {why}")).collect();
    Ok((fit.detections, scene.calib, notes))
}

/// Runs the pipeline on every scene of the split and writes `output_dir/<id>.txt`.
/// Scenes are processed by `workers` threads; output does not depend on the count.
pub fn cmd_fit(cfg: &PipelineConfig) -> Result<FitSummary, CliError> {
    let ids = kitti_io::load_split(&cfg.split)?;
    let maps = cfg.load_maps()?;
    let stage1 = if cfg.fit.stop_after == StopAfter::Fit { None } else { PipelineConfig::optional_params(&cfg.stage1_params)? };
    let stage2 =
        if cfg.fit.stop_after == StopAfter::Stage2 { PipelineConfig::optional_params(&cfg.stage2_params)? } else { None };
    let refiners = Refiners { stage1: stage1.as_ref(), stage2: stage2.as_ref() };
    fs::create_dir_all(&cfg.output_dir).map_err(|e| io_error(&cfg.output_dir, e))?;

    type SceneResult = Result<(Vec<Detection>, Calibration, Vec<String>), CliError>;
    let results: Vec<Mutex<Option<SceneResult>>> = ids.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..cfg.workers.min(ids.len()).max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= ids.len() {
                    break;
                }
                let r = fit_one(cfg, &maps, refiners, i, &ids[i]);
                *results[i].lock().expect("no poisoned scene slot") = Some(r);
            });
        }
    });

    let mut summary = FitSummary { scenes: ids.len(), ..Default::default() };
    for (id, slot) in ids.iter().zip(results) {
        let result = slot.into_inner().expect("no poisoned scene slot").expect("every scene processed");
        let outcome = result.and_then(|(dets, calib, notes)| {
            for n in notes {
                eprintln!("warning: {n}");
            }
            let path = cfg.output_dir.join(format!("{id}.txt"));
            kitti_io::write_detections(&path, &dets, &calib)?;
            Ok(dets.len())
        });
        match outcome {
            Ok(n) => summary.detections += n,
            Err(e) => {
                eprintln!("scene {id}: {e}");
                summary.failed += 1;
                if summary.worst.as_ref().is_none_or(|(c, _)| e.exit_code() > *c) {
                    summary.worst = Some((e.exit_code(), format!("scene {id}: {e}")));
                }
            }
        }
    }
    Ok(summary)
}

/// Builds the training set for `stage` and trains a network, saving it to the
/// stage's parameter path.
pub fn cmd_train(cfg: &PipelineConfig, stage: RefineStage, mut progress: impl FnMut(&ProgressRecord)) -> Result<(), CliError> {
    let t = &cfg.train;
    let ids = kitti_io::load_split(&t.split)?;
    let anchor = CanonicalAnchor::default();
    let maps = if t.fitted_samples { Some(cfg.load_maps()?) } else { None };
    let stage1 = match stage {
        RefineStage::Two if t.fitted_samples => PipelineConfig::optional_params(&cfg.stage1_params)?,
        _ => None,
    };
    let mut data = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let scene = load_scene(&t.data, id, true)?;
        let labels = scene.labels.as_deref().unwrap_or_default();
        let gts = lidar_boxes(labels, &scene.calib);
        data.extend(scene_samples(&scene.cloud, &gts, stage, &anchor, &t.samples, scene_seed(t.sample_seed, i as u64)));
        if let Some(maps) = &maps {
            let dets2d = oracle_detections(labels, cfg.oracle_dim_sigma, oracle_scene_seed(t.sample_seed ^ 0x7e57, i));
            let fit_cfg = FitConfig {
                stop_after: if stage1.is_some() { StopAfter::Stage1 } else { StopAfter::Fit },
                ..cfg.fit.clone()
            };
            let refiners = Refiners { stage1: stage1.as_ref(), stage2: None };
            let fit = fit_scene(&scene.cloud, &scene.calib, &dets2d, maps, refiners, &fit_cfg);
            data.extend(fitted_samples(&scene.cloud, &fit.detections, &gts, stage, &anchor));
        }
    }
    let arch = NetArch { widths: t.arch_widths.clone(), hidden: t.hidden, regression: stage == RefineStage::One };
    let mut net = Network::new(arch, t.config.seed)?;
    let mut log = match &t.progress {
        Some(p) => Some(fs::File::create(p).map_err(|e| io_error(p, e))?),
        None => None,
    };
    let mut log_err = None;
    train(&mut net, &data, &t.config, |r| {
        if let Some(f) = log.as_mut() {
            if let Err(e) = writeln!(f, "{r}") {
                log_err.get_or_insert(e);
            }
        }
        progress(r);
    })?;
    if let (Some(e), Some(p)) = (log_err, &t.progress) {
        return Err(io_error(p, e));
    }
    let path = match stage {
        RefineStage::One => &cfg.stage1_params,
        RefineStage::Two => &cfg.stage2_params,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    save_params(path, &NetParams { net, anchor })?;
    Ok(())
}

/// Scores `output_dir/<id>.txt` against `label_2/<id>.txt` over the split; writes the
/// key-value report and returns it.
pub fn cmd_eval(cfg: &PipelineConfig) -> Result<EvalReport, CliError> {
    let ids = kitti_io::load_split(&cfg.split)?;
    let mut scenes = Vec::with_capacity(ids.len());
    for id in &ids {
        let labels = kitti_io::load_labels(cfg.data.labels(id))?;
        let dets = kitti_io::load_labels(cfg.output_dir.join(format!("{id}.txt")))?;
        let eval_box = |r: &LabelRecord| r.to_eval_box().map_err(|e| CliError::Config(format!("scene {id}: {e}")));
        let gts = labels
            .iter()
            .filter(|r| r.class == "Car")
            .map(|r| Ok((eval_box(r)?, assign_difficulty(r))))
            .collect::<Result<Vec<_>, CliError>>()?;
        let dets = dets
            .iter()
            .filter(|r| r.class == "Car")
            .map(|r| Ok((eval_box(r)?, r.score.unwrap_or(0.0))))
            .collect::<Result<Vec<_>, CliError>>()?;
        scenes.push(SceneEval { gts, dets });
    }
    let e = &cfg.eval;
    let report = evaluate(&scenes, &e.thresholds, &e.modes, e.points).map_err(|x| CliError::Eval(x.to_string()))?;
    if report.cells.iter().all(|c| c.ap.is_none()) {
        return Err(CliError::Eval("no ground-truth cars in the evaluated split".into()));
    }
    if let Some(dir) = e.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|x| io_error(dir, x))?;
    }
    fs::write(&e.report, report.to_key_values()).map_err(|x| io_error(&e.report, x))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_file() {
        let p = parse_profiles("# custom\nvan 0,0.9 1,0.6\n").unwrap();
        assert_eq!(p[CarCategory::Van.index()].polyline, vec![[0.0, 0.9], [1.0, 0.6]]);
        assert_eq!(p[0], CarProfile::builtin(CarCategory::Suv));
        assert!(parse_profiles("truck 0,1 1,1").is_err());
        assert!(parse_profiles("van 0,0.9 0.5").is_err());
    }

    #[test]
    fn pipeline_config_defaults_and_errors() {
        let kv = KvConfig::parse("data_dir = d\noutput_dir = o\n").unwrap();
        let c = PipelineConfig::from_kv(&kv).unwrap();
        assert_eq!(c.split, PathBuf::from("d/split.txt"));
        assert_eq!(c.stage1_params, PathBuf::from("o/stage1.f3np"));
        assert_eq!(c.fit.stop_after, StopAfter::Stage2);
        assert_eq!(c.eval.points, 11);
        let bad = KvConfig::parse("data_dir = d\noutput_dir = o\nstop_after = never\n").unwrap();
        assert_eq!(PipelineConfig::from_kv(&bad).unwrap_err().exit_code(), 2);
        let typo = KvConfig::parse("data_dir = d\noutput_dir = o\ntrain.iteratoins = 3\n").unwrap();
        assert!(PipelineConfig::from_kv(&typo).unwrap_err().to_string().contains("train.iteratoins"));
        let missing = KvConfig::parse("output_dir = o\n").unwrap();
        assert!(PipelineConfig::from_kv(&missing).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["frustum3d", "frobnicate"]), 2);
        assert_eq!(run(["frustum3d", "train", "--config", "x", "--stage", "3"]), 2);
        assert_eq!(run(["frustum3d", "eval", "--config", "/nonexistent/run.cfg"]), 3);
    }
}
