//! `fusiondet` command line: project, synth-dataset, train, eval, bench.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::adverse::{synthesize_adverse_dataset, CorruptionSpec};
use crate::dataset::{
    apply_split, generate_synthetic_scene, lidar_representation, read_calibration, read_dataset, read_point_cloud,
    write_dataset, write_depth_png, DatasetMeta, FrameExtras, SplitSpec, SyntheticSceneSpec, DENSIFY_WINDOW,
};
use crate::detect::{mean_ap, AnchorGeometry, ClassSet};
use crate::error::{Error, Result};
use crate::frame::LidarKind;
use crate::fusion::{rgb_mean, ArchConfig, FusionVariant, Preprocessor};
use crate::lidar_repr::RangeGeometry;
use crate::model::{bench_inference, load_checkpoint, save_checkpoint, DecodeParams, Detector};
use crate::nn::LrSchedule;
use crate::train::{evaluate, repeat_seed, train, EarlyStop, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "fusiondet", version, about = "Camera-lidar fusion object detection toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn a point cloud into a 2D lidar representation (16-bit PNG).
    Project(ProjectArgs),
    /// Generate a synthetic dataset, optionally with adverse corruption.
    SynthDataset(SynthArgs),
    /// Train a detector on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint: per-class AP and mAP as CSV and JSON.
    Eval(EvalArgs),
    /// Time full inference on one frame.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReprArg {
    Range,
    Sparse,
    Dense,
}

impl From<ReprArg> for LidarKind {
    fn from(r: ReprArg) -> Self {
        match r {
            ReprArg::Range => LidarKind::Range,
            ReprArg::Sparse => LidarKind::Sparse,
            ReprArg::Dense => LidarKind::Dense,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchArg {
    None,
    Early,
    Middle,
    Late,
}

impl From<ArchArg> for FusionVariant {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::None => FusionVariant::None,
            ArchArg::Early => FusionVariant::Early,
            ArchArg::Middle => FusionVariant::Middle,
            ArchArg::Late => FusionVariant::Late,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum EncoderArg {
    #[value(name = "vgg16m-mu")]
    #[serde(rename = "vgg16m-mu")]
    Vgg16mMu,
    #[value(name = "vgg16-mu")]
    #[serde(rename = "vgg16-mu")]
    Vgg16Mu,
}

impl EncoderArg {
    fn name(self) -> &'static str {
        match self {
            EncoderArg::Vgg16mMu => "vgg16m-mu",
            EncoderArg::Vgg16Mu => "vgg16-mu",
        }
    }
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Velodyne `.bin` point cloud.
    #[arg(long)]
    pub cloud: PathBuf,
    /// KITTI calibration text file.
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long, value_enum, default_value = "dense")]
    pub repr: ReprArg,
    /// Camera image width and height in pixels.
    #[arg(long, default_value_t = 1242)]
    pub width: usize,
    #[arg(long, default_value_t = 375)]
    pub height: usize,
    /// Densify window side (odd).
    #[arg(long, default_value_t = DENSIFY_WINDOW)]
    pub window: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub frames: usize,
    #[arg(long, value_enum, default_value = "dense")]
    pub repr: ReprArg,
    /// Skip corruption.
    #[arg(long)]
    pub clean: bool,
    /// Seed for corruption draws (defaults to --seed).
    #[arg(long)]
    pub corruption_seed: Option<u64>,
    /// Relative weights of clean, partial and failed frames.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1.0, 2.0, 4.0])]
    pub weights: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Training settings, loadable from `--config` and overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub arch: ArchArg,
    pub encoder: EncoderArg,
    pub repr: Option<ReprArg>,
    pub iterations: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub lr: f64,
    pub lr_step: usize,
    pub repeats: usize,
    pub split_test: usize,
    pub split_train: Option<usize>,
    pub early_stop: Option<EarlyStop>,
    /// Global gradient-norm bound; `null` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let split = SplitSpec::default();
        let t = TrainConfig::default();
        RunConfig {
            seed: 0,
            arch: ArchArg::Late,
            encoder: EncoderArg::Vgg16mMu,
            repr: None,
            iterations: t.iterations,
            batch_size: t.batch_size,
            momentum: t.momentum,
            lr: t.schedule.base,
            lr_step: t.schedule.step,
            repeats: 1,
            split_test: split.test,
            split_train: split.train,
            early_stop: None,
            clip_norm: t.clip_norm,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON run configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub arch: Option<ArchArg>,
    #[arg(long, value_enum)]
    pub encoder: Option<EncoderArg>,
    /// Must match the dataset's representation when given.
    #[arg(long, value_enum)]
    pub repr: Option<ReprArg>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_step: Option<usize>,
    /// Train N times with derived seeds and average the test-split metrics.
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Frames in the leading test block.
    #[arg(long)]
    pub split_test: Option<usize>,
    /// Frames in the train block; the rest is validation.
    #[arg(long)]
    pub split_train: Option<usize>,
    /// Stop after this many validation checks without improvement.
    #[arg(long)]
    pub early_stop_patience: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub early_stop_every: usize,
    /// Rescale gradients whose global norm exceeds this value.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    All,
    Test,
    Train,
    Val,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub subset: Subset,
    #[arg(long, default_value_t = 500)]
    pub split_test: usize,
    #[arg(long)]
    pub split_train: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    #[arg(long, default_value_t = 0.05)]
    pub score_threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Output file of `project` for a given representation.
pub fn project_output_path(out: &Path, cloud: &Path, kind: LidarKind) -> PathBuf {
    let stem = cloud.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud");
    out.join(format!("{stem}_{}.png", kind.name()))
}

pub fn cmd_project(a: &ProjectArgs) -> Result<PathBuf> {
    if a.window == 0 || a.window % 2 == 0 {
        return Err(Error::InvalidWindow(a.window));
    }
    let blob = fs::read(&a.cloud).map_err(|e| Error::io(&a.cloud, e))?;
    let cloud = read_point_cloud(&blob)?;
    let text = fs::read_to_string(&a.calib).map_err(|e| Error::io(&a.calib, e))?;
    let (intr, ext) = read_calibration(&text, a.width, a.height)?;
    let kind = LidarKind::from(a.repr);
    let img = lidar_representation(&cloud, kind, &intr, &ext, &RangeGeometry::velodyne64(), a.window)?;
    mkdir(&a.out)?;
    let path = project_output_path(&a.out, &a.cloud, kind);
    write_depth_png(&path, &img)?;
    Ok(path)
}

pub fn cmd_synth_dataset(a: &SynthArgs) -> Result<()> {
    let kind = LidarKind::from(a.repr);
    let scene = SyntheticSceneSpec {
        seed: a.seed,
        ..Default::default()
    };
    let corruption = (!a.clean).then(|| CorruptionSpec {
        seed: a.corruption_seed.unwrap_or(a.seed),
        weights: [a.weights[0], a.weights[1], a.weights[2]],
        ..Default::default()
    });
    scene.validate()?;
    if let Some(c) = &corruption {
        c.validate()?;
    }
    let geometry = scene.range_geometry();
    let mut frames = Vec::with_capacity(a.frames);
    let mut extras = Vec::with_capacity(a.frames);
    for i in 0..a.frames as u64 {
        let f = generate_synthetic_scene(&scene, i)?;
        frames.push(f.sensor_frame(kind, &geometry, DENSIFY_WINDOW)?);
        extras.push(FrameExtras {
            cloud: f.cloud,
            intrinsics: f.intrinsics,
            extrinsics: f.extrinsics,
        });
    }
    if let Some(c) = &corruption {
        frames = synthesize_adverse_dataset(&frames, c)?;
    }
    let meta = DatasetMeta {
        frames: frames.len(),
        lidar_kind: kind,
        classes: ClassSet::default().names().to_vec(),
        densify_window: DENSIFY_WINDOW,
        range_geometry: geometry,
        scene: Some(scene),
        corruption,
    };
    write_dataset(&a.out, &meta, &frames, Some(&extras))
}

fn resolve_run_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut rc: RunConfig = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    macro_rules! over {
        ($field:ident, $flag:expr) => {
            if let Some(v) = $flag {
                rc.$field = v;
            }
        };
    }
    over!(seed, a.seed);
    over!(arch, a.arch);
    over!(encoder, a.encoder);
    over!(iterations, a.iters);
    over!(batch_size, a.batch_size);
    over!(lr, a.lr);
    over!(lr_step, a.lr_step);
    over!(repeats, a.repeats);
    over!(split_test, a.split_test);
    if a.repr.is_some() {
        rc.repr = a.repr;
    }
    if a.split_train.is_some() {
        rc.split_train = a.split_train;
    }
    if let Some(p) = a.early_stop_patience {
        rc.early_stop = Some(EarlyStop {
            every: a.early_stop_every,
            patience: p,
        });
    }
    if a.clip_norm.is_some() {
        rc.clip_norm = a.clip_norm;
    }
    if rc.repeats == 0 {
        return Err(Error::InvalidConfig("--repeats must be at least 1".into()));
    }
    Ok(rc)
}

#[derive(Debug, Serialize)]
struct RepeatResult {
    repeat: usize,
    seed: u64,
    iterations: usize,
    final_loss: f64,
    test_map: Option<f64>,
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let rc = resolve_run_config(a)?;
    let (family, scale) = ArchConfig::parse_encoder(rc.encoder.name()).expect("known encoder name");
    let tc = TrainConfig {
        iterations: rc.iterations,
        batch_size: rc.batch_size,
        momentum: rc.momentum,
        schedule: LrSchedule {
            base: rc.lr,
            step: rc.lr_step,
        },
        seed: rc.seed,
        log_every: 10,
        early_stop: rc.early_stop,
        clip_norm: rc.clip_norm,
    };
    tc.validate()?;
    let split = SplitSpec::new(rc.split_test, rc.split_train);
    // structural checks before touching the data
    let dataset_meta: DatasetMeta = {
        let p = a.dataset.join("dataset.json");
        serde_json::from_str(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?
    };
    let kind = dataset_meta.lidar_kind;
    if let Some(r) = rc.repr {
        if LidarKind::from(r) != kind {
            return Err(Error::InvalidConfig(format!(
                "--repr {} does not match the dataset's {} representation",
                LidarKind::from(r).name(),
                kind.name()
            )));
        }
    }
    let arch_cfg = ArchConfig {
        scale,
        ..ArchConfig::mu(family, rc.arch.into(), kind)
    };
    arch_cfg.validate()?;
    split.ranges(dataset_meta.frames)?;

    let ds = read_dataset(&a.dataset)?;
    let classes = ds.classes()?;
    let (test, train_set, val) = apply_split(&ds.frames, &split)?;
    if train_set.is_empty() {
        return Err(Error::InvalidConfig("the train split is empty".into()));
    }
    let mean = rgb_mean(train_set.iter().map(|f| &f.rgb));
    let pre = Preprocessor::new(arch_cfg.input_size, mean);
    mkdir(&a.out)?;
    write_file(&a.out.join("run_config.json"), serde_json::to_string_pretty(&rc)? + "\n")?;

    let mut results = Vec::with_capacity(rc.repeats);
    for r in 0..rc.repeats {
        let seed = repeat_seed(rc.seed, r);
        let dir = if rc.repeats == 1 {
            a.out.clone()
        } else {
            a.out.join(format!("repeat-{r}"))
        };
        mkdir(&dir)?;
        let mut d = Detector::new(arch_cfg.clone(), classes.clone(), AnchorGeometry::default(), pre, seed)?;
        let log_path = dir.join("train_log.jsonl");
        let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        let run = TrainConfig { seed, ..tc.clone() };
        let summary = train(&mut d, train_set, val, &run, Some(&mut log))?;
        save_checkpoint(&dir.join("checkpoint.fdck"), &d)?;
        let test_map = if test.is_empty() {
            None
        } else {
            Some(evaluate(&d, test, &DecodeParams::default(), 0.5)?.map)
        };
        results.push(RepeatResult {
            repeat: r,
            seed,
            iterations: summary.iterations,
            final_loss: summary.final_loss,
            test_map,
        });
    }
    let maps: Vec<f64> = results.iter().filter_map(|r| r.test_map).collect();
    let summary = serde_json::json!({
        "repeats": results,
        "mean_test_map": (!maps.is_empty()).then(|| mean_ap(&maps)),
    });
    write_file(&a.out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let d = load_checkpoint(&a.checkpoint)?;
    let ds = read_dataset(&a.dataset)?;
    let frames = match a.subset {
        Subset::All => &ds.frames[..],
        s => {
            let (test, train_set, val) = apply_split(&ds.frames, &SplitSpec::new(a.split_test, a.split_train))?;
            match s {
                Subset::Test => test,
                Subset::Train => train_set,
                _ => val,
            }
        }
    };
    let decode = DecodeParams {
        score_threshold: a.score_threshold,
        iou_threshold: 0.5,
    };
    let report = evaluate(&d, frames, &decode, a.iou)?;
    mkdir(&a.out)?;
    let label = format!("{}/{}", d.config.fusion.name(), d.config.repr.name());
    write_file(&a.out.join("metrics.csv"), report.to_csv(&label))?;
    write_file(&a.out.join("metrics.json"), serde_json::to_string_pretty(&report)? + "\n")
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let d = load_checkpoint(&a.checkpoint)?;
    let ds = read_dataset(&a.dataset)?;
    let frame = ds.frames.get(a.frame).ok_or_else(|| {
        Error::InvalidConfig(format!("frame {} out of range ({} frames)", a.frame, ds.frames.len()))
    })?;
    let stats = bench_inference(&d, frame, a.reps, a.warmup)?;
    let text = serde_json::to_string_pretty(&serde_json::json!({
        "fusion": d.config.fusion.name(),
        "repr": d.config.repr.name(),
        "stats": stats,
    }))? + "\n";
    match &a.out {
        Some(p) => write_file(p, &text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("stdout", e)),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Project(a) => cmd_project(a).map(|p| println!("{}", p.display())),
        Command::SynthDataset(a) => cmd_synth_dataset(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
