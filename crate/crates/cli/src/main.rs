//! `pointtrack` command-line pipeline. Every stage reads its inputs from disk
//! (the dataset root and the previous stage's artifacts under `--out`) and
//! appends one JSON record to `<out>/log.jsonl`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use pointtrack::bev::{self, ExportFormat};
use pointtrack::dataset::{index_dataset, split_train_val, BoxAnnotation2D, DatasetIndex, SequenceLoader, SplitAssignment};
use pointtrack::geometry::{RigidTransform, SparseDepthMap};
use pointtrack::io::{decode_depth_map, encode_depth_map, read_bytes, read_to_string, write_atomic};
use pointtrack::metrics::{
    box_iou, ground_distance, key_value_line, region_masks, DepthAccumulator, FrameSet, GroundBox, MotAccumulator,
    DEFAULT_GROUND_GATE, DEFAULT_RANGES,
};
use pointtrack::net::{decode_checkpoint, encode_checkpoint, LrSchedule, ModelConfig, ToyNet, TrainState};
use pointtrack::pipeline::{self, DetectionSource, TrainOptions};
use pointtrack::synth::{self, SynthConfig};
use pointtrack::tracker::{format_track_records, parse_track_records, track_records, tracks_from_records, TrackerConfig};
use pointtrack::Error;

const CONFIG_ENV: &str = "POINTTRACK_CONFIG";

#[derive(Parser)]
#[command(name = "pointtrack", version, about = "Joint detection, tracking and depth pipeline on KITTI-layout data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Dataset root in KITTI tracking layout.
    #[arg(long, global = true)]
    root: Option<PathBuf>,
    /// Comma-separated sequence ids [default: the prepared split, else all].
    #[arg(long, global = true, value_delimiter = ',')]
    sequences: Option<Vec<usize>>,
    /// Model checkpoint [default: <out>/model.ckpt].
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Output directory for artifacts and the run log.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for model initialization and synthetic data [default: 0].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trajectory export format [default: csv].
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    /// Ignore ground-truth depths beyond this many meters [default: 80].
    #[arg(long, global = true)]
    depth_cap: Option<f64>,
    /// Minimum IoU for a MOT match [default: 0.5].
    #[arg(long, global = true)]
    iou_threshold: Option<f64>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Csv,
    Geojson,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic sequences into a KITTI-layout root.
    MakeSynthetic {
        /// Number of sequences; sequence 0 is the default scene.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Index the dataset and split it by sequence into train and val.
    Prepare {
        /// Fraction of frames assigned to training [default: 0.5].
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Train the network and write a checkpoint.
    Train {
        /// Total optimizer steps [default: 2000].
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Run detection and tracking; writes <out>/tracks and <out>/depth.
    Track {
        /// Use ground-truth detections instead of the network.
        #[arg(long)]
        oracle: bool,
    },
    /// Depth metrics per region; writes <out>/depth_report.json.
    EvaluateDepth {
        /// Directory of predicted depth maps [default: <out>/depth].
        #[arg(long)]
        pred: Option<PathBuf>,
    },
    /// CLEAR-MOT metrics; writes <out>/mot_report.json.
    EvaluateMot {
        /// Directory of track files [default: <out>/tracks].
        #[arg(long)]
        pred: Option<PathBuf>,
    },
    /// World-frame trajectories from tracks and ego poses; writes <out>/bev.
    ExportBev {
        /// Directory of track files [default: <out>/tracks].
        #[arg(long)]
        pred: Option<PathBuf>,
    },
    /// SVG plot of exported trajectories.
    PlotBev {
        /// Exported CSV or GeoJSON file [default: every export in <out>/bev].
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    root: Option<PathBuf>,
    sequences: Option<Vec<usize>>,
    checkpoint: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    format: Option<ExportFormat>,
    depth_cap: Option<f64>,
    iou_threshold: Option<f64>,
    ground_gate: Option<f64>,
    split_ratio: Option<f64>,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    tracker: TrackerConfig,
    #[serde(default)]
    bev: BevSection,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainSection {
    steps: u64,
    batch_size: usize,
    learning_rate: f64,
    gamma: f64,
    steps_per_epoch: u64,
    max_detections: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainOptions::default();
        Self {
            steps: d.steps,
            batch_size: d.batch_size,
            learning_rate: d.schedule.base,
            gamma: d.schedule.gamma,
            steps_per_epoch: d.schedule.steps_per_epoch,
            max_detections: 32,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BevSection {
    /// Row-major 3×4 camera → ego transform; identity by default.
    cam_to_ego: Option<Vec<f64>>,
}

type AnyResult<T> = Result<T, CliError>;

#[derive(Debug)]
enum CliError {
    Config(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

fn missing(key: &str) -> CliError {
    CliError::Config(format!("missing config key `{key}` (set it in the config file or pass --{})", key.replace('_', "-")))
}

impl RunConfig {
    fn load(common: &Common) -> AnyResult<Self> {
        let mut cfg: RunConfig = match &common.config {
            Some(path) => {
                let text = read_to_string(path)?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?
            }
            None => RunConfig::default(),
        };
        macro_rules! over {
            ($($f:ident),*) => {$(if let Some(v) = common.$f.clone() { cfg.$f = Some(v); })*};
        }
        over!(root, sequences, checkpoint, out, seed, depth_cap, iou_threshold);
        if let Some(f) = common.format {
            cfg.format = Some(match f {
                FormatArg::Csv => ExportFormat::Csv,
                FormatArg::Geojson => ExportFormat::Geojson,
            });
        }
        cfg.tracker.validate()?;
        Ok(cfg)
    }

    fn root(&self) -> AnyResult<&Path> {
        let root = self.root.as_deref().ok_or_else(|| missing("root"))?;
        if !root.is_dir() {
            return Err(CliError::Config(format!("`root` {} is not a directory", root.display())));
        }
        Ok(root)
    }

    fn out(&self) -> AnyResult<&Path> {
        self.out.as_deref().ok_or_else(|| missing("out"))
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn checkpoint(&self) -> AnyResult<PathBuf> {
        Ok(self.checkpoint.clone().unwrap_or_else(|| self.out().map(|o| o.join("model.ckpt")).unwrap_or_default()))
    }

    fn cam_to_ego(&self) -> AnyResult<RigidTransform<f64>> {
        match &self.bev.cam_to_ego {
            None => Ok(RigidTransform::identity()),
            Some(v) => {
                let t = RigidTransform::from_row_major_3x4(v)
                    .ok_or_else(|| CliError::Config(format!("`bev.cam_to_ego` needs 12 values, got {}", v.len())))?;
                t.validate("bev.cam_to_ego")?;
                Ok(t)
            }
        }
    }

    fn train_options(&self) -> TrainOptions {
        let t = &self.train;
        TrainOptions {
            steps: t.steps,
            batch_size: t.batch_size,
            schedule: LrSchedule {
                base: t.learning_rate,
                gamma: t.gamma,
                steps_per_epoch: t.steps_per_epoch,
            },
            ..TrainOptions::default()
        }
    }

    /// Explicit selection, else the split written by `prepare` (`part` half),
    /// else every sequence.
    fn select(&self, index: &DatasetIndex, part: Part) -> AnyResult<Vec<usize>> {
        if let Some(s) = &self.sequences {
            for &id in s {
                index.sequence(id)?;
            }
            return Ok(s.clone());
        }
        if let Ok(out) = self.out() {
            let path = out.join("split.json");
            if path.is_file() {
                let split: SplitAssignment = serde_json::from_str(&read_to_string(&path)?)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                return Ok(match part {
                    Part::Train => split.train,
                    Part::Val => split.val,
                });
            }
        }
        Ok(index.sequences.iter().map(|s| s.id).collect())
    }
}

#[derive(Clone, Copy)]
enum Part {
    Train,
    Val,
}

/// Appends the stage record to `<out>/log.jsonl` and echoes it on stdout.
fn log_stage(out: &Path, stage: &str, started: Instant, mut fields: Value) -> AnyResult<()> {
    fields["stage"] = json!(stage);
    fields["elapsed_s"] = json!((started.elapsed().as_secs_f64() * 1e3).round() / 1e3);
    let line = serde_json::to_string(&fields).expect("log record serializes");
    println!("{line}");
    let path = out.join("log.jsonl");
    let mut text = if path.is_file() { read_to_string(&path)? } else { String::new() };
    text.push_str(&line);
    text.push('\n');
    write_atomic(&path, text.as_bytes())?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> AnyResult<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    Ok(write_atomic(path, text.as_bytes())?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pointtrack: {e}");
            match e {
                CliError::Config(_) => ExitCode::from(2),
                CliError::Run(_) => ExitCode::FAILURE,
            }
        }
    }
}

fn run(cli: Cli) -> AnyResult<()> {
    let cfg = RunConfig::load(&cli.common)?;
    let started = Instant::now();
    match cli.command {
        Command::MakeSynthetic { count } => make_synthetic(&cfg, count, started),
        Command::Prepare { ratio } => prepare(&cfg, ratio, started),
        Command::Train { steps } => train(&cfg, steps, started),
        Command::Track { oracle } => track(&cfg, oracle, started),
        Command::EvaluateDepth { pred } => evaluate_depth(&cfg, pred, started),
        Command::EvaluateMot { pred } => evaluate_mot(&cfg, pred, started),
        Command::ExportBev { pred } => export_bev(&cfg, pred, started),
        Command::PlotBev { input } => plot_bev(&cfg, input, started),
    }
}

fn make_synthetic(cfg: &RunConfig, count: usize, started: Instant) -> AnyResult<()> {
    let root = cfg.root.as_deref().ok_or_else(|| missing("root"))?;
    let out = cfg.out()?;
    let mut frames = 0;
    for seq in 0..count {
        let scene_cfg = if seq == 0 {
            SynthConfig {
                seed: cfg.seed(),
                ..SynthConfig::default()
            }
        } else {
            synth::random_config(cfg.seed().wrapping_add(seq as u64), 3, SynthConfig::default().frames)
        };
        let scene = synth::render_scene(&scene_cfg)?;
        synth::write_kitti_sequence(root, seq, &scene)?;
        frames += scene.frames.len();
    }
    log_stage(out, "make-synthetic", started, json!({"sequences": count, "frames": frames}))
}

fn prepare(cfg: &RunConfig, ratio: Option<f64>, started: Instant) -> AnyResult<()> {
    let index = index_dataset(cfg.root()?)?;
    let out = cfg.out()?;
    let ratio = ratio.or(cfg.split_ratio).unwrap_or(0.5);
    write_json(&out.join("index.json"), &index)?;
    let split = if index.sequences.len() >= 2 {
        let split = split_train_val(&index, ratio)?;
        write_json(&out.join("split.json"), &split)?;
        Some(split)
    } else {
        log::warn!("one sequence only: no train/val split written");
        None
    };
    log_stage(
        out,
        "prepare",
        started,
        json!({
            "sequences": index.sequences.len(),
            "frames": index.total_frames(),
            "split": split,
        }),
    )
}

fn train(cfg: &RunConfig, steps: Option<u64>, started: Instant) -> AnyResult<()> {
    let index = index_dataset(cfg.root()?)?;
    let out = cfg.out()?;
    let ids = cfg.select(&index, Part::Train)?;
    let loaders = ids
        .iter()
        .map(|&id| SequenceLoader::<f32>::open(&index, id))
        .collect::<Result<Vec<_>, _>>()?;
    let first = loaders.first().ok_or_else(|| CliError::Config("`sequences` selects nothing".into()))?;
    let model_cfg = ModelConfig {
        input_size: first.frame(0)?.image_size(),
        seed: cfg.seed(),
        ..cfg.model.clone()
    };
    let mut model = ToyNet::<f32>::new(model_cfg)?;
    let mut samples = Vec::new();
    for l in &loaders {
        samples.extend(pipeline::sequence_samples(&model, l)?);
    }
    let mut opts = cfg.train_options();
    if let Some(s) = steps {
        opts.steps = s;
    }
    let mut state = TrainState::new(model.param_count(), &opts.schedule, cfg.seed());
    let (mut initial, mut last) = (None, 0.0);
    let report_every = (opts.steps / 10).max(1);
    pipeline::train_model(&mut model, &mut state, &samples, &opts, |step, loss| {
        initial.get_or_insert(loss.total);
        last = loss.total;
        if step % report_every == 0 {
            log::info!("step {step}: loss {:.4}", loss.total);
        }
    })?;
    let ckpt = cfg.checkpoint()?;
    write_atomic(&ckpt, &encode_checkpoint(&model, &state))?;
    log_stage(
        out,
        "train",
        started,
        json!({
            "sequences": ids,
            "samples": samples.len(),
            "steps": state.step,
            "initial_loss": initial,
            "final_loss": last,
            "checkpoint": ckpt,
        }),
    )
}

fn tracks_dir(out: &Path) -> PathBuf {
    out.join("tracks")
}

fn depth_path(dir: &Path, seq: &str, frame: usize) -> PathBuf {
    dir.join(seq).join(format!("{frame:06}.bin"))
}

fn track(cfg: &RunConfig, oracle: bool, started: Instant) -> AnyResult<()> {
    let index = index_dataset(cfg.root()?)?;
    let out = cfg.out()?;
    let ids = cfg.select(&index, Part::Val)?;
    let tracker_cfg = cfg.tracker;
    let model = if oracle {
        None
    } else {
        let ckpt = cfg.checkpoint()?;
        if !ckpt.is_file() {
            return Err(CliError::Config(format!("`checkpoint` {} does not exist", ckpt.display())));
        }
        Some(decode_checkpoint::<f32>(&read_bytes(&ckpt)?)?.0)
    };
    let (mut frames, mut detections, mut tracks_total) = (0, 0, 0);
    for &id in &ids {
        let (records, stats) = match &model {
            Some(model) => {
                let loader = SequenceLoader::<f32>::open(&index, id)?;
                let name = loader.info().name.clone();
                let source = DetectionSource::Network {
                    model,
                    max_detections: cfg.train.max_detections,
                };
                let scale = model.config().downscale;
                let (tracks, stats) = pipeline::track_sequence_with(&loader, &source, tracker_cfg, |frame, outputs, _| {
                    let Some(o) = outputs else { return Ok(()) };
                    let mut map = SparseDepthMap::<f32>::with_grid_shape(o.depth.rows(), o.depth.cols(), scale);
                    for r in 0..o.depth.rows() {
                        for c in 0..o.depth.cols() {
                            map.set(r, c, *o.depth.get(0, r, c));
                        }
                    }
                    write_atomic(&depth_path(&out.join("depth"), &name, frame.frame_index), &encode_depth_map(&map))
                })?;
                (format_track_records(&track_records(&tracks)), stats)
            }
            None => {
                let loader = SequenceLoader::<f64>::open(&index, id)?;
                let source = DetectionSource::Oracle {
                    scale: tracker_cfg.downscale,
                };
                let (tracks, stats) = pipeline::track_sequence(&loader, &source, tracker_cfg)?;
                (format_track_records(&track_records(&tracks)), stats)
            }
        };
        let name = &index.sequence(id)?.name;
        write_atomic(&tracks_dir(out).join(format!("{name}.txt")), records.as_bytes())?;
        frames += stats.frames;
        detections += stats.detections;
        tracks_total += stats.tracks;
    }
    log_stage(
        out,
        "track",
        started,
        json!({
            "sequences": ids,
            "source": if oracle { "oracle" } else { "network" },
            "frames": frames,
            "detections": detections,
            "tracks": tracks_total,
        }),
    )
}

fn evaluate_depth(cfg: &RunConfig, pred: Option<PathBuf>, started: Instant) -> AnyResult<()> {
    let index = index_dataset(cfg.root()?)?;
    let out = cfg.out()?;
    let pred_dir = pred.unwrap_or_else(|| out.join("depth"));
    let cap = cfg.depth_cap.unwrap_or(pointtrack::metrics::DEFAULT_DEPTH_CAP);
    let ids = cfg.select(&index, Part::Val)?;
    let mut acc: Vec<(String, DepthAccumulator<f64>)> = Vec::new();
    let mut frames = 0;
    for &id in &ids {
        let loader = SequenceLoader::<f64>::open(&index, id)?;
        let name = loader.info().name.clone();
        for t in 0..loader.len() {
            let path = depth_path(&pred_dir, &name, t);
            let pred = decode_depth_map::<f64>(&read_bytes(&path)?)?;
            let frame = loader.frame(t)?;
            let gt = pipeline::frame_depth(&frame, pred.scale);
            let mut dense = pointtrack::Grid::filled(1, pred.rows(), pred.cols(), 0.0);
            for (r, c, z) in pred.iter_valid() {
                dense.set(0, r, c, z);
            }
            if let Some((r, c, _)) = gt.iter_valid().find(|&(r, c, _)| pred.get(r, c).is_none()) {
                return Err(CliError::Run(Error::Validation(format!(
                    "{}: no prediction at cell ({r}, {c}) where ground truth is valid",
                    path.display()
                ))));
            }
            for region in region_masks(&frame.annotations, &gt, &DEFAULT_RANGES)? {
                let slot = match acc.iter_mut().position(|(l, _)| *l == region.label) {
                    Some(k) => k,
                    None => {
                        acc.push((region.label.clone(), DepthAccumulator::default()));
                        acc.len() - 1
                    }
                };
                acc[slot].1.add_map(&dense, &gt, Some(&region.mask), cap)?;
            }
            frames += 1;
        }
    }
    let reports: Vec<_> = acc.iter().map(|(label, a)| a.report(label)).collect();
    for r in &reports {
        println!("{}", key_value_line(&[], r));
    }
    write_json(&out.join("depth_report.json"), &json!({"frames": frames, "depth_cap": cap, "regions": reports}))?;
    log_stage(out, "evaluate-depth", started, json!({"sequences": ids, "frames": frames}))
}

fn with_depth(b: &BoxAnnotation2D<f64>, depth: Option<f64>) -> GroundBox<f64> {
    GroundBox {
        bbox: *b,
        depth: depth.unwrap_or(f64::NAN),
    }
}

fn evaluate_mot(cfg: &RunConfig, pred: Option<PathBuf>, started: Instant) -> AnyResult<()> {
    let index = index_dataset(cfg.root()?)?;
    let out = cfg.out()?;
    let pred_dir = pred.unwrap_or_else(|| tracks_dir(out));
    let iou_threshold = cfg.iou_threshold.unwrap_or(pointtrack::metrics::DEFAULT_IOU_THRESHOLD);
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(CliError::Config(format!("`iou_threshold` must be in (0, 1], got {iou_threshold}")));
    }
    let gate = cfg.ground_gate.unwrap_or(DEFAULT_GROUND_GATE);
    let ids = cfg.select(&index, Part::Val)?;
    let (mut iou_acc, mut ground_acc) = (MotAccumulator::default(), MotAccumulator::default());
    for &id in &ids {
        let loader = SequenceLoader::<f64>::open(&index, id)?;
        let name = loader.info().name.clone();
        let records = parse_track_records::<f64>(&read_to_string(&pred_dir.join(format!("{name}.txt")))?)?;
        let scale = cfg.tracker.downscale;
        let mut gt: FrameSet<BoxAnnotation2D<f64>> = BTreeMap::new();
        let mut gt_ground: FrameSet<GroundBox<f64>> = BTreeMap::new();
        for t in 0..loader.len() {
            let frame = loader.frame(t)?;
            let depth = pipeline::frame_depth(&frame, scale);
            gt_ground.insert(
                t,
                frame
                    .annotations
                    .iter()
                    .map(|b| with_depth(b, pointtrack::codec::object_depth(b, &depth)))
                    .collect(),
            );
            gt.insert(t, frame.annotations);
        }
        let mut pr: FrameSet<BoxAnnotation2D<f64>> = BTreeMap::new();
        let mut pr_ground: FrameSet<GroundBox<f64>> = BTreeMap::new();
        for r in &records {
            pr.entry(r.frame).or_default().push(r.to_box());
            pr_ground.entry(r.frame).or_default().push(with_depth(&r.to_box(), r.depth));
        }
        iou_acc.add_sequence(&gt, &pr, |g, p| {
            let iou = box_iou(g, p);
            (iou >= iou_threshold && g.class_id == p.class_id).then_some((iou, iou))
        })?;
        let calib = loader.calibration().clone();
        ground_acc.add_sequence(&gt_ground, &pr_ground, |g, p| {
            if g.bbox.class_id != p.bbox.class_id {
                return None;
            }
            let d = ground_distance(g, p, &calib);
            (d <= gate).then_some((gate - d, d))
        })?;
    }
    let iou = iou_acc.report("iou");
    let ground = ground_acc.report("ground");
    println!("{}", key_value_line(&[], &iou));
    println!("{}", key_value_line(&[], &ground));
    write_json(&out.join("mot_report.json"), &json!({"sequences": ids, "iou": iou, "ground": ground}))?;
    log_stage(
        out,
        "evaluate-mot",
        started,
        json!({"sequences": ids, "mota": iou.mota, "ground_mota": ground.mota}),
    )
}

fn extension(format: ExportFormat) -> &'static str {
    match format {
        ExportFormat::Csv => "csv",
        ExportFormat::Geojson => "geojson",
    }
}

fn export_bev(cfg: &RunConfig, pred: Option<PathBuf>, started: Instant) -> AnyResult<()> {
    let index = index_dataset(cfg.root()?)?;
    let out = cfg.out()?;
    let pred_dir = pred.unwrap_or_else(|| tracks_dir(out));
    let format = cfg.format.unwrap_or(ExportFormat::Csv);
    let cam_to_ego = cfg.cam_to_ego()?;
    let ids = cfg.select(&index, Part::Val)?;
    let (mut actors, mut samples, mut skipped) = (0, 0, 0);
    for &id in &ids {
        let loader = SequenceLoader::<f64>::open(&index, id)?;
        let name = loader.info().name.clone();
        let records = parse_track_records::<f64>(&read_to_string(&pred_dir.join(format!("{name}.txt")))?)?;
        let mut tracks = tracks_from_records(&records);
        for t in &mut tracks {
            t.smooth_depths(cfg.tracker.depth_smooth_window);
        }
        let calib = loader.calibration();
        let extraction = match bev::extract_bev(&tracks, loader.poses().unwrap_or(&[]), calib, &cam_to_ego) {
            Ok(e) => e,
            Err(e @ Error::Export(_)) => {
                let rows = bev::ego_relative_rows(&tracks, calib, &cam_to_ego)?;
                let path = out.join("bev").join(format!("{name}_ego_relative.csv"));
                write_atomic(&path, bev::format_ego_relative_csv(&rows).as_bytes())?;
                log::warn!("sequence {name}: wrote ego-relative rows to {}", path.display());
                return Err(e.into());
            }
            Err(e) => return Err(e.into()),
        };
        let path = out.join("bev").join(format!("{name}.{}", extension(format)));
        bev::export_trajectories(&extraction.trajectories, format, &path)?;
        actors += extraction.trajectories.len();
        samples += extraction.trajectories.iter().map(|t| t.samples.len()).sum::<usize>();
        skipped += extraction.skipped;
    }
    log_stage(
        out,
        "export-bev",
        started,
        json!({"sequences": ids, "actors": actors, "samples": samples, "skipped_states": skipped}),
    )
}

fn plot_bev(cfg: &RunConfig, input: Option<PathBuf>, started: Instant) -> AnyResult<()> {
    let out = cfg.out()?;
    let inputs = match input {
        Some(p) => vec![p],
        None => {
            let dir = out.join("bev");
            let mut v: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    !stem.ends_with("_ego_relative") && p.extension().is_some_and(|e| e == "csv" || e == "geojson")
                })
                .collect();
            v.sort();
            v
        }
    };
    if inputs.is_empty() {
        return Err(CliError::Config("no trajectory exports to plot; run export-bev first".into()));
    }
    let mut written = Vec::new();
    for path in &inputs {
        let text = read_to_string(path)?;
        let trajectories = match path.extension().and_then(|e| e.to_str()) {
            Some("geojson") | Some("json") => bev::parse_geojson::<f64>(&text)?,
            _ => bev::parse_csv::<f64>(&text)?,
        };
        let svg = bev::plot_svg(&trajectories)?;
        let target = path.with_extension("svg");
        write_atomic(&target, svg.as_bytes())?;
        written.push(target);
    }
    log_stage(out, "plot-bev", started, json!({"plots": written}))
}
