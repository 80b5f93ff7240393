//! Command implementations behind the `graspsim` binary, plus the file
//! formats they read and write. Everything here is deterministic in its
//! inputs: identical invocations produce byte-identical output files.

pub mod config;
pub mod formats;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;

use graspsim_core::controller::{run_trial, ControllerConfig, NoiseModel};
use graspsim_core::dataset::{
    generate_dataset, graspable_scene, summarize, DatasetConfig, Split, SUMMARY_BIN_WIDTH,
};
use graspsim_core::geometry::{build_object_library, ObjectInstance, PlanarPose};
use graspsim_core::harness::{
    compare as compare_histograms, render_svg, run_experiment, ExperimentConfig, Histogram,
    Scenario, Source, HISTOGRAM_BIN_WIDTH,
};
use graspsim_core::model::{
    init_weights, train as train_network, NetConfig, TrainConfig, TrainError,
};
use graspsim_core::oracle::{GridSpec, GripperModel, OracleField, PoseMetric};

use config::FileConfig;
use formats::FormatError;

/// Library used by `trial` and `experiment` when no `objects` config key
/// points at a generated file; identical to
/// `gen-objects --seed 0 --count 64`.
pub const DEFAULT_LIBRARY_SEED: u64 = 0;
pub const DEFAULT_LIBRARY_COUNT: usize = 64;

/// Blind sub-steps before the CNN_CTR scenario hands off to the
/// closed-loop controller.
pub const DETECT_STEPS: usize = 15;

#[derive(Debug)]
pub enum CliError {
    /// Exit 1: the command line (or config fallback) doesn't make sense.
    Usage(String),
    /// Exit 2: an input file is missing, unreadable, or not its format.
    Data(String),
    /// Exit 3: the run itself failed (generation, training, output IO).
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Failures while consuming an input path are data errors (exit 2).
fn input_err(path: &Path, e: FormatError) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Failures while producing an output path are runtime errors (exit 3).
fn output_err(path: &Path, e: FormatError) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Hold out the last eighth (at least one) of the object templates as the
/// test split; the rest train.
pub fn split_library(lib: &[ObjectInstance]) -> Result<(&[ObjectInstance], &[ObjectInstance]), CliError> {
    if lib.len() < 2 {
        return Err(CliError::Usage(String::from(
            "the object library needs at least 2 templates to split train/test",
        )));
    }
    let n_test = (lib.len() / 8).max(1);
    Ok(lib.split_at(lib.len() - n_test))
}

/// Same eighth rule for scene counts.
fn split_scene_count(scenes: usize) -> Result<(usize, usize), CliError> {
    if scenes < 2 {
        return Err(CliError::Usage(String::from("--scenes must be at least 2")));
    }
    let n_test = (scenes / 8).max(1);
    Ok((scenes - n_test, n_test))
}

pub fn default_library() -> Vec<ObjectInstance> {
    build_object_library(DEFAULT_LIBRARY_SEED, DEFAULT_LIBRARY_COUNT)
        .expect("the default library parameters are valid")
}

/// The test-split objects for scene drawing: a library file when the
/// `objects` config key names one, else the built-in default library.
fn test_split_objects(file: &FileConfig) -> Result<Vec<ObjectInstance>, CliError> {
    let lib = match file.optional::<PathBuf>(None, "objects")? {
        Some(path) => formats::read_library(&path).map_err(|e| input_err(&path, e))?,
        None => default_library(),
    };
    let (_, test) = split_library(&lib)?;
    Ok(test.to_vec())
}

/// `--source` value: the exact oracle field or `cnn:<weights path>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SourceArg {
    Oracle,
    Cnn(PathBuf),
}

impl FromStr for SourceArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "oracle" {
            Ok(SourceArg::Oracle)
        } else if let Some(path) = s.strip_prefix("cnn:") {
            if path.is_empty() {
                Err(String::from("cnn: needs a weights path"))
            } else {
                Ok(SourceArg::Cnn(PathBuf::from(path)))
            }
        } else {
            Err(format!("unknown source {s:?}; use `oracle` or `cnn:PATH`"))
        }
    }
}

fn validate_noise(noise: Option<f64>) -> Result<Option<f64>, CliError> {
    match noise {
        Some(s) if !(s >= 0.0) => {
            Err(CliError::Usage(format!("--noise must be non-negative, got {s}")))
        }
        other => Ok(other),
    }
}

// ---------------------------------------------------------------------------
// gen-objects

#[derive(Args, Debug, Default)]
pub struct GenObjectsArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of object templates to sample.
    #[arg(long)]
    pub count: Option<usize>,
    /// Library file to write.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

pub fn gen_objects(args: GenObjectsArgs, file: &FileConfig) -> Result<(), CliError> {
    let seed = file.or_default(args.seed, "seed", DEFAULT_LIBRARY_SEED)?;
    let count = file.or_default(args.count, "count", DEFAULT_LIBRARY_COUNT)?;
    let out: PathBuf = file.required(args.out, "out")?;
    let lib = build_object_library(seed, count).map_err(|e| CliError::Usage(e.to_string()))?;
    formats::write_library(&out, &lib).map_err(|e| output_err(&out, e))?;
    println!("wrote {count} object templates to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// gen-dataset

#[derive(Args, Debug, Default)]
pub struct GenDatasetArgs {
    /// Total scene count; the last eighth renders the test split.
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    /// Labeled action offsets per rendered view.
    #[arg(long)]
    pub offsets: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Object library file from gen-objects.
    #[arg(long, value_name = "PATH")]
    pub objects: Option<PathBuf>,
    /// Dataset file to write.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

pub fn gen_dataset(args: GenDatasetArgs, file: &FileConfig) -> Result<(), CliError> {
    let scenes = file.required(args.scenes, "scenes")?;
    let views = file.or_default(args.views, "views", 40)?;
    let offsets = file.or_default(args.offsets, "offsets", 10)?;
    let seed = file.or_default(args.seed, "seed", 0)?;
    let objects: PathBuf = file.required(args.objects, "objects")?;
    let out: PathBuf = file.required(args.out, "out")?;
    if views == 0 || offsets == 0 {
        return Err(CliError::Usage(String::from("--views and --offsets must be positive")));
    }
    let lib = formats::read_library(&objects).map_err(|e| input_err(&objects, e))?;
    let (train_lib, test_lib) = split_library(&lib)?;
    let (n_train_scenes, n_test_scenes) = split_scene_count(scenes)?;
    let cfg = DatasetConfig {
        n_train_scenes,
        n_test_scenes,
        views_per_scene: views,
        offsets_per_image: offsets,
        seed,
    };
    let ds = generate_dataset(&cfg, train_lib, test_lib)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    formats::write_dataset(&out, &ds).map_err(|e| output_err(&out, e))?;

    let s = summarize(&ds);
    println!("wrote {} to {}", describe_counts(&ds), out.display());
    println!("train_samples {}", s.n_train);
    println!("test_samples {}", s.n_test);
    println!("valid_pixel_fraction {}", s.valid_pixel_fraction);
    println!(
        "labels min {} mean {} median {} max {}",
        s.label_min, s.label_mean, s.label_median, s.label_max
    );
    for (i, count) in s.label_bins.iter().enumerate() {
        println!(
            "label_bin {:.2}-{:.2} {count}",
            i as f64 * SUMMARY_BIN_WIDTH,
            (i + 1) as f64 * SUMMARY_BIN_WIDTH
        );
    }
    Ok(())
}

fn describe_counts(ds: &graspsim_core::dataset::Dataset) -> String {
    format!("{} images / {} samples", ds.images.len(), ds.samples.len())
}

// ---------------------------------------------------------------------------
// train

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// Dataset file from gen-dataset.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight file to write.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

pub fn train(args: TrainArgs, file: &FileConfig) -> Result<(), CliError> {
    let data: PathBuf = file.required(args.data, "data")?;
    let iters = file.required(args.iters, "iters")?;
    let batch = file.or_default(args.batch, "batch", 64)?;
    let lr = file.or_default(args.lr, "lr", 0.001)?;
    let momentum = file.or_default(args.momentum, "momentum", 0.9)?;
    let seed = file.or_default(args.seed, "seed", 0)?;
    let out: PathBuf = file.required(args.out, "out")?;
    let ds = formats::read_dataset(&data).map_err(|e| input_err(&data, e))?;
    let mut net = init_weights(seed, NetConfig::default());
    let cfg = TrainConfig {
        learning_rate: lr,
        momentum,
        batch_size: batch,
        iterations: iters,
        seed,
        stop_at_loss: None,
    };
    let report = train_network(&mut net, &ds, &cfg).map_err(|e| match e {
        TrainError::InvalidConfig => CliError::Usage(e.to_string()),
        TrainError::EmptyTrainSplit => CliError::Data(e.to_string()),
        TrainError::NonFinite { .. } => CliError::Runtime(e.to_string()),
    })?;
    formats::write_network(&out, &net).map_err(|e| output_err(&out, e))?;
    let first = report.loss_curve.first().copied().unwrap_or(f64::NAN);
    let last = report.loss_curve.last().copied().unwrap_or(f64::NAN);
    println!("trained {} iterations (loss {first} -> {last})", report.loss_curve.len());
    println!("wrote weights to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

#[derive(Args, Debug, Default)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub weights: Option<PathBuf>,
}

pub fn eval(args: EvalArgs, file: &FileConfig) -> Result<(), CliError> {
    let data: PathBuf = file.required(args.data, "data")?;
    let weights: PathBuf = file.required(args.weights, "weights")?;
    let ds = formats::read_dataset(&data).map_err(|e| input_err(&data, e))?;
    let net = formats::read_network(&weights).map_err(|e| input_err(&weights, e))?;
    let (preds, labels) = predict_split(&net, &ds, Split::Test)
        .map_err(|e| CliError::Data(format!("{}: {e}", data.display())))?;
    if preds.is_empty() {
        return Err(CliError::Data(format!("{} has no test samples", data.display())));
    }
    let n = preds.len() as f64;
    let mean_l1 =
        preds.iter().zip(&labels).map(|(p, l)| (p - l).abs()).sum::<f64>() / n;
    println!("test_samples {}", preds.len());
    println!("mean_l1 {mean_l1}");
    println!("pearson_r {}", pearson(&preds, &labels));
    Ok(())
}

/// Predictions and labels for every sample of `split`, batching the
/// actions that share an image.
fn predict_split(
    net: &graspsim_core::model::Network<f32>,
    ds: &graspsim_core::dataset::Dataset,
    split: Split,
) -> Result<(Vec<f64>, Vec<f64>), graspsim_core::model::ModelError> {
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    let mut i = 0;
    while i < ds.samples.len() {
        let s = &ds.samples[i];
        if s.split != split {
            i += 1;
            continue;
        }
        let image_id = s.image_id;
        let mut actions = Vec::new();
        while i < ds.samples.len()
            && ds.samples[i].split == split
            && ds.samples[i].image_id == image_id
        {
            let a = ds.samples[i].action;
            actions.push(PlanarPose::new(a[0] as f64, a[1] as f64, a[2] as f64));
            labels.push(ds.samples[i].label as f64);
            i += 1;
        }
        let out = net.forward_batch(&ds.images[image_id as usize], &actions)?;
        preds.extend(out.into_iter().map(|v| v as f64));
    }
    Ok((preds, labels))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va * vb).sqrt()
}

// ---------------------------------------------------------------------------
// trial

#[derive(Args, Debug, Default)]
pub struct TrialArgs {
    /// Seed of the (redrawn-until-graspable) test scene; also seeds the
    /// controller and noise streams.
    #[arg(long)]
    pub scene_seed: Option<u64>,
    /// `oracle` or `cnn:PATH`.
    #[arg(long)]
    pub source: Option<SourceArg>,
    /// Kinematic noise scale; omit for exact motion.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Per-step trajectory CSV to write.
    #[arg(long, value_name = "PATH")]
    pub traj_out: Option<PathBuf>,
}

pub fn trial(args: TrialArgs, file: &FileConfig) -> Result<(), CliError> {
    let scene_seed = file.required(args.scene_seed, "scene-seed")?;
    let source: SourceArg = file.required(args.source, "source")?;
    let noise = validate_noise(file.optional(args.noise, "noise")?)?;
    let traj_out: PathBuf = file.required(args.traj_out, "traj-out")?;
    let test_lib = test_split_objects(file)?;
    let (scene, set) = graspable_scene(
        scene_seed,
        Split::Test,
        0,
        &test_lib,
        &GripperModel::default(),
        &GridSpec::default(),
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    let field = OracleField { set, metric: PoseMetric::default() };
    let cfg = ControllerConfig::default();
    let nm = noise.map(|scale| NoiseModel { scale, seed: scene_seed });
    let result = match source {
        SourceArg::Oracle => run_trial(&scene, &field, &field, &cfg, nm.as_ref(), scene_seed),
        SourceArg::Cnn(path) => {
            let net = formats::read_network(&path).map_err(|e| input_err(&path, e))?;
            run_trial(&scene, &field, &net, &cfg, nm.as_ref(), scene_seed)
        }
    }
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    formats::write_trajectory(&traj_out, &result).map_err(|e| output_err(&traj_out, e))?;
    println!("initial_distance {}", result.initial_distance);
    println!("final_distance {}", result.final_distance);
    println!("wrote {} steps to {}", result.steps.len(), traj_out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// experiment

#[derive(Args, Debug, Default)]
pub struct ExperimentArgs {
    /// INIT, CTR, CTR_NOISE, ONESHOT, ONESHOT_NOISE, CNN_ONLY or CNN_CTR.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// `oracle` or `cnn:PATH`.
    #[arg(long)]
    pub source: Option<SourceArg>,
    /// Kinematic noise scale; the *_NOISE scenarios default to 0.4.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Writes PREFIX.csv (per-trial distances) and PREFIX.svg (histogram).
    #[arg(long, value_name = "PREFIX")]
    pub out_prefix: Option<String>,
}

pub fn experiment(args: ExperimentArgs, file: &FileConfig) -> Result<(), CliError> {
    let name: String = file.required(args.scenario, "scenario")?;
    let scenario = Scenario::parse(&name).ok_or_else(|| {
        let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
        CliError::Usage(format!("unknown scenario {name:?}; one of {}", names.join(", ")))
    })?;
    let trials = file.or_default(args.trials, "trials", 100)?;
    let source_arg: SourceArg = file.required(args.source, "source")?;
    let noise = validate_noise(file.optional(args.noise, "noise")?)?;
    let seed = file.or_default(args.seed, "seed", 0)?;
    let out_prefix: String = file.required(args.out_prefix, "out-prefix")?;
    let test_lib = test_split_objects(file)?;

    let mut cfg = ExperimentConfig::new(scenario);
    cfg.n_trials = trials;
    cfg.master_seed = seed;
    cfg.noise_scale = noise;
    cfg.detect_steps = DETECT_STEPS;

    // Weights load (and fail) before any trial runs.
    let net_storage;
    let source = match source_arg {
        SourceArg::Oracle => Source::Oracle,
        SourceArg::Cnn(path) => {
            net_storage = formats::read_network(&path).map_err(|e| input_err(&path, e))?;
            Source::Cnn(&net_storage)
        }
    };
    let result = run_experiment(&cfg, &test_lib, &source).map_err(|e| match e {
        graspsim_core::harness::HarnessError::NoTrials => CliError::Usage(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    })?;

    let csv_path = PathBuf::from(format!("{out_prefix}.csv"));
    let svg_path = PathBuf::from(format!("{out_prefix}.svg"));
    formats::write_distances(&csv_path, &result.distances)
        .map_err(|e| output_err(&csv_path, e))?;
    let svg = render_svg(&[(scenario.name(), &result.histogram)])
        .expect("a fresh histogram always renders");
    std::fs::write(&svg_path, svg)
        .map_err(|e| output_err(&svg_path, FormatError::Io(e)))?;

    let h = &result.histogram;
    println!("scenario {} trials {}", scenario.name(), result.distances.len());
    println!("median {}", h.median);
    println!("mean {}", h.mean);
    println!("fraction_below_3cm {}", h.fraction_below_3cm);
    println!("wrote {} and {}", csv_path.display(), svg_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// compare

#[derive(Args, Debug, Default)]
pub struct CompareArgs {
    /// Distance CSV of run A.
    #[arg(long, value_name = "PATH")]
    pub a: Option<PathBuf>,
    /// Distance CSV of run B.
    #[arg(long, value_name = "PATH")]
    pub b: Option<PathBuf>,
}

pub fn compare(args: CompareArgs, file: &FileConfig) -> Result<(), CliError> {
    let path_a: PathBuf = file.required(args.a, "a")?;
    let path_b: PathBuf = file.required(args.b, "b")?;
    let da = formats::read_distances(&path_a).map_err(|e| input_err(&path_a, e))?;
    let db = formats::read_distances(&path_b).map_err(|e| input_err(&path_b, e))?;
    let ha = Histogram::from_distances(&da, HISTOGRAM_BIN_WIDTH)
        .map_err(|e| CliError::Data(format!("{}: {e}", path_a.display())))?;
    let hb = Histogram::from_distances(&db, HISTOGRAM_BIN_WIDTH)
        .map_err(|e| CliError::Data(format!("{}: {e}", path_b.display())))?;
    let report = compare_histograms(&ha, &hb).map_err(|e| CliError::Data(e.to_string()))?;
    println!("a: n {} median {} mean {}", ha.n(), report.median_a, report.mean_a);
    println!("b: n {} median {} mean {}", hb.n(), report.median_b, report.mean_b);
    println!(
        "rank_sum u {} z {} p {}",
        report.rank_sum.u, report.rank_sum.z, report.rank_sum.p
    );
    println!("{}", report.verdict);
    Ok(())
}
