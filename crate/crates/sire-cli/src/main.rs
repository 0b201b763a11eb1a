//! Command-line front end: phantom generation, training, tracking, tree
//! extraction, evaluation, and the equivariance / gradient self-checks.
//!
//! Exit codes: 0 success, 1 validation error (bad arguments, missing or
//! malformed files), 2 runtime failure (diverged training, failed check).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use nalgebra::Point3;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use sire::centerline::{load_centerlines, save_centerlines, Centerline};
use sire::error::Error as SireError;
use sire::experiments::rotation_equivariance_test;
use sire::geometry::build_icosphere;
use sire::metrics::{evaluate, save_branch_csv, save_report};
use sire::network::{AnyNet, ModelWeights, Precision};
use sire::phantom::{
    default_training_corpus, generate, skeleton_seeds, small_tube_corpus, Phantom, PhantomSpec,
};
use sire::sampler::{draw_sample, Dataset, DatasetVolume, ScaleSet};
use sire::tracker::{extract_tree, track, TrackResult, TrackerConfig};
use sire::training::{gradient_check, save_history, train, TrainConfig};
use sire::volume::{ImageVolume, DEFAULT_LEVEL, DEFAULT_WINDOW};

#[derive(Parser)]
#[command(
    name = "sire",
    about = "Scale-invariant, rotation-equivariant vessel orientation estimation and tracking",
    version
)]
struct Cli {
    /// Worker threads for parallel sections (1 guarantees bit-determinism;
    /// the defaults are already deterministic for a fixed thread count).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tubular phantom (or a whole corpus).
    GenPhantom(GenPhantomArgs),
    /// Train an orientation estimator on a phantom directory.
    Train(TrainArgs),
    /// Track a centerline from a seed point.
    Track(TrackArgs),
    /// Track every branch reachable from a queue of seed points.
    ExtractTree(ExtractTreeArgs),
    /// Compare a tracked centerline file against a reference.
    Eval(EvalArgs),
    /// Measure rotation equivariance of a trained model on fresh phantoms.
    CheckEquivariance(CheckEquivarianceArgs),
    /// Verify analytic gradients against 64-bit finite differences.
    CheckGradients(CheckGradientsArgs),
}

#[derive(Args)]
struct GenPhantomArgs {
    /// Phantom spec as JSON (mutually exclusive with --corpus).
    #[arg(long, conflicts_with = "corpus")]
    config: Option<PathBuf>,
    /// Built-in corpus profile: "default" (30 mixed-calibre volumes) or
    /// "small-tubes" (radii 1.5-4 mm).
    #[arg(long)]
    corpus: Option<String>,
    /// Keep only the first N corpus volumes.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the spec's RNG seed (and seeds the corpus builder).
    #[arg(long)]
    seed: Option<u64>,
    /// Also emit skeleton seed points at this arc stride in mm.
    #[arg(long)]
    seeds_stride: Option<f64>,
    /// Jitter fraction of the local radius for emitted seeds.
    #[arg(long, default_value_t = 0.25)]
    seeds_jitter: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory scanned recursively for volume.svol + centerlines.json
    /// pairs.
    #[arg(long)]
    data: PathBuf,
    /// Training config JSON (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output weights file.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for periodic checkpoints.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    /// Loss history CSV path (defaults next to the weights).
    #[arg(long)]
    history: Option<PathBuf>,
    /// Window width for intensity rescaling of the training volumes.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: f64,
    /// Window level for intensity rescaling.
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    level: f64,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Seed point as x,y,z in mm.
    #[arg(long)]
    seed: String,
    /// Probe scales in mm, comma-separated (e.g. 1,2,3,4,5,6,7,8,9,10).
    #[arg(long)]
    scales: String,
    /// Step size in mm.
    #[arg(long, default_value_t = 0.25)]
    step: f64,
    /// Normalized-entropy stopping threshold.
    #[arg(long, default_value_t = 0.9)]
    tau: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    subdivisions: u32,
    #[arg(long, default_value_t = 4000)]
    max_steps: usize,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: f64,
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    level: f64,
    /// Skip intensity rescaling (volume already windowed).
    #[arg(long)]
    no_window: bool,
}

#[derive(Args)]
struct ExtractTreeArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Seed queue JSON: {"seeds_mm": [[x,y,z], ...]}.
    #[arg(long)]
    seeds: PathBuf,
    #[arg(long)]
    scales: String,
    #[arg(long, default_value_t = 0.25)]
    step: f64,
    #[arg(long, default_value_t = 0.9)]
    tau: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    subdivisions: u32,
    #[arg(long, default_value_t = 4000)]
    max_steps: usize,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: f64,
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    level: f64,
    #[arg(long)]
    no_window: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Tracked centerline JSON.
    #[arg(long)]
    tracked: PathBuf,
    /// Reference centerline JSON (with meaningful radii).
    #[arg(long)]
    reference: PathBuf,
    /// Metrics report JSON output.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-branch CSV output.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CheckEquivarianceArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Held-out centerline points to probe.
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    subdivisions: u32,
    /// Maximum allowed |median rotated - median unrotated|.
    #[arg(long, default_value_t = 0.02)]
    tolerance: f64,
}

#[derive(Args)]
struct CheckGradientsArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Number of randomly probed parameters.
    #[arg(long, default_value_t = 200)]
    params: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    subdivisions: u32,
    /// Maximum allowed relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

enum CliError {
    Validation(String),
    Runtime(String),
}

impl From<SireError> for CliError {
    fn from(e: SireError) -> Self {
        match e {
            SireError::NonFiniteLoss { .. } => CliError::Runtime(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

type CliResult = Result<(), CliError>;

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        if workers == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("error: cannot configure worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::GenPhantom(args) => gen_phantom(args),
        Command::Train(args) => run_train(args),
        Command::Track(args) => run_track(args),
        Command::ExtractTree(args) => run_extract_tree(args),
        Command::Eval(args) => run_eval(args),
        Command::CheckEquivariance(args) => run_check_equivariance(args),
        Command::CheckGradients(args) => run_check_gradients(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn write_phantom(
    phantom: &Phantom,
    dir: &Path,
    stride: Option<f64>,
    jitter: f64,
    rng: &mut ChaCha12Rng,
) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| validation(format!("{}: {e}", dir.display())))?;
    phantom.volume.save(&dir.join("volume.svol"))?;
    save_centerlines(&phantom.centerlines, &dir.join("centerlines.json"))?;
    if let Some(stride) = stride {
        let seeds = skeleton_seeds(&phantom.centerlines, stride, jitter, rng)?;
        let doc = serde_json::json!({
            "seeds_mm": seeds.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>()
        });
        std::fs::write(
            dir.join("seeds.json"),
            serde_json::to_string_pretty(&doc).expect("seed list serialises"),
        )
        .map_err(|e| validation(format!("cannot write seeds.json: {e}")))?;
    }
    Ok(())
}

fn gen_phantom(args: GenPhantomArgs) -> CliResult {
    let mut rng = ChaCha12Rng::seed_from_u64(args.seed.unwrap_or(0));
    match (&args.config, &args.corpus) {
        (Some(config), None) => {
            let text = std::fs::read_to_string(config)
                .map_err(|e| validation(format!("{}: {e}", config.display())))?;
            let mut spec: PhantomSpec = serde_json::from_str(&text)
                .map_err(|e| validation(format!("invalid phantom spec: {e}")))?;
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            let phantom = generate(&spec)?;
            write_phantom(&phantom, &args.out, args.seeds_stride, args.seeds_jitter, &mut rng)?;
            println!(
                "phantom written to {} ({} branches, dims {:?})",
                args.out.display(),
                phantom.centerlines.len(),
                phantom.volume.dims()
            );
            Ok(())
        }
        (None, Some(profile)) => {
            let mut specs = match profile.as_str() {
                "default" => default_training_corpus(args.seed.unwrap_or(0)),
                "small-tubes" => small_tube_corpus(args.seed.unwrap_or(0)),
                other => {
                    return Err(validation(format!(
                        "unknown corpus profile {other:?} (use \"default\" or \"small-tubes\")"
                    )))
                }
            };
            if let Some(count) = args.count {
                specs.truncate(count);
            }
            for (i, spec) in specs.iter().enumerate() {
                let phantom = generate(spec)?;
                let dir = args.out.join(format!("phantom_{i:03}"));
                write_phantom(&phantom, &dir, args.seeds_stride, args.seeds_jitter, &mut rng)?;
            }
            println!("{} phantoms written to {}", specs.len(), args.out.display());
            Ok(())
        }
        _ => Err(validation("provide exactly one of --config or --corpus")),
    }
}

fn scan_dataset(root: &Path, window: f64, level: f64) -> Result<Dataset, CliError> {
    fn walk(dir: &Path, found: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(&path, found)?;
            } else if path.file_name().is_some_and(|n| n == "volume.svol") {
                found.push(path);
            }
        }
        Ok(())
    }
    let mut volumes = Vec::new();
    walk(root, &mut volumes).map_err(|e| validation(format!("{}: {e}", root.display())))?;
    volumes.sort();
    if volumes.is_empty() {
        return Err(validation(format!(
            "no volume.svol files under {}",
            root.display()
        )));
    }
    let mut dataset = Vec::new();
    for vol_path in volumes {
        let lines_path = vol_path.with_file_name("centerlines.json");
        if !lines_path.exists() {
            return Err(validation(format!(
                "{} has no sibling centerlines.json",
                vol_path.display()
            )));
        }
        let volume = ImageVolume::load(&vol_path)?.rescale_window(window, level)?;
        let centerlines = load_centerlines(&lines_path)?;
        dataset.push(DatasetVolume {
            volume,
            centerlines,
        });
    }
    Ok(Dataset { volumes: dataset })
}

fn run_train(args: TrainArgs) -> CliResult {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let dataset = scan_dataset(&args.data, args.window, args.level)?;
    println!(
        "training on {} volumes ({} epochs x {} samples, lr {}, {:?})",
        dataset.volumes.len(),
        cfg.epochs,
        cfg.samples_per_epoch,
        cfg.learning_rate,
        cfg.variant
    );
    let outcome = train(&dataset, &cfg, args.checkpoints.as_deref())?;
    outcome.weights.save(&args.out)?;
    let history_path = args
        .history
        .unwrap_or_else(|| args.out.with_extension("loss.csv"));
    save_history(&outcome.history, &history_path)?;
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "weights -> {} (final mean loss {:.5})",
        args.out.display(),
        last.mean_loss
    );
    Ok(())
}

fn parse_point(text: &str) -> Result<Point3<f64>, CliError> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| validation(format!("cannot parse seed {text:?}: {e}")))?;
    if parts.len() != 3 {
        return Err(validation(format!(
            "seed must be x,y,z (got {} components)",
            parts.len()
        )));
    }
    Ok(Point3::new(parts[0], parts[1], parts[2]))
}

fn parse_scales(text: &str) -> Result<Vec<f64>, CliError> {
    let scales: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| validation(format!("cannot parse scales {text:?}: {e}")))?;
    if scales.is_empty() || scales.iter().any(|&s| s <= 0.0) {
        return Err(validation("scales must be a non-empty list of positive mm"));
    }
    Ok(scales)
}

fn load_model(
    weights_path: &Path,
    subdivisions: u32,
) -> Result<(AnyNet, ModelWeights), CliError> {
    let weights = ModelWeights::load(weights_path)?;
    let mesh = Arc::new(build_icosphere(subdivisions)?);
    let net = AnyNet::from_weights(&weights, mesh, Precision::F32)?;
    Ok((net, weights))
}

fn load_windowed(path: &Path, window: f64, level: f64, skip: bool) -> Result<ImageVolume, CliError> {
    let volume = ImageVolume::load(path)?;
    if skip {
        Ok(volume)
    } else {
        Ok(volume.rescale_window(window, level)?)
    }
}

/// Tracked polylines carry the half active scale as a nominal radius.
fn result_to_centerline(result: &TrackResult) -> Option<Centerline> {
    if result.steps.len() < 2 {
        return None;
    }
    let points: Vec<Point3<f64>> = result.steps.iter().map(|s| s.position).collect();
    let radii: Vec<f64> = result
        .steps
        .iter()
        .map(|s| (s.active_scale_mm / 2.0).max(1e-3))
        .collect();
    Centerline::new(points, radii).ok()
}

fn run_track(args: TrackArgs) -> CliResult {
    let seed = parse_point(&args.seed)?;
    let scales = parse_scales(&args.scales)?;
    let (net, weights) = load_model(&args.weights, args.subdivisions)?;
    let volume = load_windowed(&args.volume, args.window, args.level, args.no_window)?;
    let config = TrackerConfig {
        scales_mm: scales,
        step_mm: args.step,
        tau: args.tau,
        channels: weights.arch.input_channels,
        max_steps: args.max_steps,
    };
    let result = track(&volume, &net, seed, &config)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| validation(format!("{}: {e}", args.out.display())))?;
    if let Some(line) = result_to_centerline(&result) {
        save_centerlines(std::slice::from_ref(&line), &args.out.join("centerline.json"))?;
    } else {
        save_centerlines(&[], &args.out.join("centerline.json"))?;
    }
    result.save_steps_csv(&args.out.join("steps.csv"))?;
    println!(
        "tracked {} points from ({:.2}, {:.2}, {:.2}); termination {:?}",
        result.steps.len(),
        seed.x,
        seed.y,
        seed.z,
        result.termination
    );
    Ok(())
}

fn run_extract_tree(args: ExtractTreeArgs) -> CliResult {
    let scales = parse_scales(&args.scales)?;
    let (net, weights) = load_model(&args.weights, args.subdivisions)?;
    let volume = load_windowed(&args.volume, args.window, args.level, args.no_window)?;
    let seeds_text = std::fs::read_to_string(&args.seeds)
        .map_err(|e| validation(format!("{}: {e}", args.seeds.display())))?;
    let doc: serde_json::Value = serde_json::from_str(&seeds_text)
        .map_err(|e| validation(format!("invalid seeds file: {e}")))?;
    let seeds: Vec<Point3<f64>> = doc
        .get("seeds_mm")
        .and_then(|v| v.as_array())
        .ok_or_else(|| validation("seeds file must contain a \"seeds_mm\" array"))?
        .iter()
        .map(|triple| {
            let coords: Option<Vec<f64>> = triple
                .as_array()
                .map(|a| a.iter().filter_map(|v| v.as_f64()).collect());
            match coords {
                Some(c) if c.len() == 3 => Ok(Point3::new(c[0], c[1], c[2])),
                _ => Err(validation("every seed must be an [x, y, z] triple")),
            }
        })
        .collect::<Result<_, _>>()?;
    if seeds.is_empty() {
        return Err(validation("seed queue is empty"));
    }

    let config = TrackerConfig {
        scales_mm: scales,
        step_mm: args.step,
        tau: args.tau,
        channels: weights.arch.input_channels,
        max_steps: args.max_steps,
    };
    let results = extract_tree(&volume, &net, &seeds, &config)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| validation(format!("{}: {e}", args.out.display())))?;
    let branches: Vec<Centerline> = results.iter().filter_map(result_to_centerline).collect();
    save_centerlines(&branches, &args.out.join("tree.json"))?;
    for (i, result) in results.iter().enumerate() {
        result.save_steps_csv(&args.out.join(format!("steps_{i:03}.csv")))?;
    }
    println!(
        "{} seeds -> {} tracking runs, {} usable branches",
        seeds.len(),
        results.len(),
        branches.len()
    );
    Ok(())
}

fn run_eval(args: EvalArgs) -> CliResult {
    let tracked = load_centerlines(&args.tracked)?;
    let reference = load_centerlines(&args.reference)?;
    let tracked_points: Vec<Vec<Point3<f64>>> = tracked
        .iter()
        .map(|line| line.points().to_vec())
        .collect();
    let report = evaluate(&tracked_points, &reference)?;
    save_report(&report, &args.out)?;
    if let Some(csv) = &args.csv {
        save_branch_csv(&tracked_points, &reference, csv)?;
    }
    println!(
        "precision {:.4}  recall {:.4}  overlap {:.4}  AI {}",
        report.precision,
        report.recall,
        report.overlap,
        report
            .average_inside_mm
            .map(|v| format!("{v:.4} mm"))
            .unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}

fn run_check_equivariance(args: CheckEquivarianceArgs) -> CliResult {
    let (net, _) = load_model(&args.weights, args.subdivisions)?;
    // Fresh phantoms, unseen by any training run.
    let specs = default_training_corpus(args.seed.wrapping_add(0xe1a1));
    let phantoms: Vec<Phantom> = specs[..6]
        .iter()
        .map(generate)
        .collect::<Result<_, _>>()?;
    let dataset = Dataset::from_phantoms(phantoms, DEFAULT_WINDOW, DEFAULT_LEVEL)?;
    let scales = ScaleSet::Uniform {
        lo_mm: 1.0,
        hi_mm: 30.0,
        count: 8,
    };
    let report = rotation_equivariance_test(&net, &dataset, &scales, args.points, 0.25, args.seed)?;
    let (mu, mr) = (report.median_unrotated(), report.median_rotated());
    println!("median cosine similarity, unrotated: {mu:.4}");
    println!("median cosine similarity, rotated:   {mr:.4}");
    println!("|delta|: {:.4} (tolerance {})", (mu - mr).abs(), args.tolerance);
    if (mu - mr).abs() > args.tolerance {
        return Err(CliError::Runtime(format!(
            "rotation changed the median cosine similarity by {:.4} (> {})",
            (mu - mr).abs(),
            args.tolerance
        )));
    }
    Ok(())
}

fn run_check_gradients(args: CheckGradientsArgs) -> CliResult {
    let weights = ModelWeights::load(&args.weights)?;
    let mesh = Arc::new(build_icosphere(args.subdivisions)?);
    // A fresh phantom supplies the probe sample.
    let specs = default_training_corpus(args.seed.wrapping_add(0x96ad));
    let phantom = generate(&specs[0])?;
    let dataset = Dataset::from_phantoms(vec![phantom], DEFAULT_WINDOW, DEFAULT_LEVEL)?;
    let scales = ScaleSet::Uniform {
        lo_mm: 2.0,
        hi_mm: 20.0,
        count: 3,
    };
    let sampler = sire::sampler::SamplerConfig {
        channels: weights.arch.input_channels,
        ..Default::default()
    };
    let mut rng = ChaCha12Rng::seed_from_u64(args.seed);
    let sample = draw_sample(&dataset, &scales, &mesh, &sampler, &mut rng)?;
    let err = gradient_check(&weights, &sample, mesh, args.params, args.seed)?;
    println!(
        "max relative gradient error over {} parameters: {err:.3e} (tolerance {:.1e})",
        args.params, args.tolerance
    );
    if err > args.tolerance {
        return Err(CliError::Runtime(format!(
            "gradient check failed: {err:.3e} > {:.1e}",
            args.tolerance
        )));
    }
    Ok(())
}
