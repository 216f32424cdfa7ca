//! Subcommands of the `spm` binary.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use spm_core::bench::{benchmark_decode, parallel_throughput, run_scaling_study, DecodeBench, Machine, ScalingGrid};
use spm_core::decoder::{decode, NmsParams};
use spm_core::encoder::{encode_scene, EncoderConfig, Mode, TauMode, DEFAULT_SIGMA, DEFAULT_TAU};
use spm_core::eval::{mean_ap, pck3d, DEFAULT_ALPHA, DEFAULT_PCK3D_RADIUS};
use spm_core::experiments::{run_roundtrip, run_tau_sweep, run_toy, RoundtripConfig, TauSweepConfig, ToyConfig, DEFAULT_TOY_SEED};
use spm_core::io::{
    read_maps, save_checkpoint, write_atomic, write_maps, CheckpointHeader, Manifest, PoseDatasetFile, SkeletonRef, MANIFEST_VERSION,
};
use spm_core::repr::Pose;
use spm_core::skeleton::SkeletonSpec;
use spm_core::synth::{generate_scene, SynthConfig};
use spm_core::{Error, Result};

pub const EXIT_HELP: &str = "\
Exit codes:
  0  success
  2  usage error (bad flag or parameter)
  3  data error (malformed input, mismatched mode or dimension)
  4  I/O error
Errors are printed to stderr as one line: `E<code> <class>: <message>`.

Environment:
  SPM_THREADS  worker threads for commands that process images concurrently
               (default: all logical CPUs)";

#[derive(Debug, Parser)]
#[command(
    name = "spm",
    version,
    about = "Structured pose representation codec, decoder, toy trainer and metrics"
)]
#[command(after_help = EXIT_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode a pose dataset into confidence and displacement map tensors
    Encode(EncodeArgs),
    /// Decode a directory of map tensors into pose predictions
    Decode(DecodeArgs),
    /// Encode and decode synthetic scenes, reporting reconstruction error
    Roundtrip(RoundtripArgs),
    /// Sweep the displacement neighbourhood bound tau over a fixed dataset
    TauSweep(TauSweepArgs),
    /// Train the toy two-branch regressor on rendered synthetic scenes
    TrainToy(TrainToyArgs),
    /// Score predictions against ground truth (mAP via PCKh, or 3D-PCK)
    Eval(EvalArgs),
    /// Time decoding of one synthetic map stack
    Bench(BenchArgs),
    /// Time decoding across a grid of person counts, joint counts and sizes
    ScalingStudy(ScalingArgs),
    /// Write a synthetic ground-truth dataset, optionally with PPM renders
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Vanilla,
    Hier,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Vanilla => Mode::Vanilla,
            ModeArg::Hier => Mode::Hierarchical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TauModeArg {
    /// Cells with squared distance to the anchor at most tau
    Squared,
    /// Cells with distance to the anchor at most tau
    Radius,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Pose dataset JSON
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "vanilla")]
    pub mode: ModeArg,
    /// Gaussian spread of the root confidence peaks, in map cells
    #[arg(long, allow_negative_numbers = true, default_value_t = DEFAULT_SIGMA)]
    pub sigma: f64,
    /// Displacement neighbourhood bound
    #[arg(long, allow_negative_numbers = true, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, value_enum, default_value = "squared")]
    pub tau_mode: TauModeArg,
    /// Input pixels per map cell
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Output directory; created if missing
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Directory written by `encode`
    #[arg(long)]
    pub maps: PathBuf,
    /// Must match the mode recorded in the manifest
    #[arg(long, value_enum, default_value = "vanilla")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 3)]
    pub nms_window: usize,
    /// Smallest root confidence kept as a person
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.3)]
    pub threshold: f64,
    #[arg(long, default_value_t = 30)]
    pub max_peaks: usize,
    /// Shift peaks a quarter cell toward the larger neighbour
    #[arg(long)]
    pub refine: bool,
    /// Predictions JSON
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RoundtripArgs {
    #[arg(long, default_value_t = 7)]
    pub synth_seed: u64,
    /// Number of scenes
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "vanilla")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 3)]
    pub max_persons: usize,
    #[arg(long, default_value = "mpii16")]
    pub skeleton: String,
    /// JSON report
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct TauSweepArgs {
    #[arg(long, default_value_t = 1)]
    pub from: u32,
    #[arg(long, default_value_t = 20)]
    pub to: u32,
    #[arg(long, default_value_t = 11)]
    pub synth_seed: u64,
    #[arg(long, default_value_t = 20)]
    pub scenes: usize,
    #[arg(long, value_enum, default_value = "hier")]
    pub mode: ModeArg,
    #[arg(long, default_value = "mpii16")]
    pub skeleton: String,
    /// JSON report
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    /// Seeds the scenes, the initial weights and the sample order
    #[arg(long, default_value_t = DEFAULT_TOY_SEED)]
    pub synth_seed: u64,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub scenes: usize,
    /// Initial RMSprop learning rate
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.003)]
    pub lr: f64,
    /// Weight of the displacement loss
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.01)]
    pub beta: f64,
    /// Smooth-l1 transition point in normalised units (default: one pixel)
    #[arg(long, allow_negative_numbers = true)]
    pub delta: Option<f64>,
    /// Evaluate train-set PCKh every this many epochs (0: only at the end)
    #[arg(long, default_value_t = 10)]
    pub eval_every: usize,
    /// Stop once train-set PCKh reaches 1
    #[arg(long)]
    pub stop_at_perfect: bool,
    /// Checkpoint path
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history CSV (default: `<out>.history.csv`)
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Map,
    Pck3d,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions JSON
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth JSON
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value = "map")]
    pub metric: Metric,
    /// PCKh threshold as a fraction of the head size
    #[arg(long, allow_negative_numbers = true, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// 3D-PCK radius in millimetres
    #[arg(long, allow_negative_numbers = true, default_value_t = DEFAULT_PCK3D_RADIUS)]
    pub radius: f64,
    /// Optional JSON report
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 96)]
    pub height: usize,
    #[arg(long, default_value_t = 96)]
    pub width: usize,
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    /// Persons in the synthetic map stack
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Also measure throughput with this many parallel workers
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Write the JSON here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScalingArgs {
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    /// JSON report; the summary table goes to stdout
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of images
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 3)]
    pub max_persons: usize,
    #[arg(long, default_value = "mpii16")]
    pub skeleton: String,
    /// Dataset JSON
    #[arg(long)]
    pub out: PathBuf,
    /// Also render each scene as `<dir>/<id>.ppm`
    #[arg(long)]
    pub images: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn preset(name: &str) -> Result<(SkeletonRef, Arc<SkeletonSpec>)> {
    let spec = SkeletonSpec::preset(name)?;
    Ok((SkeletonRef::Preset(name.to_string()), Arc::new(spec)))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("report serialises");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Encode(a) => encode_cmd(a),
        Command::Decode(a) => decode_cmd(a),
        Command::Roundtrip(a) => roundtrip_cmd(a),
        Command::TauSweep(a) => tau_sweep_cmd(a),
        Command::TrainToy(a) => train_toy_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::ScalingStudy(a) => scaling_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

fn encode_cmd(a: EncodeArgs) -> Result<()> {
    let mode: Mode = a.mode.into();
    // Parse and encode everything before touching the output directory.
    let dataset = PoseDatasetFile::read(&a.dataset)?;
    let spec = Arc::new(dataset.spec()?);
    let first = dataset
        .images
        .first()
        .ok_or_else(|| Error::InvalidData("dataset has no images".into()))?;
    let (h, w) = (first.height, first.width);
    if let Some(img) = dataset.images.iter().find(|i| (i.height, i.width) != (h, w)) {
        return Err(Error::InvalidData(format!(
            "image `{}` is {}x{}, but the map stack needs one size ({h}x{w})",
            img.id, img.height, img.width
        )));
    }
    if a.stride == 0 {
        return Err(usage("--stride must be at least 1"));
    }
    let mut cfg = EncoderConfig::for_image(h, w, a.stride);
    cfg.sigma = a.sigma;
    cfg.tau = a.tau;
    cfg.tau_mode = match a.tau_mode {
        TauModeArg::Squared => TauMode::SquaredDistance,
        TauModeArg::Radius => TauMode::Radius,
    };
    cfg.validate()?;
    let scenes = dataset.to_scenes();
    let encoded = scenes
        .par_iter()
        .map(|(id, scene)| {
            encode_scene(scene, &spec, mode, &cfg)
                .map(|e| (id, e))
                .map_err(|e| Error::InvalidData(format!("image `{id}`: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    ensure_dir(&a.out)?;
    let images = encoded
        .par_iter()
        .map(|(id, e)| write_maps(&a.out, id, (h, w), &e.confidence, &e.displacements))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        mode,
        skeleton: dataset.skeleton.clone(),
        dim: dataset.dim,
        k: spec.k(),
        encoder: cfg,
        images,
    };
    manifest.write(&a.out)?;
    println!(
        "encoded {} images ({mode}, sigma {}, tau {}) into {}",
        manifest.images.len(),
        cfg.sigma,
        cfg.tau,
        a.out.display()
    );
    Ok(())
}

fn decode_cmd(a: DecodeArgs) -> Result<()> {
    let mode: Mode = a.mode.into();
    let nms = NmsParams {
        window: a.nms_window,
        threshold: a.threshold,
        max_peaks: a.max_peaks,
        refine: a.refine,
    };
    if nms.window == 0 || nms.window.is_multiple_of(2) {
        return Err(usage("--nms-window must be a positive odd number"));
    }
    let manifest = Manifest::read(&a.maps)?;
    if manifest.mode != mode {
        return Err(Error::ModeMismatch {
            expected: mode.to_string(),
            found: manifest.mode.to_string(),
        });
    }
    let spec = manifest.skeleton.resolve().map_err(|e| Error::InvalidData(e.to_string()))?;
    let images = manifest
        .images
        .par_iter()
        .map(|entry| {
            let maps = read_maps(&a.maps, &manifest, entry)?;
            let dims = (entry.image_height, entry.image_width);
            let preds = decode(&maps.confidence, &maps.displacements, &manifest.encoder, dims, &spec, &nms)?;
            Ok((entry.id.clone(), entry.image_height, entry.image_width, preds))
        })
        .collect::<Result<Vec<_>>>()?;
    let out = PoseDatasetFile::from_predictions(manifest.skeleton.clone(), &spec, &images)?;
    out.write(&a.out)?;
    let persons: usize = images.iter().map(|i| i.3.len()).sum();
    println!("decoded {persons} persons from {} images into {}", images.len(), a.out.display());
    Ok(())
}

fn roundtrip_cmd(a: RoundtripArgs) -> Result<()> {
    let (_, spec) = preset(&a.skeleton)?;
    let cfg = RoundtripConfig {
        seed: a.synth_seed,
        scenes: a.n,
        mode: a.mode.into(),
        stride: a.stride,
        height: a.height,
        width: a.width,
        max_persons: a.max_persons,
    };
    let report = run_roundtrip(&cfg, &spec)?;
    write_json(&a.report, &report)?;
    println!(
        "{} scenes, {}/{} persons recovered ({:.1}%), counts exact in {} scenes, max joint error {:.3e} px",
        report.rows.len(),
        report.recovered,
        report.persons,
        100.0 * report.recovered_fraction(),
        report.exact_count_scenes,
        report.max_error_px
    );
    Ok(())
}

fn tau_sweep_cmd(a: TauSweepArgs) -> Result<()> {
    let (_, spec) = preset(&a.skeleton)?;
    let cfg = TauSweepConfig {
        from: a.from,
        to: a.to,
        seed: a.synth_seed,
        scenes: a.scenes,
        mode: a.mode.into(),
        ..TauSweepConfig::default()
    };
    let report = run_tau_sweep(&cfg, &spec)?;
    write_json(&a.report, &report)?;
    println!(
        "{:>5} {:>9} {:>9} {:>7} {:>12} {:>8} {:>8}",
        "tau", "overlap", "defined", "mAP", "max err px", "missing", "unpaired"
    );
    for r in &report.rows {
        let map = r.map.map_or("-".to_string(), |m| format!("{m:.4}"));
        println!(
            "{:>5} {:>9.5} {:>9.5} {:>7} {:>12.3} {:>8} {:>8}",
            r.tau, r.overlap_fraction, r.defined_fraction, map, r.max_error_px, r.missing_joints, r.unpaired
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    loss: f64,
    learning_rate: f64,
    pckh: Option<f64>,
}

fn train_toy_cmd(a: TrainToyArgs) -> Result<()> {
    let cfg = ToyConfig {
        seed: a.synth_seed,
        scenes: a.scenes,
        epochs: a.epochs,
        learning_rate: a.lr,
        beta: a.beta,
        smooth_l1_delta: a.delta,
        eval_every: a.eval_every,
        stop_at_perfect: a.stop_at_perfect,
        ..ToyConfig::default()
    };
    let run = run_toy(&cfg, |r| {
        if let Some(p) = r.pckh {
            println!(
                "epoch {:>4}  loss {:.6}  lr {:.2e}  train PCKh {:.4}",
                r.epoch, r.loss, r.learning_rate, p
            );
        }
    })?;
    let header = CheckpointHeader {
        architecture: run.model.arch.clone(),
        seed: cfg.seed,
        epoch: run.history.len(),
        trained_dtype: String::new(),
        tensors: Vec::new(),
        encoder: Some(run.encoder),
        skeleton: Some(SkeletonRef::Preset(run.spec.name.clone())),
    };
    save_checkpoint(&a.out, &run.model, &header)?;
    let history = a.history.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &run.history {
        w.serialize(HistoryRow {
            epoch: r.epoch,
            loss: r.loss,
            learning_rate: r.learning_rate,
            pckh: r.pckh,
        })
        .map_err(|e| Error::InvalidData(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidData(e.to_string()))?;
    write_atomic(&history, &bytes)?;
    match run.perfect_at {
        Some(e) => println!("final train PCKh {:.4}; first perfect at epoch {e}", run.final_pckh),
        None => println!("final train PCKh {:.4}; never perfect", run.final_pckh),
    }
    Ok(())
}

type Aligned = (SkeletonSpec, Vec<Vec<spm_core::decoder::DecodedPose>>, Vec<Vec<Pose>>);

/// Ground truth and predictions per ground-truth image, aligned by id.
fn aligned(pred: &PoseDatasetFile, gt: &PoseDatasetFile) -> Result<Aligned> {
    let spec = gt.spec()?;
    let pspec = pred.spec()?;
    if pspec.joint_names != spec.joint_names || pspec.dim != spec.dim {
        return Err(Error::InvalidData(format!(
            "prediction skeleton `{}` does not match ground-truth skeleton `{}`",
            pspec.name, spec.name
        )));
    }
    let mut by_id: HashMap<String, Vec<_>> = pred.to_predictions()?.into_iter().collect();
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for (id, scene) in gt.to_scenes() {
        preds.push(by_id.remove(&id).unwrap_or_default());
        gts.push(scene.persons);
    }
    if let Some(id) = by_id.keys().min() {
        return Err(Error::InvalidData(format!("prediction image `{id}` has no ground truth")));
    }
    Ok((spec, preds, gts))
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let pred = PoseDatasetFile::read(&a.pred)?;
    let gt = PoseDatasetFile::read(&a.gt)?;
    let (spec, preds, gts) = aligned(&pred, &gt)?;
    match a.metric {
        Metric::Map => {
            let report = mean_ap(&preds, &gts, &spec, a.alpha)?;
            print!("{}", report.to_table(&spec));
            if let Some(p) = &a.report {
                write_json(p, &report)?;
            }
        }
        Metric::Pck3d => {
            let report = pck3d(&preds, &gts, a.radius)?;
            println!("{:<16} {:>8}", "joint", "3D-PCK");
            for (name, v) in spec.joint_names.iter().zip(&report.per_joint) {
                let v = v.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
                println!("{name:<16} {v:>8}");
            }
            println!("{:<16} {:>8.2}", "total", report.total_percent());
            if let Some(p) = &a.report {
                write_json(p, &report)?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchOutput {
    machine: Machine,
    bench: DecodeBench,
    #[serde(skip_serializing_if = "Option::is_none")]
    throughput_per_s: Option<f64>,
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let (bench, _) = benchmark_decode(a.height, a.width, a.k, a.n, a.reps)?;
    let throughput = if a.workers > 1 {
        Some(parallel_throughput(a.height, a.width, a.k, a.n, a.workers, a.reps.max(a.workers))?)
    } else {
        None
    };
    let out = BenchOutput {
        machine: Machine::detect(a.workers),
        bench,
        throughput_per_s: throughput,
    };
    match &a.out {
        Some(p) => write_json(p, &out)?,
        None => println!("{}", serde_json::to_string_pretty(&out).expect("bench serialises")),
    }
    Ok(())
}

fn scaling_cmd(a: ScalingArgs) -> Result<()> {
    let grid = ScalingGrid {
        reps: a.reps,
        ..ScalingGrid::default()
    };
    if grid.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    let report = run_scaling_study(&grid)?;
    write_json(&a.out, &report)?;
    print!("{}", report.summary());
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let (skel, spec) = preset(&a.skeleton)?;
    let mut cfg = SynthConfig::new(a.seed, a.height, a.width);
    cfg.n_persons = (1, a.max_persons.max(1));
    cfg.render = a.images.is_some();
    let scenes = (0..a.n as u64)
        .map(|i| generate_scene(&cfg, &spec, i).map(|s| (format!("img{i:04}"), s)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = &a.images {
        ensure_dir(dir)?;
        for (id, s) in &scenes {
            let mut buf = Vec::new();
            s.image.as_ref().expect("rendered").write_ppm(&mut buf)?;
            write_atomic(&dir.join(format!("{id}.ppm")), &buf)?;
        }
    }
    let plain: Vec<_> = scenes.into_iter().map(|(id, s)| (id, s.scene)).collect();
    let file = PoseDatasetFile::from_scenes(skel, &spec, &plain)?;
    file.write(&a.out)?;
    println!("wrote {} scenes ({}) to {}", plain.len(), spec.name, a.out.display());
    Ok(())
}
