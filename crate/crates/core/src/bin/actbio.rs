//! Command-line front end: synthesize a world, train, evaluate, retrieve.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use actbio::augmentation::{AugmentationConfig, Interpolation};
use actbio::checkpoint::load_student;
use actbio::datapipe::{build_protocol, load_manifest, ActivityMode, FileStore, Split, ViewMode};
use actbio::evaluation::{feature_embedding, pairwise_distances, FeatureKind};
use actbio::reporting::{metrics_csv, plot_loss_curves, retrieval_grid};
use actbio::synth::{generate_world, SyntheticWorldConfig};
use actbio::train::{embed_records, evaluate_student, prepare_store, train_with_teacher, Ablation, Profile, TrainConfig};
use actbio::VideoClip;

/// Name of the resolved training configuration written beside checkpoints.
const RUN_CONFIG: &str = "train.cfg";

#[derive(Parser)]
#[command(name = "actbio", version, about = "Activity-based person identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a student (and its silhouette teacher when distillation is on).
    Train(TrainArgs),
    /// Score a checkpoint on a gallery/probe protocol.
    Eval(EvalArgs),
    /// Render a synthetic world to disk.
    Synth(SynthArgs),
    /// Save the top-k gallery matches of one probe as an image grid.
    Retrieve(RetrieveArgs),
}

/// Overrides for the augmentation section of the configuration.
#[derive(Args, Clone, Default)]
struct AugArgs {
    #[arg(long)]
    alpha: Option<f32>,
    #[arg(long)]
    sigma: Option<f32>,
    #[arg(long, allow_hyphen_values = true)]
    hue_delta: Option<f64>,
    #[arg(long)]
    blur_kernel: Option<usize>,
    #[arg(long)]
    interpolation: Option<Interpolation>,
}

impl AugArgs {
    fn apply(&self, a: &mut AugmentationConfig) {
        if let Some(v) = self.alpha {
            a.alpha = v;
        }
        if let Some(v) = self.sigma {
            a.sigma = v;
        }
        if let Some(v) = self.hue_delta {
            a.hue_delta = v;
        }
        if let Some(v) = self.blur_kernel {
            a.blur_kernel = v;
        }
        if let Some(v) = self.interpolation {
            a.interpolation = v;
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// `key = value` overrides on top of the profile.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_ablation)]
    ablate: Vec<Ablation>,
    #[arg(long, default_value = "desk", value_parser = parse_profile)]
    profile: Profile,
    #[arg(long, default_value = "runs/train")]
    out: PathBuf,
    #[command(flatten)]
    aug: AugArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "same")]
    activity_mode: ActivityMode,
    #[arg(long, default_value = "none")]
    view_mode: ViewMode,
    #[arg(long)]
    no_activity_prior: bool,
    /// Retrieve by `f_ba` instead.
    #[arg(long)]
    appearance: bool,
    #[arg(long, default_value_t = 0.2)]
    probe_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Append the metrics row to this CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    aug: AugArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    actors: usize,
    #[arg(long, default_value_t = 4)]
    activities: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    clips_per_pair: usize,
    #[arg(long, default_value_t = 24)]
    frames: usize,
    /// Also write a copy whose test clips wear random test-actor colors.
    #[arg(long)]
    confounded: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest whose test split is the gallery; defaults to `manifest.tsv`
    /// beside the probe.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    probe: String,
    #[arg(long, default_value_t = 4)]
    topk: usize,
    #[arg(long, default_value = "grid.png")]
    out: PathBuf,
    #[arg(long)]
    no_activity_prior: bool,
    #[command(flatten)]
    aug: AugArgs,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: actbio::Error| e.to_string())
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: actbio::Error| e.to_string())
}

/// The configuration saved by `train` beside `checkpoint`, or the desk profile.
fn run_config(checkpoint: &Path) -> anyhow::Result<TrainConfig> {
    let path = checkpoint.parent().unwrap_or(Path::new(".")).join(RUN_CONFIG);
    if path.exists() {
        Ok(TrainConfig::from_file(&path, Profile::Desk)?)
    } else {
        log::warn!("{} not found; using desk defaults", path.display());
        Ok(TrainConfig::desk())
    }
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_file(p, a.profile)?,
        None => TrainConfig::for_profile(a.profile),
    };
    for ab in &a.ablate {
        cfg.ablate(*ab);
    }
    a.aug.apply(&mut cfg.augmentation);
    cfg.validate()?;
    let manifest = load_manifest(&a.manifest)?;
    let raw = FileStore::for_manifest(&a.manifest).preload(manifest.split(Split::Train))?;
    let train_manifest = manifest.only(Split::Train);
    let store = prepare_store(&train_manifest, &raw, &cfg.augmentation)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join(RUN_CONFIG), cfg.to_text())?;
    let (fit, _) = train_with_teacher(&train_manifest, &store, &cfg, Some(&a.out))?;
    fs::write(a.out.join("loss.csv"), fit.loss_csv())?;
    let rows: Vec<_> = fit.history.iter().map(|r| (r.step, r.report)).collect();
    plot_loss_curves(&rows, a.out.join("loss.png"))?;
    println!("final epoch loss {:.4}", fit.epoch_loss.last().copied().unwrap_or(f64::NAN));
    for c in &fit.checkpoints {
        println!("{}", c.display());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let mut cfg = run_config(&a.checkpoint)?;
    a.aug.apply(&mut cfg.augmentation);
    let (student, _) = load_student(&a.checkpoint)?;
    let manifest = load_manifest(&a.manifest)?;
    let test = manifest.only(Split::Test);
    let raw = FileStore::for_manifest(&a.manifest).preload(&test.records)?;
    let store = prepare_store(&test, &raw, &cfg.augmentation)?;
    let protocol = build_protocol(&manifest, a.activity_mode, a.view_mode, a.probe_fraction, a.seed)?;
    let kind = if a.appearance { FeatureKind::Appearance } else { FeatureKind::with_prior(!a.no_activity_prior) };
    let report = evaluate_student(&student, &store, cfg.frame_stride, &protocol, kind)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let title = format!("{} / {} / {kind:?}", a.activity_mode, a.view_mode);
    print!("{}", report.table(&title));
    if let Some(out) = &a.out {
        let row = report.row(&a.manifest.display().to_string(), &a.activity_mode.to_string(), &a.view_mode.to_string());
        let text = match fs::read_to_string(out) {
            Ok(prev) if !prev.trim().is_empty() => format!("{prev}{}\n", row.to_csv()),
            _ => metrics_csv(&[row]),
        };
        fs::write(out, text)?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let cfg = SyntheticWorldConfig {
        num_actors: a.actors,
        num_activities: a.activities,
        clips_per_pair: a.clips_per_pair,
        frames_per_clip: a.frames,
        seed: a.seed,
        ..SyntheticWorldConfig::default()
    };
    let world = generate_world(&cfg)?;
    world.write(&a.out)?;
    println!("{} clips written to {}", world.manifest.records.len(), a.out.display());
    if let Some(dir) = &a.confounded {
        world.confounded(a.seed)?.write(dir)?;
        println!("confounded copy written to {}", dir.display());
    }
    Ok(())
}

fn retrieve(a: RetrieveArgs) -> anyhow::Result<()> {
    if a.topk == 0 {
        bail!("--topk must be at least 1");
    }
    let mut cfg = run_config(&a.checkpoint)?;
    a.aug.apply(&mut cfg.augmentation);
    let (student, _) = load_student(&a.checkpoint)?;
    let manifest_path = match &a.manifest {
        Some(p) => p.clone(),
        None => Path::new(&a.probe)
            .ancestors()
            .skip(1)
            .map(|d| d.join("manifest.tsv"))
            .find(|p| p.exists())
            .context("no manifest.tsv above the probe; pass --manifest")?,
    };
    let manifest = load_manifest(&manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let probe_uri = Path::new(&a.probe)
        .strip_prefix(root)
        .map(|p| p.to_string_lossy().into_owned())
        .unwrap_or_else(|_| a.probe.clone());
    let probe = manifest
        .records
        .iter()
        .find(|r| r.video_uri == probe_uri)
        .with_context(|| format!("{probe_uri} is not in {}", manifest_path.display()))?
        .clone();
    let gallery: Vec<_> = manifest.split(Split::Test).filter(|r| r.video_uri != probe.video_uri).cloned().collect();
    let mut all = gallery.clone();
    all.push(probe.clone());
    let sub = actbio::datapipe::DatasetManifest::new(all.clone())?;
    let raw = FileStore::for_manifest(&manifest_path).preload(&sub.records)?;
    let store = prepare_store(&sub, &raw, &cfg.augmentation)?;

    let kind = FeatureKind::with_prior(!a.no_activity_prior);
    let bundles = embed_records(&student, &store, cfg.frame_stride, &all, 16)?;
    let emb: Vec<Vec<f64>> = bundles.iter().map(|b| feature_embedding(b, kind).vector.to_vec()).collect();
    let dim = emb[0].len();
    let flat = |rows: &[Vec<f64>]| ndarray::Array2::from_shape_vec((rows.len(), dim), rows.concat());
    let g = flat(&emb[..gallery.len()])?;
    let p = flat(&emb[gallery.len()..])?;
    let d = pairwise_distances(p.view(), g.view())?;
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    order.sort_by(|&i, &j| d[[0, i]].total_cmp(&d[[0, j]]).then(i.cmp(&j)));

    let loader = actbio::datapipe::ClipLoader::new(&store, student.config.frames, cfg.frame_stride, student.config.height, student.config.width);
    let load = |r: &actbio::datapipe::SampleRecord| -> anyhow::Result<VideoClip> {
        Ok(loader.rgb(r, actbio::train::clip_seed_for(&r.video_uri))?)
    };
    let mut hits = Vec::new();
    for &i in order.iter().take(a.topk) {
        let r = &gallery[i];
        let ok = r.actor_id == probe.actor_id;
        println!("{:.4}\t{}\t{}\t{}", d[[0, i]], if ok { "match" } else { "miss" }, r.actor_id, r.video_uri);
        hits.push((load(r)?, ok));
    }
    retrieval_grid(&load(&probe)?, &hits, &a.out)?;
    println!("grid written to {}", a.out.display());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
        Command::Retrieve(a) => retrieve(a),
    }
}
