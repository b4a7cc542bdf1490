use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use condsep::classgmm::{CovarianceType, MUSDB_CLASSES};
use condsep::datagen::{generate_specs, MixConfig, StemBank};
use condsep::dsp::{read_wav, write_wav, WavFormat};
use condsep::system::{ModelKind, SeparationModel};
use condsep::trainer::{fit_manifests, TrainConfig};

/// Class-conditional embedding separation: data generation, training,
/// separation, query-by-example, evaluation and inspection.
#[derive(Parser)]
#[command(name = "condsep", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a manifest and WAV tree of random mixtures from a stem bank.
    Mixgen(MixgenArgs),
    /// Train a model from train/validation manifests.
    Train(TrainArgs),
    /// Separate a mixture WAV into one WAV per class.
    Separate(SeparateArgs),
    /// Extract the content of a mixture that resembles a query recording.
    Query(QueryArgs),
    /// Score a model on a manifest and write a per-class SDR report.
    Evaluate(EvaluateArgs),
    /// Export embedding-space views of a mixture for plotting.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct MixgenArgs {
    /// Stem bank root holding `<split>/<song>/<class>.wav`.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    bank: Option<PathBuf>,
    /// Use generated stems instead of a bank on disk.
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Mixture length in seconds.
    #[arg(long, default_value_t = 3.2)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 48_000)]
    sample_rate: u32,
    /// Comma-separated class names.
    #[arg(long, value_delimiter = ',', default_values_t = MUSDB_CLASSES.map(String::from))]
    classes: Vec<String>,
    /// Songs in a synthetic bank.
    #[arg(long, default_value_t = 10)]
    songs: usize,
    /// Random per-stem gain within ±3 dB.
    #[arg(long)]
    gain_jitter: bool,
    /// Scale stems to a common level before mixing.
    #[arg(long)]
    normalize_stems: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train_manifest: PathBuf,
    #[arg(long)]
    val_manifest: PathBuf,
    /// Covariance family of the class Gaussians.
    #[arg(long, conflicts_with = "baseline")]
    covariance: Option<CovarianceType>,
    /// Train the per-bin sigmoid mask baseline instead.
    #[arg(long)]
    baseline: bool,
    /// Output directory for checkpoints, log and report.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Continue from a `last.ckpt` of an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct SeparateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    mixture: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Covariance family of the query Gaussian.
    #[arg(long, default_value = "diag")]
    covariance: CovarianceType,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// CSV report path; an aligned text table is written beside it.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// Output prefix for `_pca.csv`, `_dims.csv` and `_gaussians.json`.
    #[arg(long)]
    out: PathBuf,
}

/// Removes outputs that did not exist before the command when it fails.
struct Cleanup {
    paths: Vec<PathBuf>,
    armed: bool,
}

impl Cleanup {
    fn new() -> Self {
        Self {
            paths: Vec::new(),
            armed: true,
        }
    }

    fn track(&mut self, path: &Path) {
        if !path.exists() {
            self.paths.push(path.to_path_buf());
        }
    }

    fn disarm(&mut self) {
        self.armed = false;
    }
}

impl Drop for Cleanup {
    fn drop(&mut self) {
        if self.armed {
            for p in &self.paths {
                let _ = if p.is_dir() { fs::remove_dir_all(p) } else { fs::remove_file(p) };
            }
        }
    }
}

fn require_file(path: &Path, what: &str) -> condsep::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(condsep::Error::InvalidInput(format!("{what} {} does not exist", path.display())))
    }
}

fn mixgen(a: MixgenArgs) -> anyhow::Result<()> {
    if a.count == 0 {
        return Err(condsep::Error::Config("--count must be at least 1".into()).into());
    }
    let bank = match &a.bank {
        Some(root) => StemBank::from_dir(root, &a.split, &a.classes)?,
        None => StemBank::synthetic(&a.split, &a.classes, a.songs.max(1), (2.0 * a.duration).max(a.duration + 1.0), a.seed),
    };
    bank.require_classes(&a.classes)?;
    let cfg = MixConfig {
        duration: a.duration,
        sample_rate: a.sample_rate,
        gain_jitter: a.gain_jitter,
        normalize_stems: a.normalize_stems,
    };
    let specs = generate_specs(&bank, &a.classes, &cfg, a.count, a.seed)?;
    let mut cleanup = Cleanup::new();
    cleanup.track(&a.out);
    fs::create_dir_all(&a.out)?;
    for spec in &specs {
        cleanup.track(&a.out.join(&spec.id));
    }
    cleanup.track(&a.out.join("manifest.jsonl"));
    condsep::datagen::write_wav_tree(&a.out, &specs)?;
    cleanup.disarm();
    println!("{}", a.out.join("manifest.jsonl").display());
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    require_file(&a.train_manifest, "train manifest")?;
    require_file(&a.val_manifest, "validation manifest")?;
    let mut cfg = match &a.config {
        Some(path) => {
            require_file(path, "config")?;
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            TrainConfig::from_kv_str(&text)?
        }
        None => TrainConfig::default(),
    };
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| condsep::Error::Config(format!("override `{kv}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if a.baseline {
        cfg.model = ModelKind::Baseline;
    } else if let Some(kind) = a.covariance {
        cfg.model = ModelKind::Gmm { covariance: kind };
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(e) = a.epochs {
        cfg.max_epochs = e;
    }
    cfg.validate()?;
    if let Some(r) = &a.resume {
        require_file(r, "resume checkpoint")?;
    }
    let mut cleanup = Cleanup::new();
    cleanup.track(&a.out);
    let out = fit_manifests(&a.train_manifest, &a.val_manifest, &cfg, &a.out, a.resume.as_deref())?;
    cleanup.disarm();
    println!("{}", out.best_checkpoint.display());
    Ok(())
}

fn separate(a: SeparateArgs) -> anyhow::Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.input, "input")?;
    let model = SeparationModel::load(&a.checkpoint)?;
    let clip = read_wav(&a.input, Some(model.frontend().config().sample_rate))?;
    let stems = condsep::separator::separate(&model, &clip)?;
    let mut cleanup = Cleanup::new();
    cleanup.track(&a.out_dir);
    let base = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    for class in model.classes() {
        cleanup.track(&a.out_dir.join(format!("{base}_{class}.wav")));
    }
    for path in condsep::separator::write_stems(&model, &stems, &a.input, &a.out_dir)? {
        println!("{}", path.display());
    }
    cleanup.disarm();
    Ok(())
}

fn query(a: QueryArgs) -> anyhow::Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.query, "query")?;
    require_file(&a.mixture, "mixture")?;
    let model = SeparationModel::load(&a.checkpoint)?;
    let sr = model.frontend().config().sample_rate;
    let q = read_wav(&a.query, Some(sr))?;
    let mix = read_wav(&a.mixture, Some(sr))?;
    let out = condsep::separator::query_separate(&model, &q, &mix, a.covariance)?;
    let mut cleanup = Cleanup::new();
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        cleanup.track(dir);
        fs::create_dir_all(dir)?;
    }
    cleanup.track(&a.out);
    write_wav(&a.out, &out, WavFormat::Float32)?;
    cleanup.disarm();
    println!("{}", a.out.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.manifest, "manifest")?;
    let report = condsep::eval::evaluate_testset(&a.manifest, &a.checkpoint)?;
    let mut cleanup = Cleanup::new();
    if let Some(dir) = a.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        cleanup.track(dir);
    }
    cleanup.track(&a.report);
    cleanup.track(&a.report.with_extension("txt"));
    report.write(&a.report)?;
    cleanup.disarm();
    print!("{}", report.format_table());
    Ok(())
}

fn inspect(a: InspectArgs) -> anyhow::Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.input, "input")?;
    let model = SeparationModel::load(&a.checkpoint)?;
    if model.kind().is_baseline() {
        bail!(condsep::Error::Config("inspect needs an embedding model, not the baseline".into()));
    }
    let clip = read_wav(&a.input, Some(model.frontend().config().sample_rate))?;
    let mut cleanup = Cleanup::new();
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        cleanup.track(dir);
    }
    for suffix in ["_pca.csv", "_dims.csv", "_gaussians.json"] {
        let mut s = a.out.as_os_str().to_owned();
        s.push(suffix);
        cleanup.track(Path::new(&s));
    }
    for path in condsep::separator::export_embedding_views(&model, &clip, &a.out)? {
        println!("{}", path.display());
    }
    cleanup.disarm();
    Ok(())
}

/// Exit code and machine-parsable category for an error.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    match err.downcast_ref::<condsep::Error>() {
        Some(e @ (condsep::Error::Config(_) | condsep::Error::MissingClass(_))) => (2, e.kind()),
        Some(e) => (1, e.kind()),
        None => (1, "runtime"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Mixgen(a) => mixgen(a),
        Command::Train(a) => train(a),
        Command::Separate(a) => separate(a),
        Command::Query(a) => query(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = classify(&e);
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{kind}]: {msg}");
            ExitCode::from(code)
        }
    }
}
