//! `charseg`: synthesize data, train, segment, evaluate and gradient-check.
//!
//! Exit codes: 0 success, 1 a check or threshold failed, 2 usage or data
//! error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use charseg::config::RunConfig;
use charseg::evalmetric::{evaluate_dataset, Method};
use charseg::gradcheck::{run_check, GradcheckOptions, CHECK_NAMES};
use charseg::model::{build_fcn, load_checkpoint, save_checkpoint, ArchitectureSpec, DEFAULT_HEIGHT};
use charseg::raster::{read_binary_pgm, write_pgm};
use charseg::segment::segments_to_json;
use charseg::segmenter::{overlay, proj_segment, segment_line};
use charseg::synth::{
    corpus_seed, generate_dataset, make_corpus, make_toy_atlas, read_dataset, DatasetSpec, GlyphAtlas, Sample,
};
use charseg::trainloop::{train_with, TrainConfig};

#[derive(Parser)]
#[command(name = "charseg", version, about = "Character segmentation of text-line images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of disturbed text lines.
    Synth(SynthArgs),
    /// Train a segmentation network on a dataset.
    Train(TrainArgs),
    /// Segment one PGM text line.
    Segment(SegmentArgs),
    /// Score a segmentation method on a dataset.
    Eval(EvalArgs),
    /// Finite-difference check of every backward pass.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` file applied over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one dotted key, e.g. `--set disturb.rotation_deg=1.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    /// Defaults, then the file, then `--set`, then the dedicated flags.
    fn resolve(&self, flags: &[(&str, Option<String>)]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {o:?}"))?;
            cfg.set(k.trim(), v)?;
        }
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ContentArg {
    Normal,
    Chaotic,
}

#[derive(Args)]
struct SynthArgs {
    /// Seed for line sampling and disturbance (required).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of lines (default 1000).
    #[arg(long)]
    count: Option<usize>,
    /// Line width in pixels; a multiple of 32 (default 512; full scale 2048).
    #[arg(long)]
    width: Option<usize>,
    /// Text arrangement (default normal).
    #[arg(long, value_enum)]
    content: Option<ContentArg>,
    /// Existing glyph atlas file.
    #[arg(long, conflicts_with = "atlas_seed")]
    atlas: Option<PathBuf>,
    /// Build a procedural atlas with this seed instead of loading one.
    #[arg(long)]
    atlas_seed: Option<u64>,
    /// Glyph count of a procedural atlas (default 32).
    #[arg(long)]
    glyphs: Option<usize>,
    /// Rotation range in degrees (default 2).
    #[arg(long)]
    rotation: Option<f64>,
    /// Erosion probability (default 0.5).
    #[arg(long)]
    erosion_prob: Option<f64>,
    /// Dilation probability (default 0.5).
    #[arg(long)]
    dilation_prob: Option<f64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 50000 iterations, drops at 20000 and 40000.
    Full,
    /// 3000 iterations, drops at 1200 and 2400.
    Desk,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Seed for initialization and batch sampling (required).
    #[arg(long)]
    seed: Option<u64>,
    /// Training log CSV (iteration,loss,acc_pos,acc_neg,alpha,lr).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Schedule preset applied before other flags (default full).
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Iterations (default 50000). Drops past the budget never fire.
    #[arg(long)]
    iters: Option<u64>,
    /// Batch size (default 8).
    #[arg(long)]
    batch: Option<usize>,
    /// Initial learning rate (default 1e-4).
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated iterations where the learning rate drops tenfold
    /// (default 20000,40000).
    #[arg(long)]
    lr_drops: Option<String>,
    /// Momentum (default 0.9).
    #[arg(long)]
    momentum: Option<f64>,
    /// Expected line width; the dataset must match it.
    #[arg(long)]
    width: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SegmentMethod {
    Fcn,
    Proj,
}

#[derive(Args)]
struct SegmentArgs {
    /// Input PGM (pixels below 128 are ink).
    #[arg(long)]
    image: PathBuf,
    #[arg(long, value_enum, default_value = "fcn")]
    method: SegmentMethod,
    /// Checkpoint, required for `--method fcn`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// JSON output path (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the input with segment boundaries drawn in.
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Probability threshold (default 0.5).
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMethod {
    Fcn,
    Proj,
    /// Post-processing of the ground-truth mask.
    IdealMask,
    /// The ground truth itself.
    Oracle,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "fcn")]
    method: EvalMethod,
    /// Checkpoint, required for `--method fcn`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Uncovered-pixel bound (default 8).
    #[arg(long)]
    t1: Option<usize>,
    /// Covered-pixel lower bound (default 0).
    #[arg(long)]
    t2: Option<usize>,
    /// Cross-coverage bound (default 5).
    #[arg(long)]
    t3: Option<usize>,
    /// Per-sample CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit 1 when the mean accuracy is below this.
    #[arg(long)]
    min_acc: Option<f64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Print the check names and exit.
    #[arg(long)]
    list: bool,
    /// Run only the named check (repeatable).
    #[arg(long)]
    only: Vec<String>,
    /// Seed for the random test tensors (default 0).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturb every analytic gradient; the suite must then fail.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

/// Failure of a check or threshold rather than of the invocation.
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn show<T: ToString>(v: Option<T>) -> Option<String> {
    v.map(|v| v.to_string())
}

fn require_seed(seed: Option<u64>, what: &str) -> Result<u64> {
    seed.with_context(|| format!("{what} needs an explicit seed (--seed or the config file)"))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let content = a.content.map(|c| match c {
        ContentArg::Normal => "normal",
        ContentArg::Chaotic => "chaotic",
    });
    let cfg = a.config.resolve(&[
        ("synth.seed", show(a.seed)),
        ("synth.count", show(a.count)),
        ("synth.width", show(a.width)),
        ("synth.content", show(content)),
        ("synth.glyphs", show(a.glyphs)),
        ("disturb.rotation_deg", show(a.rotation)),
        ("disturb.erosion_prob", show(a.erosion_prob)),
        ("disturb.dilation_prob", show(a.dilation_prob)),
    ])?;
    let s = &cfg.synth;
    let seed = require_seed(s.seed, "synth")?;
    let quantum = ArchitectureSpec::standard(DEFAULT_HEIGHT).width_quantum();
    if s.width % quantum != 0 {
        bail!("width {} is not a multiple of {quantum}", s.width);
    }
    let atlas = match (&a.atlas, a.atlas_seed) {
        (Some(path), _) => GlyphAtlas::load(path).with_context(|| format!("loading atlas {}", path.display()))?,
        (None, Some(aseed)) => make_toy_atlas(aseed, s.glyphs, DEFAULT_HEIGHT)?,
        (None, None) => bail!("pass --atlas FILE or --atlas-seed N"),
    };
    if atlas.line_height != DEFAULT_HEIGHT {
        bail!(
            "atlas line height {} but lines are {DEFAULT_HEIGHT} high",
            atlas.line_height
        );
    }
    let corpus = make_corpus(&atlas, corpus_seed(&atlas), s.corpus_len);
    let spec = DatasetSpec {
        content: s.content,
        count: s.count,
        seed,
        width: s.width,
        disturbance: cfg.disturb,
        spacing: cfg.spacing,
        margin_min: s.margin_min,
        margin_max: s.margin_max,
    };
    let manifest = generate_dataset(&atlas, &corpus, &spec, &a.out)?;
    println!("wrote {} samples to {}", manifest.samples.len(), a.out.display());
    Ok(())
}

fn load_samples(path: &Path) -> Result<Vec<(String, Sample)>> {
    let (_, samples) = read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))?;
    Ok(samples)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    if let Some(n) = a.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut base = RunConfig::default();
    if let Some(Preset::Desk) = a.preset {
        base.train = TrainConfig::desk_scale(0);
    }
    let preset_keys = [
        ("train.iterations", show(Some(base.train.iterations))),
        (
            "train.lr_drops",
            Some(
                base.train
                    .lr_drops
                    .iter()
                    .map(u64::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ),
    ];
    let mut flags: Vec<(&str, Option<String>)> = Vec::new();
    if a.preset.is_some() {
        flags.extend(preset_keys);
    }
    flags.extend([
        ("train.seed", show(a.seed)),
        ("train.iterations", show(a.iters)),
        ("train.batch_size", show(a.batch)),
        ("train.learning_rate", show(a.lr)),
        ("train.lr_drops", a.lr_drops.clone()),
        ("train.momentum", show(a.momentum)),
    ]);
    let cfg = a.config.resolve(&flags)?;
    let seed = require_seed(cfg.train_seed, "train")?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = seed;

    let samples: Vec<Sample> = load_samples(&a.data)?.into_iter().map(|(_, s)| s).collect();
    let first = samples.first().context("dataset has no samples")?;
    let width = first.image.width;
    if let Some(w) = a.width {
        if w != width {
            bail!("dataset lines are {width} wide but --width is {w}");
        }
    }
    if let Some(s) = samples
        .iter()
        .find(|s| s.image.width != width || s.image.height != DEFAULT_HEIGHT)
    {
        bail!("mixed line sizes in dataset ({}x{})", s.image.height, s.image.width);
    }
    let spec = ArchitectureSpec::standard(width);
    spec.validate()?;
    let model = build_fcn::<f32>(&spec, seed)?;

    let start = Instant::now();
    let every = (tcfg.iterations / 20).max(1);
    let (ckpt, log) = train_with(model, &samples, &tcfg, |r| {
        if (r.iteration + 1) % every == 0 {
            eprintln!(
                "iter {:>6} loss {:.4} acc+ {:.3} acc- {:.3} alpha {:.3} ({:.0}s)",
                r.iteration + 1,
                r.loss,
                r.acc_pos,
                r.acc_neg,
                r.alpha,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    save_checkpoint(&ckpt, &a.out)?;
    if let Some(path) = &a.log {
        std::fs::write(path, log.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("trained {} iterations, checkpoint {}", tcfg.iterations, a.out.display());
    Ok(())
}

fn cmd_segment(a: SegmentArgs) -> Result<()> {
    let cfg = a.config.resolve(&[("post.threshold", show(a.threshold))])?;
    let image = read_binary_pgm(&a.image)?;
    let segments = match a.method {
        SegmentMethod::Proj => proj_segment(&image, cfg.blank_run_min, &cfg.post),
        SegmentMethod::Fcn => {
            let path = a.model.as_ref().context("--method fcn needs --model")?;
            let ckpt = load_checkpoint(path)?;
            segment_line(&ckpt.model, &image, &cfg.post)?
        }
    };
    let json = segments_to_json(&segments);
    match &a.out {
        Some(path) => {
            std::fs::write(path, format!("{json}\n")).with_context(|| format!("writing {}", path.display()))?
        }
        None => println!("{json}"),
    }
    if let Some(path) = &a.overlay {
        write_pgm(&overlay(&image, &segments), path)?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = a.config.resolve(&[
        ("match.t1", show(a.t1)),
        ("match.t2", show(a.t2)),
        ("match.t3", show(a.t3)),
    ])?;
    let samples = load_samples(&a.data)?;
    let ckpt = match a.method {
        EvalMethod::Fcn => Some(load_checkpoint(
            a.model.as_ref().context("--method fcn needs --model")?,
        )?),
        _ => None,
    };
    let method = match a.method {
        EvalMethod::Fcn => Method::Fcn(&ckpt.as_ref().expect("loaded above").model),
        EvalMethod::Proj => Method::Proj {
            blank_run_min: cfg.blank_run_min,
        },
        EvalMethod::IdealMask => Method::IdealMask,
        EvalMethod::Oracle => Method::Oracle,
    };
    let report = evaluate_dataset(method, &samples, &cfg.matching, &cfg.post)?;
    let m = &cfg.matching;
    println!("method={} t1={} t2={} t3={}", report.method, m.t1, m.t2, m.t3);
    println!("{}", report.summary_line());
    if let Some(path) = &a.out {
        std::fs::write(path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(min) = a.min_acc {
        if report.mean_accuracy < min {
            return Err(CheckFailed(format!("mean accuracy {:.4} below {min}", report.mean_accuracy)).into());
        }
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    if a.list {
        CHECK_NAMES.iter().for_each(|n| println!("{n}"));
        return Ok(());
    }
    let names: Vec<&str> = if a.only.is_empty() {
        CHECK_NAMES.to_vec()
    } else {
        a.only.iter().map(String::as_str).collect()
    };
    let opts = GradcheckOptions {
        seed: a.seed,
        inject_fault: a.inject_fault,
    };
    let mut failed = 0;
    for name in names {
        let r = run_check(name, &opts)?;
        println!(
            "{} {:<20} max_rel_err={:.3e} tol={:.0e} entries={}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.max_rel_error,
            r.tolerance,
            r.entries
        );
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(CheckFailed(format!("{failed} gradient check(s) failed")).into());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Segment(a) => cmd_segment(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<CheckFailed>() => {
            eprintln!("charseg: {e:#}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("charseg: {e:#}");
            ExitCode::from(2)
        }
    }
}
