//! The `docdiff` command line.

use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{load_image, save_image, write_corpus, Corpus, CorpusKind};
use crate::error::{Error, Result};
use crate::inference::{enhance, refine_external, Mode, Weights};
use crate::metrics::{f_measure, otsu_threshold, psnr, pseudo_f_measure, ssim, BinaryImage};
use crate::schedule::NoiseSchedule;
use crate::trainer::{load_checkpoint, save_checkpoint, LossReport, Prediction, TrainConfig, Trainer};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "docdiff", version, about = "Residual-diffusion document enhancement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired corpus.
    Synth(SynthArgs),
    /// Train the coarse predictor and residual denoiser.
    Train(TrainArgs),
    /// Enhance one image with a trained checkpoint.
    Enhance(EnhanceArgs),
    /// Score predictions against ground truth, CSV to stdout.
    Eval(EvalArgs),
    /// Print the noise schedule.
    Schedule(ScheduleArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Blur,
    Denoise,
    Watermark,
    Seal,
}

impl From<KindArg> for CorpusKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Blur => CorpusKind::Blur,
            KindArg::Denoise => CorpusKind::Denoise,
            KindArg::Watermark => CorpusKind::Watermark,
            KindArg::Seal => CorpusKind::Seal,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, env = "DOCDIFF_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Subdirectory of `--out` that receives the pairs.
    #[arg(long, default_value = "train")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` file with training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus directory (a split, or a root containing `train/`).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Loss log; defaults to `<out>.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long, env = "DOCDIFF_SEED")]
    pub seed: Option<u64>,
    /// Detach `x_res` inside the diffusion target too.
    #[arg(long)]
    pub detach_target: bool,
    /// Train the denoiser to predict noise instead of the residual.
    #[arg(long)]
    pub predict_eps: bool,
    /// Drop the frequency-separated terms (β0 = 0).
    #[arg(long)]
    pub no_freqsep: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Native,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BinarizeArg {
    /// Threshold at 0.5.
    Fixed,
    Otsu,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
    #[arg(long, value_enum, default_value = "native")]
    pub mode: ModeArg,
    /// Treat the input as the coarse estimate and only add the residual.
    #[arg(long)]
    pub refine_only: bool,
    #[arg(long, env = "DOCDIFF_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Use live weights instead of the EMA shadow.
    #[arg(long)]
    pub no_ema: bool,
    /// Write a bilevel output.
    #[arg(long, value_enum)]
    pub binarize: Option<BinarizeArg>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Comma-separated subset of psnr,ssim,fm,pfm.
    #[arg(long, default_value = "psnr,ssim,fm,pfm", value_delimiter = ',')]
    pub metrics: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long = "T", default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub beta_start: f64,
    #[arg(long, default_value_t = 0.02)]
    pub beta_end: f64,
    /// Print every row instead of a summary.
    #[arg(long)]
    pub dump: bool,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str, config: &mut TrainConfig) -> Result<()> {
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("config line {}: expected `key = value`", n + 1)))?;
        config
            .set(k.trim(), v.trim())
            .map_err(|e| Error::invalid(format!("config line {}: {e}", n + 1)))?;
    }
    Ok(())
}

fn log_config(command: &str, pairs: &[(&str, String)]) {
    eprintln!("# docdiff {command}");
    for (k, v) in pairs {
        eprintln!("#   {k} = {v}");
    }
}

fn is_image(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm"))
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let kind = CorpusKind::from(a.kind);
    let dir = a.out.join(&a.split);
    log_config(
        "synth",
        &[
            ("out", dir.display().to_string()),
            ("count", a.count.to_string()),
            ("kind", kind.name().to_string()),
            ("size", a.size.to_string()),
            ("seed", a.seed.to_string()),
        ],
    );
    write_corpus(&dir, kind, a.count, a.size, a.seed)
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    if !dir.is_dir() {
        return Err(Error::invalid(format!("data directory {} does not exist", dir.display())));
    }
    let mut corpus = Corpus::load_dir(dir)?;
    if corpus.is_empty() && dir.join("train").is_dir() {
        corpus = Corpus::load_dir(&dir.join("train"))?;
    }
    if corpus.is_empty() {
        return Err(Error::invalid(format!("no image pairs found in {}", dir.display())));
    }
    Ok(corpus)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut config = TrainConfig::default();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_config(&text, &mut config)?;
    }
    let corpus = load_corpus(&a.data)?;
    if let Some(v) = a.iters {
        config.iters = v;
    }
    if let Some(v) = a.batch {
        config.batch = v;
    }
    if let Some(v) = a.lr {
        config.lr = v;
    }
    if let Some(v) = a.eval_every {
        config.eval_every = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if a.detach_target {
        config.detach_target = true;
    }
    if a.predict_eps {
        config.prediction = Prediction::Noise;
    }
    if a.no_freqsep {
        config.beta0 = 0.0;
    }
    let channels = corpus.channels().expect("corpus is non-empty");
    let mut trainer = match &a.resume {
        Some(path) => {
            // the run continues with its saved settings; only the target
            // iteration count may change
            let mut t = load_checkpoint(path)?;
            t.config.iters = config.iters;
            if t.bundle.channels() != channels {
                return Err(Error::invalid(format!(
                    "checkpoint expects {}-channel images, corpus has {channels}",
                    t.bundle.channels()
                )));
            }
            t
        }
        None => Trainer::toy(channels, config)?,
    };
    let mut pairs = vec![
        ("data", a.data.display().to_string()),
        ("out", a.out.display().to_string()),
        ("channels", channels.to_string()),
        ("pairs", corpus.len().to_string()),
        ("start_iteration", trainer.iteration.to_string()),
    ];
    pairs.extend(trainer.config.to_pairs());
    log_config("train", &pairs);

    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.as_os_str().to_owned();
        p.push(".csv");
        PathBuf::from(p)
    });
    let fresh = trainer.iteration == 0 || !log_path.exists();
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    if fresh {
        writeln!(log, "{}", LossReport::CSV_HEADER).map_err(|e| Error::io(&log_path, e))?;
    }
    let mut write_err = None;
    let until = trainer.config.iters as u64;
    trainer.run(&corpus, until, |it, r| {
        eprintln!("iter {it}: {r}");
        if let Err(e) = writeln!(log, "{}", r.csv_row(it)) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(Error::io(&log_path, e));
    }
    save_checkpoint(&trainer, &a.out)
}

fn cmd_enhance(a: &EnhanceArgs) -> Result<()> {
    let trainer = load_checkpoint(&a.ckpt)?;
    let input = load_image(&a.input)?;
    let mode = match a.mode {
        ModeArg::Native => Mode::Native,
        ModeArg::Full => Mode::Full,
    };
    log_config(
        "enhance",
        &[
            ("ckpt", a.ckpt.display().to_string()),
            ("in", a.input.display().to_string()),
            ("out", a.out.display().to_string()),
            ("steps", a.steps.to_string()),
            ("mode", mode.name().to_string()),
            ("refine_only", a.refine_only.to_string()),
            ("seed", a.seed.to_string()),
            ("ema", (!a.no_ema).to_string()),
            ("binarize", format!("{:?}", a.binarize).to_lowercase()),
        ],
    );
    let pipe = Weights {
        bundle: &trainer.bundle,
        ema: !a.no_ema,
    };
    let out = if a.refine_only {
        refine_external(&pipe, &input, a.steps, mode, a.seed)?
    } else {
        enhance(&pipe, &input, a.steps, mode, a.seed)?
    };
    let out = match a.binarize {
        None => out,
        Some(BinarizeArg::Fixed) => BinaryImage::threshold(&out, 0.5).to_image(),
        Some(BinarizeArg::Otsu) => BinaryImage::threshold(&out, otsu_threshold(&out)).to_image(),
    };
    save_image(&out, &a.out)
}

const METRICS: [&str; 4] = ["psnr", "ssim", "fm", "pfm"];

fn image_names(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = BTreeSet::new();
    for e in entries {
        let e = e.map_err(|err| Error::io(dir, err))?;
        if is_image(&e.path()) {
            names.insert(e.file_name().to_string_lossy().into_owned());
        }
    }
    Ok(names)
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    for m in &a.metrics {
        if !METRICS.contains(&m.as_str()) {
            return Err(Error::invalid(format!("unknown metric `{m}`, expected one of {METRICS:?}")));
        }
    }
    let names = image_names(&a.pred)?;
    if names.is_empty() {
        return Err(Error::invalid(format!("no PGM/PPM files in {}", a.pred.display())));
    }
    for n in &names {
        let gt = a.gt.join(n);
        if !gt.exists() {
            return Err(Error::invalid(format!("missing ground truth {}", gt.display())));
        }
    }
    log_config(
        "eval",
        &[
            ("pred", a.pred.display().to_string()),
            ("gt", a.gt.display().to_string()),
            ("metrics", a.metrics.join(",")),
        ],
    );
    let io = |e| Error::io("<stdout>", e);
    writeln!(out, "file,{}", a.metrics.join(",")).map_err(io)?;
    let mut sums = vec![0.0f64; a.metrics.len()];
    for n in &names {
        let pred = load_image(a.pred.join(n))?;
        let gt = load_image(a.gt.join(n))?;
        let (pb, gb) = (BinaryImage::threshold(&pred, 0.5), BinaryImage::threshold(&gt, 0.5));
        let mut row = Vec::with_capacity(a.metrics.len());
        for (i, m) in a.metrics.iter().enumerate() {
            let v = match m.as_str() {
                "psnr" => psnr(&pred, &gt)?,
                "ssim" => ssim(&pred, &gt)?,
                "fm" => f_measure(&pb, &gb)?.fm,
                _ => pseudo_f_measure(&pb, &gb)?,
            };
            sums[i] += v;
            row.push(format!("{v:.6}"));
        }
        writeln!(out, "{n},{}", row.join(",")).map_err(io)?;
    }
    let means: Vec<String> = sums.iter().map(|s| format!("{:.6}", s / names.len() as f64)).collect();
    writeln!(out, "mean,{}", means.join(",")).map_err(io)
}

fn cmd_schedule(a: &ScheduleArgs, out: &mut dyn Write) -> Result<()> {
    let s = NoiseSchedule::linear(a.steps, a.beta_start, a.beta_end)?;
    let io = |e| Error::io("<stdout>", e);
    if a.dump {
        writeln!(out, "t,beta,alpha,alpha_bar").map_err(io)?;
        for t in 0..=s.steps() {
            writeln!(out, "{t},{},{},{}", s.beta(t), s.alpha(t), s.alpha_bar(t)).map_err(io)?;
        }
    } else {
        writeln!(out, "T={} beta_start={} beta_end={} alpha_bar_T={}", s.steps(), a.beta_start, a.beta_end, s.alpha_bar(s.steps()))
            .map_err(io)?;
    }
    Ok(())
}

/// Runs one parsed command, writing CSV output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Enhance(a) => cmd_enhance(a),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Schedule(a) => cmd_schedule(a, out),
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Entry point of the binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
