use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use patchprint::degrade::{Degradation, DegradationConfig};
use patchprint::harness::{
    self, evaluate, load_detector, probe_front, load_manifest, make_synthetic_corpus, save_detector, EpochLog, EsspTrainConfig,
    HarnessError, Sample, Split, SspTrainConfig, SynthConfig,
};
use patchprint::image::{load_image, save_png};
use patchprint::models::{prepare_image, PipelineConfig, ScoreMode};
use patchprint::patch::{crop_patches, select_patch, upsample_patch, SelectMode};
use patchprint::srm::{extract_fingerprint, NoiseFingerprint};

const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(name = "patchprint", version, about = "Simplest-patch noise-fingerprint detector for AI-generated images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic real/fake corpus and its manifest.
    Synth(SynthArgs),
    /// Train the classifier on the manifest's training split.
    TrainSsp(TrainSspArgs),
    /// Train the enhancement front end on top of a classifier checkpoint.
    TrainEssp(TrainEsspArgs),
    /// Print the probability that an image is real.
    Score(ScoreArgs),
    /// Score a manifest split and write a metrics report.
    Eval(EvalArgs),
    /// Degrade held-out patches and report perception and restoration quality.
    Probe(ProbeArgs),
    /// Write the selected patch and its residual planes as PNGs.
    Inspect(InspectArgs),
    /// Blur or compress one image.
    Degrade(DegradeArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Images per class.
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sensor noise of real images, in 8-bit levels.
    #[arg(long, default_value_t = 2.0)]
    noise_levels: f64,
    #[arg(long, default_value_t = 256)]
    size: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectArg {
    Simplest,
    Complex,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ssp,
    Essp,
}

impl From<ModeArg> for ScoreMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ssp => ScoreMode::Ssp,
            ModeArg::Essp => ScoreMode::Essp,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args)]
struct TrainSspArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    aug_prob: f64,
    #[arg(long, default_value_t = 32)]
    patch: usize,
    #[arg(long, default_value_t = 64)]
    crops: usize,
    #[arg(long, default_value_t = 256)]
    image_size: usize,
    #[arg(long, value_enum, default_value_t = SelectArg::Simplest)]
    select: SelectArg,
    #[arg(long, default_value_t = 1)]
    topk: usize,
    /// Feed the raw upsampled patch instead of its residuals.
    #[arg(long)]
    no_srm: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Append epoch logs here instead of stdout.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct TrainEsspArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    ssp: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    aug_prob: f64,
    /// Condition on the reconstruction embedding only.
    #[arg(long)]
    no_perception: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Ssp)]
    mode: ModeArg,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Ssp)]
    mode: ModeArg,
    /// Blur every image with this standard deviation first.
    #[arg(long, conflicts_with = "jpeg")]
    blur: Option<f32>,
    /// Compress every image at this quality first.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=100))]
    jpeg: Option<u8>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    aug_prob: f64,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    patch: usize,
    #[arg(long, default_value_t = 64)]
    crops: usize,
    #[arg(long, default_value_t = 256)]
    image_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DegradeArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long, required_unless_present = "qf", conflicts_with = "qf")]
    sigma: Option<f32>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=100))]
    qf: Option<u8>,
    #[arg(long)]
    out: PathBuf,
}

fn io_err(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Io { path: path.to_path_buf(), source: e }
}

fn split_filter(split: SplitArg) -> Option<Split> {
    match split {
        SplitArg::Train => Some(Split::Train),
        SplitArg::Test => Some(Split::Test),
        SplitArg::All => None,
    }
}

/// Prints one line; a closed stdout is not an error.
fn emit(line: &str) {
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn check_sigma(sigma: f32) -> Result<(), HarnessError> {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("blur sigma must be finite and >= 0, got {sigma}")))
    }
}

/// Writes a pretty JSON report and echoes it.
fn report<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, format!("{json}\n")).map_err(|e| io_err(path, e))?;
    emit(&json);
    Ok(())
}

fn split_samples(manifest: &Path, split: Option<Split>) -> Result<Vec<Sample>, HarnessError> {
    let all = load_manifest(manifest)?;
    Ok(all.into_iter().filter(|s| split.is_none_or(|sp| s.split == sp)).collect())
}

/// Epoch logs as JSON lines, to a file or stdout.
fn logger(path: Option<&Path>) -> Result<impl FnMut(&EpochLog), HarnessError> {
    let mut sink: Box<dyn Write> = match path {
        Some(p) => Box::new(fs::File::create(p).map_err(|e| io_err(p, e))?),
        None => Box::new(std::io::stdout()),
    };
    Ok(move |e: &EpochLog| {
        let line = serde_json::to_string(e).expect("log serializes");
        let _ = writeln!(sink, "{line}");
        let _ = sink.flush();
    })
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Synth(a) => {
            let cfg = SynthConfig { n_per_class: a.n, seed: a.seed, size: a.size, noise_sigma: a.noise_levels / 255.0, ..SynthConfig::default() };
            let samples = make_synthetic_corpus(&a.out, &cfg)?;
            emit(&a.out.join(harness::MANIFEST_NAME).display().to_string());
            eprintln!("wrote {} images", samples.len());
        }
        Command::TrainSsp(a) => {
            let pipeline = PipelineConfig {
                image_size: a.image_size,
                patch_size: a.patch,
                crops: a.crops,
                select: match a.select {
                    SelectArg::Simplest => SelectMode::Simplest,
                    SelectArg::Complex => SelectMode::MostComplex,
                },
                top_k: a.topk,
                use_srm: !a.no_srm,
                crop_seed: a.seed,
            };
            let cfg = SspTrainConfig {
                pipeline,
                epochs: a.epochs,
                batch: a.batch,
                lr: a.lr,
                augment: DegradationConfig { probability: a.aug_prob, seed: a.seed, ..DegradationConfig::default() },
                seed: a.seed,
            };
            let train = split_samples(&a.manifest, Some(Split::Train))?;
            let (det, meta) = harness::train_ssp(&train, &cfg, logger(a.log.as_deref())?)?;
            save_detector(&det, &meta, &a.out)?;
        }
        Command::TrainEssp(a) => {
            let (ssp, _) = load_detector(&a.ssp)?;
            let cfg = EsspTrainConfig {
                epochs: a.epochs,
                batch: a.batch,
                lr: a.lr,
                augment: DegradationConfig { probability: a.aug_prob, seed: a.seed, ..DegradationConfig::default() },
                use_perception: !a.no_perception,
                seed: a.seed,
            };
            let train = split_samples(&a.manifest, Some(Split::Train))?;
            let (det, meta) = harness::train_essp(&train, &ssp, &cfg, logger(a.log.as_deref())?)?;
            save_detector(&det, &meta, &a.out)?;
        }
        Command::Score(a) => {
            let (det, _) = load_detector(&a.ckpt)?;
            let img = load_image(&a.image)?;
            emit(&det.score(&img, a.mode.into())?.to_string());
        }
        Command::Eval(a) => {
            let (det, _) = load_detector(&a.ckpt)?;
            let samples = split_samples(&a.manifest, split_filter(a.split))?;
            let degradation = match (a.blur, a.jpeg) {
                (Some(sigma), _) => {
                    check_sigma(sigma)?;
                    Some(Degradation::Blur { sigma })
                }
                (_, Some(quality)) => Some(Degradation::Jpeg { quality }),
                _ => None,
            };
            let out = evaluate(&det, &samples, a.mode.into(), degradation)?;
            report(&a.report, &out.metrics)?;
        }
        Command::Probe(a) => {
            let (det, _) = load_detector(&a.ckpt)?;
            let samples = split_samples(&a.manifest, split_filter(a.split))?;
            let aug = DegradationConfig { probability: a.aug_prob, seed: a.seed, ..DegradationConfig::default() };
            report(&a.report, &probe_front(&det, &samples, &aug, a.seed)?)?;
        }
        Command::Inspect(a) => {
            let cfg = PipelineConfig { image_size: a.image_size, patch_size: a.patch, crops: a.crops, ..PipelineConfig::default() };
            cfg.validate()?;
            let img = prepare_image(&load_image(&a.image)?, cfg.image_size)?;
            let patch = select_patch(&crop_patches(&img, cfg.patch_size, cfg.crops, a.seed)?, SelectMode::Simplest)?;
            fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
            save_png(patch.pixels(), a.out.join("patch.png"))?;
            let fp = extract_fingerprint(&upsample_patch(&patch, cfg.image_size, cfg.image_size)?);
            for k in 0..NoiseFingerprint::CHANNELS {
                save_png(&fp.plane_as_image(k)?, a.out.join(format!("residual_{k}.png")))?;
            }
            emit(&format!("patch origin row {} col {}", patch.origin_row, patch.origin_col));
        }
        Command::Degrade(a) => {
            let img = load_image(&a.image)?;
            let d = match (a.sigma, a.qf) {
                (Some(sigma), _) => {
                    check_sigma(sigma)?;
                    Degradation::Blur { sigma }
                }
                (_, Some(quality)) => Degradation::Jpeg { quality },
                _ => unreachable!("clap requires one of --sigma/--qf"),
            };
            save_png(&d.apply(&img), &a.out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
