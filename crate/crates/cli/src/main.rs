mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use longvit_core::par;

/// Keys a `--config` file may set; each mirrors a long flag.
const CONFIG_KEYS: &[&str] = &[
    "accum",
    "batch-size",
    "count",
    "drop-path",
    "epochs",
    "folds",
    "heads",
    "hidden",
    "jitter",
    "lr",
    "marker",
    "noise",
    "out",
    "patch-size",
    "preset",
    "repeats",
    "resolution",
    "schedule",
    "seed",
    "task",
    "threads",
    "tokens",
    "warmup-epochs",
    "weight-decay",
    "weights",
    "workers",
];

/// Exit status for a failed verification suite.
const VERIFY_FAILED: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "longvit",
    version,
    about = "Dilated-attention vision encoder for gigapixel images"
)]
struct Cli {
    /// `key=value` file supplying defaults for any long flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for intra-op parallelism; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode one image into its pooled representation.
    Encode(EncodeArgs),
    /// Cross-validated finetuning from a study manifest.
    Finetune(FinetuneArgs),
    /// Run the oracle suites; exits with status 2 on any failure.
    Verify(VerifyArgs),
    /// Scaling table of FLOPs, wall time and message volume.
    Bench(BenchArgs),
    /// Write the synthetic corner-marker dataset and its manifest.
    Synth(SynthArgs),
}

/// Model and input options shared by `encode` and `finetune`.
#[derive(Debug, Args)]
struct ModelArgs {
    /// Model shape: paper (ViT-S, default) or tiny.
    #[arg(long)]
    preset: Option<String>,

    /// LVT1 encoder checkpoint; random initialization from --seed otherwise.
    #[arg(long)]
    weights: Option<PathBuf>,

    /// Side of the square input the encoder sees, in pixels.
    #[arg(long)]
    resolution: Option<usize>,

    #[arg(long)]
    patch_size: Option<usize>,

    /// `auto` (per-resolution table), `extended`, or `w:r,w:r,...`.
    #[arg(long)]
    schedule: Option<String>,

    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    /// PPM/PGM or LVTI image.
    image: PathBuf,

    #[command(flatten)]
    model: ModelArgs,

    /// Report the token count of a W-worker sequence-parallel pass.
    #[arg(long)]
    workers: Option<usize>,

    /// Pooled-vector checkpoint; defaults to `<image>.pooled.lvt`.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Read only the image header and report what encoding would produce.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    /// CSV manifest: id,path,label[,fold] or id,path,time,event[,fold].
    manifest: PathBuf,

    /// subtype or survival.
    #[arg(long)]
    task: Option<String>,

    #[command(flatten)]
    model: ModelArgs,

    /// Defaults to 10 for subtyping and 5 for survival.
    #[arg(long)]
    folds: Option<usize>,

    #[arg(long)]
    epochs: Option<usize>,

    #[arg(long)]
    batch_size: Option<usize>,

    /// Micro-batches averaged into one optimizer step.
    #[arg(long)]
    accum: Option<usize>,

    /// Peak learning rate.
    #[arg(long)]
    lr: Option<f64>,

    #[arg(long)]
    weight_decay: Option<f64>,

    #[arg(long)]
    warmup_epochs: Option<usize>,

    /// Stochastic-depth rate of the deepest block.
    #[arg(long)]
    drop_path: Option<f64>,

    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// attention, distributed, gradients, metrics; all when omitted.
    suites: Vec<String>,

    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Comma-separated sequence lengths.
    #[arg(long)]
    tokens: Option<String>,

    /// `extended`, `table`, or a fixed `w:r,...` list.
    #[arg(long)]
    schedule: Option<String>,

    #[arg(long)]
    workers: Option<usize>,

    #[arg(long)]
    hidden: Option<usize>,

    #[arg(long)]
    heads: Option<usize>,

    /// Timed runs per point; the fastest counts.
    #[arg(long)]
    repeats: Option<usize>,

    /// Skip the dense reference.
    #[arg(long)]
    no_dense: bool,

    /// Print key=value lines instead of tables.
    #[arg(long)]
    kv: bool,

    #[arg(long)]
    seed: Option<u64>,

    /// Also write the output to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory for images and manifest.csv.
    dir: PathBuf,

    #[arg(long)]
    count: Option<usize>,

    #[arg(long)]
    resolution: Option<usize>,

    #[arg(long)]
    patch_size: Option<usize>,

    /// Marker side, in patches.
    #[arg(long)]
    marker: Option<usize>,

    /// Background noise amplitude, in grey levels.
    #[arg(long)]
    noise: Option<f32>,

    /// Marker colour jitter, in grey levels.
    #[arg(long)]
    jitter: Option<f32>,

    #[arg(long)]
    seed: Option<u64>,
}

/// Command outcome: success, or a verification failure with its own status.
pub enum Outcome {
    Done,
    VerifyFailed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::VerifyFailed) => ExitCode::from(VERIFY_FAILED),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}

/// The error chain joined by `: `, skipping causes the previous message
/// already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut text = e.to_string();
    let mut last = text.clone();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !last.contains(&c) {
            text.push_str(": ");
            text.push_str(&c);
        }
        last = c;
    }
    text
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let settings = match &cli.config {
        Some(p) => settings::Settings::load(p)?,
        None => settings::Settings::default(),
    };
    for key in settings.unknown_keys(CONFIG_KEYS) {
        log::warn!("ignoring unknown config key {key:?}");
    }
    let threads: usize = settings.pick(cli.threads, "threads", 1)?;
    if threads == 0 {
        anyhow::bail!("--threads must be positive");
    }
    par::with_threads(threads, || match cli.command {
        Command::Encode(a) => commands::encode(&a, &settings),
        Command::Finetune(a) => commands::finetune(&a, &settings),
        Command::Verify(a) => commands::verify(&a, &settings),
        Command::Bench(a) => commands::bench(&a, &settings),
        Command::Synth(a) => commands::synth(&a, &settings),
    })
}
