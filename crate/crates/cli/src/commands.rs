use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

use longvit_core::attention::{flops_estimate, DilationSchedule};
use longvit_core::bench::{self, BenchConfig, SchedulePolicy, Table};
use longvit_core::encoder::{
    encode as encode_sequence, load_weights, EncoderConfig, EncoderWeights, Mode,
};
use longvit_core::image::{encode_image, plan, PipelineConfig, TiledImage};
use longvit_core::tasks::synthetic::MarkerTask;
use longvit_core::tasks::{
    finetune as run_finetune, parse_manifest, Dataset, FinetuneConfig, TaskKind,
};
use longvit_core::tensor::save_checkpoint;
use longvit_core::verify::Suite;

use crate::settings::Settings;
use crate::{BenchArgs, EncodeArgs, FinetuneArgs, ModelArgs, Outcome, SynthArgs, VerifyArgs};

fn parse_schedule(spec: &str, resolution: usize, patch_size: usize) -> Result<DilationSchedule> {
    let n = (resolution / patch_size).pow(2);
    Ok(match spec {
        "auto" => DilationSchedule::auto(resolution, patch_size),
        "extended" => DilationSchedule::extended(n),
        list => list.parse()?,
    })
}

/// Preset with patch-size override, plus the seed for random weights.
fn model_config(m: &ModelArgs, s: &Settings) -> Result<(EncoderConfig, u64)> {
    let preset: String = s.pick(m.preset.clone(), "preset", "paper".into())?;
    let mut cfg = EncoderConfig::preset(&preset)?;
    cfg.patch_size = s.pick(m.patch_size, "patch-size", cfg.patch_size)?;
    if cfg.patch_size == 0 {
        bail!("--patch-size must be positive");
    }
    Ok((cfg, s.pick(m.seed, "seed", 0)?))
}

fn model_weights(
    m: &ModelArgs,
    s: &Settings,
    cfg: &EncoderConfig,
    seed: u64,
) -> Result<EncoderWeights> {
    match s.pick_opt(m.weights.clone(), "weights")? {
        Some(path) => Ok(load_weights(&path, cfg)?),
        None => Ok(EncoderWeights::seeded(cfg, seed)?),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn encode(a: &EncodeArgs, s: &Settings) -> Result<Outcome> {
    let (mut cfg, seed) = model_config(&a.model, s)?;
    let img = TiledImage::open(&a.image)?;
    let resolution = match s.pick_opt(a.model.resolution, "resolution")? {
        Some(r) => r,
        None if img.width() == img.height() => img.width(),
        None => bail!(
            "{}x{} image is not square; pass --resolution",
            img.width(),
            img.height()
        ),
    };
    let pipeline = PipelineConfig::new(resolution, cfg.patch_size)?;
    let p = plan(&img, &pipeline)?;
    let n = p.tokens();
    let spec: String = s.pick(a.model.schedule.clone(), "schedule", "auto".into())?;
    let schedule = parse_schedule(&spec, resolution, cfg.patch_size)?;
    cfg.schedule = schedule.clone();

    println!(
        "image: {}x{} ({})",
        p.source.0,
        p.source.1,
        a.image.display()
    );
    println!(
        "input: {resolution}x{resolution}{}",
        if p.needs_resize { " (resized)" } else { "" }
    );
    println!(
        "grid: {}x{} patches of {}px",
        p.grid.rows, p.grid.cols, cfg.patch_size
    );
    println!("tokens: {n}");
    println!("schedule: {schedule}");
    println!(
        "attention flops per layer: {:.4e}",
        flops_estimate(n, &schedule, cfg.hidden, cfg.heads)
    );
    if let Some(w) = s.pick_opt(a.workers, "workers")? {
        let comm = bench::message_volume(n, w, &schedule, cfg.hidden, cfg.heads)?;
        println!(
            "workers: {w}, per layer {} messages, {} elements (dense all-gather {})",
            comm.messages, comm.total_elements, comm.dense_baseline
        );
    }
    if a.dry_run {
        return Ok(Outcome::Done);
    }

    let weights = model_weights(&a.model, s, &cfg, seed)?;
    let seq = encode_image(&a.image, &pipeline, &weights.embedder, &weights.pos)?;
    let (_, pooled) = encode_sequence(&seq, &cfg, &weights, &schedule, &mut Mode::Eval)?;
    let out = match s.pick_opt(a.out.clone(), "out")? {
        Some(p) => p,
        None => {
            let mut name = a.image.file_name().unwrap_or_default().to_os_string();
            name.push(".pooled.lvt");
            a.image.with_file_name(name)
        }
    };
    save_checkpoint(&out, &BTreeMap::from([("pooled".to_string(), pooled)]))?;
    println!("pooled: {} values -> {}", cfg.hidden, out.display());
    Ok(Outcome::Done)
}

pub fn finetune(a: &FinetuneArgs, s: &Settings) -> Result<Outcome> {
    let task: String = s.pick(a.task.clone(), "task", "subtype".into())?;
    let kind = TaskKind::from_str(&task)?;
    let (mut cfg, seed) = model_config(&a.model, s)?;
    cfg.drop_path = s.pick(a.drop_path, "drop-path", cfg.drop_path)?;
    let native = cfg.native_grid.0.max(cfg.native_grid.1) * cfg.patch_size;
    let resolution = s.pick(a.model.resolution, "resolution", native)?;
    let pipeline = PipelineConfig::new(resolution, cfg.patch_size)?;
    let spec: String = s.pick(a.model.schedule.clone(), "schedule", "auto".into())?;
    let schedule = parse_schedule(&spec, resolution, cfg.patch_size)?;
    cfg.schedule = schedule.clone();

    let mut ft = FinetuneConfig::new(schedule);
    ft.epochs = s.pick(a.epochs, "epochs", ft.epochs)?;
    ft.batch_size = s.pick(a.batch_size, "batch-size", ft.batch_size)?;
    ft.accum = s.pick(a.accum, "accum", ft.accum)?;
    ft.lr = s.pick(a.lr, "lr", ft.lr)?;
    ft.weight_decay = s.pick(a.weight_decay, "weight-decay", ft.weight_decay)?;
    ft.warmup_epochs = s.pick(a.warmup_epochs, "warmup-epochs", ft.warmup_epochs)?;
    ft.folds = s.pick_opt(a.folds, "folds")?;
    ft.seed = seed;

    let records = parse_manifest(&a.manifest, kind)?;
    log::info!(
        "{} records, input {resolution}px, schedule {}",
        records.len(),
        ft.schedule
    );
    let data = Dataset::load(&records, kind, &pipeline)?;
    let init = model_weights(&a.model, s, &cfg, seed)?;
    let report = run_finetune(&data, &cfg, &init, &ft)?;
    println!("{report}");
    if let Some(out) = s.pick_opt::<PathBuf>(a.out.clone(), "out")? {
        write_text(&out, &format!("{report}\n"))?;
    }
    Ok(Outcome::Done)
}

pub fn verify(a: &VerifyArgs, s: &Settings) -> Result<Outcome> {
    let seed = s.pick(a.seed, "seed", 0)?;
    let suites: Vec<Suite> = if a.suites.is_empty() {
        Suite::ALL.to_vec()
    } else {
        a.suites
            .iter()
            .map(|n| n.parse())
            .collect::<Result<_, _>>()?
    };
    let mut ok = true;
    for suite in suites {
        let report = suite.run(seed)?;
        println!("{report}");
        ok &= report.passed();
    }
    Ok(if ok {
        Outcome::Done
    } else {
        Outcome::VerifyFailed
    })
}

fn parse_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.replace('_', "")
                .parse()
                .map_err(|_| anyhow!("bad token count {t:?}"))
        })
        .collect()
}

pub fn bench(a: &BenchArgs, s: &Settings) -> Result<Outcome> {
    let defaults = BenchConfig::default();
    let tokens = match s.pick_opt(a.tokens.clone(), "tokens")? {
        Some(t) => parse_list(&t)?,
        None => defaults.tokens.clone(),
    };
    let policy: String = s.pick(a.schedule.clone(), "schedule", "extended".into())?;
    let cfg = BenchConfig {
        tokens,
        hidden: s.pick(a.hidden, "hidden", defaults.hidden)?,
        heads: s.pick(a.heads, "heads", defaults.heads)?,
        workers: s.pick(a.workers, "workers", defaults.workers)?,
        repeats: s.pick(a.repeats, "repeats", defaults.repeats)?,
        dense: !a.no_dense,
        policy: SchedulePolicy::from_str(&policy)?,
        seed: s.pick(a.seed, "seed", defaults.seed)?,
    };
    let points = bench::run(&cfg)?;
    let mut text = String::new();
    if a.kv {
        for (i, p) in points.iter().enumerate() {
            let _ = writeln!(text, "point.{i}.tokens={}", p.tokens);
            let _ = writeln!(text, "point.{i}.schedule={}", p.schedule);
            let _ = writeln!(text, "point.{i}.flops={}", p.flops);
            let _ = writeln!(text, "point.{i}.dense_flops={}", p.dense_flops);
            let _ = writeln!(text, "point.{i}.seconds={}", p.seconds);
            if let Some(d) = p.dense_seconds {
                let _ = writeln!(text, "point.{i}.dense_seconds={d}");
            }
            for line in p.comm.key_values().lines() {
                let _ = writeln!(text, "point.{i}.comm.{line}");
            }
        }
    } else {
        let _ = write!(text, "{}", Table(&points));
        if let Some(last) = points.last() {
            let _ = writeln!(
                text,
                "\ncommunication at N={}, W={}:\n{}",
                last.tokens, cfg.workers, last.comm
            );
        }
    }
    print!("{text}");
    if let Some(out) = s.pick_opt::<PathBuf>(a.out.clone(), "out")? {
        write_text(&out, &text)?;
    }
    Ok(Outcome::Done)
}

pub fn synth(a: &SynthArgs, s: &Settings) -> Result<Outcome> {
    let d = MarkerTask::default();
    let task = MarkerTask {
        resolution: s.pick(a.resolution, "resolution", d.resolution)?,
        patch_size: s.pick(a.patch_size, "patch-size", d.patch_size)?,
        marker: s.pick(a.marker, "marker", d.marker)?,
        noise: s.pick(a.noise, "noise", d.noise)?,
        jitter: s.pick(a.jitter, "jitter", d.jitter)?,
    };
    let count = s.pick(a.count, "count", 100)?;
    let manifest = task.write(&a.dir, count, s.pick(a.seed, "seed", 0)?)?;
    println!("{count} images -> {}", manifest.display());
    Ok(Outcome::Done)
}
