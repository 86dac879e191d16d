//! Scaling measurements behind `longvit bench`: FLOP estimates, forward wall
//! time for the dilated and dense paths, and simulated message volume.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    dense_flops, dense_mha, flops_estimate, multihead_dilated_attention, AttentionWeights,
    DilationSchedule, DENSE_ORACLE_MAX_TOKENS,
};
use crate::error::{Error, Result};
use crate::init::normal;
use crate::seqpar::{comm_report, gather_plan, partition, CommReport, MessageLog};
use crate::tensor::Tensor;

/// How the schedule for each sequence length is chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum SchedulePolicy {
    /// [`DilationSchedule::extended`]: fixed lower pairs, top pair spans `N`.
    Extended,
    /// The per-resolution table when `N` is a listed square grid of 32-pixel
    /// patches, otherwise `Extended`.
    Table,
    Fixed(DilationSchedule),
}

impl SchedulePolicy {
    pub fn schedule(&self, n: usize) -> DilationSchedule {
        match self {
            SchedulePolicy::Extended => DilationSchedule::extended(n),
            SchedulePolicy::Table => {
                let side = (n as f64).sqrt().round() as usize;
                if side * side == n {
                    DilationSchedule::for_resolution(side * 32)
                        .unwrap_or_else(|| DilationSchedule::extended(n))
                } else {
                    DilationSchedule::extended(n)
                }
            }
            SchedulePolicy::Fixed(s) => s.clone(),
        }
    }
}

impl FromStr for SchedulePolicy {
    type Err = Error;

    /// `extended`, `table`, or an explicit `w:r,...` list.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "extended" => Ok(SchedulePolicy::Extended),
            "table" => Ok(SchedulePolicy::Table),
            other => Ok(SchedulePolicy::Fixed(other.parse()?)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub tokens: Vec<usize>,
    pub hidden: usize,
    pub heads: usize,
    pub workers: usize,
    /// Timing rounds; each point reports its fastest run.
    pub repeats: usize,
    pub dense: bool,
    pub policy: SchedulePolicy,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            tokens: (10..=16).map(|p| 1usize << p).collect(),
            hidden: 64,
            heads: 4,
            workers: 1,
            repeats: 3,
            dense: true,
            policy: SchedulePolicy::Extended,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingPoint {
    pub tokens: usize,
    pub schedule: DilationSchedule,
    pub flops: f64,
    pub dense_flops: f64,
    pub seconds: f64,
    /// `None` above [`DENSE_ORACLE_MAX_TOKENS`] or when the dense run is disabled.
    pub dense_seconds: Option<f64>,
    pub comm: CommReport,
}

/// Growth factors between consecutive points of a series.
pub fn growth(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] / w[0]).collect()
}

fn seconds<F: FnOnce() -> Result<()>>(f: F) -> Result<f64> {
    let t = Instant::now();
    f()?;
    Ok(t.elapsed().as_secs_f64())
}

/// Message volume of the simulated distributed forward, from the gather plan
/// alone (the log is a pure function of the plan).
pub fn message_volume(
    n: usize,
    workers: usize,
    schedule: &DilationSchedule,
    hidden: usize,
    heads: usize,
) -> Result<CommReport> {
    let part = partition(n, workers)?;
    let log = MessageLog::from_plan(&gather_plan(&part, schedule, heads), hidden / heads);
    Ok(comm_report(&log, &part, schedule, hidden))
}

/// Times every point once per round, rounds interleaving all sizes, and keeps
/// each point's fastest run.
pub fn run(cfg: &BenchConfig) -> Result<Vec<ScalingPoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w = AttentionWeights::random_with_bias(cfg.hidden, cfg.heads, 0.1, &mut rng)?;
    if cfg.tokens.contains(&0) {
        return Err(Error::config("sequence length must be positive"));
    }
    let inputs: Vec<(Tensor, DilationSchedule)> = cfg
        .tokens
        .iter()
        .map(|&n| {
            (
                normal(&[n, cfg.hidden], 1.0, &mut rng),
                cfg.policy.schedule(n),
            )
        })
        .collect();
    let mut best = vec![(f64::INFINITY, None::<f64>); inputs.len()];
    for _ in 0..cfg.repeats.max(1) {
        for ((x, schedule), (fast, dense)) in inputs.iter().zip(best.iter_mut()) {
            *fast = fast.min(seconds(|| {
                multihead_dilated_attention(x, &w, schedule).map(drop)
            })?);
            if cfg.dense && x.rows() <= DENSE_ORACLE_MAX_TOKENS {
                let t = seconds(|| dense_mha(x, &w).map(drop))?;
                *dense = Some(dense.map_or(t, |d| d.min(t)));
            }
        }
    }
    let mut points = Vec::with_capacity(inputs.len());
    for ((x, schedule), (seconds, dense_seconds)) in inputs.into_iter().zip(best) {
        let n = x.rows();
        log::info!("N={n} dilated {seconds:.4}s dense {dense_seconds:?}");
        points.push(ScalingPoint {
            tokens: n,
            flops: flops_estimate(n, &schedule, cfg.hidden, cfg.heads),
            dense_flops: dense_flops(n, cfg.hidden),
            seconds,
            dense_seconds,
            comm: message_volume(n, cfg.workers, &schedule, cfg.hidden, cfg.heads)?,
            schedule,
        });
    }
    Ok(points)
}

/// Plain-text table of a scaling series.
pub struct Table<'a>(pub &'a [ScalingPoint]);

impl fmt::Display for Table<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>9} {:>12} {:>12} {:>10} {:>10} {:>7} {:>7} {:>12} {:>12}  schedule",
            "N",
            "flops",
            "dense flops",
            "time s",
            "dense s",
            "x time",
            "x dense",
            "messages",
            "elements"
        )?;
        let mut prev: Option<&ScalingPoint> = None;
        for p in self.0 {
            let ratio = |a: Option<f64>, b: Option<f64>| match (a, b) {
                (Some(a), Some(b)) => format!("{:.2}", a / b),
                _ => "-".into(),
            };
            let x_time = ratio(Some(p.seconds), prev.map(|q| q.seconds));
            let x_dense = ratio(p.dense_seconds, prev.and_then(|q| q.dense_seconds));
            writeln!(
                f,
                "{:>9} {:>12.4e} {:>12.4e} {:>10.4} {:>10} {:>7} {:>7} {:>12} {:>12}  {}",
                p.tokens,
                p.flops,
                p.dense_flops,
                p.seconds,
                p.dense_seconds.map_or("-".into(), |s| format!("{s:.4}")),
                x_time,
                x_dense,
                p.comm.messages,
                p.comm.total_elements,
                p.schedule
            )?;
            prev = Some(p);
        }
        Ok(())
    }
}
