use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_graph, check_model};
use super::oracles::{auc_by_pairs, c_index_by_pairs, random_schedule};
use super::{Check, Suite, SuiteReport};
use crate::attention::{
    dense_mha, mixing_weights, multihead_dilated_attention, oracle_masked_dense, AttentionWeights,
    DilationSchedule,
};
use crate::encoder::{EncoderConfig, EncoderWeights};
use crate::error::Result;
use crate::image::pos_stencil;
use crate::init::normal;
use crate::par;
use crate::seqpar::{distributed_forward, gather_plan, partition, split_by_owner, MessageLog};
use crate::tasks::{auc_binary, auc_macro, c_index, Sample, Target, TaskModel};
use crate::tensor::{Graph, Tensor, Var};

fn attention_case(rng: &mut ChaCha8Rng, n: usize) -> Result<(Tensor, AttentionWeights)> {
    let heads = [1, 2, 4][rng.gen_range(0..3)];
    let d = heads * [2, 4, 8][rng.gen_range(0..3)];
    let x = normal(&[n, d], 1.0, rng);
    let w = AttentionWeights::random_with_bias(d, heads, 0.5, rng)?;
    Ok((x, w))
}

pub fn attention_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let mut worst: f64 = 0.0;
    let cases = 50;
    for _ in 0..cases {
        let n = [16, 50, 64, 128, 256][rng.gen_range(0..5)];
        let (x, w) = attention_case(&mut rng, n)?;
        let s = random_schedule(n, &mut rng);
        let fast = multihead_dilated_attention(&x, &w, &s)?;
        worst = worst.max(fast.max_abs_diff(&oracle_masked_dense(&x, &w, &s)?));
    }
    checks.push(Check::new(
        "sparse path vs masked-dense oracle",
        cases,
        worst,
        1e-8,
    ));

    let mut worst: f64 = 0.0;
    for n in [1, 7, 64, 256] {
        let (x, w) = attention_case(&mut rng, n)?;
        let fast = multihead_dilated_attention(&x, &w, &DilationSchedule::dense(n))?;
        worst = worst.max(fast.max_abs_diff(&dense_mha(&x, &w)?));
    }
    checks.push(Check::new(
        "single full-span pair vs plain multi-head attention",
        4,
        worst,
        1e-10,
    ));

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let partials: Vec<(f64, f64)> = (0..rng.gen_range(1..6))
            .map(|i| {
                let d = if i > 0 && rng.gen_bool(0.3) {
                    0.0
                } else {
                    rng.gen_range(0.5..20.0)
                };
                (rng.gen_range(-30.0..30.0), d)
            })
            .collect();
        let a = mixing_weights(&partials);
        let negative = a.iter().fold(0.0f64, |m, v| m.max(-v));
        worst = worst.max((a.iter().sum::<f64>() - 1.0).abs()).max(negative);
    }
    checks.push(Check::new(
        "mixing weights nonnegative and summing to one",
        100,
        worst,
        1e-12,
    ));

    let (x, w) = attention_case(&mut rng, 256)?;
    let s = DilationSchedule::extended(256);
    let one = par::with_threads(1, || multihead_dilated_attention(&x, &w, &s))?;
    let many = par::with_threads(4, || multihead_dilated_attention(&x, &w, &s))?;
    checks.push(Check::new(
        "one thread vs four threads",
        1,
        one.max_abs_diff(&many),
        0.0,
    ));

    Ok(SuiteReport {
        suite: Suite::Attention,
        checks,
    })
}

/// Transfer volume from the segment layout alone: every participant of a
/// straddling segment receives the selected rows it does not hold.
fn closed_form_volume(
    n: usize,
    workers: usize,
    schedule: &DilationSchedule,
    heads: usize,
    dh: usize,
) -> Result<usize> {
    let part = partition(n, workers)?;
    let mut total = 0;
    for pair in schedule.pairs() {
        for h in 0..heads {
            for seg in (0..n).step_by(pair.segment) {
                let idx = crate::attention::select_indices(
                    seg,
                    pair.segment,
                    pair.ratio,
                    h % pair.ratio,
                    n,
                );
                let holders = split_by_owner(&part, &idx).len();
                total += holders.saturating_sub(1) * idx.len() * dh * 2;
            }
        }
    }
    Ok(total)
}

pub fn distributed_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, heads) = (32, 4);
    let mut checks = Vec::new();
    for n in [64, 256, 1024] {
        let x = normal(&[n, d], 1.0, &mut rng);
        let w = AttentionWeights::random_with_bias(d, heads, 0.3, &mut rng)?;
        let s = DilationSchedule::extended(n);
        let single = multihead_dilated_attention(&x, &w, &s)?;
        let mut worst: f64 = 0.0;
        let mut log_mismatch = 0.0;
        let mut volume_gap = 0.0;
        for workers in [1, 2, 4, 8] {
            let (out, log) = distributed_forward(&x, &w, &s, workers)?;
            let (_, again) = distributed_forward(&x, &w, &s, workers)?;
            worst = worst.max(out.max_abs_diff(&single));
            if log != again
                || log
                    != MessageLog::from_plan(
                        &gather_plan(&partition(n, workers)?, &s, heads),
                        d / heads,
                    )
            {
                log_mismatch = 1.0;
            }
            let expect = closed_form_volume(n, workers, &s, heads, d / heads)?;
            volume_gap = f64::max(
                volume_gap,
                (log.total_elements() as f64 - expect as f64).abs(),
            );
        }
        checks.push(Check::new(
            format!("N={n} distributed vs single node, W in 1,2,4,8"),
            4,
            worst,
            1e-12,
        ));
        checks.push(Check::new(
            format!("N={n} message log reproducible"),
            4,
            log_mismatch,
            0.0,
        ));
        checks.push(Check::new(
            format!("N={n} traffic vs closed form"),
            4,
            volume_gap,
            0.0,
        ));
    }
    Ok(SuiteReport {
        suite: Suite::Distributed,
        checks,
    })
}

/// Two-layer, width-32 model on a 4×4 grid of 4-pixel patches whose
/// position table is interpolated from 2×2, with non-trivial weights.
pub fn tiny_gradcheck_model(
    seed: u64,
    outputs: usize,
) -> Result<(TaskModel, Sample, DilationSchedule)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = EncoderConfig::tiny();
    cfg.patch_size = 4;
    cfg.native_grid = (2, 2);
    cfg.init_std = 0.3;
    cfg.schedule = DilationSchedule::new(vec![(4, 1), (8, 2), (16, 4)])?;
    let mut enc = EncoderWeights::random(&cfg, &mut rng)?;
    for (_, t) in enc.named_params_mut() {
        for v in t.data_mut() {
            *v += 0.1 * rng.gen_range(-1.0..1.0);
        }
    }
    let mut model = TaskModel::new(cfg.clone(), enc, outputs);
    model.head.weight = normal(model.head.weight.shape(), 0.5, &mut rng);
    model.head.bias = normal(model.head.bias.shape(), 0.5, &mut rng);
    let sample = Sample {
        id: "gradcheck".into(),
        patches: normal(&[16, cfg.patch_len()], 1.0, &mut rng),
        grid: (4, 4),
        label: crate::tasks::Label::Class(0),
    };
    Ok((model, sample, cfg.schedule))
}

type OpCase = (
    &'static str,
    Vec<Tensor>,
    Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>,
);

fn weighted(g: &mut Graph, out: Var, r: &Tensor) -> Result<Var> {
    let rv = g.constant(r.clone());
    let m = g.mul(out, rv)?;
    Ok(g.sum(m))
}

fn op_cases(rng: &mut ChaCha8Rng) -> Result<Vec<OpCase>> {
    let t = |shape: &[usize], rng: &mut ChaCha8Rng| normal(shape, 1.0, rng);
    let r34 = t(&[3, 4], rng);
    let r32 = t(&[3, 2], rng);
    let r9 = t(&[9, 3], rng);
    let r16 = t(&[16, 8], rng);
    let stencil = pos_stencil((2, 2), (3, 3))?.expect("grids differ");
    let sched = DilationSchedule::new(vec![(4, 1), (8, 2), (16, 4)])?;
    let (ra, rb, rc, rd, re) = (
        r34.clone(),
        r34.clone(),
        r34.clone(),
        r34.clone(),
        r34.clone(),
    );
    let (rf, rg_, rh) = (r34.clone(), r34.clone(), r34.clone());
    Ok(vec![
        (
            "matmul",
            vec![t(&[3, 4], rng), t(&[4, 2], rng)],
            Box::new(move |g, v| {
                let o = g.matmul(v[0], v[1])?;
                weighted(g, o, &r32)
            }),
        ),
        (
            "add",
            vec![t(&[3, 4], rng), t(&[3, 4], rng)],
            Box::new(move |g, v| {
                let o = g.add(v[0], v[1])?;
                weighted(g, o, &ra)
            }),
        ),
        (
            "add_row",
            vec![t(&[3, 4], rng), t(&[4], rng)],
            Box::new(move |g, v| {
                let o = g.add_row(v[0], v[1])?;
                weighted(g, o, &rb)
            }),
        ),
        (
            "mul",
            vec![t(&[3, 4], rng), t(&[3, 4], rng)],
            Box::new(move |g, v| {
                let o = g.mul(v[0], v[1])?;
                weighted(g, o, &rc)
            }),
        ),
        (
            "scale",
            vec![t(&[3, 4], rng)],
            Box::new(move |g, v| {
                let o = g.scale(v[0], -1.7);
                weighted(g, o, &rd)
            }),
        ),
        (
            "sum",
            vec![t(&[3, 4], rng)],
            Box::new(|g, v| Ok(g.sum(v[0]))),
        ),
        (
            "mean_rows",
            vec![t(&[3, 4], rng)],
            Box::new(|g, v| {
                let m = g.mean_rows(v[0]);
                let sq = g.mul(m, m)?;
                Ok(g.sum(sq))
            }),
        ),
        (
            "gelu",
            vec![t(&[3, 4], rng)],
            Box::new(move |g, v| {
                let o = g.gelu(v[0]);
                weighted(g, o, &re)
            }),
        ),
        (
            "layer_norm",
            vec![t(&[3, 4], rng), t(&[4], rng), t(&[4], rng)],
            Box::new(move |g, v| {
                let o = g.layer_norm(v[0], v[1], v[2])?;
                weighted(g, o, &rf)
            }),
        ),
        (
            "softmax_rows",
            vec![t(&[3, 4], rng)],
            Box::new(move |g, v| {
                let o = g.softmax_rows(v[0])?;
                weighted(g, o, &rg_)
            }),
        ),
        (
            "row_mix",
            vec![t(&[4, 3], rng)],
            Box::new(move |g, v| {
                let o = g.row_mix(v[0], stencil.clone())?;
                weighted(g, o, &r9)
            }),
        ),
        (
            "dilated_attention",
            vec![t(&[16, 8], rng), t(&[16, 8], rng), t(&[16, 8], rng)],
            Box::new(move |g, v| {
                let o = g.dilated_attention(v[0], v[1], v[2], 2, &sched)?;
                weighted(g, o, &r16)
            }),
        ),
        (
            "cross_entropy",
            vec![t(&[4], rng)],
            Box::new(|g, v| g.cross_entropy(v[0], 2)),
        ),
        (
            "survival_nll event",
            vec![t(&[4], rng)],
            Box::new(|g, v| g.survival_nll(v[0], 2, true)),
        ),
        (
            "survival_nll censored",
            vec![t(&[4], rng)],
            Box::new(|g, v| g.survival_nll(v[0], 1, false)),
        ),
        (
            "composite",
            vec![t(&[3, 4], rng), t(&[4, 4], rng)],
            Box::new(move |g, v| {
                let h = g.matmul(v[0], v[1])?;
                let h = g.gelu(h);
                let h = g.softmax_rows(h)?;
                weighted(g, h, &rh)
            }),
        ),
    ])
}

pub fn gradients_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for (name, inputs, f) in op_cases(&mut rng)? {
        let r = check_graph(name, &inputs, f, 64, &mut rng)?;
        checks.push(Check::new(
            format!("{name} vs central differences"),
            r.checked,
            r.max_rel_error,
            1e-4,
        ));
    }
    let (model, sample, sched) = tiny_gradcheck_model(seed, 3)?;
    let r = check_model(
        "encoder",
        &model,
        &sample,
        Target::Class(1),
        &sched,
        4,
        &mut rng,
    )?;
    checks.push(Check::new(
        "2-layer encoder + head vs central differences",
        r.checked,
        r.max_rel_error,
        1e-4,
    ));
    Ok(SuiteReport {
        suite: Suite::Gradients,
        checks,
    })
}

/// Scores drawn from a small grid so ties are common.
fn tied_scores(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0..12) as f64 / 4.0).collect()
}

/// Absolute difference, infinite when the reference is undefined or either
/// side is NaN.
fn gap(fast: f64, reference: Option<f64>) -> f64 {
    match reference {
        Some(r) if !(fast - r).is_nan() => (fast - r).abs(),
        _ => f64::INFINITY,
    }
}

pub fn metrics_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = 100;
    let (mut auc_gap, mut macro_gap, mut c_gap) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..cases {
        let n = rng.gen_range(2..=100);
        let scores = tied_scores(n, &mut rng);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let fast = auc_binary(&scores, &labels)?;
        auc_gap = auc_gap.max(gap(fast, auc_by_pairs(&scores, &labels)));

        let classes = 3;
        let n = rng.gen_range(3..=100);
        let mut y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        y[..3].copy_from_slice(&[0, 1, 2]);
        let s = tied_scores(n * classes, &mut rng);
        let mut expect = 0.0;
        for c in 0..classes {
            let col: Vec<f64> = (0..n).map(|i| s[i * classes + c]).collect();
            let bin: Vec<bool> = y.iter().map(|&l| l == c).collect();
            expect += auc_by_pairs(&col, &bin).unwrap_or(f64::NAN);
        }
        macro_gap = macro_gap.max(gap(
            auc_macro(&s, classes, &y)?,
            Some(expect / classes as f64),
        ));

        let n = rng.gen_range(2..=100);
        let risks = tied_scores(n, &mut rng);
        let times: Vec<f64> = (0..n).map(|_| rng.gen_range(1..40) as f64).collect();
        let mut events: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
        let (lo, hi) = if times[0] <= times[1] { (0, 1) } else { (1, 0) };
        let mut times = times;
        if times[lo] == times[hi] {
            times[hi] += 1.0;
        }
        events[lo] = true;
        let fast = c_index(&risks, &times, &events)?;
        c_gap = c_gap.max(gap(fast, c_index_by_pairs(&risks, &times, &events)));
    }
    Ok(SuiteReport {
        suite: Suite::Metrics,
        checks: vec![
            Check::new("auc_binary vs pair enumeration", cases, auc_gap, 0.0),
            Check::new(
                "auc_macro vs per-class pair enumeration",
                cases,
                macro_gap,
                0.0,
            ),
            Check::new("c_index vs pair enumeration", cases, c_gap, 0.0),
        ],
    })
}
