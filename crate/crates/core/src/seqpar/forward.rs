use super::{gather_plan, partition, split_by_owner, MessageLog, MessageRecord, Transfer};
use crate::attention::{
    attend_row, select_indices, Accumulator, AttentionWeights, DilationSchedule,
};
use crate::error::{Error, Result};
use crate::tensor::{matmul, Tensor};

fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = matmul(x, w)?;
    let d = out.cols();
    for row in out.data_mut().chunks_mut(d) {
        for (o, bv) in row.iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    Ok(out)
}

/// Worker-resident projections of its own token rows.
struct Shard {
    start: usize,
    q: Tensor,
    k: Tensor,
    v: Tensor,
}

impl Shard {
    fn row<'s>(&self, m: &'s Tensor, t: usize, head: usize, dh: usize) -> &'s [f64] {
        &m.row(t - self.start)[head * dh..(head + 1) * dh]
    }
}

/// Multi-head dilated attention computed by `workers` simulated workers.
/// Returns the same `N × d` output as the single-node path, bit for bit,
/// together with the log of every K/V transfer.
pub fn distributed_forward(
    x: &Tensor,
    w: &AttentionWeights,
    schedule: &DilationSchedule,
    workers: usize,
) -> Result<(Tensor, MessageLog)> {
    let d = w.hidden();
    if x.rank() != 2 || x.cols() != d {
        return Err(Error::dim(format!(
            "input {:?} does not match hidden size {d}",
            x.shape()
        )));
    }
    let (n, heads, dh) = (x.rows(), w.heads, w.head_dim());
    let part = partition(n, workers)?;
    let plan = gather_plan(&part, schedule, heads);

    let shards = part
        .ranges
        .iter()
        .map(|r| {
            let local = Tensor::new(vec![r.len(), d], x.data()[r.start * d..r.end * d].to_vec())?;
            Ok(Shard {
                start: r.start,
                q: affine(&local, &w.wq, &w.bq)?,
                k: affine(&local, &w.wk, &w.bk)?,
                v: affine(&local, &w.wv, &w.bv)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut accs: Vec<Vec<Accumulator>> = part
        .ranges
        .iter()
        .map(|r| (0..heads).map(|_| Accumulator::new(r.len(), dh)).collect())
        .collect();
    let mut log = MessageLog::default();
    let scale = 1.0 / (dh as f64).sqrt();
    let (mut ks, mut vs, mut scores) = (Vec::new(), Vec::new(), Vec::new());
    let mut num = vec![0.0; dh];

    for (pi, pair) in schedule.pairs().iter().enumerate() {
        for (me, range) in part.ranges.iter().enumerate() {
            let mut inbox = plan.for_receiver(pi, me).iter();
            let shard = &shards[me];
            let first_seg = range.start / pair.segment * pair.segment;
            for (head, acc) in accs[me].iter_mut().enumerate() {
                let offset = head % pair.ratio;
                for seg_start in (first_seg..range.end).step_by(pair.segment) {
                    let idx = select_indices(seg_start, pair.segment, pair.ratio, offset, n);
                    let runs = split_by_owner(&part, &idx);
                    let Some(mine) = runs.iter().find(|(o, _)| *o == me).map(|(_, r)| r.clone())
                    else {
                        continue;
                    };
                    ks.clear();
                    vs.clear();
                    for (owner, run) in &runs {
                        let rows = &idx[run.clone()];
                        if *owner != me {
                            let t = inbox
                                .next()
                                .ok_or_else(|| missing(pi, me, head, seg_start, *owner))?;
                            check_transfer(t, head, seg_start, *owner, rows)?;
                            log.records.push(MessageRecord {
                                step: pi * part.workers() + me,
                                from: *owner,
                                to: me,
                                pair_index: pi,
                                head,
                                segment_start: seg_start,
                                payload_elements: rows.len() * dh * 2,
                            });
                        }
                        let src = &shards[*owner];
                        for &t in rows {
                            ks.extend_from_slice(src.row(&src.k, t, head, dh));
                            vs.extend_from_slice(src.row(&src.v, t, head, dh));
                        }
                    }
                    for &t in &idx[mine] {
                        let q = shard.row(&shard.q, t, head, dh);
                        let (mx, den) = attend_row(q, &ks, &vs, dh, scale, &mut scores, &mut num);
                        acc.merge(t - range.start, mx, den, &num);
                    }
                }
            }
            if inbox.next().is_some() {
                return Err(Error::contract(format!(
                    "gather plan ships unused rows to worker {me} for pair {pi}"
                )));
            }
        }
    }

    let mut out = vec![0.0; n * d];
    for (range, heads_acc) in part.ranges.iter().zip(accs) {
        let len = range.len();
        let mut concat = vec![0.0; len * d];
        for (h, acc) in heads_acc.into_iter().enumerate() {
            let (o, _) = acc.finish()?;
            for i in 0..len {
                concat[i * d + h * dh..i * d + (h + 1) * dh]
                    .copy_from_slice(&o[i * dh..(i + 1) * dh]);
            }
        }
        let projected = affine(&Tensor::new(vec![len, d], concat)?, &w.wo, &w.bo)?;
        out[range.start * d..range.end * d].copy_from_slice(projected.data());
    }
    Ok((Tensor::new(vec![n, d], out)?, log))
}

fn missing(pair: usize, to: usize, head: usize, seg: usize, from: usize) -> Error {
    Error::contract(format!(
        "gather plan lacks rows from worker {from} to {to} (pair {pair}, head {head}, segment {seg})"
    ))
}

fn check_transfer(
    t: &Transfer,
    head: usize,
    seg: usize,
    from: usize,
    rows: &[usize],
) -> Result<()> {
    if t.head != head || t.segment_start != seg || t.from != from || t.rows != rows {
        return Err(Error::contract(format!(
            "gather plan out of step: expected head {head} segment {seg} from {from}, found head {} segment {} from {}",
            t.head, t.segment_start, t.from
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::multihead_dilated_attention;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn case(n: usize, d: usize, heads: usize, seed: u64) -> (Tensor, AttentionWeights) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = crate::init::normal(&[n, d], 1.0, &mut rng);
        let w = AttentionWeights::random_with_bias(d, heads, 0.3, &mut rng).unwrap();
        (x, w)
    }

    #[test]
    fn single_worker_is_silent_and_identical() {
        let (x, w) = case(64, 16, 4, 1);
        let s = DilationSchedule::extended(64);
        let (out, log) = distributed_forward(&x, &w, &s, 1).unwrap();
        assert!(log.is_empty());
        assert_eq!(out, multihead_dilated_attention(&x, &w, &s).unwrap());
    }

    #[test]
    fn uneven_workers_match_bitwise() {
        let (x, w) = case(50, 8, 2, 2);
        let s = DilationSchedule::new(vec![(8, 1), (16, 2), (32, 4)]).unwrap();
        let single = multihead_dilated_attention(&x, &w, &s).unwrap();
        for workers in [2, 3, 7] {
            let (out, log) = distributed_forward(&x, &w, &s, workers).unwrap();
            assert_eq!(out, single, "W={workers}");
            assert!(!log.is_empty());
        }
    }
}
