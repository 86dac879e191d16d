//! Deterministic simulation of sequence-parallel dilated attention.
//!
//! The token sequence is split into contiguous worker ranges. Queries never
//! move; for every segment that straddles workers, each participant receives
//! the offset-selected K/V rows held by the others. Workers are sequential
//! actors and every transfer is recorded in a [`MessageLog`].

mod forward;
mod report;

pub use forward::distributed_forward;
pub use report::{comm_report, CommReport, PairTraffic};

use std::ops::Range;

use crate::attention::{select_indices, DilationSchedule};
use crate::error::{Error, Result};

/// Contiguous token ranges, one per worker, tiling `[0, N)` in order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkerPartition {
    pub tokens: usize,
    pub ranges: Vec<Range<usize>>,
}

impl WorkerPartition {
    pub fn workers(&self) -> usize {
        self.ranges.len()
    }

    /// Worker holding token `t`.
    pub fn owner(&self, t: usize) -> usize {
        self.ranges.partition_point(|r| r.end <= t)
    }

    pub fn local_len(&self, worker: usize) -> usize {
        self.ranges[worker].len()
    }
}

/// Balanced split of `n` tokens over `workers`; the first `n mod workers`
/// workers receive one extra token.
pub fn partition(n: usize, workers: usize) -> Result<WorkerPartition> {
    if workers == 0 {
        return Err(Error::config("worker count must be at least 1"));
    }
    if workers > n {
        return Err(Error::config(format!("{workers} workers for {n} tokens")));
    }
    let (base, extra) = (n / workers, n % workers);
    let mut ranges = Vec::with_capacity(workers);
    let mut start = 0;
    for w in 0..workers {
        let len = base + usize::from(w < extra);
        ranges.push(start..start + len);
        start += len;
    }
    Ok(WorkerPartition { tokens: n, ranges })
}

/// K/V rows one worker must fetch from another for one head of one
/// (segment, ratio) pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transfer {
    pub pair_index: usize,
    pub head: usize,
    pub segment_start: usize,
    pub from: usize,
    pub to: usize,
    /// Selected token indices held by `from`, ascending.
    pub rows: Vec<usize>,
}

/// All transfers, ordered by pair, receiving worker, head, segment, sender.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GatherPlan {
    pub workers: usize,
    pub pairs: usize,
    pub transfers: Vec<Transfer>,
}

impl GatherPlan {
    /// Transfers for one pair and receiving worker.
    pub fn for_receiver(&self, pair_index: usize, worker: usize) -> &[Transfer] {
        let lo = self
            .transfers
            .partition_point(|t| (t.pair_index, t.to) < (pair_index, worker));
        let hi = self
            .transfers
            .partition_point(|t| (t.pair_index, t.to) <= (pair_index, worker));
        &self.transfers[lo..hi]
    }
}

/// Splits selected indices (ascending) into per-owner runs.
pub(crate) fn split_by_owner(part: &WorkerPartition, idx: &[usize]) -> Vec<(usize, Range<usize>)> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let owner = part.owner(idx[i]);
        let end = part.ranges[owner].end;
        let j = i + idx[i..].partition_point(|&t| t < end);
        runs.push((owner, i..j));
        i = j;
    }
    runs
}

/// Which remote rows each worker needs. Head `h` uses offset `h mod r` for
/// every pair. A worker takes part in a segment when it holds at least one
/// selected row of it; segments held by one worker produce no transfers.
pub fn gather_plan(
    part: &WorkerPartition,
    schedule: &DilationSchedule,
    heads: usize,
) -> GatherPlan {
    let n = part.tokens;
    let mut per_receiver: Vec<Vec<Transfer>> = vec![Vec::new(); part.workers()];
    let mut transfers = Vec::new();
    for (pi, pair) in schedule.pairs().iter().enumerate() {
        for head in 0..heads {
            for seg_start in (0..n).step_by(pair.segment) {
                let idx = select_indices(seg_start, pair.segment, pair.ratio, head % pair.ratio, n);
                let runs = split_by_owner(part, &idx);
                if runs.len() < 2 {
                    continue;
                }
                for (to, _) in &runs {
                    for (from, range) in &runs {
                        if from != to {
                            per_receiver[*to].push(Transfer {
                                pair_index: pi,
                                head,
                                segment_start: seg_start,
                                from: *from,
                                to: *to,
                                rows: idx[range.clone()].to_vec(),
                            });
                        }
                    }
                }
            }
        }
        for list in &mut per_receiver {
            transfers.append(list);
        }
    }
    GatherPlan {
        workers: part.workers(),
        pairs: schedule.len(),
        transfers,
    }
}

/// One simulated message: K and V rows for one head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessageRecord {
    /// `pair_index · W + receiver`: workers run round-robin within each pair.
    pub step: usize,
    pub from: usize,
    pub to: usize,
    pub pair_index: usize,
    pub head: usize,
    pub segment_start: usize,
    /// Rows × head width × 2 (keys and values).
    pub payload_elements: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MessageLog {
    pub records: Vec<MessageRecord>,
}

impl MessageLog {
    pub fn total_elements(&self) -> usize {
        self.records.iter().map(|r| r.payload_elements).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The log implied by `plan` for heads of width `head_dim`, without running
    /// any attention.
    pub fn from_plan(plan: &GatherPlan, head_dim: usize) -> Self {
        MessageLog {
            records: plan
                .transfers
                .iter()
                .map(|t| MessageRecord {
                    step: t.pair_index * plan.workers + t.to,
                    from: t.from,
                    to: t.to,
                    pair_index: t.pair_index,
                    head: t.head,
                    segment_start: t.segment_start,
                    payload_elements: t.rows.len() * head_dim * 2,
                })
                .collect(),
        }
    }
}
