use std::fmt;

use super::{MessageLog, WorkerPartition};
use crate::attention::DilationSchedule;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairTraffic {
    pub pair_index: usize,
    pub segment: usize,
    pub ratio: usize,
    pub messages: usize,
    pub elements: usize,
}

/// Aggregate communication of one distributed pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommReport {
    pub workers: usize,
    pub tokens: usize,
    pub hidden: usize,
    pub messages: usize,
    pub total_elements: usize,
    pub per_pair: Vec<PairTraffic>,
    /// Every worker fetching all remote K and V rows: `Σ (N − local)·d·2`.
    pub dense_baseline: usize,
}

pub fn comm_report(
    log: &MessageLog,
    part: &WorkerPartition,
    schedule: &DilationSchedule,
    hidden: usize,
) -> CommReport {
    let mut per_pair: Vec<PairTraffic> = schedule
        .pairs()
        .iter()
        .enumerate()
        .map(|(i, p)| PairTraffic {
            pair_index: i,
            segment: p.segment,
            ratio: p.ratio,
            messages: 0,
            elements: 0,
        })
        .collect();
    for r in &log.records {
        if let Some(p) = per_pair.get_mut(r.pair_index) {
            p.messages += 1;
            p.elements += r.payload_elements;
        }
    }
    let dense_baseline = if part.workers() > 1 {
        part.ranges
            .iter()
            .map(|r| (part.tokens - r.len()) * hidden * 2)
            .sum()
    } else {
        0
    };
    CommReport {
        workers: part.workers(),
        tokens: part.tokens,
        hidden,
        messages: log.records.len(),
        total_elements: log.total_elements(),
        per_pair,
        dense_baseline,
    }
}

impl CommReport {
    /// `key=value` lines for machine consumption.
    pub fn key_values(&self) -> String {
        let mut s = format!(
            "workers={}\ntokens={}\nhidden={}\nmessages={}\ntotal_elements={}\ndense_baseline_elements={}\n",
            self.workers, self.tokens, self.hidden, self.messages, self.total_elements, self.dense_baseline
        );
        for p in &self.per_pair {
            s.push_str(&format!(
                "pair.{}.segment={}\npair.{}.ratio={}\npair.{}.messages={}\npair.{}.elements={}\n",
                p.pair_index,
                p.segment,
                p.pair_index,
                p.ratio,
                p.pair_index,
                p.messages,
                p.pair_index,
                p.elements
            ));
        }
        s
    }
}

impl fmt::Display for CommReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>5} {:>8} {:>6} {:>9} {:>14}",
            "pair", "segment", "ratio", "messages", "elements"
        )?;
        for p in &self.per_pair {
            writeln!(
                f,
                "{:>5} {:>8} {:>6} {:>9} {:>14}",
                p.pair_index, p.segment, p.ratio, p.messages, p.elements
            )?;
        }
        writeln!(
            f,
            "{:>5} {:>8} {:>6} {:>9} {:>14}",
            "total", "", "", self.messages, self.total_elements
        )?;
        write!(
            f,
            "dense all-gather baseline: {} elements ({} workers, N={}, d={})",
            self.dense_baseline, self.workers, self.tokens, self.hidden
        )
    }
}
