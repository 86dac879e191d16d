use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One (segment length, dilation ratio) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SegmentPair {
    pub segment: usize,
    pub ratio: usize,
}

/// Ordered (segment length, dilation ratio) pairs mixed by dilated attention.
///
/// Segments and ratios are strictly increasing, every ratio divides its
/// segment, and the first pair has ratio 1 so every position is attended by at
/// least one pair under any head offset.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DilationSchedule {
    pairs: Vec<SegmentPair>,
}

/// Pretraining schedule at 1,024² input.
pub const PRETRAIN_SEGMENTS: [usize; 5] = [64, 128, 256, 512, 1024];
pub const PRETRAIN_RATIOS: [usize; 5] = [1, 2, 4, 8, 16];

/// Segment lengths per finetuning input resolution; ratios are always 1..16.
pub const RESOLUTION_TABLE: [(usize, [usize; 5]); 5] = [
    (1024, [64, 128, 256, 512, 1024]),
    (4096, [1024, 2048, 4096, 8192, 16384]),
    (8192, [1024, 4096, 8192, 16384, 65536]),
    (16384, [1024, 4096, 16384, 65536, 262144]),
    (32768, [1024, 4096, 32768, 262144, 1_048_576]),
];

impl DilationSchedule {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        let pairs: Vec<SegmentPair> = pairs
            .into_iter()
            .map(|(segment, ratio)| SegmentPair { segment, ratio })
            .collect();
        if pairs.is_empty() {
            return Err(Error::config("schedule needs at least one pair"));
        }
        for p in &pairs {
            if p.ratio == 0 || p.segment == 0 {
                return Err(Error::config(format!("zero entry in pair {p:?}")));
            }
            if p.ratio > p.segment || p.segment % p.ratio != 0 {
                return Err(Error::config(format!(
                    "ratio {} must divide segment {}",
                    p.ratio, p.segment
                )));
            }
        }
        for w in pairs.windows(2) {
            if w[1].segment <= w[0].segment || w[1].ratio <= w[0].ratio {
                return Err(Error::config(
                    "segment lengths and ratios must be strictly increasing",
                ));
            }
        }
        if pairs[0].ratio != 1 {
            return Err(Error::contract(
                "first pair must have ratio 1 or some positions are never attended",
            ));
        }
        Ok(DilationSchedule { pairs })
    }

    pub fn pairs(&self) -> &[SegmentPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn max_segment(&self) -> usize {
        self.pairs.last().map_or(0, |p| p.segment)
    }

    /// Single dense pair spanning `n` tokens.
    pub fn dense(n: usize) -> Self {
        DilationSchedule {
            pairs: vec![SegmentPair {
                segment: n.max(1),
                ratio: 1,
            }],
        }
    }

    pub fn pretraining() -> Self {
        Self::from_table(&PRETRAIN_SEGMENTS)
    }

    fn from_table(segments: &[usize; 5]) -> Self {
        DilationSchedule::new(segments.iter().copied().zip(PRETRAIN_RATIOS).collect())
            .expect("table schedules are valid")
    }

    /// Schedule listed for a finetuning input resolution, if any.
    pub fn for_resolution(resolution: usize) -> Option<Self> {
        RESOLUTION_TABLE
            .iter()
            .find(|(r, _)| *r == resolution)
            .map(|(_, s)| Self::from_table(s))
    }

    /// Pretraining pairs with segment ≤ `n`; falls back to one dense pair when
    /// `n` is below the smallest segment.
    pub fn truncated(&self, n: usize) -> Self {
        let pairs: Vec<SegmentPair> = self
            .pairs
            .iter()
            .copied()
            .filter(|p| p.segment <= n)
            .collect();
        if pairs.is_empty() {
            return Self::dense(n);
        }
        DilationSchedule { pairs }
    }

    /// Schedule for an `n`-token sequence. Up to 1,024 tokens this is the
    /// pretraining schedule truncated to `n`; beyond that the four lower
    /// pairs stay fixed and the top pair spans the whole (power-of-two
    /// rounded) sequence with 64 attended positions per segment, so cost
    /// grows linearly in `n`.
    pub fn extended(n: usize) -> Self {
        let top = *PRETRAIN_SEGMENTS.last().unwrap();
        let mut s = Self::pretraining().truncated(n);
        if n > top {
            let span = n.next_power_of_two();
            let kept = top / PRETRAIN_RATIOS.last().unwrap();
            s.pairs.pop();
            s.pairs.push(SegmentPair {
                segment: span,
                ratio: span / kept,
            });
        }
        s
    }

    /// Table schedule for `resolution` when listed, otherwise [`Self::extended`].
    pub fn auto(resolution: usize, patch_size: usize) -> Self {
        let n = (resolution / patch_size.max(1)).pow(2);
        Self::for_resolution(resolution)
            .filter(|_| patch_size == 32)
            .unwrap_or_else(|| Self::extended(n))
    }
}

impl fmt::Display for DilationSchedule {
    /// `w:r,w:r,...`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.pairs.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}", p.segment, p.ratio)?;
        }
        Ok(())
    }
}

impl FromStr for DilationSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (w, r) = item
                .split_once(':')
                .ok_or_else(|| Error::config(format!("expected segment:ratio, got {item:?}")))?;
            let parse = |t: &str| {
                t.trim()
                    .replace('_', "")
                    .parse::<usize>()
                    .map_err(|_| Error::config(format!("bad number {t:?} in schedule")))
            };
            pairs.push((parse(w)?, parse(r)?));
        }
        DilationSchedule::new(pairs)
    }
}
