//! Per-segment attention pieces shared by the single-node path and the
//! sequence-parallel simulation. Both call [`attend_row`] with keys in
//! ascending index order and fold pairs with [`Accumulator::merge`] in pair
//! order, which keeps the two paths bitwise identical.

use crate::error::{Error, Result};
use crate::tensor::kernels::dot;
use crate::tensor::Tensor;

/// Positions of segment `[seg_start, seg_start + w)` (clipped to `n`) whose
/// in-segment offset is congruent to `offset` mod `ratio`, ascending.
pub fn select_indices(
    seg_start: usize,
    w: usize,
    ratio: usize,
    offset: usize,
    n: usize,
) -> Vec<usize> {
    let ratio = ratio.max(1);
    let s = offset % ratio;
    let len = w.min(n.saturating_sub(seg_start));
    (s..len).step_by(ratio).map(|j| seg_start + j).collect()
}

/// Attention of one query over `m` gathered keys/values (`m × dh`, row-major).
/// Writes the unnormalized weighted value sum into `num` and returns the
/// score maximum and the denominator `Σ exp(score − max)`.
#[inline]
pub(crate) fn attend_row(
    q: &[f64],
    keys: &[f64],
    values: &[f64],
    dh: usize,
    scale: f64,
    scores: &mut Vec<f64>,
    num: &mut [f64],
) -> (f64, f64) {
    let m = keys.len() / dh;
    scores.clear();
    let mut max = f64::NEG_INFINITY;
    for j in 0..m {
        let s = dot(q, &keys[j * dh..(j + 1) * dh]) * scale;
        max = max.max(s);
        scores.push(s);
    }
    num.fill(0.0);
    let mut denom = 0.0;
    for (j, s) in scores.iter().enumerate() {
        let e = (s - max).exp();
        denom += e;
        for (o, v) in num.iter_mut().zip(&values[j * dh..(j + 1) * dh]) {
            *o += e * v;
        }
    }
    (max, denom)
}

/// Output of softmax attention inside one sparsified segment.
#[derive(Clone, Debug)]
pub struct SegmentOutput {
    /// `m × dh` attention output.
    pub out: Tensor,
    /// Stabilized softmax denominators, one per query row.
    pub denoms: Vec<f64>,
    /// Row maxima the denominators are taken relative to.
    pub maxes: Vec<f64>,
}

/// Bidirectional scaled dot-product attention over a gathered segment.
pub fn segment_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<SegmentOutput> {
    let dh = q.cols();
    let m = q.rows();
    if k.cols() != dh || v.cols() != dh || k.rows() != m || v.rows() != m {
        return Err(Error::dim(format!(
            "segment attention shapes {:?} {:?} {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; m * dh];
    let mut denoms = Vec::with_capacity(m);
    let mut maxes = Vec::with_capacity(m);
    let mut scores = Vec::with_capacity(m);
    for i in 0..m {
        let row = &mut out[i * dh..(i + 1) * dh];
        let (mx, d) = attend_row(q.row(i), k.data(), v.data(), dh, scale, &mut scores, row);
        for o in row.iter_mut() {
            *o /= d;
        }
        denoms.push(d);
        maxes.push(mx);
    }
    Ok(SegmentOutput {
        out: Tensor::new(vec![m, dh], out)?,
        denoms,
        maxes,
    })
}

/// Per-position running mix over (segment, ratio) pairs.
///
/// Folding pair partials `(max_i, D_i, num_i)` in order yields
/// `Σ_i α_i · O_i` with `α_i = D_i·e^{max_i − M} / Σ_j D_j·e^{max_j − M}` and
/// `M` the shared maximum, i.e. denominator-weighted mixing.
pub(crate) struct Accumulator {
    dh: usize,
    acc: Vec<f64>,
    max: Vec<f64>,
    z: Vec<f64>,
}

impl Accumulator {
    pub fn new(n: usize, dh: usize) -> Self {
        Accumulator {
            dh,
            acc: vec![0.0; n * dh],
            max: vec![f64::NEG_INFINITY; n],
            z: vec![0.0; n],
        }
    }

    #[inline]
    pub fn merge(&mut self, pos: usize, pmax: f64, pdenom: f64, num: &[f64]) {
        let dh = self.dh;
        let m = self.max[pos];
        let new_m = m.max(pmax);
        let a = if self.z[pos] == 0.0 {
            0.0
        } else {
            (m - new_m).exp()
        };
        let b = (pmax - new_m).exp();
        for (o, v) in self.acc[pos * dh..(pos + 1) * dh].iter_mut().zip(num) {
            *o = *o * a + v * b;
        }
        self.z[pos] = self.z[pos] * a + pdenom * b;
        self.max[pos] = new_m;
    }

    /// Normalized outputs (`n × dh`) and per-position log-sum-exp.
    pub fn finish(mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        let dh = self.dh;
        let mut lse = Vec::with_capacity(self.z.len());
        for (pos, &z) in self.z.iter().enumerate() {
            if z <= 0.0 || !z.is_finite() {
                return Err(Error::contract(format!(
                    "position {pos} is not attended by any pair"
                )));
            }
            for o in &mut self.acc[pos * dh..(pos + 1) * dh] {
                *o /= z;
            }
            lse.push(self.max[pos] + z.ln());
        }
        Ok((self.acc, lse))
    }
}

/// Explicit mixing weights for one position from its per-pair `(max, denom)`
/// partials; pairs that did not select the position carry denominator 0.
pub fn mixing_weights(partials: &[(f64, f64)]) -> Vec<f64> {
    let shared = partials
        .iter()
        .filter(|(_, d)| *d > 0.0)
        .map(|(m, _)| *m)
        .fold(f64::NEG_INFINITY, f64::max);
    let rebased: Vec<f64> = partials
        .iter()
        .map(|&(m, d)| if d > 0.0 { d * (m - shared).exp() } else { 0.0 })
        .collect();
    let total: f64 = rebased.iter().sum();
    rebased.iter().map(|r| r / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_examples() {
        assert_eq!(select_indices(0, 4, 1, 3, 100), vec![0, 1, 2, 3]);
        assert_eq!(select_indices(0, 8, 4, 1, 100), vec![1, 5]);
        assert_eq!(select_indices(8, 8, 4, 1, 11), vec![9]);
    }

    #[test]
    fn offsets_partition_segment() {
        for (start, w, r, n) in [(0, 8, 4, 8), (16, 16, 4, 29), (64, 64, 16, 1000)] {
            let mut all: Vec<usize> = (0..r)
                .flat_map(|s| select_indices(start, w, r, s, n))
                .collect();
            all.sort_unstable();
            let expect: Vec<usize> = (start..(start + w).min(n)).collect();
            assert_eq!(all, expect);
        }
    }

    #[test]
    fn single_key_segment() {
        let q = Tensor::new(vec![1, 2], vec![0.3, -1.0]).unwrap();
        let v = Tensor::new(vec![1, 2], vec![5.0, 7.0]).unwrap();
        let s = segment_attention(&q, &q, &v).unwrap();
        assert_eq!(s.out.data(), v.data());
        assert_eq!(s.denoms, vec![1.0]);
    }

    #[test]
    fn identical_values_pass_through() {
        let q = Tensor::new(vec![3, 2], vec![1.0, 2.0, -1.0, 0.5, 3.0, 0.0]).unwrap();
        let k = Tensor::new(vec![3, 2], vec![0.1, 0.2, 0.3, -0.4, 2.0, 1.0]).unwrap();
        let v = Tensor::new(vec![3, 2], vec![4.0, -2.0, 4.0, -2.0, 4.0, -2.0]).unwrap();
        let s = segment_attention(&q, &k, &v).unwrap();
        for row in s.out.data().chunks(2) {
            assert!((row[0] - 4.0).abs() < 1e-14 && (row[1] + 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn weights_sum_to_one() {
        let w = mixing_weights(&[(3.0, 2.0), (0.0, 0.0), (5.0, 1.5)]);
        assert_eq!(w[1], 0.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(w.iter().all(|&x| x >= 0.0));
    }
}
