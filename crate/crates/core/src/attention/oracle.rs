//! Quadratic reference implementations. They share no code with the sparse
//! path beyond the weight container: projections, masking and mixing are
//! written out directly.

use super::kernel::mixing_weights;
use super::{AttentionWeights, DilationSchedule};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest sequence the quadratic references accept.
pub const DENSE_ORACLE_MAX_TOKENS: usize = 4096;

fn project(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n, d) = (x.rows(), x.cols());
    let e = w.cols();
    let mut out = vec![0.0; n * e];
    for i in 0..n {
        let row = &mut out[i * e..(i + 1) * e];
        for k in 0..d {
            let xv = x.data()[i * d + k];
            for (o, wv) in row.iter_mut().zip(&w.data()[k * e..(k + 1) * e]) {
                *o += xv * wv;
            }
        }
        for (o, bv) in row.iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    out
}

fn check(x: &Tensor, w: &AttentionWeights) -> Result<(usize, usize, usize)> {
    let n = x.rows();
    if n > DENSE_ORACLE_MAX_TOKENS {
        return Err(Error::config(format!(
            "dense reference refuses N={n} (limit {DENSE_ORACLE_MAX_TOKENS})"
        )));
    }
    if x.rank() != 2 || x.cols() != w.hidden() {
        return Err(Error::dim("input does not match the attention hidden size"));
    }
    Ok((n, w.hidden(), w.head_dim()))
}

struct Projected {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
}

impl Projected {
    fn new(x: &Tensor, w: &AttentionWeights) -> Self {
        Projected {
            q: project(x, &w.wq, &w.bq),
            k: project(x, &w.wk, &w.bk),
            v: project(x, &w.wv, &w.bv),
        }
    }
}

fn finish(x: &Tensor, w: &AttentionWeights, mixed: Vec<f64>) -> Result<Tensor> {
    let n = x.rows();
    let t = Tensor::new(vec![n, w.hidden()], mixed)?;
    Tensor::new(vec![n, w.hidden()], project(&t, &w.wo, &w.bo))
}

/// Per-pair masked dense attention mixed by the denominator rule.
///
/// For head `h` and pair `(w, r)` query `a` may attend key `b` iff both lie in
/// the same length-`w` segment and both have in-segment offset `h mod r`.
pub fn oracle_masked_dense(
    x: &Tensor,
    w: &AttentionWeights,
    schedule: &DilationSchedule,
) -> Result<Tensor> {
    let (n, d, dh) = check(x, w)?;
    let p = Projected::new(x, w);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut mixed = vec![0.0; n * d];
    let mut scores = vec![0.0; n];
    for h in 0..w.heads {
        let col = |m: &[f64], i: usize, j: usize| m[i * d + h * dh + j];
        let allowed = |a: usize, b: usize, seg: usize, r: usize| {
            a / seg == b / seg && (a % seg) % r == h % r && (b % seg) % r == h % r
        };
        for a in 0..n {
            let mut partials = Vec::new();
            let mut outs = Vec::new();
            // full score row, masked per pair below
            for (b, s) in scores.iter_mut().enumerate() {
                *s = (0..dh)
                    .map(|j| col(&p.q, a, j) * col(&p.k, b, j))
                    .sum::<f64>()
                    * scale;
            }
            for pair in schedule.pairs() {
                let (seg, r) = (pair.segment, pair.ratio);
                let mut max = f64::NEG_INFINITY;
                for (b, &s) in scores.iter().enumerate() {
                    if allowed(a, b, seg, r) {
                        max = max.max(s);
                    }
                }
                let mut denom = 0.0;
                let mut o = vec![0.0; dh];
                if max.is_finite() {
                    for (b, &s) in scores.iter().enumerate() {
                        if allowed(a, b, seg, r) {
                            let e = (s - max).exp();
                            denom += e;
                            for (j, oj) in o.iter_mut().enumerate() {
                                *oj += e * col(&p.v, b, j);
                            }
                        }
                    }
                    for v in &mut o {
                        *v /= denom;
                    }
                }
                partials.push((max, denom));
                outs.push(o);
            }
            let alpha = mixing_weights(&partials);
            for (al, o) in alpha.iter().zip(&outs) {
                for j in 0..dh {
                    mixed[a * d + h * dh + j] += al * o[j];
                }
            }
        }
    }
    finish(x, w, mixed)
}

/// Queries scored together against each streamed key.
const QUERY_BLOCK: usize = 16;

fn head_columns(m: &[f64], n: usize, d: usize, h: usize, dh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dh);
    for i in 0..n {
        out.extend_from_slice(&m[i * d + h * dh..i * d + (h + 1) * dh]);
    }
    out
}

/// Plain bidirectional multi-head attention over all `N` tokens.
pub fn dense_mha(x: &Tensor, w: &AttentionWeights) -> Result<Tensor> {
    let (n, d, dh) = check(x, w)?;
    let p = Projected::new(x, w);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut mixed = vec![0.0; n * d];
    let mut scores = vec![0.0; QUERY_BLOCK * n];
    let mut out = vec![0.0; QUERY_BLOCK * dh];
    for h in 0..w.heads {
        let q = head_columns(&p.q, n, d, h, dh);
        let k = head_columns(&p.k, n, d, h, dh);
        let v = head_columns(&p.v, n, d, h, dh);
        for a0 in (0..n).step_by(QUERY_BLOCK) {
            let rows = QUERY_BLOCK.min(n - a0);
            for b in 0..n {
                let kb = &k[b * dh..(b + 1) * dh];
                for i in 0..rows {
                    let qa = &q[(a0 + i) * dh..(a0 + i + 1) * dh];
                    scores[i * n + b] = qa.iter().zip(kb).map(|(x, y)| x * y).sum::<f64>() * scale;
                }
            }
            let mut denoms = [0.0; QUERY_BLOCK];
            for (i, denom) in denoms.iter_mut().enumerate().take(rows) {
                let row = &mut scores[i * n..(i + 1) * n];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    *denom += *s;
                }
            }
            out.fill(0.0);
            for b in 0..n {
                let vb = &v[b * dh..(b + 1) * dh];
                for i in 0..rows {
                    let e = scores[i * n + b];
                    for (o, x) in out[i * dh..(i + 1) * dh].iter_mut().zip(vb) {
                        *o += e * x;
                    }
                }
            }
            for i in 0..rows {
                let dst = &mut mixed[(a0 + i) * d + h * dh..(a0 + i) * d + (h + 1) * dh];
                for (m, o) in dst.iter_mut().zip(&out[i * dh..(i + 1) * dh]) {
                    *m = o / denoms[i];
                }
            }
        }
    }
    finish(x, w, mixed)
}
