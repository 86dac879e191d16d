use super::kernel::{attend_row, select_indices, Accumulator};
use super::{DilationSchedule, SegmentPair};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::kernels::dot;
use crate::tensor::Tensor;

/// Copies columns `[h·dh, (h+1)·dh)` of an `n × d` matrix.
pub(crate) fn head_columns(x: &[f64], n: usize, d: usize, h: usize, dh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dh);
    for i in 0..n {
        out.extend_from_slice(&x[i * d + h * dh..i * d + (h + 1) * dh]);
    }
    out
}

fn gather(x: &[f64], idx: &[usize], dh: usize, buf: &mut Vec<f64>) {
    buf.clear();
    for &i in idx {
        buf.extend_from_slice(&x[i * dh..(i + 1) * dh]);
    }
}

/// Longest run of tokens the short pairs process together.
const LOCAL_BLOCK: usize = 1024;

/// Leading pairs whose segments all divide the last one's (at most
/// [`LOCAL_BLOCK`]), and that segment. Those pairs run block by block.
fn local_prefix(schedule: &DilationSchedule) -> (usize, usize) {
    let pairs = schedule.pairs();
    let mut best = (0, 1);
    for (j, p) in pairs.iter().enumerate() {
        if p.segment > LOCAL_BLOCK || pairs[..j].iter().any(|q| p.segment % q.segment != 0) {
            break;
        }
        best = (j + 1, p.segment);
    }
    best
}

struct HeadPass<'a> {
    q: &'a [f64],
    k: &'a [f64],
    v: &'a [f64],
    dh: usize,
    n: usize,
    head: usize,
    scale: f64,
    acc: Accumulator,
    ks: Vec<f64>,
    vs: Vec<f64>,
    scores: Vec<f64>,
    num: Vec<f64>,
}

impl HeadPass<'_> {
    /// Every segment of `pair` starting in `[from, to)`.
    fn run(&mut self, pair: SegmentPair, from: usize, to: usize) {
        let (dh, offset) = (self.dh, self.head % pair.ratio);
        for seg_start in (from..to).step_by(pair.segment) {
            let idx = select_indices(seg_start, pair.segment, pair.ratio, offset, self.n);
            if idx.is_empty() {
                continue;
            }
            gather(self.k, &idx, dh, &mut self.ks);
            gather(self.v, &idx, dh, &mut self.vs);
            for &t in &idx {
                let (mx, d) = attend_row(
                    &self.q[t * dh..(t + 1) * dh],
                    &self.ks,
                    &self.vs,
                    dh,
                    self.scale,
                    &mut self.scores,
                    &mut self.num,
                );
                self.acc.merge(t, mx, d, &self.num);
            }
        }
    }
}

/// Dilated attention for one head on `n × dh` inputs. Returns the output and
/// the per-position log-sum-exp of all scores the position attended to.
/// Every position folds its pairs in schedule order.
pub(crate) fn head_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    dh: usize,
    schedule: &DilationSchedule,
    head: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = q.len() / dh;
    let mut pass = HeadPass {
        q,
        k,
        v,
        dh,
        n,
        head,
        scale: 1.0 / (dh as f64).sqrt(),
        acc: Accumulator::new(n, dh),
        ks: Vec::new(),
        vs: Vec::new(),
        scores: Vec::new(),
        num: vec![0.0; dh],
    };
    let pairs = schedule.pairs();
    let (local, block) = local_prefix(schedule);
    for start in (0..n).step_by(block) {
        for &pair in &pairs[..local] {
            pass.run(pair, start, (start + block).min(n));
        }
    }
    for &pair in &pairs[local..] {
        pass.run(pair, 0, n);
    }
    pass.acc.finish()
}

/// Dilated attention for head `head_index` on `N × dh` query/key/value tensors.
pub fn dilated_head(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    schedule: &DilationSchedule,
    head_index: usize,
) -> Result<Tensor> {
    if q.shape() != k.shape() || q.shape() != v.shape() || q.rank() != 2 {
        return Err(Error::dim(format!(
            "dilated head needs equal N×dh inputs, got {:?} {:?} {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let dh = q.cols();
    let (out, _) = head_forward(q.data(), k.data(), v.data(), dh, schedule, head_index)?;
    Tensor::new(q.shape().to_vec(), out)
}

fn check_inputs(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<(usize, usize, usize)> {
    if q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape() {
        return Err(Error::dim(format!(
            "q/k/v must be equal N×d matrices, got {:?} {:?} {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let (n, d) = (q.rows(), q.cols());
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!(
            "hidden size {d} is not divisible by {heads} heads"
        )));
    }
    Ok((n, d, d / heads))
}

/// All heads at once on projected `N × d` inputs; head `h` owns columns
/// `[h·dh, (h+1)·dh)` and uses offset `h mod r` for every pair. Returns the
/// concatenated output and the `heads × N` log-sum-exp table.
pub(crate) fn forward_multihead(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    schedule: &DilationSchedule,
) -> Result<(Tensor, Vec<f64>)> {
    let (n, d, dh) = check_inputs(q, k, v, heads)?;
    let per_head = par::map_range(heads, |h| {
        let qh = head_columns(q.data(), n, d, h, dh);
        let kh = head_columns(k.data(), n, d, h, dh);
        let vh = head_columns(v.data(), n, d, h, dh);
        head_forward(&qh, &kh, &vh, dh, schedule, h)
    });
    let mut out = vec![0.0; n * d];
    let mut lse = Vec::with_capacity(heads * n);
    for (h, r) in per_head.into_iter().enumerate() {
        let (o, l) = r?;
        for i in 0..n {
            out[i * d + h * dh..i * d + (h + 1) * dh].copy_from_slice(&o[i * dh..(i + 1) * dh]);
        }
        lse.extend(l);
    }
    Ok((Tensor::new(vec![n, d], out)?, lse))
}

#[allow(clippy::too_many_arguments)]
fn head_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    o: &[f64],
    go: &[f64],
    lse: &[f64],
    dh: usize,
    schedule: &DilationSchedule,
    head: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = q.len() / dh;
    let scale = 1.0 / (dh as f64).sqrt();
    let delta: Vec<f64> = (0..n)
        .map(|t| dot(&go[t * dh..(t + 1) * dh], &o[t * dh..(t + 1) * dh]))
        .collect();
    let mut dq = vec![0.0; n * dh];
    let mut dk = vec![0.0; n * dh];
    let mut dv = vec![0.0; n * dh];
    let (mut qs, mut ks, mut vs, mut gs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut dks, mut dvs) = (Vec::new(), Vec::new());
    let mut dqa = vec![0.0; dh];
    for pair in schedule.pairs() {
        let offset = head % pair.ratio;
        for seg_start in (0..n).step_by(pair.segment) {
            let idx = select_indices(seg_start, pair.segment, pair.ratio, offset, n);
            gather(q, &idx, dh, &mut qs);
            gather(k, &idx, dh, &mut ks);
            gather(v, &idx, dh, &mut vs);
            gather(go, &idx, dh, &mut gs);
            dks.clear();
            dks.resize(ks.len(), 0.0);
            dvs.clear();
            dvs.resize(vs.len(), 0.0);
            for (ai, &a) in idx.iter().enumerate() {
                let qa = &qs[ai * dh..(ai + 1) * dh];
                let ga = &gs[ai * dh..(ai + 1) * dh];
                dqa.fill(0.0);
                let rows = ks
                    .chunks_exact(dh)
                    .zip(vs.chunks_exact(dh))
                    .zip(dks.chunks_exact_mut(dh).zip(dvs.chunks_exact_mut(dh)));
                for ((kb, vb), (dkb, dvb)) in rows {
                    let p = (dot(qa, kb) * scale - lse[a]).exp();
                    let ds = p * (dot(ga, vb) - delta[a]) * scale;
                    for j in 0..dh {
                        dvb[j] += p * ga[j];
                        dqa[j] += ds * kb[j];
                        dkb[j] += ds * qa[j];
                    }
                }
                for (o, x) in dq[a * dh..(a + 1) * dh].iter_mut().zip(&dqa) {
                    *o += x;
                }
            }
            for (bi, &b) in idx.iter().enumerate() {
                for j in 0..dh {
                    dk[b * dh + j] += dks[bi * dh + j];
                    dv[b * dh + j] += dvs[bi * dh + j];
                }
            }
        }
    }
    (dq, dk, dv)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_multihead(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    out: &Tensor,
    lse: &[f64],
    grad_out: &[f64],
    heads: usize,
    schedule: &DilationSchedule,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (n, d, dh) = check_inputs(q, k, v, heads)?;
    let per_head = par::map_range(heads, |h| {
        let cols = |x: &[f64]| head_columns(x, n, d, h, dh);
        head_backward(
            &cols(q.data()),
            &cols(k.data()),
            &cols(v.data()),
            &cols(out.data()),
            &cols(grad_out),
            &lse[h * n..(h + 1) * n],
            dh,
            schedule,
            h,
        )
    });
    let mut dq = vec![0.0; n * d];
    let mut dk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];
    for (h, (hq, hk, hv)) in per_head.into_iter().enumerate() {
        for i in 0..n {
            let dst = i * d + h * dh..i * d + (h + 1) * dh;
            let src = i * dh..(i + 1) * dh;
            dq[dst.clone()].copy_from_slice(&hq[src.clone()]);
            dk[dst.clone()].copy_from_slice(&hk[src.clone()]);
            dv[dst].copy_from_slice(&hv[src]);
        }
    }
    Ok((dq, dk, dv))
}
