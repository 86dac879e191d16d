//! Raw numeric kernels shared by the graph ops and the non-differentiable
//! inference paths. Every kernel computes each output row from its own inputs
//! in a fixed order, so row-parallel execution is bitwise reproducible.

use super::Tensor;
use crate::error::{Error, Result};
use crate::par;

pub const LAYER_NORM_EPS: f64 = 1e-6;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `a[m×k] · b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if b.rank() != 2 {
        return Err(Error::dim(format!(
            "matmul rhs must be a matrix, got {:?}",
            b.shape()
        )));
    }
    let (k, n) = (b.shape()[0], b.shape()[1]);
    if a.cols() != k {
        return Err(Error::dim(format!(
            "matmul inner extents differ: {:?} · {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let m = a.rows();
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    par::for_each_chunk_mut(&mut out, ROWS * n, |blk, rows| {
        let i0 = blk * ROWS;
        let r = rows.len() / n;
        let lhs = &ad[i0 * k..(i0 + r) * k];
        // Row-major lhs: element (row, kk) sits at row·k + kk.
        tile_product(rows, n, r, k, |row, kk| lhs[row * k + kk], bd);
    });
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = n;
    Tensor::new(shape, out)
}

const ROWS: usize = 4;
const COLS: usize = 8;

/// `out[r×n] = L · b` for `b[k×n]`, where `lhs(row, kk)` reads `L`. Works on
/// `ROWS×COLS` register tiles; every entry sums over `kk` in ascending order
/// from zero, so the result does not depend on the tiling.
#[inline]
fn tile_product<F>(out: &mut [f64], n: usize, r: usize, k: usize, lhs: F, b: &[f64])
where
    F: Fn(usize, usize) -> f64,
{
    let full = n - n % COLS;
    if r == ROWS {
        for j0 in (0..full).step_by(COLS) {
            let mut acc = [[0.0f64; COLS]; ROWS];
            for kk in 0..k {
                let brow: &[f64; COLS] = b[kk * n + j0..kk * n + j0 + COLS].try_into().unwrap();
                for (row, a) in acc.iter_mut().enumerate() {
                    let x = lhs(row, kk);
                    for c in 0..COLS {
                        a[c] += x * brow[c];
                    }
                }
            }
            for (row, a) in acc.iter().enumerate() {
                out[row * n + j0..row * n + j0 + COLS].copy_from_slice(a);
            }
        }
    } else {
        for row in 0..r {
            for j0 in (0..full).step_by(COLS) {
                let mut a = [0.0f64; COLS];
                for kk in 0..k {
                    let x = lhs(row, kk);
                    for c in 0..COLS {
                        a[c] += x * b[kk * n + j0 + c];
                    }
                }
                out[row * n + j0..row * n + j0 + COLS].copy_from_slice(&a);
            }
        }
    }
    for row in 0..r {
        for j in full..n {
            let mut v = 0.0;
            for kk in 0..k {
                v += lhs(row, kk) * b[kk * n + j];
            }
            out[row * n + j] = v;
        }
    }
}

/// `out += x · b` for one row `x` of length k and `b[k×n]`. Accumulates in k order.
#[inline]
pub fn matvec_row(x: &[f64], b: &[f64], n: usize, out: &mut [f64]) {
    for (kk, &xv) in x.iter().enumerate() {
        let brow = &b[kk * n..(kk + 1) * n];
        for (o, &bv) in out.iter_mut().zip(brow) {
            *o += xv * bv;
        }
    }
}

/// `g[m×n] · bᵀ` where `b` is `[k×n]`: the lhs gradient of a matmul. Every
/// entry sums over the shared extent in ascending order.
pub(crate) fn matmul_grad_lhs(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut bt = vec![0.0; n * k];
    for (kk, row) in b.chunks(n).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            bt[j * k + kk] = v;
        }
    }
    let mut out = vec![0.0; m * k];
    par::for_each_chunk_mut(&mut out, ROWS * k, |blk, rows| {
        let i0 = blk * ROWS;
        let r = rows.len() / k;
        let lhs = &g[i0 * n..(i0 + r) * n];
        tile_product(rows, k, r, n, |row, j| lhs[row * n + j], &bt);
    });
    out
}

/// `aᵀ · g` where `a` is `[m×k]` and `g` is `[m×n]`: the rhs gradient of a
/// matmul. Every entry sums over `i` in ascending order.
pub(crate) fn matmul_grad_rhs(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    par::for_each_chunk_mut(&mut out, ROWS * n, |blk, rows| {
        let k0 = blk * ROWS;
        // Row `row` of aᵀ is column k0 + row of `a`.
        tile_product(rows, n, rows.len() / n, m, |row, i| a[i * k + k0 + row], g);
    });
    out
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-wise softmax. Also returns each row's denominator `Σ exp(x − rowmax)`.
pub fn softmax_rows(x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    if !x.is_finite() {
        return Err(Error::Numeric("softmax input is not finite".into()));
    }
    let n = x.cols();
    let mut probs = x.data().to_vec();
    let mut denoms = vec![0.0; x.rows()];
    for (row, d) in probs.chunks_mut(n).zip(denoms.iter_mut()) {
        *d = softmax_in_place(row);
    }
    Ok((Tensor::new(x.shape().to_vec(), probs)?, denoms))
}

/// Normalizes `row` in place and returns the stabilized denominator.
pub(crate) fn softmax_in_place(row: &mut [f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    sum
}

/// Per-row statistics kept for the layer-norm backward pass.
#[derive(Clone, Debug)]
pub(crate) struct NormStats {
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm_fwd(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, NormStats)> {
    let d = x.cols();
    if gamma.len() != d || beta.len() != d {
        return Err(Error::dim(format!(
            "layer norm over {d} features got gamma {:?}, beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let rows = x.rows();
    let mut out = vec![0.0; x.len()];
    let mut mean = vec![0.0; rows];
    let mut rstd = vec![0.0; rows];
    let (g, b) = (gamma.data(), beta.data());
    for i in 0..rows {
        let xr = x.row(i);
        let mu = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + eps).sqrt();
        for j in 0..d {
            out[i * d + j] = (xr[j] - mu) * rs * g[j] + b[j];
        }
        mean[i] = mu;
        rstd[i] = rs;
    }
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        NormStats { mean, rstd },
    ))
}

/// Standardizes each row of `x` then applies `gamma`, `beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_fwd(x, gamma, beta, eps).map(|(t, _)| t)
}

/// Returns (dx, dgamma, dbeta).
pub(crate) fn layer_norm_bwd(
    x: &Tensor,
    gamma: &Tensor,
    stats: &NormStats,
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = x.cols();
    let rows = x.rows();
    let mut dx = vec![0.0; x.len()];
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    let gm = gamma.data();
    let mut xhat = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for i in 0..rows {
        let xr = x.row(i);
        let gr = &g[i * d..(i + 1) * d];
        let (mu, rs) = (stats.mean[i], stats.rstd[i]);
        for j in 0..d {
            xhat[j] = (xr[j] - mu) * rs;
            dxhat[j] = gr[j] * gm[j];
            dgamma[j] += gr[j] * xhat[j];
            dbeta[j] += gr[j];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dot(&dxhat, &xhat) / d as f64;
        for j in 0..d {
            dx[i * d + j] = rs * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
        }
    }
    (dx, dgamma, dbeta)
}

#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Elementwise GELU, tanh approximation.
pub fn gelu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| gelu_scalar(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_cases() {
        let i = t(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = t(&[&[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(matmul(&i, &b).unwrap(), b);
        let r = matmul(&t(&[&[1.0, 2.0]]), &t(&[&[3.0], &[4.0]])).unwrap();
        assert_eq!(r.data(), &[11.0]);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let e = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        assert!(matches!(e, Error::Dimension(_)));
    }

    #[test]
    fn softmax_uniform_and_large() {
        let (p, d) = softmax_rows(&t(&[&[0.0, 0.0, 0.0]])).unwrap();
        for v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(d, vec![3.0]);
        let (p, _) = softmax_rows(&t(&[&[1000.0, 1000.0]])).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
        assert!(softmax_rows(&t(&[&[f64::NAN, 0.0]])).is_err());
    }

    #[test]
    fn layer_norm_cases() {
        let one = Tensor::full(&[2], 1.0);
        let zero = Tensor::zeros(&[2]);
        let y = layer_norm(&t(&[&[5.0, 5.0]]), &one, &zero, LAYER_NORM_EPS).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
        let y = layer_norm(&t(&[&[1.0, 3.0]]), &one, &zero, LAYER_NORM_EPS).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-6 && (y.data()[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(20.0) - 20.0).abs() < 1e-12);
        // x·Φ(x) at 1 is 0.841345; the tanh form lands within 1e-3.
        assert!((gelu_scalar(1.0) - 0.8412).abs() < 1e-3);
    }
}
