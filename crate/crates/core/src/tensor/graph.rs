//! Tape-based reverse mode. Every forward op appends a node holding its value
//! and enough saved state to run its backward rule; `backward` replays the tape
//! in reverse. A fresh graph is built per forward pass.

use std::borrow::Cow;
use std::collections::BTreeMap;

use super::kernels::{self, NormStats};
use super::Tensor;
use crate::attention::{dilated, DilationSchedule};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    MeanRows(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats,
    },
    SoftmaxRows(Var),
    RowMix {
        x: Var,
        stencil: Vec<Vec<(usize, f64)>>,
    },
    DilatedAttention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        schedule: DilationSchedule,
        lse: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
    },
    SurvivalNll {
        logits: Var,
        bin: usize,
        event: bool,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
    name: Option<String>,
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Vec<f64>>>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            name: None,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    /// Borrowed constant input.
    pub fn constant_ref(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    /// Owned leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    /// Named trainable parameter, borrowed from the model.
    pub fn param(&mut self, name: impl Into<String>, t: &'a Tensor) -> Var {
        let v = self.push(Cow::Borrowed(t), Op::Leaf, true);
        self.nodes[v.0].name = Some(name.into());
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads[v.0].as_ref()?;
        Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).ok()
    }

    /// Gradients for every named parameter; parameters the loss never reached get zeros.
    pub fn param_grads(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.name {
                let shape = node.value.shape().to_vec();
                let g = match &self.grads[i] {
                    Some(g) => Tensor::new(shape, g.clone()).expect("grad shape"),
                    None => Tensor::zeros(&shape),
                };
                out.insert(name.clone(), g);
            }
        }
        out
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Cow::Owned(out), Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::dim(format!("add {:?} + {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Cow::Owned(out), Op::Add(a, b), rg))
    }

    /// Adds a length-d vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        let d = x.cols();
        if b.len() != d {
            return Err(Error::dim(format!("bias {:?} for rows of {d}", b.shape())));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(d) {
            for (o, bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a, bias]);
        Ok(self.push(Cow::Owned(out), Op::AddRow(a, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::dim(format!("mul {:?} * {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Cow::Owned(out), Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v * c).collect();
        let out = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(out), Op::Scale(a, c), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum(a), rg)
    }

    /// Mean over rows: `[N×d] → [d]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (n, d) = (x.rows(), x.cols());
        let mut acc = vec![0.0; d];
        for i in 0..n {
            for (o, v) in acc.iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        for o in &mut acc {
            *o /= n as f64;
        }
        let out = Tensor::new(vec![d], acc).expect("d > 0");
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(out), Op::MeanRows(a), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = kernels::gelu(self.value(a));
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(out), Op::Gelu(a), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (out, stats) = kernels::layer_norm_fwd(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            kernels::LAYER_NORM_EPS,
        )?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Cow::Owned(out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            },
            rg,
        ))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (p, _) = kernels::softmax_rows(self.value(a))?;
        let rg = self.rg(&[a]);
        Ok(self.push(Cow::Owned(p), Op::SoftmaxRows(a), rg))
    }

    /// Output row `o` is `Σ w · x[src]` over `stencil[o]`.
    pub fn row_mix(&mut self, x: Var, stencil: Vec<Vec<(usize, f64)>>) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        if stencil.iter().flatten().any(|&(s, _)| s >= n) {
            return Err(Error::dim("row_mix stencil indexes past the input"));
        }
        let mut data = vec![0.0; stencil.len() * d];
        for (o, taps) in stencil.iter().enumerate() {
            let row = &mut data[o * d..(o + 1) * d];
            for &(s, w) in taps {
                for (r, v) in row.iter_mut().zip(xv.row(s)) {
                    *r += w * v;
                }
            }
        }
        let out = Tensor::new(vec![stencil.len(), d], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Cow::Owned(out), Op::RowMix { x, stencil }, rg))
    }

    /// Multi-head dilated attention core on projected `q`, `k`, `v` (`[N×d]` each).
    pub fn dilated_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        schedule: &DilationSchedule,
    ) -> Result<Var> {
        let (out, lse) = dilated::forward_multihead(
            self.value(q),
            self.value(k),
            self.value(v),
            heads,
            schedule,
        )?;
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            Cow::Owned(out),
            Op::DilatedAttention {
                q,
                k,
                v,
                heads,
                schedule: schedule.clone(),
                lse,
            },
            rg,
        ))
    }

    /// `−log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let x = self.value(logits);
        if label >= x.len() {
            return Err(Error::contract(format!(
                "label {label} out of range for {} classes",
                x.len()
            )));
        }
        let max = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - x.data()[label];
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(loss)),
            Op::CrossEntropy { logits, label },
            rg,
        ))
    }

    /// Discrete-time hazard negative log-likelihood for an event (or censoring)
    /// in bin `bin`.
    pub fn survival_nll(&mut self, logits: Var, bin: usize, event: bool) -> Result<Var> {
        let x = self.value(logits);
        if bin >= x.len() {
            return Err(Error::contract(format!(
                "time bin {bin} out of range for {} bins",
                x.len()
            )));
        }
        let loss = survival_nll_value(x.data(), bin, event);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(loss)),
            Op::SurvivalNll { logits, bin, event },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let contribs = self.backward_node(i, &g)?;
            self.grads[i] = Some(g);
            for (v, dv) in contribs {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut self.grads[v.0] {
                    Some(acc) => {
                        for (a, d) in acc.iter_mut().zip(&dv) {
                            *a += d;
                        }
                    }
                    slot @ None => *slot = Some(dv),
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[f64]) -> Result<Vec<(Var, Vec<f64>)>> {
        let node = &self.nodes[i];
        let want = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if want(*a) {
                    out.push((*a, kernels::matmul_grad_lhs(g, bv.data(), m, k, n)));
                }
                if want(*b) {
                    out.push((*b, kernels::matmul_grad_rhs(av.data(), g, m, k, n)));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::AddRow(a, bias) => {
                out.push((*a, g.to_vec()));
                if want(*bias) {
                    let d = self.value(*bias).len();
                    let mut db = vec![0.0; d];
                    for row in g.chunks(d) {
                        for (o, v) in db.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    out.push((*bias, db));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                out.push((*a, g.iter().zip(bv).map(|(x, y)| x * y).collect()));
                out.push((*b, g.iter().zip(av).map(|(x, y)| x * y).collect()));
            }
            Op::Scale(a, c) => out.push((*a, g.iter().map(|v| v * c).collect())),
            Op::Sum(a) => out.push((*a, vec![g[0]; self.value(*a).len()])),
            Op::MeanRows(a) => {
                let x = self.value(*a);
                let n = x.rows() as f64;
                let row: Vec<f64> = g.iter().map(|v| v / n).collect();
                out.push((*a, row.repeat(x.rows())));
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                out.push((
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(gv, &xv)| gv * kernels::gelu_grad_scalar(xv))
                        .collect(),
                ));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            } => {
                let (dx, dg, db) =
                    kernels::layer_norm_bwd(self.value(*x), self.value(*gamma), stats, g);
                out.push((*x, dx));
                out.push((*gamma, dg));
                out.push((*beta, db));
            }
            Op::SoftmaxRows(a) => {
                let p = node.value.data();
                let n = node.value.cols();
                let mut dx = vec![0.0; p.len()];
                for ((pr, gr), dr) in p.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
                    let s = kernels::dot(pr, gr);
                    for j in 0..n {
                        dr[j] = pr[j] * (gr[j] - s);
                    }
                }
                out.push((*a, dx));
            }
            Op::RowMix { x, stencil } => {
                let xv = self.value(*x);
                let d = xv.cols();
                let mut dx = vec![0.0; xv.len()];
                for (o, taps) in stencil.iter().enumerate() {
                    let gr = &g[o * d..(o + 1) * d];
                    for &(s, w) in taps {
                        for (r, gv) in dx[s * d..(s + 1) * d].iter_mut().zip(gr) {
                            *r += w * gv;
                        }
                    }
                }
                out.push((*x, dx));
            }
            Op::DilatedAttention {
                q,
                k,
                v,
                heads,
                schedule,
                lse,
            } => {
                let (dq, dk, dv) = dilated::backward_multihead(
                    self.value(*q),
                    self.value(*k),
                    self.value(*v),
                    &node.value,
                    lse,
                    g,
                    *heads,
                    schedule,
                )?;
                out.push((*q, dq));
                out.push((*k, dk));
                out.push((*v, dv));
            }
            Op::CrossEntropy { logits, label } => {
                let x = self.value(*logits);
                let (p, _) = kernels::softmax_rows(&x.clone().reshape(vec![1, x.len()])?)?;
                let mut d: Vec<f64> = p.data().iter().map(|v| v * g[0]).collect();
                d[*label] -= g[0];
                out.push((*logits, d));
            }
            Op::SurvivalNll { logits, bin, event } => {
                let x = self.value(*logits).data();
                let mut d = vec![0.0; x.len()];
                // loss = Σ_{j<b} softplus(x_j) + [event] softplus(−x_b) + [!event] softplus(x_b)
                for j in 0..*bin {
                    d[j] = kernels::sigmoid(x[j]) * g[0];
                }
                d[*bin] = if *event {
                    -kernels::sigmoid(-x[*bin]) * g[0]
                } else {
                    kernels::sigmoid(x[*bin]) * g[0]
                };
                out.push((*logits, d));
            }
        }
        Ok(out)
    }
}

/// `−[c·(log S_{b−1} + log h_b) + (1−c)·log S_b]` with `h = sigmoid(logit)`.
pub(crate) fn survival_nll_value(logits: &[f64], bin: usize, event: bool) -> f64 {
    let prior: f64 = logits[..bin].iter().map(|&x| kernels::softplus(x)).sum();
    let last = if event {
        kernels::softplus(-logits[bin])
    } else {
        kernels::softplus(logits[bin])
    };
    prior + last
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn linear_chain_hand_gradients() {
        // loss = sum(x · W): dW[k][j] = Σ_i x[i][k], dx[i][k] = Σ_j W[k][j]
        let xt = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let wt = Tensor::new(vec![2, 3], vec![1.0, 0.0, -1.0, 2.0, 1.0, 0.5]).unwrap();
        let mut g = Graph::new();
        let x = g.variable(xt);
        let w = g.param("w", &wt);
        let y = g.matmul(x, w).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[4.0, 4.0, 4.0, 6.0, 6.0, 6.0]);
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 3.5, 0.0, 3.5]);
        assert!(g.param_grads().contains_key("w"));
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn cross_entropy_values() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::zeros(&[2]));
        let l = g.cross_entropy(x, 1).unwrap();
        assert!((g.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.5, -0.5]);
        assert!(matches!(g.cross_entropy(x, 2), Err(Error::Contract(_))));
        // growing gap on the wrong side grows the loss
        let mut prev = 0.0;
        for gap in [1.0, 10.0, 100.0] {
            let mut g = Graph::new();
            let x = g.variable(Tensor::new(vec![2], vec![gap, 0.0]).unwrap());
            let l = g.cross_entropy(x, 1).unwrap();
            let v = g.value(l).data()[0];
            assert!(v > prev);
            prev = v;
        }
        assert!((prev - 100.0).abs() < 1e-9);
    }

    #[test]
    fn survival_nll_values() {
        assert!((survival_nll_value(&[0.0], 0, true) - std::f64::consts::LN_2).abs() < 1e-15);
        // hazards → 0 everywhere, censored in the last bin: survives with certainty
        let l = survival_nll_value(&[-40.0; 4], 3, false);
        assert!(l < 1e-15);
    }
}
