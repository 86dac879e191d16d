use rand::Rng;

use super::dilated::{head_columns, head_forward};
use super::DilationSchedule;
use crate::error::{Error, Result};
use crate::init::trunc_normal;
use crate::par;
use crate::tensor::kernels::matmul;
use crate::tensor::{Graph, Tensor, Var};

/// Q/K/V/output projections of one attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub bq: Tensor,
    pub bk: Tensor,
    pub bv: Tensor,
    pub bo: Tensor,
    pub heads: usize,
}

impl AttentionWeights {
    pub fn zeros(d: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::config(format!(
                "hidden size {d} is not divisible by {heads} heads"
            )));
        }
        let m = || Tensor::zeros(&[d, d]);
        let b = || Tensor::zeros(&[d]);
        Ok(AttentionWeights {
            wq: m(),
            wk: m(),
            wv: m(),
            wo: m(),
            bq: b(),
            bk: b(),
            bv: b(),
            bo: b(),
            heads,
        })
    }

    /// Truncated-normal projections with standard deviation `std`, zero biases.
    pub fn random<R: Rng>(d: usize, heads: usize, std: f64, rng: &mut R) -> Result<Self> {
        let mut w = Self::zeros(d, heads)?;
        for t in [&mut w.wq, &mut w.wk, &mut w.wv, &mut w.wo] {
            *t = trunc_normal(&[d, d], std, rng);
        }
        Ok(w)
    }

    /// Like [`Self::random`] but with random biases too; handy for oracle tests.
    pub fn random_with_bias<R: Rng>(d: usize, heads: usize, std: f64, rng: &mut R) -> Result<Self> {
        let mut w = Self::random(d, heads, std, rng)?;
        for t in [&mut w.bq, &mut w.bk, &mut w.bv, &mut w.bo] {
            *t = trunc_normal(&[d], std, rng);
        }
        Ok(w)
    }

    pub fn hidden(&self) -> usize {
        self.wq.cols()
    }

    pub fn head_dim(&self) -> usize {
        self.hidden() / self.heads
    }

    /// `(suffix, tensor)` pairs, e.g. `("q.weight", &wq)`.
    pub fn named(&self) -> [(&'static str, &Tensor); 8] {
        [
            ("k.bias", &self.bk),
            ("k.weight", &self.wk),
            ("o.bias", &self.bo),
            ("o.weight", &self.wo),
            ("q.bias", &self.bq),
            ("q.weight", &self.wq),
            ("v.bias", &self.bv),
            ("v.weight", &self.wv),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Tensor); 8] {
        [
            ("k.bias", &mut self.bk),
            ("k.weight", &mut self.wk),
            ("o.bias", &mut self.bo),
            ("o.weight", &mut self.wo),
            ("q.bias", &mut self.bq),
            ("q.weight", &mut self.wq),
            ("v.bias", &mut self.bv),
            ("v.weight", &mut self.wv),
        ]
    }

    /// Records the layer on `g`, registering its tensors as parameters named
    /// `{prefix}.q.weight` and so on. With an empty prefix the tensors enter
    /// as constants.
    pub fn forward<'a>(
        &'a self,
        g: &mut Graph<'a>,
        x: Var,
        schedule: &DilationSchedule,
        prefix: &str,
    ) -> Result<Var> {
        let mut bind = |name: &str, t: &'a Tensor| {
            if prefix.is_empty() {
                g.constant_ref(t)
            } else {
                g.param(format!("{prefix}.{name}"), t)
            }
        };
        let (wq, bq) = (bind("q.weight", &self.wq), bind("q.bias", &self.bq));
        let (wk, bk) = (bind("k.weight", &self.wk), bind("k.bias", &self.bk));
        let (wv, bv) = (bind("v.weight", &self.wv), bind("v.bias", &self.bv));
        let (wo, bo) = (bind("o.weight", &self.wo), bind("o.bias", &self.bo));
        let q = g.matmul(x, wq)?;
        let q = g.add_row(q, bq)?;
        let k = g.matmul(x, wk)?;
        let k = g.add_row(k, bk)?;
        let v = g.matmul(x, wv)?;
        let v = g.add_row(v, bv)?;
        let a = g.dilated_attention(q, k, v, self.heads, schedule)?;
        let o = g.matmul(a, wo)?;
        g.add_row(o, bo)
    }
}

/// Multi-head dilated attention on `x[N×d]` without gradient tracking.
pub fn multihead_dilated_attention(
    x: &Tensor,
    w: &AttentionWeights,
    schedule: &DilationSchedule,
) -> Result<Tensor> {
    if x.rank() != 2 || x.cols() != w.hidden() {
        return Err(Error::dim(format!(
            "input {:?} does not match hidden size {}",
            x.shape(),
            w.hidden()
        )));
    }
    let (n, d, heads) = (x.rows(), w.hidden(), w.heads);
    let dh = d / heads;
    // Each head projects straight into its own contiguous columns.
    let project = |wt: &Tensor, bias: &Tensor, h: usize| -> Result<Vec<f64>> {
        let cols = Tensor::new(vec![d, dh], head_columns(wt.data(), d, d, h, dh))?;
        let mut out = matmul(x, &cols)?;
        add_bias(
            &mut out,
            &Tensor::new(vec![dh], bias.data()[h * dh..(h + 1) * dh].to_vec())?,
        );
        Ok(out.into_data())
    };
    let per_head = par::map_range(heads, |h| {
        let q = project(&w.wq, &w.bq, h)?;
        let k = project(&w.wk, &w.bk, h)?;
        let v = project(&w.wv, &w.bv, h)?;
        head_forward(&q, &k, &v, dh, schedule, h).map(|(o, _)| o)
    });
    let mut a = vec![0.0; n * d];
    for (h, o) in per_head.into_iter().enumerate() {
        let o = o?;
        for i in 0..n {
            a[i * d + h * dh..i * d + (h + 1) * dh].copy_from_slice(&o[i * dh..(i + 1) * dh]);
        }
    }
    let mut out = matmul(&Tensor::new(vec![n, d], a)?, &w.wo)?;
    add_bias(&mut out, &w.bo);
    Ok(out)
}

fn add_bias(x: &mut Tensor, bias: &Tensor) {
    let d = x.cols();
    for row in x.data_mut().chunks_mut(d) {
        for (o, b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
}
