use rand::seq::index::sample;
use rand::Rng;

use crate::attention::DilationSchedule;
use crate::encoder::Mode;
use crate::error::Result;
use crate::tasks::{sample_gradients, Sample, Target, TaskModel};
use crate::tensor::{Graph, Tensor, Var};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Floor on the relative-error denominator so vanishing gradients compare by
/// absolute error.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn pick<R: Rng>(len: usize, limit: usize, rng: &mut R) -> Vec<usize> {
    if len <= limit {
        (0..len).collect()
    } else {
        sample(rng, len, limit).into_vec()
    }
}

fn eval<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    Ok(g.value(loss).data()[0])
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` with central
/// differences on up to `limit` random entries of every input.
pub fn check_graph<F, R>(
    name: &str,
    inputs: &[Tensor],
    f: F,
    limit: usize,
    rng: &mut R,
) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    R: Rng,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let grads: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut probe = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        for j in pick(t.len(), limit, rng) {
            let orig = t.data()[j];
            probe[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&probe, &f)?;
            probe[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&probe, &f)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(grads[i].data()[j], numeric));
            checked += 1;
        }
    }
    Ok(GradReport {
        name: name.to_string(),
        checked,
        max_rel_error: worst,
    })
}

/// Gradient check of a full model loss with respect to up to `limit`
/// entries of every named parameter. Evaluation mode, so no drop path.
pub fn check_model<R: Rng>(
    name: &str,
    model: &TaskModel,
    sample: &Sample,
    target: Target,
    schedule: &DilationSchedule,
    limit: usize,
    rng: &mut R,
) -> Result<GradReport> {
    let (_, grads) = sample_gradients(model, sample, target, schedule, &mut Mode::Eval)?;
    let loss_at = |m: &TaskModel| -> Result<f64> {
        Ok(sample_gradients(m, sample, target, schedule, &mut Mode::Eval)?.0)
    };
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let names: Vec<(String, usize)> = model
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.len()))
        .collect();
    for (pname, len) in names {
        for j in pick(len, limit, rng) {
            let set = |m: &mut TaskModel, v: f64| {
                for (n, t) in m.named_params_mut() {
                    if n == pname {
                        t.data_mut()[j] = v;
                    }
                }
            };
            let orig = model
                .named_params()
                .into_iter()
                .find(|(n, _)| *n == pname)
                .map(|(_, t)| t.data()[j])
                .unwrap_or_default();
            set(&mut probe, orig + FD_STEP);
            let up = loss_at(&probe)?;
            set(&mut probe, orig - FD_STEP);
            let down = loss_at(&probe)?;
            set(&mut probe, orig);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = grads.get(&pname).map_or(0.0, |g| g.data()[j]);
            worst = worst.max(relative_error(analytic, numeric));
            checked += 1;
        }
    }
    Ok(GradReport {
        name: name.to_string(),
        checked,
        max_rel_error: worst,
    })
}
