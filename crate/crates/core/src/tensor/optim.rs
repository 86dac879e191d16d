use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 5e-5,
            weight_decay: 0.05,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with decoupled weight decay. Moment buffers are keyed by parameter
/// name and start at zero.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    state: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr` (the schedule's value for this step).
    pub fn step<'p>(
        &mut self,
        params: impl IntoIterator<Item = (String, &'p mut Tensor)>,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let AdamWConfig {
            weight_decay,
            betas: (b1, b2),
            eps,
            ..
        } = self.config;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for (name, p) in params {
            let g = grads
                .get(&name)
                .ok_or_else(|| Error::contract(format!("no gradient for parameter {name}")))?;
            if g.len() != p.len() {
                return Err(Error::dim(format!("gradient for {name} has wrong size")));
            }
            let st = self.state.entry(name).or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            for (((w, &gv), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(st.m.iter_mut())
                .zip(st.v.iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * gv;
                *v = b2 * *v + (1.0 - b2) * gv * gv;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= lr * weight_decay * *w;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Linear warmup to the peak rate, then cosine decay to zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        0.5 * self.peak * (1.0 + (PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, v: f64) -> (BTreeMap<String, Tensor>, Tensor) {
        let mut g = BTreeMap::new();
        g.insert(name.to_string(), Tensor::scalar(v));
        (g, Tensor::scalar(1.0))
    }

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        let (g, mut p) = one("p", 0.0);
        opt.step([("p".to_string(), &mut p)], &g, 1e-3).unwrap();
        assert_eq!(p.data(), &[1.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        let (g, mut p) = one("p", 1.0);
        opt.step([("p".to_string(), &mut p)], &g, 1e-3).unwrap();
        // m̂ = v̂ = 1, so the step is lr / (1 + eps)
        assert!((1.0 - p.data()[0] - 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_shrinks() {
        let mut opt = AdamW::new(AdamWConfig::default());
        let (g, mut p) = one("p", 0.0);
        opt.step([("p".to_string(), &mut p)], &g, 0.1).unwrap();
        assert!((p.data()[0] - (1.0 - 0.1 * 0.05)).abs() < 1e-15);
    }

    #[test]
    fn schedule_shape() {
        let s = LrSchedule {
            peak: 1.0,
            warmup_steps: 4,
            total_steps: 12,
        };
        assert_eq!(s.at(0), 0.25);
        assert_eq!(s.at(3), 1.0);
        assert_eq!(s.at(4), 1.0);
        assert!((s.at(8) - 0.5).abs() < 1e-12);
        assert!(s.at(12) < 1e-12);
    }
}
