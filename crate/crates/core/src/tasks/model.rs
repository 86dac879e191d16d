use std::collections::BTreeMap;

use crate::encoder::{EncoderConfig, EncoderWeights};
use crate::error::Result;
use crate::tensor::Tensor;

/// Linear map from the pooled vector to class or hazard-bin logits.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl TaskHead {
    pub fn zeros(hidden: usize, outputs: usize) -> Self {
        TaskHead {
            weight: Tensor::zeros(&[hidden, outputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }
}

/// Encoder plus task head: everything finetuning updates.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskModel {
    pub config: EncoderConfig,
    pub encoder: EncoderWeights,
    pub head: TaskHead,
}

impl TaskModel {
    pub fn new(config: EncoderConfig, encoder: EncoderWeights, outputs: usize) -> Self {
        let head = TaskHead::zeros(config.hidden, outputs);
        TaskModel {
            config,
            encoder,
            head,
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.encoder.named_params();
        v.push(("head.bias".into(), &self.head.bias));
        v.push(("head.weight".into(), &self.head.weight));
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = self.encoder.named_params_mut();
        v.push(("head.bias".into(), &mut self.head.bias));
        v.push(("head.weight".into(), &mut self.head.weight));
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    /// All parameters flattened in name order.
    pub fn flat(&self) -> Vec<f64> {
        self.named_params()
            .into_iter()
            .flat_map(|(_, t)| t.data().to_vec())
            .collect()
    }

    pub fn to_map(&self) -> BTreeMap<String, Tensor> {
        self.named_params()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()
    }
}
