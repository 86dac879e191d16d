use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EncoderConfig;
use crate::attention::AttentionWeights;
use crate::error::{Error, Result};
use crate::image::{Embedder, PosEmbedTable};
use crate::init::trunc_normal;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub norm1_gamma: Tensor,
    pub norm1_beta: Tensor,
    pub attn: AttentionWeights,
    pub norm2_gamma: Tensor,
    pub norm2_beta: Tensor,
    pub fc1_weight: Tensor,
    pub fc1_bias: Tensor,
    pub fc2_weight: Tensor,
    pub fc2_bias: Tensor,
}

impl LayerWeights {
    fn zeros(cfg: &EncoderConfig) -> Result<Self> {
        let d = cfg.hidden;
        Ok(LayerWeights {
            norm1_gamma: Tensor::full(&[d], 1.0),
            norm1_beta: Tensor::zeros(&[d]),
            attn: AttentionWeights::zeros(d, cfg.heads)?,
            norm2_gamma: Tensor::full(&[d], 1.0),
            norm2_beta: Tensor::zeros(&[d]),
            fc1_weight: Tensor::zeros(&[d, cfg.ffn]),
            fc1_bias: Tensor::zeros(&[cfg.ffn]),
            fc2_weight: Tensor::zeros(&[cfg.ffn, d]),
            fc2_bias: Tensor::zeros(&[d]),
        })
    }

    fn random<R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let mut l = Self::zeros(cfg)?;
        l.attn = AttentionWeights::random(cfg.hidden, cfg.heads, cfg.init_std, rng)?;
        l.fc1_weight = trunc_normal(&[cfg.hidden, cfg.ffn], cfg.init_std, rng);
        l.fc2_weight = trunc_normal(&[cfg.ffn, cfg.hidden], cfg.init_std, rng);
        Ok(l)
    }

    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut v: Vec<(String, &Tensor)> = self
            .attn
            .named()
            .into_iter()
            .map(|(n, t)| (format!("attn.{n}"), t))
            .collect();
        v.extend([
            ("ffn.fc1.bias".to_string(), &self.fc1_bias),
            ("ffn.fc1.weight".to_string(), &self.fc1_weight),
            ("ffn.fc2.bias".to_string(), &self.fc2_bias),
            ("ffn.fc2.weight".to_string(), &self.fc2_weight),
            ("norm1.beta".to_string(), &self.norm1_beta),
            ("norm1.gamma".to_string(), &self.norm1_gamma),
            ("norm2.beta".to_string(), &self.norm2_beta),
            ("norm2.gamma".to_string(), &self.norm2_gamma),
        ]);
        v
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v: Vec<(String, &mut Tensor)> = self
            .attn
            .named_mut()
            .into_iter()
            .map(|(n, t)| (format!("attn.{n}"), t))
            .collect();
        v.extend([
            ("ffn.fc1.bias".to_string(), &mut self.fc1_bias),
            ("ffn.fc1.weight".to_string(), &mut self.fc1_weight),
            ("ffn.fc2.bias".to_string(), &mut self.fc2_bias),
            ("ffn.fc2.weight".to_string(), &mut self.fc2_weight),
            ("norm1.beta".to_string(), &mut self.norm1_beta),
            ("norm1.gamma".to_string(), &mut self.norm1_gamma),
            ("norm2.beta".to_string(), &mut self.norm2_beta),
            ("norm2.gamma".to_string(), &mut self.norm2_gamma),
        ]);
        v
    }
}

/// Every learnable tensor of the encoder: patch embedder, position table,
/// transformer blocks and the final norm.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights {
    pub embedder: Embedder,
    pub pos: PosEmbedTable,
    pub layers: Vec<LayerWeights>,
    pub norm_gamma: Tensor,
    pub norm_beta: Tensor,
}

pub(crate) fn layer_prefix(i: usize) -> String {
    format!("layers.{i:02}")
}

impl EncoderWeights {
    /// All projections zero, norms identity, position table zero.
    pub fn zeros(cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.hidden;
        let n0 = cfg.native_grid.0 * cfg.native_grid.1;
        Ok(EncoderWeights {
            embedder: Embedder::zeros(cfg.patch_len(), d),
            pos: PosEmbedTable::new(Tensor::zeros(&[n0, d]), cfg.native_grid)?,
            layers: (0..cfg.layers)
                .map(|_| LayerWeights::zeros(cfg))
                .collect::<Result<_>>()?,
            norm_gamma: Tensor::full(&[d], 1.0),
            norm_beta: Tensor::zeros(&[d]),
        })
    }

    /// Truncated-normal projections and positions, zero biases, identity norms.
    pub fn random<R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let mut w = Self::zeros(cfg)?;
        w.embedder = Embedder::random(cfg.patch_len(), cfg.hidden, cfg.init_std, rng);
        w.pos = PosEmbedTable::random(cfg.native_grid, cfg.hidden, cfg.init_std, rng);
        w.layers = (0..cfg.layers)
            .map(|_| LayerWeights::random(cfg, rng))
            .collect::<Result<_>>()?;
        Ok(w)
    }

    /// [`Self::random`] driven by a ChaCha8 stream seeded with `seed`.
    pub fn seeded(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        Self::random(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// `(name, tensor)` for every parameter, sorted by name.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![
            ("embed.bias".to_string(), &self.embedder.bias),
            ("embed.weight".to_string(), &self.embedder.weight),
            ("norm.beta".to_string(), &self.norm_beta),
            ("norm.gamma".to_string(), &self.norm_gamma),
            ("pos_embed".to_string(), &self.pos.table),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = layer_prefix(i);
            v.extend(l.named().into_iter().map(|(n, t)| (format!("{p}.{n}"), t)));
        }
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = vec![
            ("embed.bias".to_string(), &mut self.embedder.bias),
            ("embed.weight".to_string(), &mut self.embedder.weight),
            ("norm.beta".to_string(), &mut self.norm_beta),
            ("norm.gamma".to_string(), &mut self.norm_gamma),
            ("pos_embed".to_string(), &mut self.pos.table),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = layer_prefix(i);
            v.extend(
                l.named_mut()
                    .into_iter()
                    .map(|(n, t)| (format!("{p}.{n}"), t)),
            );
        }
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_map(&self) -> BTreeMap<String, Tensor> {
        self.named_params()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect()
    }

    /// Overwrites parameters from `map`; every parameter must be present with
    /// its configured shape. Extra entries are ignored.
    pub fn load_map(&mut self, map: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, t) in self.named_params_mut() {
            let src = map
                .get(&name)
                .ok_or_else(|| Error::config(format!("checkpoint lacks parameter {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::dim(format!(
                    "checkpoint {name} has shape {:?}, model expects {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = src.clone();
        }
        Ok(())
    }
}
