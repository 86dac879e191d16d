//! Pre-norm transformer encoder over patch tokens with dilated attention.

mod config;
mod weights;

use std::path::Path;

use rand::RngCore;

pub use config::EncoderConfig;
pub use weights::{EncoderWeights, LayerWeights};

use crate::attention::DilationSchedule;
use crate::error::{Error, Result};
use crate::image::{pos_stencil, PatchSequence};
use crate::tensor::{load_checkpoint, save_checkpoint, Graph, Tensor, Var};
use weights::layer_prefix;

/// Forward-pass mode. Training draws stochastic-depth decisions from the
/// supplied generator; evaluation is deterministic.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut dyn RngCore),
}

impl Mode<'_> {
    /// Whether block `layer` keeps its residual branches, and the scale applied
    /// to kept branches.
    fn keep(&mut self, rate: f64) -> (bool, f64) {
        match self {
            Mode::Train(rng) if rate > 0.0 => {
                let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                let keep = 1.0 - rate;
                if u < keep {
                    (true, 1.0 / keep)
                } else {
                    (false, 0.0)
                }
            }
            _ => (true, 1.0),
        }
    }
}

fn bind<'a>(g: &mut Graph<'a>, trainable: bool, name: &str, t: &'a Tensor) -> Var {
    if trainable {
        g.param(name, t)
    } else {
        g.constant_ref(t)
    }
}

/// Records a set of encoder weights on a graph.
pub struct EncoderGraph<'w> {
    pub config: &'w EncoderConfig,
    pub weights: &'w EncoderWeights,
    /// Register tensors as named parameters so `param_grads` reports them.
    pub trainable: bool,
}

impl<'w> EncoderGraph<'w> {
    pub fn new(config: &'w EncoderConfig, weights: &'w EncoderWeights, trainable: bool) -> Self {
        EncoderGraph {
            config,
            weights,
            trainable,
        }
    }

    /// One pre-norm block:
    /// `x + DropPath(Attn(LN(x)))` followed by `x + DropPath(FFN(LN(x)))`.
    pub fn block(
        &self,
        g: &mut Graph<'w>,
        x: Var,
        layer: usize,
        schedule: &DilationSchedule,
        mode: &mut Mode,
    ) -> Result<Var> {
        let w = self.weights.layers.get(layer).ok_or_else(|| {
            Error::config(format!(
                "layer {layer} out of range ({} layers)",
                self.weights.layers.len()
            ))
        })?;
        let p = layer_prefix(layer);
        let t = self.trainable;
        let (keep, scale) = mode.keep(self.config.drop_rate(layer));
        let mut x = x;
        if keep {
            let gamma = bind(g, t, &format!("{p}.norm1.gamma"), &w.norm1_gamma);
            let beta = bind(g, t, &format!("{p}.norm1.beta"), &w.norm1_beta);
            let h = g.layer_norm(x, gamma, beta)?;
            let prefix = if t {
                format!("{p}.attn")
            } else {
                String::new()
            };
            let h = w.attn.forward(g, h, schedule, &prefix)?;
            let h = if scale != 1.0 { g.scale(h, scale) } else { h };
            x = g.add(x, h)?;
        }
        let (keep, scale) = mode.keep(self.config.drop_rate(layer));
        if keep {
            let gamma = bind(g, t, &format!("{p}.norm2.gamma"), &w.norm2_gamma);
            let beta = bind(g, t, &format!("{p}.norm2.beta"), &w.norm2_beta);
            let h = g.layer_norm(x, gamma, beta)?;
            let w1 = bind(g, t, &format!("{p}.ffn.fc1.weight"), &w.fc1_weight);
            let b1 = bind(g, t, &format!("{p}.ffn.fc1.bias"), &w.fc1_bias);
            let w2 = bind(g, t, &format!("{p}.ffn.fc2.weight"), &w.fc2_weight);
            let b2 = bind(g, t, &format!("{p}.ffn.fc2.bias"), &w.fc2_bias);
            let h = g.matmul(h, w1)?;
            let h = g.add_row(h, b1)?;
            let h = g.gelu(h);
            let h = g.matmul(h, w2)?;
            let h = g.add_row(h, b2)?;
            let h = if scale != 1.0 { g.scale(h, scale) } else { h };
            x = g.add(x, h)?;
        }
        Ok(x)
    }

    /// Blocks, final norm and mean pooling over already embedded tokens.
    /// Returns `(tokens N×d, pooled [d])`.
    pub fn encode_tokens(
        &self,
        g: &mut Graph<'w>,
        x: Var,
        schedule: &DilationSchedule,
        mode: &mut Mode,
    ) -> Result<(Var, Var)> {
        let mut x = x;
        for layer in 0..self.weights.layers.len() {
            x = self.block(g, x, layer, schedule, mode)?;
        }
        let t = self.trainable;
        let gamma = bind(g, t, "norm.gamma", &self.weights.norm_gamma);
        let beta = bind(g, t, "norm.beta", &self.weights.norm_beta);
        let tokens = g.layer_norm(x, gamma, beta)?;
        let pooled = g.mean_rows(tokens);
        Ok((tokens, pooled))
    }

    /// Patch embedding plus interpolated positions for raw patches
    /// `[N × 3P²]` laid out on `grid` (rows, cols).
    pub fn embed(&self, g: &mut Graph<'w>, patches: Var, grid: (usize, usize)) -> Result<Var> {
        let t = self.trainable;
        let we = bind(g, t, "embed.weight", &self.weights.embedder.weight);
        let be = bind(g, t, "embed.bias", &self.weights.embedder.bias);
        let e = g.matmul(patches, we)?;
        let e = g.add_row(e, be)?;
        let pos = bind(g, t, "pos_embed", &self.weights.pos.table);
        let pos = match pos_stencil(self.weights.pos.native_grid, grid)? {
            Some(stencil) => g.row_mix(pos, stencil)?,
            None => pos,
        };
        g.add(e, pos)
    }

    /// Raw patches to `(tokens, pooled)`.
    pub fn forward(
        &self,
        g: &mut Graph<'w>,
        patches: Var,
        grid: (usize, usize),
        schedule: &DilationSchedule,
        mode: &mut Mode,
    ) -> Result<(Var, Var)> {
        let x = self.embed(g, patches, grid)?;
        self.encode_tokens(g, x, schedule, mode)
    }
}

/// Applies block `layer` of `weights` to `x[N×d]` without gradient tracking.
pub fn block_forward(
    x: &Tensor,
    config: &EncoderConfig,
    weights: &EncoderWeights,
    layer: usize,
    schedule: &DilationSchedule,
    mode: &mut Mode,
) -> Result<Tensor> {
    check_tokens(x, config)?;
    let enc = EncoderGraph::new(config, weights, false);
    let mut g = Graph::new();
    let xv = g.constant_ref(x);
    let out = enc.block(&mut g, xv, layer, schedule, mode)?;
    Ok(g.value(out).clone())
}

/// Encodes an embedded patch sequence; returns `(tokens N×d, pooled [d])`.
pub fn encode(
    seq: &PatchSequence,
    config: &EncoderConfig,
    weights: &EncoderWeights,
    schedule: &DilationSchedule,
    mode: &mut Mode,
) -> Result<(Tensor, Tensor)> {
    check_tokens(&seq.embeddings, config)?;
    let enc = EncoderGraph::new(config, weights, false);
    let mut g = Graph::new();
    let x = g.constant_ref(&seq.embeddings);
    let (tokens, pooled) = enc.encode_tokens(&mut g, x, schedule, mode)?;
    Ok((g.value(tokens).clone(), g.value(pooled).clone()))
}

fn check_tokens(x: &Tensor, config: &EncoderConfig) -> Result<()> {
    if x.rank() != 2 || x.cols() != config.hidden {
        return Err(Error::dim(format!(
            "token matrix {:?} does not match hidden size {}",
            x.shape(),
            config.hidden
        )));
    }
    Ok(())
}

/// Writes all encoder parameters as an LVT1 checkpoint.
pub fn save_weights(path: &Path, weights: &EncoderWeights) -> Result<()> {
    save_checkpoint(path, &weights.to_map())
}

/// Reads an LVT1 checkpoint into freshly allocated weights for `config`.
pub fn load_weights(path: &Path, config: &EncoderConfig) -> Result<EncoderWeights> {
    let map = load_checkpoint(path)?;
    let mut w = EncoderWeights::zeros(config)?;
    w.load_map(&map).map_err(|e| match e {
        Error::Config(msg) | Error::Dimension(msg) => Error::format(path, msg),
        other => other,
    })?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::PatchGrid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> EncoderConfig {
        let mut c = EncoderConfig::tiny();
        c.native_grid = (4, 4);
        c.schedule = DilationSchedule::extended(16);
        c
    }

    fn sequence(cfg: &EncoderConfig, seed: u64) -> PatchSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PatchSequence {
            embeddings: crate::init::normal(&[16, cfg.hidden], 1.0, &mut rng),
            grid: PatchGrid::new(4 * cfg.patch_size, 4 * cfg.patch_size, cfg.patch_size).unwrap(),
        }
    }

    #[test]
    fn zero_branches_give_identity_block() {
        let cfg = tiny();
        let w = EncoderWeights::zeros(&cfg).unwrap();
        let seq = sequence(&cfg, 1);
        let y =
            block_forward(&seq.embeddings, &cfg, &w, 0, &cfg.schedule, &mut Mode::Eval).unwrap();
        assert_eq!(y, seq.embeddings);
    }

    #[test]
    fn eval_is_deterministic_and_pooled_is_token_mean() {
        let cfg = tiny();
        let w = EncoderWeights::random(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let seq = sequence(&cfg, 3);
        let (t1, p1) = encode(&seq, &cfg, &w, &cfg.schedule, &mut Mode::Eval).unwrap();
        let (t2, p2) = encode(&seq, &cfg, &w, &cfg.schedule, &mut Mode::Eval).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(p1, p2);
        for c in 0..cfg.hidden {
            let mean = (0..t1.rows()).map(|r| t1.at2(r, c)).sum::<f64>() / t1.rows() as f64;
            assert!((mean - p1.data()[c]).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_drop_rate_train_matches_eval() {
        let mut cfg = tiny();
        cfg.drop_path = 0.0;
        let w = EncoderWeights::random(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let seq = sequence(&cfg, 5);
        let (_, eval) = encode(&seq, &cfg, &w, &cfg.schedule, &mut Mode::Eval).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (_, train) = encode(&seq, &cfg, &w, &cfg.schedule, &mut Mode::Train(&mut rng)).unwrap();
        assert_eq!(eval, train);
    }

    #[test]
    fn drop_rates_ramp_linearly() {
        let cfg = EncoderConfig::paper();
        assert_eq!(cfg.drop_rate(0), 0.0);
        assert!((cfg.drop_rate(11) - 0.1).abs() < 1e-15);
        assert!((cfg.drop_rate(5) - 0.1 * 5.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn parameter_names_are_sorted_and_unique() {
        let cfg = tiny();
        let w = EncoderWeights::zeros(&cfg).unwrap();
        let names: Vec<String> = w.named_params().into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(names, sorted);
        assert!(names.contains(&"layers.01.attn.q.weight".to_string()));
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = tiny();
        let w = EncoderWeights::random(&cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.lvt");
        save_weights(&path, &w).unwrap();
        assert_eq!(load_weights(&path, &cfg).unwrap(), w);
        let mut other = cfg.clone();
        other.hidden = 16;
        other.heads = 2;
        assert!(load_weights(&path, &other).is_err());
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut cfg = tiny();
        cfg.heads = 5;
        assert!(matches!(EncoderWeights::zeros(&cfg), Err(Error::Config(_))));
    }
}
