use crate::attention::DilationSchedule;
use crate::error::{Error, Result};

/// Shape and regularization of the encoder stack.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub ffn: usize,
    pub heads: usize,
    /// Stochastic-depth rate of the deepest block; shallower blocks ramp linearly from 0.
    pub drop_path: f64,
    pub patch_size: usize,
    /// Patch grid the position table was trained on.
    pub native_grid: (usize, usize),
    pub schedule: DilationSchedule,
    /// Standard deviation of the truncated-normal initializer.
    pub init_std: f64,
}

impl EncoderConfig {
    /// ViT-S sized model: 12 layers, width 384, FFN 1,536, 16 heads, 32×32
    /// patches, position table on the 32×32 grid of a 1,024² input.
    pub fn paper() -> Self {
        EncoderConfig {
            layers: 12,
            hidden: 384,
            ffn: 1536,
            heads: 16,
            drop_path: 0.1,
            patch_size: 32,
            native_grid: (32, 32),
            schedule: DilationSchedule::pretraining(),
            init_std: 0.02,
        }
    }

    /// Two-layer, width-32 model on a 512² input for fast runs.
    pub fn tiny() -> Self {
        EncoderConfig {
            layers: 2,
            hidden: 32,
            ffn: 128,
            heads: 4,
            drop_path: 0.1,
            patch_size: 32,
            native_grid: (16, 16),
            schedule: DilationSchedule::extended(256),
            init_std: 0.3,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" | "vit-s" => Ok(Self::paper()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::config(format!(
                "unknown preset {other:?} (paper, tiny)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.ffn == 0 || self.patch_size == 0 {
            return Err(Error::config("encoder extents must be positive"));
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.drop_path) {
            return Err(Error::config("drop path rate must lie in [0, 1)"));
        }
        if self.native_grid.0 == 0 || self.native_grid.1 == 0 {
            return Err(Error::config("native grid must be non-empty"));
        }
        Ok(())
    }

    pub fn patch_len(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    /// Drop rate of block `layer`: `drop_path · layer / (layers − 1)`.
    pub fn drop_rate(&self, layer: usize) -> f64 {
        if self.layers <= 1 {
            return self.drop_path;
        }
        self.drop_path * layer as f64 / (self.layers - 1) as f64
    }
}
