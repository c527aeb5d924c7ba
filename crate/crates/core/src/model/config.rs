use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and width hyperparameters of one auto-encoder branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Patch height in pixels.
    pub height: usize,
    /// Patch width in pixels.
    pub width: usize,
    pub in_channels: usize,
    /// 3 for the raw-pixel branch, 2 for the motion branch.
    pub out_channels: usize,
    /// Temporal radius T; cubes hold 2T+1 patches.
    pub context: usize,
    /// Encoder block widths; the last one is the attention width `d`.
    pub widths: [usize; 3],
    pub n_heads: usize,
    pub n_stacks: usize,
    pub groups: usize,
    /// Exponent of the reconstruction norm.
    pub p: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            in_channels: 3,
            out_channels: 3,
            context: 3,
            widths: [32, 64, 128],
            n_heads: 4,
            n_stacks: 3,
            groups: 8,
            p: 2.0,
        }
    }
}

impl ModelConfig {
    pub fn raw() -> Self {
        Self::default()
    }

    pub fn motion() -> Self {
        Self {
            out_channels: 2,
            ..Self::default()
        }
    }

    /// Same shape, other branch.
    pub fn with_out_channels(&self, out_channels: usize) -> Self {
        Self {
            out_channels,
            ..self.clone()
        }
    }

    pub fn seq_len(&self) -> usize {
        2 * self.context + 1
    }

    pub fn d(&self) -> usize {
        self.widths[2]
    }

    pub fn head_dim(&self) -> usize {
        self.d() / self.n_heads
    }

    /// Encoded spatial extent `(h, w)` after two 2x2 pools.
    pub fn encoded_hw(&self) -> (usize, usize) {
        (self.height / 4, self.width / 4)
    }

    pub fn is_motion(&self) -> bool {
        self.out_channels == 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.height == 0 || self.width == 0 || self.height % 4 != 0 || self.width % 4 != 0 {
            return bad(format!(
                "patch {}x{} must be a positive multiple of 4",
                self.height, self.width
            ));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.widths.iter().any(|&w| w == 0) {
            return bad(format!("encoder widths {:?} must be positive", self.widths));
        }
        if self.n_heads == 0 || self.d() % self.n_heads != 0 {
            return bad(format!(
                "attention width d={} not divisible by n_heads={}",
                self.d(),
                self.n_heads
            ));
        }
        if self.groups == 0 || self.d() % self.groups != 0 {
            return bad(format!(
                "attention width d={} not divisible into {} groups",
                self.d(),
                self.groups
            ));
        }
        if self.n_stacks == 0 {
            return bad("n_stacks must be at least 1".into());
        }
        if !(self.p > 0.0) {
            return bad(format!("norm exponent p={} must be positive", self.p));
        }
        Ok(())
    }
}
