use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network shape. Layer indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub width: usize,
    pub height: usize,
    /// Output channels of each convolution layer, per stream.
    pub channels: Vec<usize>,
    /// Layers followed by a fusion module; each contributes one scale.
    pub fusion_layers: Vec<usize>,
    /// Layers followed by 2×2 pooling (after any fusion).
    pub pool_after: Vec<usize>,
    pub feature_dim: usize,
    pub head_hidden: usize,
    pub implicit_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 16,
            height: 16,
            channels: vec![8, 16, 16, 32, 32],
            fusion_layers: vec![1, 3, 5],
            pool_after: vec![2, 4],
            feature_dim: 128,
            head_hidden: 128,
            implicit_hidden: vec![128, 128],
        }
    }
}

impl ModelConfig {
    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.depth();
        if l == 0 || self.channels.contains(&0) {
            return Err(Error::Config("channels must be non-empty and positive".into()));
        }
        if self.fusion_layers.is_empty() {
            return Err(Error::Config("at least one fusion layer is required".into()));
        }
        for (what, list) in [("fusion_layers", &self.fusion_layers), ("pool_after", &self.pool_after)] {
            if list.iter().any(|&i| i == 0 || i > l) {
                return Err(Error::Config(format!("{what} must lie in 1..={l}")));
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!("{what} must be strictly increasing")));
            }
        }
        if self.feature_dim == 0 || self.head_hidden == 0 || self.implicit_hidden.contains(&0) {
            return Err(Error::Config("dense widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Iterations between learning-rate halvings; 0 disables the schedule.
    pub lr_halving: usize,
    pub batch_size: usize,
    pub iterations: usize,
    /// Weight of the implicit loss.
    pub lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            lr_halving: 500,
            batch_size: 8,
            iterations: 3000,
            lambda: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, iteration: usize) -> f64 {
        if self.lr_halving == 0 {
            self.lr
        } else {
            self.lr * 0.5f64.powi((iteration / self.lr_halving) as i32)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || !(self.lambda >= 0.0) {
            return Err(Error::Config("need lr > 0, batch_size >= 1, lambda >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub lr: f64,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            lr: 1e-6,
            tolerance: 5e-5,
            max_iters: 200,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.tolerance > 0.0) || self.max_iters == 0 {
            return Err(Error::Config("need lr > 0, tolerance > 0, max_iters >= 1".into()));
        }
        Ok(())
    }
}
