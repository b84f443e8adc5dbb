use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::gazedata::GridSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub grid: GridSpec,
    /// Pixel side of one grid cell.
    pub patch_px: usize,
    pub embed_dim: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub predictor_layers: usize,
    pub predictor_heads: usize,
    pub completion_layers: usize,
    pub completion_heads: usize,
    pub mlp_ratio: usize,
    pub max_seq_len: usize,
    pub smooth_l1_beta: f64,
    pub lambda_sc: f64,
    pub ln_eps: f64,
    /// Also layer-normalise the next-fixation targets (ablation switch).
    pub symmetric_ln: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    /// Desk-scale defaults: 4x4 grid of 4-pixel cells, `d = 32`.
    fn default() -> Self {
        Self {
            grid: GridSpec { rows: 4, cols: 4 },
            patch_px: 4,
            embed_dim: 32,
            encoder_layers: 2,
            encoder_heads: 4,
            predictor_layers: 2,
            predictor_heads: 4,
            completion_layers: 2,
            completion_heads: 4,
            mlp_ratio: 4,
            max_seq_len: 16,
            smooth_l1_beta: 1.0,
            lambda_sc: 1.0,
            ln_eps: 1e-6,
            symmetric_ln: false,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Predictor and decoder sizes used for the full-scale model
    /// (`d = 768`, 8-layer / 12-head causal predictor, 2-layer completion
    /// decoder) on a 14x14 grid of 32-pixel cells.
    pub fn paper_scale() -> Self {
        Self {
            grid: GridSpec { rows: 14, cols: 14 },
            patch_px: 32,
            embed_dim: 768,
            encoder_layers: 12,
            encoder_heads: 12,
            predictor_layers: 8,
            predictor_heads: 12,
            completion_layers: 2,
            completion_heads: 12,
            mlp_ratio: 4,
            max_seq_len: 196,
            ..Self::default()
        }
    }

    pub fn num_patches(&self) -> usize {
        self.grid.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.grid.rows == 0 || self.grid.cols == 0 {
            return bad(format!("grid {}x{} is empty", self.grid.rows, self.grid.cols));
        }
        if self.patch_px == 0 || self.embed_dim == 0 || self.mlp_ratio == 0 {
            return bad("patch_px, embed_dim and mlp_ratio must be positive".into());
        }
        for (name, heads) in [
            ("encoder_heads", self.encoder_heads),
            ("predictor_heads", self.predictor_heads),
            ("completion_heads", self.completion_heads),
        ] {
            if heads == 0 || !self.embed_dim.is_multiple_of(heads) {
                return bad(format!("embed_dim {} not divisible by {name} {heads}", self.embed_dim));
            }
        }
        if self.max_seq_len < self.num_patches() {
            return bad(format!(
                "max_seq_len {} is smaller than the {} grid patches",
                self.max_seq_len,
                self.num_patches()
            ));
        }
        if !(self.smooth_l1_beta > 0.0) {
            return bad(format!("smooth_l1_beta {} must be positive", self.smooth_l1_beta));
        }
        if !(self.lambda_sc >= 0.0) {
            return bad(format!("lambda_sc {} must be non-negative", self.lambda_sc));
        }
        if !(self.ln_eps > 0.0) {
            return bad(format!("ln_eps {} must be positive", self.ln_eps));
        }
        Ok(())
    }
}
