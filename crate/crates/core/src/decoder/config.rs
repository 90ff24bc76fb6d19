use serde::{Deserialize, Serialize};

use crate::error::{invalid_argument, Result};

/// Sizes of every decoder stage. Serialized as the model configuration JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Feature width shared by tokens, anchors, fine features and aggregation.
    pub d: usize,
    /// Encoder tokens (point groups).
    pub tokens: usize,
    /// Anchors.
    pub anchors: usize,
    /// Coarse neighbors gathered per query.
    pub k_coarse: usize,
    /// Fine neighbors gathered per query.
    pub k_fine: usize,
    pub predictor_layers: usize,
    pub predictor_heads: usize,
    pub predictor_ffn: usize,
    pub head_blocks: usize,
    pub head_width: usize,
    pub freq_bands: usize,
    /// Half-width of the query cube; anchor locations are bounded by it.
    pub query_range: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            tokens: 32,
            anchors: 200,
            k_coarse: 4,
            k_fine: 4,
            predictor_layers: 2,
            predictor_heads: 4,
            predictor_ffn: 128,
            head_blocks: 5,
            head_width: 64,
            freq_bands: 10,
            query_range: 3.0,
        }
    }
}

impl ModelConfig {
    /// A very small configuration for gradient checks and unit tests.
    pub fn tiny() -> Self {
        ModelConfig {
            d: 8,
            tokens: 4,
            anchors: 6,
            k_coarse: 2,
            k_fine: 2,
            predictor_layers: 1,
            predictor_heads: 2,
            predictor_ffn: 8,
            head_blocks: 2,
            head_width: 8,
            freq_bands: 10,
            query_range: 3.0,
        }
    }

    pub fn encoding_dim(&self) -> usize {
        6 * self.freq_bands
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("tokens", self.tokens),
            ("anchors", self.anchors),
            ("k_coarse", self.k_coarse),
            ("predictor_heads", self.predictor_heads),
            ("predictor_ffn", self.predictor_ffn),
            ("head_width", self.head_width),
            ("freq_bands", self.freq_bands),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(invalid_argument(format!("model config: {name} must be positive")));
        }
        if !self.d.is_multiple_of(self.predictor_heads) {
            return Err(invalid_argument("model config: d must be divisible by predictor_heads"));
        }
        if self.k_coarse > self.anchors {
            return Err(invalid_argument("model config: k_coarse exceeds anchor count"));
        }
        if !(self.query_range > 0.0) {
            return Err(invalid_argument("model config: query_range must be positive"));
        }
        Ok(())
    }
}
