use serde::{Deserialize, Serialize};

use langnav_core::command::MAX_TOKENS;
use langnav_core::raster::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_frames: usize,
    /// Simulation steps between consecutive input frames.
    pub stride: usize,
    pub channels: usize,
    /// Side of the square feature grid after the encoders.
    pub grid: usize,
    pub max_tokens: usize,
    pub heads: usize,
    pub use_context: bool,
    pub image_size: usize,
    pub classes: usize,
    pub vocab_size: usize,
    /// Adds the fused features back onto the attended ones before Conv3D.
    pub residual: bool,
    pub decoder_channels: [usize; 2],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_frames: 8,
            stride: 10,
            channels: 32,
            grid: 8,
            max_tokens: MAX_TOKENS,
            heads: 4,
            use_context: true,
            image_size: 64,
            classes: NUM_CLASSES,
            vocab_size: langnav_core::command::Vocabulary::default().size(),
            residual: true,
            decoder_channels: [16, 8],
        }
    }
}

impl ModelConfig {
    /// Short variant label: S, SC, M or MC, with the frame count for M*.
    pub fn variant(&self) -> String {
        let base = if self.n_frames > 1 { "M" } else { "S" };
        let ctx = if self.use_context { "C" } else { "" };
        if self.n_frames > 1 {
            format!("{base}{ctx}{}", self.n_frames)
        } else {
            format!("{base}{ctx}")
        }
    }

    pub fn visual_rows(&self) -> usize {
        (self.n_frames + 1) * self.grid * self.grid
    }

    /// Rows of the joint feature matrix fed to attention.
    pub fn fused_rows(&self) -> usize {
        self.visual_rows() + self.max_tokens
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_frames == 0 {
            return Err("n_frames must be at least 1".into());
        }
        if self.heads == 0 || self.channels % self.heads != 0 {
            return Err(format!("{} channels not divisible by {} heads", self.channels, self.heads));
        }
        if self.grid == 0 || self.image_size != self.grid * 8 {
            return Err(format!("image size {} must be 8x the grid {}", self.image_size, self.grid));
        }
        if self.channels < 2 || self.max_tokens == 0 || self.vocab_size < 2 {
            return Err("degenerate model dimensions".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub power: f64,
    pub lambda: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch: 8,
            lr0: 3e-3,
            weight_decay: 0.01,
            power: 0.5,
            lambda: 0.3,
            seed: 7,
            log_every: 50,
        }
    }
}
