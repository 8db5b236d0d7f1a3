use langnav_core::command::PAD_ID;
use langnav_core::raster::SemanticRaster;
use langnav_nn::gradcheck::{grad_check, GradCheckReport};
use langnav_nn::tensor::Result;

use crate::config::ModelConfig;
use crate::data::mask_targets;
use crate::model::{encode_input, GrounderModel};

/// Toy-sized model used by the full-network gradient check.
pub fn toy_config(use_context: bool, residual: bool) -> ModelConfig {
    ModelConfig {
        n_frames: 2,
        channels: 4,
        grid: 2,
        image_size: 16,
        max_tokens: 4,
        heads: 2,
        vocab_size: 7,
        decoder_channels: [3, 2],
        use_context,
        residual,
        ..ModelConfig::default()
    }
}

fn raster(f: impl Fn(usize) -> u8) -> SemanticRaster {
    SemanticRaster::from_data(16, 16, (0..256).map(f).collect()).expect("16x16")
}

/// Finite-difference check of both task losses through the whole network.
pub fn model_grad_check(use_context: bool, residual: bool) -> Result<GradCheckReport> {
    let cfg = toy_config(use_context, residual);
    let frames: Vec<SemanticRaster> = (0..2).map(|s| raster(|i| ((i * 5 + s * 3) % 9) as u8)).collect();
    let refs: Vec<&SemanticRaster> = frames.iter().collect();
    let ctx = raster(|i| if i % 16 == 8 { 255 } else { 0 });
    let nav = mask_targets::<f64>(&raster(|i| if (i / 16) % 5 == 1 { 255 } else { 0 }));
    let traj = mask_targets::<f64>(&raster(|i| if i % 16 < 6 { 255 } else { 0 }));
    let mut model = GrounderModel::<f64>::new(cfg.clone(), 4)?;
    // Zero biases on zero inputs would sit exactly on ReLU kinks.
    for (k, e) in model.params.entries.iter_mut().enumerate() {
        if e.name.ends_with(".b") {
            for (j, v) in e.value.data.iter_mut().enumerate() {
                *v = 0.05 * (((k * 7 + j * 3) % 5) as f64 - 1.7);
            }
        }
    }
    let input = encode_input::<f64>(&refs, &ctx, &[3, 5, PAD_ID, PAD_ID], &cfg)?;
    grad_check(
        &model.params,
        |g| {
            let out = model.forward(g, &input)?;
            let a = g.combo_loss(out.nav_logits, &nav)?;
            let b = g.combo_loss(out.traj_logits, &traj)?;
            g.add(a, b)
        },
        1e-5,
        12,
    )
}
