use std::sync::Arc;

use langnav_core::navctl::{Grounder, GroundingError, GroundingQuery};
use langnav_core::raster::SemanticRaster;
use langnav_nn::Scalar;

use crate::model::{encode_input, threshold_logits, GrounderModel};

/// Binary (navigable, trajectory) masks for one query.
pub fn predict<T: Scalar>(
    model: &GrounderModel<T>,
    frames: &[&SemanticRaster],
    context: &SemanticRaster,
    tokens: &[u32],
) -> Result<(SemanticRaster, SemanticRaster), GroundingError> {
    let shape = |e: langnav_nn::ShapeError| GroundingError::Shape(e.0);
    let input = encode_input::<T>(frames, context, tokens, &model.cfg).map_err(shape)?;
    let (nav, traj) = model.infer(&input).map_err(shape)?;
    Ok((threshold_logits(&nav), threshold_logits(&traj)))
}

/// Trained model behind the live-navigation grounding interface.
#[derive(Debug, Clone)]
pub struct NeuralGrounder {
    pub model: Arc<GrounderModel<f32>>,
}

impl NeuralGrounder {
    pub fn new(model: Arc<GrounderModel<f32>>) -> Self {
        Self { model }
    }
}

impl Grounder for NeuralGrounder {
    fn n_frames(&self) -> usize {
        self.model.cfg.n_frames
    }

    fn ground(&mut self, query: &GroundingQuery<'_>) -> Result<(SemanticRaster, SemanticRaster), GroundingError> {
        let frames: Vec<&SemanticRaster> = query.frames.iter().collect();
        predict(&self.model, &frames, query.context, query.tokens)
    }
}
