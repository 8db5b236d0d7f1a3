use std::path::Path;

use langnav_core::command::{encode_tokens, Vocabulary};
use langnav_core::datastore::{read_frame, read_manifest, read_masks, read_split, DatastoreError, EpisodeRecord};
use langnav_core::geometry::{GroundPoint, Pose2D};
use langnav_core::navctl::{context_map, extend_trail};
use langnav_core::raster::SemanticRaster;
use langnav_nn::tensor::Result as ShapeResult;
use langnav_nn::Scalar;

use crate::config::ModelConfig;
use crate::model::{encode_input, EncodedInput};

/// Everything a grounder sees at one query step, plus the oracle masks.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySample {
    pub frame: SemanticRaster,
    pub context: SemanticRaster,
    pub nav_mask: SemanticRaster,
    pub traj_mask: SemanticRaster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSamples {
    pub id: String,
    pub tokens: Vec<u32>,
    /// One entry per grounder query, in time order.
    pub queries: Vec<QuerySample>,
}

impl EpisodeSamples {
    /// Frames visible to an `n`-frame model at query `q`, oldest first.
    pub fn window(&self, q: usize, n: usize) -> Vec<&SemanticRaster> {
        let lo = q.saturating_sub(n - 1);
        let have = q + 1 - lo;
        let mut out: Vec<&SemanticRaster> = vec![&self.queries[lo].frame; n - have];
        out.extend(self.queries[lo..=q].iter().map(|s| &s.frame));
        out
    }

    pub fn encode<T: Scalar>(&self, q: usize, cfg: &ModelConfig) -> ShapeResult<EncodedInput<T>> {
        let frames = self.window(q, cfg.n_frames);
        encode_input(&frames, &self.queries[q].context, &self.tokens, cfg)
    }
}

/// Trail maps for every query step, built exactly as the live runner does.
fn query_contexts(poses: &[Pose2D], stride: usize) -> Vec<SemanticRaster> {
    let mut trail: Vec<GroundPoint> = Vec::new();
    let mut out = Vec::new();
    for (i, pose) in poses.iter().enumerate() {
        extend_trail(&mut trail, pose.position());
        if i % stride == 0 {
            out.push(context_map(&trail, pose));
        }
    }
    out
}

pub fn samples_from_record(rec: &EpisodeRecord, vocab: &Vocabulary, stride: usize) -> EpisodeSamples {
    let poses: Vec<Pose2D> = rec.frames.iter().map(|f| f.ego).collect();
    let contexts = query_contexts(&poses, stride);
    let queries = rec
        .frames
        .iter()
        .step_by(stride)
        .zip(contexts)
        .map(|(f, context)| QuerySample {
            frame: f.view.clone(),
            context,
            nav_mask: f.nav_mask.clone(),
            traj_mask: f.traj_mask.clone(),
        })
        .collect();
    EpisodeSamples {
        id: rec.manifest.id.clone(),
        tokens: encode_tokens(&rec.manifest.command, vocab).0,
        queries,
    }
}

/// Reads only the query-cadence frames of one stored episode.
pub fn load_episode_samples(dir: &Path, vocab: &Vocabulary, stride: usize) -> Result<EpisodeSamples, DatastoreError> {
    let (manifest, poses) = read_manifest(dir)?;
    let contexts = query_contexts(&poses, stride);
    let mut queries = Vec::with_capacity(contexts.len());
    for (k, context) in contexts.into_iter().enumerate() {
        let i = k * stride;
        let (nav_mask, traj_mask) = read_masks(dir, i)?;
        queries.push(QuerySample {
            frame: read_frame(dir, i)?,
            context,
            nav_mask,
            traj_mask,
        });
    }
    Ok(EpisodeSamples {
        id: manifest.id,
        tokens: encode_tokens(&manifest.command, vocab).0,
        queries,
    })
}

pub fn load_split_samples(split_dir: &Path, vocab: &Vocabulary, stride: usize) -> Result<Vec<EpisodeSamples>, DatastoreError> {
    let split = read_split(split_dir)?;
    split
        .episodes
        .iter()
        .map(|name| load_episode_samples(&split_dir.join(name), vocab, stride))
        .collect()
}

/// Mask as `{0, 1}` targets.
pub fn mask_targets<T: Scalar>(mask: &SemanticRaster) -> Vec<T> {
    mask.data()
        .iter()
        .map(|&v| if v > 0 { T::one() } else { T::zero() })
        .collect()
}
