//! Multi-frame, language-conditioned grounding network: frame, trail-map and
//! text encoders, attention fusion, a temporal Conv3D and twin mask heads.

pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod data;
pub mod model;
pub mod neural;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, Sidecar};
pub use config::{ModelConfig, TrainConfig};
pub use data::{load_split_samples, samples_from_record, EpisodeSamples};
pub use model::{encode_input, threshold_logits, EncodedInput, ForwardVars, GrounderModel};
pub use neural::{predict, NeuralGrounder};
pub use train::{train, train_step, TrainReport};
