use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use langnav_core::command::Vocabulary;
use langnav_nn::io::{load_into, read_weights, write_weights, WeightFileError};
use langnav_nn::ShapeError;

use crate::config::{ModelConfig, TrainConfig};
use crate::model::GrounderModel;
use crate::train::TrainReport;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Weights(#[from] WeightFileError),
    #[error("sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
    #[error("vocabulary hash {found} does not match {expected}")]
    VocabMismatch { expected: String, found: String },
    #[error(transparent)]
    Model(#[from] ShapeError),
}

/// JSON stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub model: ModelConfig,
    pub vocab_hash: String,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub report: Option<TrainReport>,
}

pub fn sidecar_path(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_checkpoint(
    model: &GrounderModel<f32>,
    vocab: &Vocabulary,
    train: Option<&TrainConfig>,
    report: Option<&TrainReport>,
    path: &Path,
) -> Result<(), CheckpointError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_weights(&model.params, &mut w)?;
    w.flush()?;
    let side = Sidecar {
        model: model.cfg.clone(),
        vocab_hash: vocab.hash(),
        train: train.cloned(),
        report: report.cloned(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar, CheckpointError> {
    Ok(serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?)
}

pub fn load_checkpoint(path: &Path, vocab: &Vocabulary) -> Result<(GrounderModel<f32>, Sidecar), CheckpointError> {
    let side = read_sidecar(path)?;
    let expected = vocab.hash();
    if side.vocab_hash != expected {
        return Err(CheckpointError::VocabMismatch {
            expected,
            found: side.vocab_hash,
        });
    }
    let mut model = GrounderModel::<f32>::new(side.model.clone(), 0)?;
    let stored = read_weights(&mut BufReader::new(fs::File::open(path)?))?;
    load_into(&mut model.params, &stored)?;
    Ok((model, side))
}
