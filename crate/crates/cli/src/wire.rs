//! Length-prefixed JSON messages: a little-endian `u32` byte count followed
//! by that many bytes of UTF-8 JSON. Rasters travel as base64 SEMR/MSK8.

use std::io::{self, Read, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use langnav_core::datastore::{decode_mask, decode_semantic, encode_mask, encode_semantic, DatastoreError};
use langnav_core::raster::SemanticRaster;

/// Largest accepted payload.
pub const MAX_MESSAGE_BYTES: usize = 16 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoTelemetry {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Frame {
        seq: u64,
        raster_b64: String,
        ego: EgoTelemetry,
        step: usize,
    },
    Done {
        reason: String,
    },
    SetCommand {
        text: String,
    },
    Click {
        u: f64,
        v: f64,
    },
    Restart,
    Finish,
    Verdict {
        accept: bool,
    },
    Ground {
        frames_b64: Vec<String>,
        context_b64: String,
        tokens: Vec<u32>,
    },
    Masks {
        nav_b64: String,
        traj_b64: String,
    },
    Error {
        code: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
}

impl Message {
    pub fn error(code: &str, detail: impl Into<String>) -> Self {
        Message::Error {
            code: code.to_string(),
            detail: Some(detail.into()),
        }
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("message of {0} bytes exceeds the limit")]
    TooLarge(usize),
    /// The frame was consumed, so the stream is still usable.
    #[error("malformed message: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    let body = serde_json::to_vec(msg).map_err(io::Error::other)?;
    w.write_all(&(body.len() as u32).to_le_bytes())?;
    w.write_all(&body)?;
    w.flush()
}

/// Next message, or `None` on a clean end of stream.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<Message>, WireError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let n = u32::from_le_bytes(len) as usize;
    if n > MAX_MESSAGE_BYTES {
        return Err(WireError::TooLarge(n));
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body)?;
    Ok(Some(serde_json::from_slice(&body)?))
}

pub fn semantic_to_b64(r: &SemanticRaster) -> Result<String, DatastoreError> {
    Ok(STANDARD.encode(encode_semantic(r)?))
}

pub fn mask_to_b64(m: &SemanticRaster) -> Result<String, DatastoreError> {
    Ok(STANDARD.encode(encode_mask(m)?))
}

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("invalid base64: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error(transparent)]
    Decode(#[from] DatastoreError),
}

pub fn semantic_from_b64(s: &str) -> Result<SemanticRaster, RasterError> {
    Ok(decode_semantic(&STANDARD.decode(s)?)?)
}

pub fn mask_from_b64(s: &str) -> Result<SemanticRaster, RasterError> {
    Ok(decode_mask(&STANDARD.decode(s)?)?)
}
