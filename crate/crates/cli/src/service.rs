//! Remote grounding: a stateless request/response service around a trained
//! model, and a client that plugs into the live navigation loop.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;

use langnav_core::navctl::{Grounder, GroundingError, GroundingQuery};
use langnav_core::raster::SemanticRaster;
use langnav_grounder::{predict, GrounderModel};

use crate::wire::*;

/// Answers one `ground` request.
pub fn answer(model: &GrounderModel<f32>, msg: Message) -> Message {
    let Message::Ground {
        frames_b64,
        context_b64,
        tokens,
    } = msg
    else {
        return Message::error("unexpected", "only ground requests are served");
    };
    let frames: Result<Vec<SemanticRaster>, _> = frames_b64.iter().map(|f| semantic_from_b64(f)).collect();
    let (frames, context) = match (frames, mask_from_b64(&context_b64)) {
        (Ok(f), Ok(c)) => (f, c),
        (Err(e), _) | (_, Err(e)) => return Message::error("bad_raster", e.to_string()),
    };
    if frames.len() != model.cfg.n_frames {
        return Message::error(
            "bad_request",
            format!("model takes {} frames, got {}", model.cfg.n_frames, frames.len()),
        );
    }
    let refs: Vec<&SemanticRaster> = frames.iter().collect();
    let result = predict(model, &refs, &context, &tokens).map_err(|e| e.to_string());
    match result.and_then(|(nav, traj)| {
        Ok(Message::Masks {
            nav_b64: mask_to_b64(&nav).map_err(|e| e.to_string())?,
            traj_b64: mask_to_b64(&traj).map_err(|e| e.to_string())?,
        })
    }) {
        Ok(m) => m,
        Err(e) => Message::error("bad_request", e),
    }
}

/// Serves requests on one connection until the peer closes it.
pub fn handle_connection(reader: impl Read, writer: impl Write, model: &GrounderModel<f32>) -> io::Result<()> {
    let mut reader = BufReader::new(reader);
    let mut writer = BufWriter::new(writer);
    loop {
        let reply = match read_message(&mut reader) {
            Ok(None) => return Ok(()),
            Ok(Some(msg)) => answer(model, msg),
            Err(WireError::Json(e)) => Message::error("bad_message", e.to_string()),
            Err(WireError::TooLarge(n)) => {
                write_message(&mut writer, &Message::error("too_large", format!("{n} bytes")))?;
                return Ok(());
            }
            Err(WireError::Io(e)) => return Err(e),
        };
        write_message(&mut writer, &reply)?;
    }
}

/// Accepts connections forever, one thread each.
pub fn serve_grounding(listener: TcpListener, model: Arc<GrounderModel<f32>>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let model = Arc::clone(&model);
        let reader = stream.try_clone()?;
        thread::spawn(move || {
            let _ = handle_connection(reader, stream, &model);
        });
    }
    Ok(())
}

/// Grounder that forwards every query to a grounding service.
pub struct RemoteGrounder {
    stream: TcpStream,
    n_frames: usize,
}

impl RemoteGrounder {
    pub fn connect(addr: impl ToSocketAddrs, n_frames: usize) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream, n_frames })
    }

    pub fn request(&mut self, msg: &Message) -> Result<Message, GroundingError> {
        let remote = |e: String| GroundingError::Remote(e);
        write_message(&mut self.stream, msg).map_err(|e| remote(e.to_string()))?;
        read_message(&mut self.stream)
            .map_err(|e| remote(e.to_string()))?
            .ok_or_else(|| remote("connection closed".into()))
    }
}

impl Grounder for RemoteGrounder {
    fn n_frames(&self) -> usize {
        self.n_frames
    }

    fn ground(&mut self, q: &GroundingQuery<'_>) -> Result<(SemanticRaster, SemanticRaster), GroundingError> {
        let bad = |e: langnav_core::datastore::DatastoreError| GroundingError::Shape(e.to_string());
        let msg = Message::Ground {
            frames_b64: q.frames.iter().map(semantic_to_b64).collect::<Result<_, _>>().map_err(bad)?,
            context_b64: mask_to_b64(q.context).map_err(bad)?,
            tokens: q.tokens.to_vec(),
        };
        match self.request(&msg)? {
            Message::Masks { nav_b64, traj_b64 } => {
                let dec = |s: &str| mask_from_b64(s).map_err(|e| GroundingError::Remote(e.to_string()));
                Ok((dec(&nav_b64)?, dec(&traj_b64)?))
            }
            Message::Error { code, detail } => Err(GroundingError::Remote(format!(
                "{code}: {}",
                detail.unwrap_or_default()
            ))),
            other => Err(GroundingError::Remote(format!("unexpected reply {other:?}"))),
        }
    }
}
