//! Human annotation sessions: compose a command, steer the ego with clicks on
//! the annotation camera, review the replay and accept or reject it.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use anyhow::Result;

use langnav_core::command::parse_command;
use langnav_core::command::ManeuverPlan;
use langnav_core::datastore::{
    episode_dir_name, read_split, write_episode, write_split, EpisodeManifest, EpisodeRecord, Source, SplitManifest,
    Verdict, SCHEMA_VERSION,
};
use langnav_core::geometry::{inverse_project, rasterize_nav_rect, rasterize_polyline, CameraModel, GroundPoint};
use langnav_core::navctl::{pure_pursuit, NavConfig};
use langnav_core::oracle::{Click, OracleConfig, RecordedFrame};
use langnav_core::raster::SemanticRaster;
use langnav_core::route::Route;
use langnav_core::worldsim::{render_front_view, step_sim, Controls, EgoState, WorldMap};

use crate::wire::{read_message, semantic_to_b64, write_message, EgoTelemetry, Message, WireError};

pub const HUMAN_SPLIT: &str = "human";

#[derive(Debug, Clone)]
pub struct AnnotateConfig {
    pub map_seed: u64,
    pub nav: NavConfig,
    pub oracle: OracleConfig,
    pub camera: CameraModel,
    pub click_camera: CameraModel,
    pub frame_interval: Duration,
}

/// Shared output directory; episodes get consecutive numbers.
pub struct HumanStore {
    dir: PathBuf,
    split: Mutex<SplitManifest>,
}

impl HumanStore {
    pub fn open(out: &Path, seed: u64) -> Result<Self> {
        let dir = out.join(HUMAN_SPLIT);
        let split = if dir.join("split.json").exists() {
            read_split(&dir)?
        } else {
            SplitManifest {
                schema_version: SCHEMA_VERSION,
                split: HUMAN_SPLIT.into(),
                seed,
                episodes: Vec::new(),
            }
        };
        Ok(Self {
            dir,
            split: Mutex::new(split),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn save(&self, mut rec: EpisodeRecord) -> Result<String> {
        let mut split = self.split.lock().expect("store lock");
        let i = split.episodes.len();
        let name = episode_dir_name(i);
        rec.manifest.id = format!("human-{i:06}");
        write_episode(&rec, &self.dir.join(&name))?;
        split.episodes.push(name.clone());
        write_split(&split, &self.dir)?;
        Ok(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Composing,
    Ready,
    Driving,
    Reviewing,
}

pub struct AnnotationSession {
    world: WorldMap,
    cfg: AnnotateConfig,
    store: Arc<HumanStore>,
    episode: usize,
    phase: Phase,
    ego: EgoState,
    plan: Option<ManeuverPlan>,
    target: Option<GroundPoint>,
    frames: Vec<RecordedFrame>,
    clicks: Vec<Click>,
    replay: Vec<Message>,
    seq: u64,
    step: usize,
}

impl AnnotationSession {
    pub fn new(world: WorldMap, cfg: AnnotateConfig, store: Arc<HumanStore>) -> Self {
        let ego = EgoState::at(world.spawn_points[0]);
        Self {
            world,
            cfg,
            store,
            episode: 0,
            phase: Phase::Composing,
            ego,
            plan: None,
            target: None,
            frames: Vec::new(),
            clicks: Vec::new(),
            replay: Vec::new(),
            seq: 0,
            step: 0,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn ego(&self) -> &EgoState {
        &self.ego
    }

    /// Frame shown when the connection opens.
    pub fn start(&mut self) -> Vec<Message> {
        vec![self.frame()]
    }

    fn reset(&mut self) {
        let spawns = &self.world.spawn_points;
        self.ego = EgoState::at(spawns[self.episode % spawns.len()]);
        self.phase = Phase::Composing;
        self.plan = None;
        self.target = None;
        self.frames.clear();
        self.clicks.clear();
        self.replay.clear();
        self.step = 0;
    }

    fn frame(&mut self) -> Message {
        let view = render_front_view(&self.world, &[], &self.ego, &self.cfg.click_camera);
        let msg = Message::Frame {
            seq: self.seq,
            raster_b64: semantic_to_b64(&view).expect("rendered classes are valid"),
            ego: EgoTelemetry {
                x: self.ego.pose.x,
                y: self.ego.pose.y,
                yaw: self.ego.pose.yaw,
                speed: self.ego.speed,
            },
            step: self.step,
        };
        self.seq += 1;
        if self.plan.is_some() {
            self.replay.push(msg.clone());
        }
        msg
    }

    /// Index of the recorded frame showing the current state.
    fn record_current(&mut self) -> usize {
        if self.frames.last().map_or(true, |f| f.ego != self.ego.pose) {
            let empty = SemanticRaster::new(self.cfg.camera.width, self.cfg.camera.height);
            self.frames.push(RecordedFrame {
                view: render_front_view(&self.world, &[], &self.ego, &self.cfg.camera),
                nav_mask: empty.clone(),
                traj_mask: empty,
                ego: self.ego.pose,
            });
        }
        self.frames.len() - 1
    }

    pub fn handle(&mut self, msg: Message) -> Vec<Message> {
        use Phase::*;
        let bad_phase = |p: Phase| vec![Message::error("bad_phase", format!("not allowed while {p:?}"))];
        match msg {
            Message::SetCommand { text } => {
                if !matches!(self.phase, Composing | Ready) || !self.clicks.is_empty() {
                    return bad_phase(self.phase);
                }
                match parse_command(&text) {
                    Ok(plan) => {
                        self.plan = Some(plan);
                        self.phase = Ready;
                        vec![self.frame()]
                    }
                    Err(e) => vec![Message::error("bad_command", e.to_string())],
                }
            }
            Message::Click { u, v } => {
                match self.phase {
                    Composing => return vec![Message::error("no_command", "set a command first")],
                    Reviewing => return bad_phase(self.phase),
                    Ready | Driving => {}
                }
                let cam = self.cfg.click_camera;
                if !(u.is_finite() && v.is_finite() && cam.in_bounds(u, v)) {
                    return vec![Message::error("out_of_bounds", format!("({u}, {v})"))];
                }
                match inverse_project(u, v, &self.ego.pose, &cam) {
                    Ok(ground) => {
                        let frame = self.record_current();
                        self.clicks.push(Click { frame, u, v, ground });
                        self.target = Some(ground);
                        self.phase = Driving;
                        Vec::new()
                    }
                    Err(e) => vec![Message::error("horizon", e.to_string())],
                }
            }
            Message::Restart => {
                self.reset();
                vec![self.frame()]
            }
            Message::Finish => {
                if !matches!(self.phase, Ready | Driving) {
                    return bad_phase(self.phase);
                }
                if self.clicks.is_empty() {
                    return vec![Message::error("no_clicks", "click at least one sub-goal")];
                }
                self.record_current();
                self.ego.speed = 0.0;
                self.phase = Reviewing;
                let mut out = self.replay.clone();
                out.push(Message::Done { reason: "review".into() });
                out
            }
            Message::Verdict { accept } => {
                if self.phase != Reviewing {
                    return bad_phase(self.phase);
                }
                let reason = if accept {
                    match self.store.save(self.record()) {
                        Ok(_) => "accepted",
                        Err(e) => return vec![Message::error("write_failed", e.to_string())],
                    }
                } else {
                    "rejected"
                };
                self.episode += 1;
                self.reset();
                vec![Message::Done { reason: reason.into() }, self.frame()]
            }
            other => vec![Message::error("unexpected", format!("{other:?}"))],
        }
    }

    /// Advances one query stride while driving.
    pub fn tick(&mut self) -> Vec<Message> {
        if self.phase != Phase::Driving {
            return Vec::new();
        }
        let Some(target) = self.target else {
            return Vec::new();
        };
        let nav = self.cfg.nav;
        for _ in 0..nav.stride {
            let (steer, speed, reached) = pure_pursuit(&self.ego, &target, &nav.planner, &nav.sim);
            if reached && self.ego.speed <= 0.0 {
                self.record_current();
                self.phase = Phase::Ready;
                return vec![self.frame(), Message::Done { reason: "arrived".into() }];
            }
            if self.step >= nav.sim.max_steps {
                return self.abort("timeout");
            }
            self.record_current();
            let out = step_sim(
                &mut [],
                &mut self.ego,
                Controls {
                    steer,
                    target_speed: speed,
                },
                &nav.sim,
            );
            self.step += 1;
            if out.collision {
                return self.abort("collision");
            }
        }
        vec![self.frame()]
    }

    fn abort(&mut self, reason: &str) -> Vec<Message> {
        self.reset();
        vec![Message::Done { reason: reason.into() }, self.frame()]
    }

    /// The reviewed drive as a dataset episode.
    fn record(&self) -> EpisodeRecord {
        let cam = &self.cfg.camera;
        let poses: Vec<_> = self.frames.iter().map(|f| f.ego).collect();
        let positions: Vec<GroundPoint> = poses.iter().map(|p| p.position()).collect();
        let mut frames = self.frames.clone();
        let spacing = self.cfg.oracle.traj_spacing;
        for (i, f) in frames.iter_mut().enumerate() {
            let active = self.clicks.iter().rev().find(|c| c.frame <= i).unwrap_or(&self.clicks[0]);
            let here = f.ego.position();
            let heading = (active.ground.y - here.y).atan2(active.ground.x - here.x);
            if let Ok(m) = rasterize_nav_rect(&active.ground, heading, &f.ego, cam) {
                f.nav_mask = m;
            }
            let mut future = Vec::new();
            let mut last = here;
            for p in &positions[i..] {
                if p.dist(&last) >= spacing {
                    future.push(*p);
                    last = *p;
                    if future.len() == self.cfg.oracle.traj_samples {
                        break;
                    }
                }
            }
            f.traj_mask = rasterize_polyline(&future, &f.ego, cam, self.cfg.oracle.traj_thickness);
        }
        let plan = self.plan.clone().expect("reviewing implies a command");
        let length = positions.windows(2).map(|w| w[0].dist(&w[1])).sum();
        let route = Route::new(positions, vec![length], vec![]);
        let goal_pose = *poses.last().expect("at least one frame");
        let gt_path = poses.iter().step_by(self.cfg.nav.stride.max(1)).map(|p| p.position()).collect();
        EpisodeRecord {
            manifest: EpisodeManifest {
                id: String::new(),
                split: HUMAN_SPLIT.into(),
                episode_seed: self.episode as u64,
                map_seed: self.cfg.map_seed,
                command: plan.raw_text.clone(),
                plan,
                spawn: poses[0],
                lighting: "day".into(),
                camera: *cam,
                click_camera: self.cfg.click_camera,
                clicks: self.clicks.clone(),
                gt_route: route,
                gt_path,
                goal_pose,
                actors: Vec::new(),
                frame_count: frames.len(),
                verdict: Verdict::Accepted,
                source: Source::Human,
            },
            frames,
        }
    }
}

/// Runs one client until it disconnects. Unfinished episodes are dropped.
pub fn serve_session(stream: TcpStream, mut session: AnnotationSession) -> io::Result<()> {
    let (tx, rx) = mpsc::channel();
    let mut reader = BufReader::new(stream.try_clone()?);
    thread::spawn(move || loop {
        match read_message(&mut reader) {
            Ok(Some(m)) => {
                if tx.send(Ok(m)).is_err() {
                    return;
                }
            }
            Ok(None) | Err(WireError::Io(_)) | Err(WireError::TooLarge(_)) => return,
            Err(WireError::Json(e)) => {
                if tx.send(Err(e.to_string())).is_err() {
                    return;
                }
            }
        }
    });
    let mut w = BufWriter::new(stream);
    let send = |w: &mut BufWriter<TcpStream>, msgs: Vec<Message>| -> io::Result<()> {
        for m in &msgs {
            write_message(w, m)?;
        }
        w.flush()
    };
    send(&mut w, session.start())?;
    loop {
        let incoming = if session.phase() == Phase::Driving {
            match rx.try_recv() {
                Ok(m) => Some(m),
                Err(TryRecvError::Empty) => None,
                Err(TryRecvError::Disconnected) => return Ok(()),
            }
        } else {
            match rx.recv() {
                Ok(m) => Some(m),
                Err(_) => return Ok(()),
            }
        };
        let out = match incoming {
            Some(Ok(m)) => session.handle(m),
            Some(Err(e)) => vec![Message::error("bad_message", e)],
            None => {
                let out = session.tick();
                thread::sleep(session.cfg.frame_interval);
                out
            }
        };
        send(&mut w, out)?;
    }
}

pub fn serve_annotation(listener: TcpListener, world: WorldMap, cfg: AnnotateConfig, store: Arc<HumanStore>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        stream.set_nodelay(true)?;
        let session = AnnotationSession::new(world.clone(), cfg.clone(), Arc::clone(&store));
        thread::spawn(move || {
            let _ = serve_session(stream, session);
        });
    }
    Ok(())
}
