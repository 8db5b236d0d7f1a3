//! Live navigation: mask post-processing, the area stop rule, pure pursuit
//! and the closed-loop episode runner shared by every grounder.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::command::{encode_tokens, EpisodeSpec, Vocabulary};
use crate::geometry::{inverse_project, CameraModel, GroundPoint, Pose2D};
use crate::raster::{SemanticRaster, MASK_ON};
use crate::worldsim::{render_front_view, step_sim, Actor, Controls, EgoState, SimConfig, WorldMap};

/// Side length of the ego-centric context map in pixels (1 px = 1 m).
pub const CONTEXT_SIZE: usize = 64;
/// Pixel holding the current ego position in the context map.
pub const CONTEXT_EGO: (f64, f64) = (32.0, 48.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopConfig {
    pub area_threshold: f64,
    pub required_consecutive: usize,
}

impl Default for StopConfig {
    fn default() -> Self {
        Self {
            area_threshold: 0.08,
            required_consecutive: 5,
        }
    }
}

/// Fires once the area fraction has exceeded the threshold on
/// `required_consecutive` consecutive predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopCriterion {
    pub cfg: StopConfig,
    pub consecutive_count: usize,
}

impl StopCriterion {
    pub fn new(cfg: StopConfig) -> Self {
        Self {
            cfg,
            consecutive_count: 0,
        }
    }

    pub fn update(&mut self, area_fraction: f64) -> bool {
        if area_fraction > self.cfg.area_threshold {
            self.consecutive_count += 1;
        } else {
            self.consecutive_count = 0;
        }
        self.consecutive_count == self.cfg.required_consecutive
    }
}

/// Centroid (pixel-centre convention) and area fraction of the largest
/// 4-connected component. Ties go to the component whose first pixel in
/// row-major order comes first.
pub fn largest_component_centroid(mask: &SemanticRaster) -> Option<((f64, f64), f64)> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut best: Option<(usize, f64, f64)> = None;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || mask.data()[start] == 0 {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut n, mut su, mut sv) = (0usize, 0.0, 0.0);
        while let Some(i) = stack.pop() {
            let (c, r) = (i % w, i / w);
            n += 1;
            su += c as f64 + 0.5;
            sv += r as f64 + 0.5;
            let mut visit = |j: usize| {
                if !seen[j] && mask.data()[j] != 0 {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
        }
        // Scanning in row-major order means the earlier component keeps ties.
        if best.map_or(true, |(bn, _, _)| n > bn) {
            best = Some((n, su / n as f64, sv / n as f64));
        }
    }
    best.map(|(n, u, v)| ((u, v), n as f64 / (w * h) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub lookahead: f64,
    pub reach_radius: f64,
    pub cruise_speed: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            lookahead: 5.0,
            reach_radius: 2.0,
            cruise_speed: 4.0,
        }
    }
}

/// Pure-pursuit steering toward `target`. Returns (steer, target speed, reached).
pub fn pure_pursuit(
    ego: &EgoState,
    target: &GroundPoint,
    cfg: &PlannerConfig,
    sim: &SimConfig,
) -> (f64, f64, bool) {
    let (fwd, left) = ego.pose.to_local(target);
    let dist = fwd.hypot(left);
    if dist < cfg.reach_radius {
        return (0.0, 0.0, true);
    }
    let alpha = left.atan2(fwd);
    let ld = cfg.lookahead.min(dist);
    let steer = (2.0 * sim.wheelbase * alpha.sin() / ld)
        .atan()
        .clamp(-sim.max_steer, sim.max_steer);
    let speed = cfg.cruise_speed * (dist / (2.0 * cfg.reach_radius)).min(1.0);
    (steer, speed, false)
}

/// Ego-centric top view of the path driven so far, ego at (32, 48) facing up.
pub fn context_map(history: &[GroundPoint], ego: &Pose2D) -> SemanticRaster {
    let mut out = SemanticRaster::new(CONTEXT_SIZE, CONTEXT_SIZE);
    let to_px = |p: &GroundPoint| {
        let (fwd, left) = ego.to_local(p);
        (CONTEXT_EGO.0 - left, CONTEXT_EGO.1 - fwd)
    };
    let mut dot = |u: f64, v: f64| {
        let (c, r) = (u.floor() as i64, v.floor() as i64);
        for dr in 0..2 {
            for dc in 0..2 {
                out.set_clipped(c + dc, r + dr, MASK_ON);
            }
        }
    };
    let pts: Vec<(f64, f64)> = history.iter().map(to_px).collect();
    if let Some(&(u, v)) = pts.first() {
        dot(u, v);
    }
    for w in pts.windows(2) {
        let ((u0, v0), (u1, v1)) = (w[0], w[1]);
        let len = (u1 - u0).hypot(v1 - v0);
        if len > 200.0 {
            continue;
        }
        let n = (len / 0.25).ceil().max(1.0) as usize;
        for k in 1..=n {
            let t = k as f64 / n as f64;
            dot(u0 + (u1 - u0) * t, v0 + (v1 - v0) * t);
        }
    }
    dot(CONTEXT_EGO.0, CONTEXT_EGO.1);
    out
}

/// Minimum ego displacement between recorded trail points, metres.
pub const TRAIL_SPACING: f64 = 0.25;

pub fn extend_trail(trail: &mut Vec<GroundPoint>, p: GroundPoint) {
    if trail.last().map_or(true, |l| l.dist(&p) > TRAIL_SPACING) {
        trail.push(p);
    }
}

/// Simulator state visible only to privileged (ground-truth) grounders.
pub struct TruthView<'a> {
    pub world: &'a WorldMap,
    pub actors: &'a [Actor],
    pub ego: &'a EgoState,
}

pub struct GroundingQuery<'a> {
    /// Oldest first, exactly `n_frames()` long.
    pub frames: &'a [SemanticRaster],
    pub context: &'a SemanticRaster,
    pub tokens: &'a [u32],
    pub truth: Option<TruthView<'a>>,
}

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error("grounder needs simulator truth")]
    NeedsTruth,
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("remote grounder: {0}")]
    Remote(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Anything that maps (frames, context, tokens) to (navigable mask,
/// trajectory mask).
pub trait Grounder {
    fn n_frames(&self) -> usize;
    fn ground(
        &mut self,
        query: &GroundingQuery<'_>,
    ) -> Result<(SemanticRaster, SemanticRaster), GroundingError>;
    /// Called once before an episode starts.
    fn reset(&mut self, _spec: &EpisodeSpec) {}
}

/// Takes the last `n` entries, repeating the oldest one when fewer exist.
pub fn frame_window(history: &[SemanticRaster], n: usize) -> Vec<SemanticRaster> {
    assert!(!history.is_empty(), "frame window needs at least one frame");
    let take = history.len().min(n);
    let tail = &history[history.len() - take..];
    let mut out = vec![tail[0].clone(); n - take];
    out.extend_from_slice(tail);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Stopped,
    Timeout,
    Collision,
    HorizonFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    /// Stopped inside the goal region.
    pub success: bool,
    pub driven_path: Vec<GroundPoint>,
    pub stop_reason: StopReason,
    pub steps: usize,
    pub final_pose: Pose2D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavConfig {
    pub sim: SimConfig,
    pub planner: PlannerConfig,
    pub stop: StopConfig,
    /// Simulation steps between grounder queries.
    pub stride: usize,
    /// Consecutive unusable predictions before giving up.
    pub max_misses: usize,
    /// Minimum target displacement that triggers re-planning.
    pub replan_distance: f64,
    pub goal_inflation: f64,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            planner: PlannerConfig::default(),
            stop: StopConfig::default(),
            stride: 10,
            max_misses: 5,
            replan_distance: 0.5,
            goal_inflation: 2.0,
        }
    }
}

/// True when `p` lies inside the 3 m x 4 m goal rectangle grown by `inflation`.
pub fn inside_goal_region(p: &GroundPoint, goal: &Pose2D, inflation: f64) -> bool {
    let (fwd, left) = goal.to_local(p);
    fwd.abs() <= crate::geometry::NAV_RECT_LENGTH / 2.0 + inflation
        && left.abs() <= crate::geometry::NAV_RECT_WIDTH / 2.0 + inflation
}

/// Drives one episode live from the grounder's predictions.
pub fn run_episode(
    world: &WorldMap,
    spec: &EpisodeSpec,
    grounder: &mut dyn Grounder,
    vocab: &Vocabulary,
    cam: &CameraModel,
    cfg: &NavConfig,
) -> EpisodeResult {
    grounder.reset(spec);
    let (tokens, _) = encode_tokens(&spec.plan.raw_text, vocab);
    let mut actors = spec.actors.clone();
    let mut ego = EgoState::at(spec.spawn);
    let mut stop = StopCriterion::new(cfg.stop);
    let mut history = Vec::new();
    let mut trail = vec![ego.pose.position()];
    let mut path = Vec::new();
    let mut target: Option<GroundPoint> = None;
    let mut misses = 0;
    let mut braking = false;
    let n = grounder.n_frames().max(1);
    let finish = |reason: StopReason, steps: usize, ego: &EgoState, path: Vec<GroundPoint>| {
        let success = reason == StopReason::Stopped
            && inside_goal_region(&ego.pose.position(), &spec.goal_pose, cfg.goal_inflation);
        EpisodeResult {
            success,
            driven_path: path,
            stop_reason: reason,
            steps,
            final_pose: ego.pose,
        }
    };
    let mut step = 0;
    loop {
        if braking && ego.speed <= 0.0 {
            return finish(StopReason::Stopped, step, &ego, path);
        }
        if step >= cfg.sim.max_steps {
            return finish(StopReason::Timeout, step, &ego, path);
        }
        if step % cfg.stride == 0 && !braking {
            history.push(render_front_view(world, &actors, &ego, cam));
            if history.len() > n {
                history.remove(0);
            }
            let frames = frame_window(&history, n);
            let context = context_map(&trail, &ego.pose);
            path.push(ego.pose.position());
            let query = GroundingQuery {
                frames: &frames,
                context: &context,
                tokens: &tokens,
                truth: Some(TruthView {
                    world,
                    actors: &actors,
                    ego: &ego,
                }),
            };
            let usable = grounder
                .ground(&query)
                .ok()
                .and_then(|(nav, _)| largest_component_centroid(&nav))
                .and_then(|((u, v), area)| {
                    inverse_project(u, v, &ego.pose, cam).ok().map(|p| (p, area))
                });
            match usable {
                Some((p, area)) => {
                    misses = 0;
                    if target.map_or(true, |t| t.dist(&p) > cfg.replan_distance) {
                        target = Some(p);
                    }
                    braking = stop.update(area);
                }
                None => {
                    misses += 1;
                    stop.update(0.0);
                    if misses >= cfg.max_misses {
                        return finish(StopReason::HorizonFailure, step, &ego, path);
                    }
                }
            }
        }
        let controls = match (braking, target) {
            (false, Some(t)) => {
                let (steer, speed, _) = pure_pursuit(&ego, &t, &cfg.planner, &cfg.sim);
                Controls {
                    steer,
                    target_speed: speed,
                }
            }
            _ => Controls::default(),
        };
        let outcome = step_sim(&mut actors, &mut ego, controls, &cfg.sim);
        step += 1;
        extend_trail(&mut trail, ego.pose.position());
        if outcome.collision {
            return finish(StopReason::Collision, step, &ego, path);
        }
    }
}
