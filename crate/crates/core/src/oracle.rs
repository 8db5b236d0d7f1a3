//! Ground-truth grounding from privileged simulator state, and recording of
//! oracle-driven demonstration episodes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::command::EpisodeSpec;
use crate::geometry::{
    inverse_project, project, rasterize_nav_rect, rasterize_polyline, CameraModel, GroundPoint,
    Pose2D,
};
use crate::navctl::{
    pure_pursuit, Grounder, GroundingError, GroundingQuery, NavConfig, StopReason,
};
use crate::raster::SemanticRaster;
use crate::route::Route;
use crate::worldsim::{render_front_view, step_sim, Controls, EgoState, WorldMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub lookahead: f64,
    pub final_radius: f64,
    pub off_route: f64,
    pub traj_spacing: f64,
    pub traj_samples: usize,
    pub traj_thickness: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            lookahead: 20.0,
            final_radius: 25.0,
            off_route: 10.0,
            traj_spacing: 1.0,
            traj_samples: 20,
            traj_thickness: 3,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("ego is {0:.1} m from the route")]
    OffRoute(f64),
}

/// Progress of the ego along its ground-truth route. Never moves backwards.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteState {
    pub route: Route,
    pub goal: Pose2D,
    pub progress: f64,
}

impl RouteState {
    pub fn new(route: Route, goal: Pose2D) -> Self {
        Self {
            route,
            goal,
            progress: 0.0,
        }
    }

    /// Progress implied by `ego` without committing it.
    pub fn locate(&self, ego: &Pose2D, cfg: &OracleConfig) -> Result<f64, OracleError> {
        let (s, d) = self.route.closest_in(
            &ego.position(),
            (self.progress - 2.0).max(0.0),
            self.progress + 15.0,
        );
        if d > cfg.off_route {
            return Err(OracleError::OffRoute(d));
        }
        Ok(s.max(self.progress))
    }

    pub fn advance(&mut self, ego: &Pose2D, cfg: &OracleConfig) -> Result<f64, OracleError> {
        self.progress = self.locate(ego, cfg)?;
        Ok(self.progress)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutput {
    pub nav_mask: SemanticRaster,
    pub traj_mask: SemanticRaster,
    pub target: Pose2D,
    pub is_final: bool,
    pub maneuver_index: usize,
}

fn visible_rect(center: &Pose2D, ego: &Pose2D, cam: &CameraModel) -> Option<SemanticRaster> {
    project(&center.position(), ego, cam)?;
    rasterize_nav_rect(&center.position(), center.yaw, ego, cam).ok()
}

/// Oracle masks for the current state. Pure in (route state, ego, camera).
pub fn oracle_ground(
    rs: &RouteState,
    ego: &Pose2D,
    cam: &CameraModel,
    cfg: &OracleConfig,
) -> Result<OracleOutput, OracleError> {
    let s_now = rs.locate(ego, cfg)?;
    let route = &rs.route;
    let len = route.length();
    let last = route.piece_ends.len().saturating_sub(1);
    let traj: Vec<GroundPoint> = (1..=cfg.traj_samples)
        .map(|k| route.point_at((s_now + k as f64 * cfg.traj_spacing).min(len)))
        .collect();
    let traj_mask = rasterize_polyline(&traj, ego, cam, cfg.traj_thickness);

    let goal_dist = rs.goal.position().dist(&ego.position());
    let near_end = len - s_now <= 5.0;
    let final_mask = if goal_dist <= cfg.final_radius {
        visible_rect(&rs.goal, ego, cam).or_else(|| {
            near_end
                .then(|| rasterize_nav_rect(&rs.goal.position(), rs.goal.yaw, ego, cam).ok())
                .flatten()
        })
    } else {
        None
    };
    if let Some(nav_mask) = final_mask {
        return Ok(OracleOutput {
            nav_mask,
            traj_mask,
            target: rs.goal,
            is_final: true,
            maneuver_index: last,
        });
    }

    let mut s = (s_now + cfg.lookahead).min(len);
    while s > s_now + 1.0 {
        let pose = route.pose_at(s);
        if let Some(nav_mask) = visible_rect(&pose, ego, cam) {
            let at_end = s >= len;
            return Ok(OracleOutput {
                nav_mask,
                traj_mask,
                target: if at_end { rs.goal } else { pose },
                is_final: at_end,
                maneuver_index: route.piece_at(s),
            });
        }
        s -= 0.5;
    }
    let s = (s_now + 2.0).min(len);
    Ok(OracleOutput {
        nav_mask: SemanticRaster::new(cam.width, cam.height),
        traj_mask,
        target: route.pose_at(s),
        is_final: false,
        maneuver_index: route.piece_at(s),
    })
}

/// Grounder backed by privileged simulator state.
pub struct OracleGrounder {
    pub cam: CameraModel,
    pub cfg: OracleConfig,
    pub frames: usize,
    state: Option<RouteState>,
}

impl OracleGrounder {
    pub fn new(cam: CameraModel, cfg: OracleConfig, frames: usize) -> Self {
        Self {
            cam,
            cfg,
            frames,
            state: None,
        }
    }
}

impl Grounder for OracleGrounder {
    fn n_frames(&self) -> usize {
        self.frames
    }

    fn reset(&mut self, spec: &EpisodeSpec) {
        self.state = Some(RouteState::new(spec.route.clone(), spec.goal_pose));
    }

    fn ground(
        &mut self,
        query: &GroundingQuery<'_>,
    ) -> Result<(SemanticRaster, SemanticRaster), GroundingError> {
        let truth = query.truth.as_ref().ok_or(GroundingError::NeedsTruth)?;
        let rs = self.state.as_mut().ok_or(GroundingError::NeedsTruth)?;
        rs.advance(&truth.ego.pose, &self.cfg)
            .map_err(|e| GroundingError::Oracle(e.to_string()))?;
        let out = oracle_ground(rs, &truth.ego.pose, &self.cam, &self.cfg)
            .map_err(|e| GroundingError::Oracle(e.to_string()))?;
        Ok((out.nav_mask, out.traj_mask))
    }
}

/// A sub-goal click as an annotator would place it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Click {
    pub frame: usize,
    pub u: f64,
    pub v: f64,
    pub ground: GroundPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedFrame {
    pub view: SemanticRaster,
    pub nav_mask: SemanticRaster,
    pub traj_mask: SemanticRaster,
    pub ego: Pose2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub frames: Vec<RecordedFrame>,
    pub clicks: Vec<Click>,
    /// Ego positions at the query cadence.
    pub gt_path: Vec<GroundPoint>,
    pub stop_reason: StopReason,
    pub success: bool,
}

/// Drives the episode with the oracle target and records every frame.
/// Clicks: one at the start, one per later manoeuvre except the last, and
/// one when the goal first becomes visible.
pub fn record_episode(
    world: &WorldMap,
    spec: &EpisodeSpec,
    cam: &CameraModel,
    click_cam: &CameraModel,
    nav: &NavConfig,
    cfg: &OracleConfig,
) -> Recording {
    let mut actors = spec.actors.clone();
    let mut ego = EgoState::at(spec.spawn);
    let mut rs = RouteState::new(spec.route.clone(), spec.goal_pose);
    let n_pieces = spec.route.piece_ends.len();
    let mut frames = Vec::new();
    let mut clicks = Vec::new();
    let mut gt_path = Vec::new();
    let mut last_key = None;
    let mut target = spec.spawn.position();
    let mut is_final = false;
    let done = |frames, clicks, gt_path, reason| Recording {
        frames,
        clicks,
        gt_path,
        stop_reason: reason,
        success: reason == StopReason::Stopped,
    };
    for step in 0..nav.sim.max_steps {
        let out = match rs
            .advance(&ego.pose, cfg)
            .and_then(|_| oracle_ground(&rs, &ego.pose, cam, cfg))
        {
            Ok(out) => out,
            Err(_) => return done(frames, clicks, gt_path, StopReason::HorizonFailure),
        };
        if step % nav.stride == 0 {
            gt_path.push(ego.pose.position());
            if !is_final {
                target = out.target.position();
                is_final = out.is_final;
            }
            let key = if is_final {
                Some(n_pieces)
            } else if out.maneuver_index + 1 < n_pieces || last_key.is_none() {
                Some(out.maneuver_index)
            } else {
                None
            };
            if let Some(key) = key.filter(|&k| last_key.map_or(true, |l| k > l)) {
                if let Some((u, v)) = project(&target, &ego.pose, click_cam) {
                    if let Ok(ground) = inverse_project(u, v, &ego.pose, click_cam) {
                        clicks.push(Click {
                            frame: step,
                            u,
                            v,
                            ground,
                        });
                        last_key = Some(key);
                    }
                }
            }
        }
        frames.push(RecordedFrame {
            view: render_front_view(world, &actors, &ego, cam),
            nav_mask: out.nav_mask,
            traj_mask: out.traj_mask,
            ego: ego.pose,
        });
        let (steer, speed, reached) = pure_pursuit(&ego, &target, &nav.planner, &nav.sim);
        if is_final && reached && ego.speed <= 0.0 {
            return done(frames, clicks, gt_path, StopReason::Stopped);
        }
        let outcome = step_sim(
            &mut actors,
            &mut ego,
            Controls {
                steer,
                target_speed: speed,
            },
            &nav.sim,
        );
        if outcome.collision {
            return done(frames, clicks, gt_path, StopReason::Collision);
        }
    }
    done(frames, clicks, gt_path, StopReason::Timeout)
}
