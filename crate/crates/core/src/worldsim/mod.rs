//! Deterministic 2D semantic world, kinematic ego vehicle and front-camera
//! rendering by ground-plane sampling.

mod map;

pub use map::*;

use serde::{Deserialize, Serialize};

use crate::geometry::{inverse_project, CameraModel, GroundPoint, Pose2D};
use crate::raster::{SemanticClass, SemanticRaster};

pub const VEHICLE_LENGTH: f64 = 4.5;
pub const VEHICLE_WIDTH: f64 = 2.0;
pub const PEDESTRIAN_SIZE: f64 = 0.8;
pub const MAX_ACTOR_SPEED: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorClass {
    Vehicle,
    Pedestrian,
}

impl ActorClass {
    pub fn semantic(self) -> SemanticClass {
        match self {
            ActorClass::Vehicle => SemanticClass::Vehicle,
            ActorClass::Pedestrian => SemanticClass::Pedestrian,
        }
    }

    /// (length, width) of the footprint rectangle.
    pub fn size(self) -> (f64, f64) {
        match self {
            ActorClass::Vehicle => (VEHICLE_LENGTH, VEHICLE_WIDTH),
            ActorClass::Pedestrian => (PEDESTRIAN_SIZE, PEDESTRIAN_SIZE),
        }
    }
}

/// Scripted traffic participant. Actors without a route are parked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub id: u32,
    pub class: ActorClass,
    pub pose: Pose2D,
    pub speed: f64,
    pub route: Option<Vec<GroundPoint>>,
    pub color: Option<ColorTag>,
    #[serde(default)]
    pub progress: f64,
}

impl Actor {
    pub fn parked(id: u32, class: ActorClass, pose: Pose2D, color: Option<ColorTag>) -> Self {
        Self {
            id,
            class,
            pose,
            speed: 0.0,
            route: None,
            color,
            progress: 0.0,
        }
    }

    /// Actor moving along `route` at constant `speed`, starting at its first point.
    pub fn scripted(
        id: u32,
        class: ActorClass,
        route: Vec<GroundPoint>,
        speed: f64,
        color: Option<ColorTag>,
    ) -> Self {
        let mut a = Self {
            id,
            class,
            pose: Pose2D::new(route[0].x, route[0].y, 0.0),
            speed: speed.clamp(0.0, MAX_ACTOR_SPEED),
            route: Some(route),
            color,
            progress: 0.0,
        };
        a.place();
        a
    }

    pub fn footprint(&self) -> Vec<GroundPoint> {
        let (l, w) = self.class.size();
        rect_footprint(self.pose.position(), self.pose.yaw, l, w)
    }

    fn contains(&self, p: &GroundPoint) -> bool {
        let (l, w) = self.class.size();
        let (fwd, left) = self.pose.to_local(p);
        fwd.abs() <= l / 2.0 && left.abs() <= w / 2.0
    }

    fn advance(&mut self, dt: f64) {
        if self.route.is_some() {
            self.progress += self.speed * dt;
            self.place();
        }
    }

    /// Puts the actor at `progress` along its route, holding at the end.
    fn place(&mut self) {
        let Some(route) = &self.route else { return };
        if route.len() == 1 {
            self.pose = Pose2D::new(route[0].x, route[0].y, self.pose.yaw);
            return;
        }
        let mut left = self.progress;
        let last = route.len() - 2;
        for (i, w) in route.windows(2).enumerate() {
            let seg = w[0].dist(&w[1]);
            if left <= seg || i == last {
                let t = if seg > 0.0 { (left / seg).min(1.0) } else { 0.0 };
                let p = w[0].lerp(&w[1], t);
                let yaw = (w[1].y - w[0].y).atan2(w[1].x - w[0].x);
                self.pose = Pose2D::new(p.x, p.y, yaw);
                return;
            }
            left -= seg;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub pose: Pose2D,
    pub speed: f64,
    pub steer: f64,
    pub odometer: f64,
}

impl EgoState {
    pub fn at(pose: Pose2D) -> Self {
        Self {
            pose,
            speed: 0.0,
            steer: 0.0,
            odometer: 0.0,
        }
    }

    /// Vehicle body rectangle; the pose origin sits on the rear axle.
    pub fn footprint(&self, cfg: &SimConfig) -> Vec<GroundPoint> {
        let c = self.pose.to_world(cfg.wheelbase / 2.0, 0.0);
        rect_footprint(c, self.pose.yaw, VEHICLE_LENGTH, VEHICLE_WIDTH)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub wheelbase: f64,
    pub max_speed: f64,
    pub max_steer: f64,
    pub max_steps: usize,
    pub max_accel: f64,
    pub max_decel: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            wheelbase: 2.5,
            max_speed: 5.0,
            max_steer: 0.61,
            max_steps: 600,
            max_accel: 2.0,
            max_decel: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Controls {
    pub steer: f64,
    pub target_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepOutcome {
    pub collision: bool,
}

fn road_class_on_edge(world: &WorldMap, e: usize, p: &GroundPoint) -> Option<SemanticClass> {
    let g = &world.road_graph;
    let a = g.junctions[g.edges[e].from].center;
    let (dx, dy) = g.edge_dir(e);
    let len = g.edge_length(e);
    let (px, py) = (p.x - a.x, p.y - a.y);
    let long = px * dx + py * dy;
    if !(0.0..=len).contains(&long) {
        return None;
    }
    let lat = (px * dy - py * dx).abs();
    if lat > SIDEWALK_OUTER {
        return None;
    }
    if lat > ROAD_HALF_WIDTH {
        return Some(SemanticClass::Sidewalk);
    }
    let mid = long > JUNCTION_HALF && long < len - JUNCTION_HALF;
    if mid && lat <= MEDIAN_HALF_WIDTH {
        return Some(SemanticClass::Sidewalk);
    }
    if mid
        && (lat - MARKING_OFFSET).abs() <= MARKING_HALF_WIDTH
        && (long - JUNCTION_HALF).rem_euclid(DASH_PERIOD) < DASH_LENGTH
    {
        return Some(SemanticClass::LaneMarking);
    }
    Some(SemanticClass::Road)
}

/// Class of the static world (no actors) at `p`.
pub fn sample_static(world: &WorldMap, p: &GroundPoint) -> SemanticClass {
    for lm in &world.landmarks {
        if lm.contains(p) {
            return lm.class;
        }
    }
    let g = &world.road_graph;
    let mut near_junction = false;
    for j in &g.junctions {
        let (dx, dy) = ((p.x - j.center.x).abs(), (p.y - j.center.y).abs());
        if dx <= JUNCTION_HALF && dy <= JUNCTION_HALF {
            return SemanticClass::Road;
        }
        near_junction |= dx <= SIDEWALK_OUTER && dy <= SIDEWALK_OUTER;
    }
    let mut best = if near_junction {
        SemanticClass::Sidewalk
    } else {
        SemanticClass::Void
    };
    for e in 0..g.edges.len() {
        match road_class_on_edge(world, e, p) {
            Some(SemanticClass::LaneMarking) => return SemanticClass::LaneMarking,
            Some(SemanticClass::Road) => best = SemanticClass::Road,
            Some(c) if best == SemanticClass::Void => best = c,
            _ => {}
        }
    }
    best
}

/// Class id at ground point `p`: pedestrian > vehicle > landmark >
/// lane-marking > road > sidewalk > void.
pub fn sample_semantic(world: &WorldMap, actors: &[Actor], p: &GroundPoint) -> u8 {
    for class in [ActorClass::Pedestrian, ActorClass::Vehicle] {
        if actors.iter().any(|a| a.class == class && a.contains(p)) {
            return class.semantic().id();
        }
    }
    sample_static(world, p).id()
}

/// Semantic front-camera view: inverse-project every below-horizon pixel
/// centre and sample the world there.
pub fn render_front_view(
    world: &WorldMap,
    actors: &[Actor],
    ego: &EgoState,
    cam: &CameraModel,
) -> SemanticRaster {
    let mut out = SemanticRaster::new(cam.width, cam.height);
    for row in 0..cam.height {
        for col in 0..cam.width {
            if let Ok(p) = inverse_project(col as f64 + 0.5, row as f64 + 0.5, &ego.pose, cam) {
                out.set(col, row, sample_semantic(world, actors, &p));
            }
        }
    }
    out
}

fn project_onto(poly: &[GroundPoint], ax: (f64, f64)) -> (f64, f64) {
    poly.iter()
        .map(|p| p.x * ax.0 + p.y * ax.1)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Separating-axis overlap test for convex polygons.
pub fn convex_overlap(a: &[GroundPoint], b: &[GroundPoint]) -> bool {
    for poly in [a, b] {
        for i in 0..poly.len() {
            let (p, q) = (poly[i], poly[(i + 1) % poly.len()]);
            let axis = (q.y - p.y, p.x - q.x);
            let (a0, a1) = project_onto(a, axis);
            let (b0, b1) = project_onto(b, axis);
            if a1 < b0 || b1 < a0 {
                return false;
            }
        }
    }
    true
}

/// Advances the world by one tick.
pub fn step_sim(
    actors: &mut [Actor],
    ego: &mut EgoState,
    controls: Controls,
    cfg: &SimConfig,
) -> StepOutcome {
    let steer = controls.steer.clamp(-cfg.max_steer, cfg.max_steer);
    let target = controls.target_speed.clamp(0.0, cfg.max_speed);
    let dv = target - ego.speed;
    ego.speed += dv.clamp(-cfg.max_decel * cfg.dt, cfg.max_accel * cfg.dt);
    ego.speed = ego.speed.clamp(0.0, cfg.max_speed);
    ego.steer = steer;
    let step = ego.speed * cfg.dt;
    let yaw = ego.pose.yaw;
    ego.pose = Pose2D::new(
        ego.pose.x + step * yaw.cos(),
        ego.pose.y + step * yaw.sin(),
        yaw + ego.speed / cfg.wheelbase * steer.tan() * cfg.dt,
    );
    ego.odometer += step;
    for a in actors.iter_mut() {
        a.advance(cfg.dt);
    }
    let body = ego.footprint(cfg);
    let c = body[0].lerp(&body[2], 0.5);
    let collision = actors.iter().any(|a| {
        a.pose.position().dist(&c) < 6.0 && convex_overlap(&body, &a.footprint())
    });
    StepOutcome { collision }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lane_centre_is_road_and_parked_car_wins() {
        let m = generate_map(0);
        let pose = m.spawn_points[0];
        assert_eq!(sample_semantic(&m, &[], &pose.position()), SemanticClass::Road.id());
        let car = Actor::parked(1, ActorClass::Vehicle, pose, Some(ColorTag::Black));
        assert_eq!(sample_semantic(&m, &[car], &pose.position()), SemanticClass::Vehicle.id());
    }

    #[test]
    fn render_matches_definition() {
        let m = generate_map(2);
        let cam = CameraModel::model_default();
        let ego = EgoState::at(m.spawn_points[3]);
        let actors = vec![Actor::parked(
            0,
            ActorClass::Vehicle,
            {
                let c = ego.pose.to_world(9.0, -3.5);
                Pose2D::new(c.x, c.y, ego.pose.yaw)
            },
            None,
        )];
        let view = render_front_view(&m, &actors, &ego, &cam);
        assert_eq!(view.get(32, 0), 0);
        assert_eq!(view.get(32, 63), SemanticClass::Road.id());
        assert!(view.data().contains(&SemanticClass::Vehicle.id()));
        for row in 0..64 {
            for col in 0..64 {
                let expect = inverse_project(col as f64 + 0.5, row as f64 + 0.5, &ego.pose, &cam)
                    .map_or(0, |p| sample_semantic(&m, &actors, &p));
                assert_eq!(view.get(col, row), expect);
            }
        }
    }

    #[test]
    fn straight_step_and_braking() {
        let cfg = SimConfig::default();
        let mut ego = EgoState::at(Pose2D::new(0.0, 0.0, 0.0));
        ego.speed = 5.0;
        step_sim(&mut [], &mut ego, Controls { steer: 0.0, target_speed: 5.0 }, &cfg);
        assert!((ego.pose.x - 0.5).abs() < 1e-12 && ego.pose.y.abs() < 1e-12);
        let mut n = 0;
        while ego.speed > 0.0 {
            step_sim(&mut [], &mut ego, Controls::default(), &cfg);
            n += 1;
        }
        assert_eq!(n, 13);
    }

    #[test]
    fn constant_steer_traces_circle() {
        let cfg = SimConfig::default();
        let mut ego = EgoState::at(Pose2D::new(0.0, 0.0, 0.0));
        ego.speed = 2.0;
        let mut pts = Vec::new();
        for _ in 0..100 {
            step_sim(&mut [], &mut ego, Controls { steer: 0.2, target_speed: 2.0 }, &cfg);
            pts.push(ego.pose.position());
        }
        let r = cfg.wheelbase / 0.2f64.tan();
        // Fit the centre by least squares on x^2 + y^2 + Dx + Ey + F = 0.
        let (mut s, mut b) = ([[0.0f64; 3]; 3], [0.0f64; 3]);
        for p in &pts {
            let row = [p.x, p.y, 1.0];
            let rhs = -(p.x * p.x + p.y * p.y);
            for i in 0..3 {
                for j in 0..3 {
                    s[i][j] += row[i] * row[j];
                }
                b[i] += row[i] * rhs;
            }
        }
        let det = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(s);
        let mut sol = [0.0; 3];
        for k in 0..3 {
            let mut m = s;
            for i in 0..3 {
                m[i][k] = b[i];
            }
            sol[k] = det(m) / d;
        }
        let (cx, cy) = (-sol[0] / 2.0, -sol[1] / 2.0);
        let fitted = (cx * cx + cy * cy - sol[2]).sqrt();
        assert!((fitted - r).abs() / r < 0.01, "{fitted} vs {r}");
    }

    #[test]
    fn scripted_actor_holds_at_route_end() {
        let route = vec![GroundPoint::new(0.0, 0.0), GroundPoint::new(1.0, 0.0)];
        let mut a = Actor::scripted(0, ActorClass::Pedestrian, route, 1.0, None);
        let mut ego = EgoState::at(Pose2D::new(50.0, 50.0, 0.0));
        for _ in 0..30 {
            step_sim(std::slice::from_mut(&mut a), &mut ego, Controls::default(), &SimConfig::default());
        }
        assert!((a.pose.x - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_detects_touching_cars() {
        let a = rect_footprint(GroundPoint::new(0.0, 0.0), 0.0, 4.5, 2.0);
        let b = rect_footprint(GroundPoint::new(4.0, 1.0), 0.3, 4.5, 2.0);
        let c = rect_footprint(GroundPoint::new(0.0, 3.0), 0.0, 4.5, 2.0);
        assert!(convex_overlap(&a, &b));
        assert!(!convex_overlap(&a, &c));
    }
}
