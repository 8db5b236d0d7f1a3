//! Synthetic episodes: a feasible plan from a spawn point, its surface text,
//! the ground-truth route and the actors its referents need.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{parse_command, Maneuver, ManeuverKind, ManeuverPlan, Referent, ReferentClass, Relation};
use crate::geometry::Pose2D;
use crate::raster::SemanticClass;
use crate::route::{LaneCursor, Route, RouteBuilder};
use crate::worldsim::{
    Actor, ActorClass, ColorTag, LaneSlot, SideTag, TurnKind, WorldMap, JUNCTION_HALF,
    ROAD_HALF_WIDTH, SIDEWALK_OUTER,
};

pub const LIGHTING_TAGS: [&str; 5] = ["clear_noon", "cloudy", "wet", "sunset", "night"];

/// Distance a manoeuvre keeps driving after it leaves a junction.
const EXIT_RUN: f64 = 20.0;
/// Extra distance before a goal that follows a non-halting final manoeuvre.
const FINAL_RUN: f64 = 15.0;
/// Closest a goal may sit to the junction box ahead.
const GOAL_MARGIN: f64 = 14.0;
const SHIFT_LENGTH: f64 = 20.0;
/// Longest route accepted, keeping episodes well inside the step budget.
pub const MAX_ROUTE_LENGTH: f64 = 140.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no feasible plan from this spawn point")]
pub struct InfeasibleError;

/// Everything needed to run or record one synthetic episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub plan: ManeuverPlan,
    pub spawn: Pose2D,
    pub route: Route,
    pub goal_pose: Pose2D,
    pub actors: Vec<Actor>,
    pub lighting: String,
}

#[derive(Clone)]
struct Draft<'a> {
    b: RouteBuilder<'a>,
    actors: Vec<Actor>,
    /// (edge, forward) pairs the route drives along.
    edges: Vec<(usize, bool)>,
}

impl<'a> Draft<'a> {
    fn cursor(&self) -> LaneCursor {
        self.b.cursor
    }

    fn note_edge(&mut self) {
        let c = self.b.cursor;
        if self.edges.last() != Some(&(c.edge, c.forward)) {
            self.edges.push((c.edge, c.forward));
        }
    }

    fn cross(&mut self, kind: TurnKind) -> bool {
        let ok = self.b.cross_junction(kind);
        self.note_edge();
        ok
    }

    fn park_car(&mut self, slot: LaneSlot, s: f64, color: ColorTag, graph: &crate::worldsim::RoadGraph) {
        let c = self.b.cursor;
        let pose = graph.lane_pose(c.edge, c.forward, slot, s);
        let id = self.actors.len() as u32;
        self.actors
            .push(Actor::parked(id, ActorClass::Vehicle, pose, Some(color)));
    }
}

fn side_word(s: SideTag) -> &'static str {
    s.word()
}

fn slot_for(side: SideTag) -> LaneSlot {
    match side {
        SideTag::Left => LaneSlot::Inner,
        SideTag::Right => LaneSlot::Curb,
    }
}

fn dir_of(kind: TurnKind) -> Option<SideTag> {
    match kind {
        TurnKind::Left => Some(SideTag::Left),
        TurnKind::Right => Some(SideTag::Right),
        TurnKind::Straight => None,
    }
}

fn has_lights(world: &WorldMap, junction: usize) -> bool {
    world
        .landmarks
        .iter()
        .any(|l| l.class == SemanticClass::TrafficLight && l.junction == Some(junction))
}

/// Moves the draft into lane `slot` starting right away, if not there yet.
/// Returns the travel-direction `s` at which the lane is reached.
fn enter_slot(d: &mut Draft, slot: LaneSlot) -> f64 {
    let c = d.cursor();
    if c.slot() == slot {
        return c.s;
    }
    d.b.straight_to(c.s + 3.0);
    d.b.shift_to(slot.offset(), SHIFT_LENGTH);
    d.b.cursor.s
}

fn try_turn(world: &WorldMap, d: &mut Draft, rng: &mut ChaCha8Rng, last: bool) -> Option<(Maneuver, String)> {
    let g = &world.road_graph;
    let c = d.cursor();
    let mut kinds: Vec<TurnKind> = g
        .exits(c.edge, c.forward)
        .into_iter()
        .map(|e| e.0)
        .filter(|k| *k != TurnKind::Straight)
        .collect();
    kinds.shuffle(rng);
    let kind = *kinds.first()?;
    if c.s > d.b.turn_start(kind) - 2.0 {
        return None;
    }
    let (_, node) = g.travel_nodes(c.edge, c.forward);
    let dir = dir_of(kind)?;
    let mut m = Maneuver::turn(dir);
    let dw = side_word(dir);
    let lights = has_lights(world, node);
    let text = match rng.gen_range(0..10) {
        0..=3 => format!("take a {dw} turn"),
        4..=6 => format!("turn {dw}"),
        7 if lights => {
            m.relation = Some(Relation::At);
            m.referents.push(Referent::new(ReferentClass::TrafficLight));
            format!("turn {dw} at the traffic light")
        }
        8 => {
            m.relation = Some(Relation::At);
            m.referents.push(Referent::new(ReferentClass::Intersection));
            format!("turn {dw} at the intersection")
        }
        _ => format!("take a {dw}"),
    };
    d.cross(kind);
    d.b.straight_to(EXIT_RUN + if last { FINAL_RUN } else { 0.0 });
    Some((m, text))
}

fn try_straight(world: &WorldMap, d: &mut Draft, rng: &mut ChaCha8Rng, last: bool) -> Option<(Maneuver, String)> {
    let g = &world.road_graph;
    let mut m = Maneuver {
        kind: ManeuverKind::GoStraight,
        direction: None,
        relation: None,
        referents: Vec::new(),
    };
    match rng.gen_range(0..3) {
        0 => {
            // Until the next lit junction, at most two junctions ahead.
            let mut probe = d.clone();
            for _ in 0..2 {
                let c = probe.cursor();
                let (_, node) = g.travel_nodes(c.edge, c.forward);
                let stop_s = probe.b.edge_length() - GOAL_MARGIN;
                if has_lights(world, node) && c.s <= stop_s - 10.0 {
                    probe.b.straight_to(stop_s);
                    *d = probe;
                    m.referents.push(Referent::new(ReferentClass::TrafficLight));
                    return Some((m, "go straight until the traffic light".into()));
                }
                if !probe.cross(TurnKind::Straight) {
                    return None;
                }
            }
            None
        }
        1 => {
            let c = d.cursor();
            let stop_s = d.b.edge_length() - GOAL_MARGIN;
            if c.s > stop_s - 20.0 {
                return None;
            }
            d.b.straight_to(stop_s);
            m.referents.push(Referent::new(ReferentClass::Intersection));
            Some((m, "go straight until the intersection".into()))
        }
        _ => {
            let c = d.cursor();
            if c.s > d.b.edge_length() - 2.0 || !d.cross(TurnKind::Straight) {
                return None;
            }
            d.b.straight_to(EXIT_RUN + if last { FINAL_RUN } else { 0.0 });
            Some((m, "go straight".into()))
        }
    }
}

fn try_lane_change(d: &mut Draft, last: bool) -> Option<(Maneuver, String)> {
    let c = d.cursor();
    let (dir, slot) = match c.slot() {
        LaneSlot::Curb => (SideTag::Left, LaneSlot::Inner),
        LaneSlot::Inner => (SideTag::Right, LaneSlot::Curb),
    };
    let end = c.s + 3.0 + SHIFT_LENGTH + 3.0 + if last { FINAL_RUN } else { 0.0 };
    if end > d.b.edge_length() - GOAL_MARGIN {
        return None;
    }
    d.b.straight_to(c.s + 3.0);
    d.b.shift_to(slot.offset(), SHIFT_LENGTH);
    d.b.straight_to(end);
    let m = Maneuver {
        kind: ManeuverKind::LaneChange,
        direction: Some(dir),
        relation: None,
        referents: Vec::new(),
    };
    Some((m, format!("change to the {} lane", side_word(dir))))
}

fn halt_head(kind: ManeuverKind) -> &'static str {
    if kind == ManeuverKind::Park {
        "park"
    } else {
        "stop"
    }
}

fn try_halt(world: &WorldMap, d: &mut Draft, rng: &mut ChaCha8Rng) -> Option<(Maneuver, String)> {
    let kind = if rng.gen_bool(0.7) {
        ManeuverKind::Park
    } else {
        ManeuverKind::Stop
    };
    let mut variants = [0u8, 1, 1, 2, 2, 3];
    variants.shuffle(rng);
    for v in variants {
        let mut probe = d.clone();
        let res = match v {
            0 => halt_on_side(&mut probe, rng, kind),
            1 => halt_at_landmark(world, &mut probe, rng, kind),
            2 => halt_at_car(world, &mut probe, rng, kind),
            _ => halt_between(world, &mut probe, rng, kind),
        };
        if res.is_some() {
            *d = probe;
            return res;
        }
    }
    None
}

fn halt_on_side(d: &mut Draft, rng: &mut ChaCha8Rng, kind: ManeuverKind) -> Option<(Maneuver, String)> {
    let side = if rng.gen_bool(0.6) { SideTag::Right } else { SideTag::Left };
    let c = d.cursor();
    let min_goal = c.s + if c.slot() == slot_for(side) { 15.0 } else { 30.0 };
    let goal = c.s + rng.gen_range(15.0..40.0);
    if goal.max(min_goal) > d.b.edge_length() - GOAL_MARGIN {
        return None;
    }
    enter_slot(d, slot_for(side));
    d.b.straight_to(goal.max(min_goal));
    let m = Maneuver {
        kind,
        direction: Some(side),
        relation: None,
        referents: Vec::new(),
    };
    Some((m, format!("{} on the {}", halt_head(kind), side_word(side))))
}

/// Landmarks beside the ego carriageway (right side of travel) on the
/// current edge, with their travel-direction `s`.
fn right_side_landmarks(world: &WorldMap, d: &Draft) -> Vec<(usize, f64)> {
    let g = &world.road_graph;
    let c = d.cursor();
    let right = if c.forward { SideTag::Right } else { SideTag::Left };
    let (start, _) = g.travel_nodes(c.edge, c.forward);
    let o = g.junctions[start].center;
    let (tx, ty) = g.travel_dir(c.edge, c.forward);
    world
        .landmarks
        .iter()
        .enumerate()
        .filter(|(_, l)| l.edge == Some(c.edge) && l.side == Some(right))
        .filter(|(_, l)| matches!(l.class, SemanticClass::BusStop | SemanticClass::Building))
        .map(|(i, l)| {
            let p = l.centroid();
            (i, (p.x - o.x) * tx + (p.y - o.y) * ty)
        })
        .collect()
}

fn halt_at_landmark(world: &WorldMap, d: &mut Draft, rng: &mut ChaCha8Rng, kind: ManeuverKind) -> Option<(Maneuver, String)> {
    let g = &world.road_graph;
    let c = d.cursor();
    let limit = d.b.edge_length() - GOAL_MARGIN;
    let min_goal = c.s + if c.slot() == LaneSlot::Curb { 20.0 } else { 30.0 };
    let mut options: Vec<(Referent, Relation, f64)> = Vec::new();
    for (i, s_l) in right_side_landmarks(world, d) {
        let lm = &world.landmarks[i];
        let class = if lm.class == SemanticClass::BusStop {
            ReferentClass::BusStop
        } else {
            ReferentClass::Building
        };
        let mut r = Referent::new(class);
        if rng.gen_bool(0.6) {
            r.color = lm.color;
        }
        if rng.gen_bool(0.25) {
            r.side = Some(SideTag::Right);
        }
        for (rel, off) in [
            (Relation::Near, 0.0),
            (Relation::Beside, 0.0),
            (Relation::InFrontOf, 8.0),
            (Relation::Behind, -8.0),
        ] {
            options.push((r, rel, s_l + off));
        }
    }
    let (_, node) = g.travel_nodes(c.edge, c.forward);
    if has_lights(world, node) {
        options.push((Referent::new(ReferentClass::TrafficLight), Relation::Near, limit));
    }
    options.retain(|o| o.2 >= min_goal && o.2 <= limit);
    let (r, rel, goal) = *options.choose(rng)?;
    enter_slot(d, LaneSlot::Curb);
    d.b.straight_to(goal);
    let mut text = format!("{} {} the ", halt_head(kind), rel.phrase());
    if let Some(col) = r.color {
        text.push_str(col.word());
        text.push(' ');
    }
    text.push_str(r.class.phrase());
    if let Some(side) = r.side {
        text.push_str(" on the ");
        text.push_str(side.word());
    }
    let m = Maneuver {
        kind,
        direction: None,
        relation: Some(rel),
        referents: vec![r],
    };
    Some((m, text))
}

fn halt_at_car(world: &WorldMap, d: &mut Draft, rng: &mut ChaCha8Rng, kind: ManeuverKind) -> Option<(Maneuver, String)> {
    let g = &world.road_graph;
    let c = d.cursor();
    let side = if rng.gen_bool(0.6) { SideTag::Right } else { SideTag::Left };
    let car_slot = slot_for(side);
    let rel = *[Relation::Behind, Relation::Behind, Relation::Near, Relation::Beside].choose(rng)?;
    let (goal_slot, goal_off) = match rel {
        Relation::Beside => (car_slot.other(), 0.0),
        _ => (car_slot, -7.0),
    };
    let lo = c.s + 35.0;
    let hi = d.b.edge_length() - 16.0;
    if lo > hi {
        return None;
    }
    let s_car = rng.gen_range(lo..=hi).round();
    let color = *ColorTag::ALL.choose(rng)?;
    d.park_car(car_slot, s_car, color, g);
    if s_car + 14.0 <= d.b.edge_length() - JUNCTION_HALF - 3.0 && rng.gen_bool(0.7) {
        let other = *ColorTag::ALL.iter().filter(|&&x| x != color).collect::<Vec<_>>().choose(rng)?;
        let s2 = rng.gen_range(s_car + 12.0..=d.b.edge_length() - JUNCTION_HALF - 3.0).round();
        d.park_car(car_slot, s2, *other, g);
    }
    if c.slot() != goal_slot {
        d.b.straight_to(c.s + 3.0);
        d.b.shift_to(goal_slot.offset(), SHIFT_LENGTH);
    }
    d.b.straight_to(s_car + goal_off);
    let mut r = Referent::new(ReferentClass::Vehicle);
    let mut text = format!("{} {} the ", halt_head(kind), rel.phrase());
    if rng.gen_bool(0.85) {
        r.color = Some(color);
        text.push_str(color.word());
        text.push(' ');
    }
    text.push_str("car");
    if rng.gen_bool(0.5) {
        r.side = Some(side);
        text.push_str(" on the ");
        text.push_str(side.word());
    }
    let m = Maneuver {
        kind,
        direction: None,
        relation: Some(rel),
        referents: vec![r],
    };
    Some((m, text))
}

fn halt_between(world: &WorldMap, d: &mut Draft, rng: &mut ChaCha8Rng, kind: ManeuverKind) -> Option<(Maneuver, String)> {
    let g = &world.road_graph;
    let c = d.cursor();
    let lo = c.s + if c.slot() == LaneSlot::Inner { 12.0 } else { 28.0 };
    let hi = d.b.edge_length() - JUNCTION_HALF - 2.25 - 30.0;
    if lo > hi {
        return None;
    }
    let s1 = rng.gen_range(lo..=hi).round();
    let c1 = *ColorTag::ALL.choose(rng)?;
    let c2 = *ColorTag::ALL.choose(rng)?;
    d.park_car(LaneSlot::Curb, s1, c1, g);
    d.park_car(LaneSlot::Curb, s1 + 30.0, c2, g);
    enter_slot(d, LaneSlot::Inner);
    d.b.straight_to(s1 + 7.0);
    d.b.shift_to(LaneSlot::Curb.offset(), 12.0);
    d.b.straight_to(s1 + 21.0);
    let m = Maneuver {
        kind,
        direction: None,
        relation: Some(Relation::Between),
        referents: vec![Referent::new(ReferentClass::Vehicle); 2],
    };
    Some((m, format!("{} between the two cars", halt_head(kind))))
}

fn add_ambient(world: &WorldMap, d: &mut Draft, rng: &mut ChaCha8Rng) {
    let g = &world.road_graph;
    let on_route = |e: usize| d.edges.iter().any(|x| x.0 == e);
    let mut next_id = d.actors.len() as u32;
    let mut moving = Vec::new();
    // Oncoming traffic beside the route, free traffic elsewhere.
    for _ in 0..2 {
        let &(e, fwd) = d.edges.choose(rng).unwrap();
        moving.push((e, !fwd));
    }
    let others: Vec<usize> = (0..g.edges.len()).filter(|&e| !on_route(e)).collect();
    for _ in 0..2 {
        if let Some(&e) = others.choose(rng) {
            moving.push((e, rng.gen_bool(0.5)));
        }
    }
    for (e, fwd) in moving {
        let len = g.edge_length(e);
        let slot = if rng.gen_bool(0.5) { LaneSlot::Inner } else { LaneSlot::Curb };
        let s0 = rng.gen_range(12.0..len * 0.5);
        let a = g.lane_pose(e, fwd, slot, s0).position();
        let b = g.lane_pose(e, fwd, slot, len - 12.0).position();
        let color = *ColorTag::ALL.choose(rng).unwrap();
        d.actors.push(Actor::scripted(
            next_id,
            ActorClass::Vehicle,
            vec![a, b],
            rng.gen_range(2.0..5.0),
            Some(color),
        ));
        next_id += 1;
    }
    for _ in 0..3 {
        let e = rng.gen_range(0..g.edges.len());
        let len = g.edge_length(e);
        let fwd = rng.gen_bool(0.5);
        // Walk on the right-hand sidewalk of the chosen direction.
        let lat = (ROAD_HALF_WIDTH + SIDEWALK_OUTER) / 2.0;
        let s0 = rng.gen_range(15.0..len / 2.0);
        let s1 = len - 15.0;
        let a = g.lane_pose_offset(e, fwd, lat, s0).position();
        let b = g.lane_pose_offset(e, fwd, lat, s1).position();
        d.actors.push(Actor::scripted(
            next_id,
            ActorClass::Pedestrian,
            vec![a, b],
            rng.gen_range(0.8..1.5),
            None,
        ));
        next_id += 1;
    }
    if let Some(&e) = others.choose(rng) {
        let len = g.edge_length(e);
        let pose = g.lane_pose(e, rng.gen_bool(0.5), LaneSlot::Curb, rng.gen_range(15.0..len - 15.0));
        d.actors.push(Actor::parked(
            next_id,
            ActorClass::Vehicle,
            pose,
            Some(*ColorTag::ALL.choose(rng).unwrap()),
        ));
    }
}

fn sample_length(rng: &mut ChaCha8Rng) -> usize {
    match rng.gen_range(0..100) {
        0..=54 => 1,
        55..=89 => 2,
        _ => 3,
    }
}

fn try_plan<'a>(world: &'a WorldMap, start: LaneCursor, rng: &mut ChaCha8Rng) -> Option<(Draft<'a>, Vec<Maneuver>, Vec<String>)> {
    let n = sample_length(rng);
    let mut d = Draft {
        b: RouteBuilder::new(&world.road_graph, start),
        actors: Vec::new(),
        edges: Vec::new(),
    };
    d.note_edge();
    let mut maneuvers = Vec::new();
    let mut clauses = Vec::new();
    for i in 0..n {
        let last = i + 1 == n;
        let mut order: Vec<u8> = if last {
            vec![0, 0, 0, 0, 0, 0, 1, 1, 2, 3]
        } else {
            vec![1, 1, 1, 1, 1, 2, 2, 2, 3, 3]
        };
        order.shuffle(rng);
        order.dedup();
        let mut done = None;
        for kind in order {
            let mut probe = d.clone();
            let res = match kind {
                0 => try_halt(world, &mut probe, rng),
                1 => try_turn(world, &mut probe, rng, last),
                2 => try_straight(world, &mut probe, rng, last),
                _ => try_lane_change(&mut probe, last),
            };
            if let Some(r) = res {
                d = probe;
                done = Some(r);
                break;
            }
        }
        let (m, text) = done?;
        d.b.end_piece();
        maneuvers.push(m);
        clauses.push(text);
    }
    Some((d, maneuvers, clauses))
}

/// Samples a feasible 1-3 manoeuvre episode from `spawn`; deterministic per seed.
pub fn generate_command(world: &WorldMap, spawn: Pose2D, seed: u64) -> Result<EpisodeSpec, InfeasibleError> {
    let start = LaneCursor::locate(&world.road_graph, &spawn).ok_or(InfeasibleError)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..40 {
        let Some((mut d, maneuvers, clauses)) = try_plan(world, start, &mut rng) else {
            continue;
        };
        if d.b.length() > MAX_ROUTE_LENGTH {
            continue;
        }
        add_ambient(world, &mut d, &mut rng);
        let text = clauses.join(" and ");
        let plan = ManeuverPlan {
            maneuvers,
            token_count: text.split_whitespace().count(),
            raw_text: text,
        };
        debug_assert_eq!(parse_command(&plan.raw_text).as_ref(), Ok(&plan));
        let route = d.b.build();
        let goal_pose = route.goal_pose();
        let lighting = LIGHTING_TAGS[rng.gen_range(0..LIGHTING_TAGS.len())].to_string();
        return Ok(EpisodeSpec {
            plan,
            spawn,
            route,
            goal_pose,
            actors: d.actors,
            lighting,
        });
    }
    Err(InfeasibleError)
}
