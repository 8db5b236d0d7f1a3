//! Procedural road networks: a 3x3 grid of junctions joined by divided
//! two-way roads with two lanes per direction, sidewalks, landmarks and
//! spawn points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::geometry::{GroundPoint, Pose2D};
use crate::raster::SemanticClass;

pub const GRID_NODES: usize = 3;
pub const BLOCK_MIN: f64 = 70.0;
pub const BLOCK_MAX: f64 = 90.0;
pub const MEDIAN_HALF_WIDTH: f64 = 1.0;
pub const LANE_WIDTH: f64 = 3.5;
pub const ROAD_HALF_WIDTH: f64 = MEDIAN_HALF_WIDTH + 2.0 * LANE_WIDTH;
pub const SIDEWALK_OUTER: f64 = ROAD_HALF_WIDTH + 4.0;
pub const MARKING_OFFSET: f64 = MEDIAN_HALF_WIDTH + LANE_WIDTH;
pub const MARKING_HALF_WIDTH: f64 = 0.15;
pub const DASH_PERIOD: f64 = 6.0;
pub const DASH_LENGTH: f64 = 3.0;
/// Half side of the square paved area around each junction centre.
pub const JUNCTION_HALF: f64 = ROAD_HALF_WIDTH;
/// Distance from a junction centre at which spawn points are placed.
pub const SPAWN_OFFSET: f64 = JUNCTION_HALF + 10.0;
pub const BUILDING_SETBACK: f64 = SIDEWALK_OUTER + 1.0;

const WMAP_MAGIC: &[u8; 4] = b"WMAP";
const WMAP_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneSlot {
    /// Lane next to the median.
    Inner,
    /// Lane next to the sidewalk.
    Curb,
}

impl LaneSlot {
    /// Offset of the lane centre to the right of the road centreline,
    /// measured relative to the direction of travel.
    pub fn offset(self) -> f64 {
        match self {
            LaneSlot::Inner => MEDIAN_HALF_WIDTH + LANE_WIDTH / 2.0,
            LaneSlot::Curb => MEDIAN_HALF_WIDTH + 1.5 * LANE_WIDTH,
        }
    }

    pub fn other(self) -> Self {
        match self {
            LaneSlot::Inner => LaneSlot::Curb,
            LaneSlot::Curb => LaneSlot::Inner,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorTag {
    Black,
    White,
    Red,
    Blue,
    Green,
    Yellow,
    Gray,
}

impl ColorTag {
    pub const ALL: [ColorTag; 7] = [
        ColorTag::Black,
        ColorTag::White,
        ColorTag::Red,
        ColorTag::Blue,
        ColorTag::Green,
        ColorTag::Yellow,
        ColorTag::Gray,
    ];

    pub fn word(self) -> &'static str {
        match self {
            ColorTag::Black => "black",
            ColorTag::White => "white",
            ColorTag::Red => "red",
            ColorTag::Blue => "blue",
            ColorTag::Green => "green",
            ColorTag::Yellow => "yellow",
            ColorTag::Gray => "gray",
        }
    }

    pub fn from_word(w: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.word() == w)
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for ColorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideTag {
    Left,
    Right,
}

impl SideTag {
    pub fn word(self) -> &'static str {
        match self {
            SideTag::Left => "left",
            SideTag::Right => "right",
        }
    }

    pub fn flip(self) -> Self {
        match self {
            SideTag::Left => SideTag::Right,
            SideTag::Right => SideTag::Left,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub center: GroundPoint,
    /// Incident road edges.
    pub arms: Vec<usize>,
}

/// Road between two junctions. `from -> to` is the canonical direction
/// (`+x` for horizontal roads, `+y` for vertical ones).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadEdge {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub edge: usize,
    /// Travel along the canonical direction.
    pub forward: bool,
    pub slot: LaneSlot,
    pub width: f64,
    /// Lane centre between the two junction boxes, in travel direction.
    pub centerline: Vec<GroundPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadGraph {
    pub junctions: Vec<Junction>,
    pub edges: Vec<RoadEdge>,
    pub lanes: Vec<Lane>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    Left,
    Right,
    Straight,
}

impl RoadGraph {
    pub fn edge_length(&self, e: usize) -> f64 {
        let edge = self.edges[e];
        self.junctions[edge.from]
            .center
            .dist(&self.junctions[edge.to].center)
    }

    /// Unit vector of the canonical direction of an edge.
    pub fn edge_dir(&self, e: usize) -> (f64, f64) {
        let edge = self.edges[e];
        let a = self.junctions[edge.from].center;
        let b = self.junctions[edge.to].center;
        let l = a.dist(&b);
        ((b.x - a.x) / l, (b.y - a.y) / l)
    }

    /// Junction where travel along `e` starts / ends.
    pub fn travel_nodes(&self, e: usize, forward: bool) -> (usize, usize) {
        let edge = self.edges[e];
        if forward {
            (edge.from, edge.to)
        } else {
            (edge.to, edge.from)
        }
    }

    pub fn travel_dir(&self, e: usize, forward: bool) -> (f64, f64) {
        let (dx, dy) = self.edge_dir(e);
        if forward {
            (dx, dy)
        } else {
            (-dx, -dy)
        }
    }

    /// Pose on a lane at distance `s` from the junction where travel starts.
    pub fn lane_pose(&self, e: usize, forward: bool, slot: LaneSlot, s: f64) -> Pose2D {
        self.lane_pose_offset(e, forward, slot.offset(), s)
    }

    /// Pose at distance `s` along the travel direction and `offset` meters
    /// right of the road centreline.
    pub fn lane_pose_offset(&self, e: usize, forward: bool, offset: f64, s: f64) -> Pose2D {
        let (start, _) = self.travel_nodes(e, forward);
        let c = self.junctions[start].center;
        let (tx, ty) = self.travel_dir(e, forward);
        let (rx, ry) = (ty, -tx);
        Pose2D::new(
            c.x + tx * s + rx * offset,
            c.y + ty * s + ry * offset,
            ty.atan2(tx),
        )
    }

    /// Exits available when arriving at the end of `e` travelling `forward`.
    pub fn exits(&self, e: usize, forward: bool) -> Vec<(TurnKind, usize, bool)> {
        let (_, node) = self.travel_nodes(e, forward);
        let (tx, ty) = self.travel_dir(e, forward);
        let mut out = Vec::new();
        for &arm in &self.junctions[node].arms {
            if arm == e {
                continue;
            }
            let fwd = self.edges[arm].from == node;
            let (ox, oy) = self.travel_dir(arm, fwd);
            let cross = tx * oy - ty * ox;
            let dot = tx * ox + ty * oy;
            let kind = if cross > 0.5 {
                TurnKind::Left
            } else if cross < -0.5 {
                TurnKind::Right
            } else if dot > 0.5 {
                TurnKind::Straight
            } else {
                continue;
            };
            out.push((kind, arm, fwd));
        }
        out
    }

    pub fn exit(&self, e: usize, forward: bool, kind: TurnKind) -> Option<(usize, bool)> {
        self.exits(e, forward)
            .into_iter()
            .find(|(k, _, _)| *k == kind)
            .map(|(_, arm, fwd)| (arm, fwd))
    }

    /// Junction admits a left and a right turn from at least one approach.
    pub fn admits_left_and_right(&self, node: usize) -> bool {
        self.junctions[node].arms.iter().any(|&arm| {
            let fwd = self.edges[arm].to == node;
            let exits = self.exits(arm, fwd);
            exits.iter().any(|x| x.0 == TurnKind::Left) && exits.iter().any(|x| x.0 == TurnKind::Right)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub class: SemanticClass,
    pub footprint: Vec<GroundPoint>,
    pub color: Option<ColorTag>,
    /// Side of the road relative to the canonical direction of `edge`.
    pub side: Option<SideTag>,
    pub edge: Option<usize>,
    pub junction: Option<usize>,
}

impl Landmark {
    pub fn centroid(&self) -> GroundPoint {
        let n = self.footprint.len() as f64;
        let (sx, sy) = self
            .footprint
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        GroundPoint::new(sx / n, sy / n)
    }

    pub fn contains(&self, p: &GroundPoint) -> bool {
        point_in_polygon(p, &self.footprint)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldMap {
    pub seed: u64,
    pub road_graph: RoadGraph,
    pub landmarks: Vec<Landmark>,
    pub spawn_points: Vec<Pose2D>,
}

#[derive(Debug, Error)]
pub enum MapFormatError {
    #[error("bad WMAP magic")]
    BadMagic,
    #[error("unsupported WMAP version {0}")]
    Version(u16),
    #[error("truncated WMAP blob")]
    Truncated,
    #[error("invalid WMAP field: {0}")]
    Invalid(&'static str),
}

/// Even-odd point in polygon test.
pub fn point_in_polygon(p: &GroundPoint, poly: &[GroundPoint]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Oriented rectangle footprint.
pub fn rect_footprint(center: GroundPoint, yaw: f64, length: f64, width: f64) -> Vec<GroundPoint> {
    let pose = Pose2D::new(center.x, center.y, yaw);
    let (hl, hw) = (length / 2.0, width / 2.0);
    vec![
        pose.to_world(-hl, -hw),
        pose.to_world(hl, -hw),
        pose.to_world(hl, hw),
        pose.to_world(-hl, hw),
    ]
}

/// Builds the map for `seed`. Same seed, same map.
pub fn generate_map(seed: u64) -> WorldMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_3a9);
    let mut xs = vec![0.0];
    let mut ys = vec![0.0];
    for _ in 1..GRID_NODES {
        let bx: f64 = rng.gen_range(BLOCK_MIN..BLOCK_MAX);
        let by: f64 = rng.gen_range(BLOCK_MIN..BLOCK_MAX);
        xs.push(xs.last().unwrap() + bx.round());
        ys.push(ys.last().unwrap() + by.round());
    }
    let node = |i: usize, j: usize| i + GRID_NODES * j;
    let mut junctions: Vec<Junction> = (0..GRID_NODES * GRID_NODES)
        .map(|k| Junction {
            center: GroundPoint::new(xs[k % GRID_NODES], ys[k / GRID_NODES]),
            arms: Vec::new(),
        })
        .collect();
    let mut edges = Vec::new();
    for j in 0..GRID_NODES {
        for i in 0..GRID_NODES - 1 {
            edges.push(RoadEdge {
                from: node(i, j),
                to: node(i + 1, j),
            });
        }
    }
    for i in 0..GRID_NODES {
        for j in 0..GRID_NODES - 1 {
            edges.push(RoadEdge {
                from: node(i, j),
                to: node(i, j + 1),
            });
        }
    }
    for (e, edge) in edges.iter().enumerate() {
        junctions[edge.from].arms.push(e);
        junctions[edge.to].arms.push(e);
    }
    let mut graph = RoadGraph {
        junctions,
        edges,
        lanes: Vec::new(),
    };
    for e in 0..graph.edges.len() {
        let len = graph.edge_length(e);
        for forward in [true, false] {
            for slot in [LaneSlot::Inner, LaneSlot::Curb] {
                let a = graph.lane_pose(e, forward, slot, JUNCTION_HALF).position();
                let b = graph
                    .lane_pose(e, forward, slot, len - JUNCTION_HALF)
                    .position();
                graph.lanes.push(Lane {
                    edge: e,
                    forward,
                    slot,
                    width: LANE_WIDTH,
                    centerline: vec![a, b],
                });
            }
        }
    }

    let mut landmarks = Vec::new();
    place_bus_stops(&graph, &mut rng, &mut landmarks);
    place_traffic_lights(&graph, &mut rng, &mut landmarks);
    place_buildings(&graph, &xs, &ys, &mut rng, &mut landmarks);

    let mut spawn_points = Vec::new();
    for e in 0..graph.edges.len() {
        for forward in [true, false] {
            for slot in [LaneSlot::Inner, LaneSlot::Curb] {
                spawn_points.push(graph.lane_pose(e, forward, slot, SPAWN_OFFSET));
            }
        }
    }

    WorldMap {
        seed,
        road_graph: graph,
        landmarks,
        spawn_points,
    }
}

/// Canonical right normal of an edge.
fn canonical_right(graph: &RoadGraph, e: usize) -> (f64, f64) {
    let (dx, dy) = graph.edge_dir(e);
    (dy, -dx)
}

/// Point at `long` along the canonical direction of `e` and `lat` meters to
/// the side given by `side`.
fn edge_point(graph: &RoadGraph, e: usize, long: f64, side: SideTag, lat: f64) -> GroundPoint {
    let a = graph.junctions[graph.edges[e].from].center;
    let (dx, dy) = graph.edge_dir(e);
    let (rx, ry) = canonical_right(graph, e);
    let sign = match side {
        SideTag::Right => 1.0,
        SideTag::Left => -1.0,
    };
    GroundPoint::new(
        a.x + dx * long + rx * lat * sign,
        a.y + dy * long + ry * lat * sign,
    )
}

fn place_bus_stops(graph: &RoadGraph, rng: &mut ChaCha8Rng, out: &mut Vec<Landmark>) {
    let colors = [ColorTag::Red, ColorTag::Blue, ColorTag::Green, ColorTag::Yellow];
    let start = out.len();
    for e in 0..graph.edges.len() {
        let len = graph.edge_length(e);
        for side in [SideTag::Left, SideTag::Right] {
            if !rng.gen_bool(0.4) {
                continue;
            }
            let long = rng.gen_range(30.0..len - 25.0).round();
            out.push(bus_stop(graph, e, side, long, colors[rng.gen_range(0..colors.len())]));
        }
    }
    if out.len() == start {
        let len = graph.edge_length(0);
        out.push(bus_stop(graph, 0, SideTag::Right, (len / 2.0).round(), ColorTag::Red));
    }
}

fn bus_stop(graph: &RoadGraph, e: usize, side: SideTag, long: f64, color: ColorTag) -> Landmark {
    let (dx, dy) = graph.edge_dir(e);
    let yaw = dy.atan2(dx);
    let lat = ROAD_HALF_WIDTH + 0.4 + 0.8;
    let center = edge_point(graph, e, long, side, lat);
    Landmark {
        class: SemanticClass::BusStop,
        footprint: rect_footprint(center, yaw, 3.0, 1.6),
        color: Some(color),
        side: Some(side),
        edge: Some(e),
        junction: None,
    }
}

fn place_traffic_lights(graph: &RoadGraph, rng: &mut ChaCha8Rng, out: &mut Vec<Landmark>) {
    let mut placed = false;
    let n = graph.junctions.len();
    for (k, junction) in graph.junctions.iter().enumerate() {
        let eligible = junction.arms.len() >= 3;
        let force = !placed && k == n - 1;
        if !(eligible && rng.gen_bool(0.5)) && !(force && eligible) {
            continue;
        }
        placed = true;
        let c = junction.center;
        let d = ROAD_HALF_WIDTH + 1.5;
        for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
            out.push(Landmark {
                class: SemanticClass::TrafficLight,
                footprint: rect_footprint(GroundPoint::new(c.x + sx * d, c.y + sy * d), 0.0, 1.2, 1.2),
                color: None,
                side: None,
                edge: None,
                junction: Some(k),
            });
        }
    }
    if !placed {
        // The centre of the grid always has four arms.
        let k = n / 2;
        let c = graph.junctions[k].center;
        let d = ROAD_HALF_WIDTH + 1.5;
        for (sx, sy) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
            out.push(Landmark {
                class: SemanticClass::TrafficLight,
                footprint: rect_footprint(GroundPoint::new(c.x + sx * d, c.y + sy * d), 0.0, 1.2, 1.2),
                color: None,
                side: None,
                edge: None,
                junction: Some(k),
            });
        }
    }
}

fn place_buildings(
    graph: &RoadGraph,
    xs: &[f64],
    ys: &[f64],
    rng: &mut ChaCha8Rng,
    out: &mut Vec<Landmark>,
) {
    let colors = [ColorTag::Red, ColorTag::White, ColorTag::Gray, ColorTag::Blue];
    // Faces of every edge: buildings stand back from the sidewalk, centred
    // on the middle part of the block so faces never collide at corners.
    for e in 0..graph.edges.len() {
        let len = graph.edge_length(e);
        let (dx, dy) = graph.edge_dir(e);
        let yaw = dy.atan2(dx);
        for side in [SideTag::Left, SideTag::Right] {
            let probe = edge_point(graph, e, len / 2.0, side, BUILDING_SETBACK + 5.0);
            let inside_grid = probe.x > xs[0]
                && probe.x < xs[GRID_NODES - 1]
                && probe.y > ys[0]
                && probe.y < ys[GRID_NODES - 1];
            let p = if inside_grid { 0.55 } else { 0.35 };
            if !rng.gen_bool(p) {
                continue;
            }
            let length: f64 = rng.gen_range(12.0..18.0f64).round();
            let depth: f64 = rng.gen_range(8.0..12.0f64).round();
            let long = (len / 2.0 + rng.gen_range(-6.0..6.0)).round();
            let center = edge_point(graph, e, long, side, BUILDING_SETBACK + depth / 2.0);
            out.push(Landmark {
                class: SemanticClass::Building,
                footprint: rect_footprint(center, yaw, length, depth),
                color: Some(colors[rng.gen_range(0..colors.len())]),
                side: Some(side),
                edge: Some(e),
                junction: None,
            });
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn point(&mut self, p: &GroundPoint) {
        self.f64(p.x);
        self.f64(p.y);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MapFormatError> {
        let end = self.pos.checked_add(n).ok_or(MapFormatError::Truncated)?;
        let out = self.buf.get(self.pos..end).ok_or(MapFormatError::Truncated)?;
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, MapFormatError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, MapFormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, MapFormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32, MapFormatError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, MapFormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, MapFormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn point(&mut self) -> Result<GroundPoint, MapFormatError> {
        Ok(GroundPoint::new(self.f64()?, self.f64()?))
    }
    fn count(&mut self) -> Result<usize, MapFormatError> {
        let n = self.u32()? as usize;
        // Every element takes at least one byte.
        if n > self.buf.len() {
            return Err(MapFormatError::Truncated);
        }
        Ok(n)
    }
}

fn opt_index(v: Option<usize>) -> i32 {
    v.map_or(-1, |x| x as i32)
}

fn read_index(v: i32) -> Option<usize> {
    (v >= 0).then_some(v as usize)
}

impl WorldMap {
    /// Little-endian `WMAP` blob of the map geometry.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(WMAP_MAGIC);
        w.u16(WMAP_VERSION);
        w.u64(self.seed);
        let g = &self.road_graph;
        w.u32(g.junctions.len() as u32);
        for j in &g.junctions {
            w.point(&j.center);
            w.u32(j.arms.len() as u32);
            for &a in &j.arms {
                w.u32(a as u32);
            }
        }
        w.u32(g.edges.len() as u32);
        for e in &g.edges {
            w.u32(e.from as u32);
            w.u32(e.to as u32);
        }
        w.u32(g.lanes.len() as u32);
        for l in &g.lanes {
            w.u32(l.edge as u32);
            w.u8(l.forward as u8);
            w.u8(matches!(l.slot, LaneSlot::Curb) as u8);
            w.f64(l.width);
            w.u32(l.centerline.len() as u32);
            for p in &l.centerline {
                w.point(p);
            }
        }
        w.u32(self.landmarks.len() as u32);
        for lm in &self.landmarks {
            w.u8(lm.class.id());
            w.u8(lm.color.map_or(255, ColorTag::code));
            w.u8(match lm.side {
                None => 255,
                Some(SideTag::Left) => 0,
                Some(SideTag::Right) => 1,
            });
            w.i32(opt_index(lm.edge));
            w.i32(opt_index(lm.junction));
            w.u32(lm.footprint.len() as u32);
            for p in &lm.footprint {
                w.point(p);
            }
        }
        w.u32(self.spawn_points.len() as u32);
        for s in &self.spawn_points {
            w.f64(s.x);
            w.f64(s.y);
            w.f64(s.yaw);
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, MapFormatError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != WMAP_MAGIC {
            return Err(MapFormatError::BadMagic);
        }
        let version = r.u16()?;
        if version != WMAP_VERSION {
            return Err(MapFormatError::Version(version));
        }
        let seed = r.u64()?;
        let mut junctions = Vec::new();
        for _ in 0..r.count()? {
            let center = r.point()?;
            let mut arms = Vec::new();
            for _ in 0..r.count()? {
                arms.push(r.u32()? as usize);
            }
            junctions.push(Junction { center, arms });
        }
        let mut edges = Vec::new();
        for _ in 0..r.count()? {
            let from = r.u32()? as usize;
            let to = r.u32()? as usize;
            if from >= junctions.len() || to >= junctions.len() {
                return Err(MapFormatError::Invalid("edge endpoint"));
            }
            edges.push(RoadEdge { from, to });
        }
        let mut lanes = Vec::new();
        for _ in 0..r.count()? {
            let edge = r.u32()? as usize;
            let forward = r.u8()? != 0;
            let slot = if r.u8()? != 0 {
                LaneSlot::Curb
            } else {
                LaneSlot::Inner
            };
            let width = r.f64()?;
            let mut centerline = Vec::new();
            for _ in 0..r.count()? {
                centerline.push(r.point()?);
            }
            lanes.push(Lane {
                edge,
                forward,
                slot,
                width,
                centerline,
            });
        }
        let mut landmarks = Vec::new();
        for _ in 0..r.count()? {
            let class = SemanticClass::from_id(r.u8()?).ok_or(MapFormatError::Invalid("class"))?;
            let color = match r.u8()? {
                255 => None,
                c => Some(ColorTag::from_code(c).ok_or(MapFormatError::Invalid("color"))?),
            };
            let side = match r.u8()? {
                255 => None,
                0 => Some(SideTag::Left),
                1 => Some(SideTag::Right),
                _ => return Err(MapFormatError::Invalid("side")),
            };
            let edge = read_index(r.i32()?);
            let junction = read_index(r.i32()?);
            let mut footprint = Vec::new();
            for _ in 0..r.count()? {
                footprint.push(r.point()?);
            }
            landmarks.push(Landmark {
                class,
                footprint,
                color,
                side,
                edge,
                junction,
            });
        }
        let mut spawn_points = Vec::new();
        for _ in 0..r.count()? {
            spawn_points.push(Pose2D {
                x: r.f64()?,
                y: r.f64()?,
                yaw: r.f64()?,
            });
        }
        if r.pos != buf.len() {
            return Err(MapFormatError::Invalid("trailing bytes"));
        }
        Ok(WorldMap {
            seed,
            road_graph: RoadGraph {
                junctions,
                edges,
                lanes,
            },
            landmarks,
            spawn_points,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist_to_segment(p: &GroundPoint, a: &GroundPoint, b: &GroundPoint) -> f64 {
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
        p.dist(&GroundPoint::new(a.x + dx * t, a.y + dy * t))
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_map(0).to_bytes();
        let b = generate_map(0).to_bytes();
        assert_eq!(a, b);
        assert_eq!(&a[..4], b"WMAP");
        assert_ne!(a, generate_map(1).to_bytes());
    }

    #[test]
    fn blob_round_trip() {
        let m = generate_map(5);
        let back = WorldMap::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        let mut bad = m.to_bytes();
        bad[0] = b'X';
        assert!(matches!(WorldMap::from_bytes(&bad), Err(MapFormatError::BadMagic)));
        let short = &m.to_bytes()[..40];
        assert!(matches!(WorldMap::from_bytes(short), Err(MapFormatError::Truncated)));
    }

    #[test]
    fn generator_post_conditions_seeds_0_to_9() {
        for seed in 0..10 {
            let m = generate_map(seed);
            let g = &m.road_graph;
            let intersections = g.junctions.iter().filter(|j| j.arms.len() >= 3).count();
            assert!(intersections >= 4, "seed {seed}");
            assert!(g.junctions.iter().all(|j| j.arms.len() >= 2));
            assert!(m.landmarks.len() >= 6, "seed {seed}: {}", m.landmarks.len());
            assert!(m.landmarks.iter().any(|l| l.class == SemanticClass::BusStop));
            assert!((0..g.junctions.len()).any(|n| g.admits_left_and_right(n)));
            // Two lanes in each direction of every road.
            for e in 0..g.edges.len() {
                for fwd in [true, false] {
                    assert_eq!(g.lanes.iter().filter(|l| l.edge == e && l.forward == fwd).count(), 2);
                }
            }
            // Landmarks never cover a lane centre.
            for lm in &m.landmarks {
                for lane in &g.lanes {
                    let (a, b) = (lane.centerline[0], lane.centerline[1]);
                    for k in 0..=100 {
                        assert!(!lm.contains(&a.lerp(&b, k as f64 / 100.0)));
                    }
                }
            }
        }
    }

    #[test]
    fn spawn_points_lie_on_lane_centres_seed_7() {
        let m = generate_map(7);
        for s in &m.spawn_points {
            let best = m
                .road_graph
                .lanes
                .iter()
                .map(|l| dist_to_segment(&s.position(), &l.centerline[0], &l.centerline[1]))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.1, "{s:?} is {best} m from a lane");
        }
    }

    #[test]
    fn exits_classify_turns() {
        let m = generate_map(3);
        let g = &m.road_graph;
        // Edge 0 runs +x from node 0 to node 1; node 1 is a T junction.
        let exits = g.exits(0, true);
        assert!(exits.iter().any(|e| e.0 == TurnKind::Straight));
        assert!(exits.iter().any(|e| e.0 == TurnKind::Left));
        assert!(!exits.iter().any(|e| e.0 == TurnKind::Right));
    }
}
