//! Dense ground-truth routes over the road graph.

use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, GroundPoint, Pose2D};
use crate::worldsim::{LaneSlot, RoadGraph, TurnKind};

/// Sample spacing of route polylines.
pub const ROUTE_SPACING: f64 = 0.5;
/// Turning radius of junction connectors.
pub const TURN_RADIUS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JunctionEvent {
    pub junction: usize,
    pub kind: TurnKind,
    /// Route arc length where the vehicle enters the junction manoeuvre.
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RouteData")]
pub struct Route {
    pub points: Vec<GroundPoint>,
    /// Arc length at which each manoeuvre of the plan is complete.
    pub piece_ends: Vec<f64>,
    pub junctions: Vec<JunctionEvent>,
    #[serde(skip)]
    cum: Vec<f64>,
}

#[derive(Deserialize)]
struct RouteData {
    points: Vec<GroundPoint>,
    piece_ends: Vec<f64>,
    junctions: Vec<JunctionEvent>,
}

impl From<RouteData> for Route {
    fn from(d: RouteData) -> Self {
        Route::new(d.points, d.piece_ends, d.junctions)
    }
}

impl Route {
    pub fn new(points: Vec<GroundPoint>, piece_ends: Vec<f64>, junctions: Vec<JunctionEvent>) -> Self {
        let mut r = Route {
            points,
            piece_ends,
            junctions,
            cum: Vec::new(),
        };
        r.rebuild();
        r
    }

    fn rebuild(&mut self) {
        let mut cum = Vec::with_capacity(self.points.len());
        let mut acc = 0.0;
        for (i, p) in self.points.iter().enumerate() {
            if i > 0 {
                acc += self.points[i - 1].dist(p);
            }
            cum.push(acc);
        }
        self.cum = cum;
    }

    fn cum(&self) -> &[f64] {
        &self.cum
    }

    pub fn length(&self) -> f64 {
        self.cum().last().copied().unwrap_or(0.0)
    }

    pub fn arc_length_at(&self, i: usize) -> f64 {
        self.cum()[i]
    }

    fn segment_at(&self, s: f64) -> (usize, f64) {
        let cum = self.cum();
        if self.points.len() < 2 {
            return (0, 0.0);
        }
        let s = s.clamp(0.0, self.length());
        let i = match cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(cum.len() - 2),
            Err(i) => i.saturating_sub(1).min(cum.len() - 2),
        };
        let seg = cum[i + 1] - cum[i];
        let t = if seg > 0.0 { (s - cum[i]) / seg } else { 0.0 };
        (i, t)
    }

    pub fn point_at(&self, s: f64) -> GroundPoint {
        if self.points.len() < 2 {
            return self.points[0];
        }
        let (i, t) = self.segment_at(s);
        self.points[i].lerp(&self.points[i + 1], t)
    }

    /// Heading of the route at arc length `s`.
    pub fn heading_at(&self, s: f64) -> f64 {
        if self.points.len() < 2 {
            return 0.0;
        }
        let (i, _) = self.segment_at(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        (b.y - a.y).atan2(b.x - a.x)
    }

    pub fn pose_at(&self, s: f64) -> Pose2D {
        let p = self.point_at(s);
        Pose2D::new(p.x, p.y, self.heading_at(s))
    }

    /// Closest route position to `p` with arc length in `[lo, hi]`.
    /// Returns (arc length, distance).
    pub fn closest_in(&self, p: &GroundPoint, lo: f64, hi: f64) -> (f64, f64) {
        let cum = self.cum();
        if self.points.len() < 2 {
            return (0.0, self.points[0].dist(p));
        }
        let mut best = (lo.max(0.0), f64::INFINITY);
        for i in 0..self.points.len() - 1 {
            if cum[i + 1] < lo || cum[i] > hi {
                continue;
            }
            let (a, b) = (self.points[i], self.points[i + 1]);
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let l2 = dx * dx + dy * dy;
            let mut t = if l2 > 0.0 {
                (((p.x - a.x) * dx + (p.y - a.y) * dy) / l2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let s = cum[i] + t * (cum[i + 1] - cum[i]);
            if s < lo {
                t = (lo - cum[i]) / (cum[i + 1] - cum[i]);
            } else if s > hi {
                t = (hi - cum[i]) / (cum[i + 1] - cum[i]);
            }
            let q = a.lerp(&b, t);
            let d = q.dist(p);
            if d < best.1 {
                best = (cum[i] + t * (cum[i + 1] - cum[i]), d);
            }
        }
        best
    }

    pub fn closest(&self, p: &GroundPoint) -> (f64, f64) {
        self.closest_in(p, 0.0, self.length())
    }

    /// Index of the manoeuvre active at arc length `s`.
    pub fn piece_at(&self, s: f64) -> usize {
        self.piece_ends
            .iter()
            .position(|&e| s < e)
            .unwrap_or(self.piece_ends.len().saturating_sub(1))
    }

    pub fn goal_pose(&self) -> Pose2D {
        self.pose_at(self.length())
    }
}

/// Position on the road graph: travelling along `edge` in direction
/// `forward`, `offset` meters right of the centreline, `s` meters past the
/// start junction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneCursor {
    pub edge: usize,
    pub forward: bool,
    pub offset: f64,
    pub s: f64,
}

impl LaneCursor {
    pub fn slot(&self) -> LaneSlot {
        if (self.offset - LaneSlot::Inner.offset()).abs() < (self.offset - LaneSlot::Curb.offset()).abs() {
            LaneSlot::Inner
        } else {
            LaneSlot::Curb
        }
    }

    /// Locates the lane position closest to `pose` with a matching heading.
    pub fn locate(graph: &RoadGraph, pose: &Pose2D) -> Option<LaneCursor> {
        let mut best: Option<(f64, LaneCursor)> = None;
        for e in 0..graph.edges.len() {
            for forward in [true, false] {
                let (tx, ty) = graph.travel_dir(e, forward);
                if normalize_angle(ty.atan2(tx) - pose.yaw).abs() > 0.5 {
                    continue;
                }
                let (start, _) = graph.travel_nodes(e, forward);
                let c = graph.junctions[start].center;
                let (px, py) = (pose.x - c.x, pose.y - c.y);
                let s = px * tx + py * ty;
                let offset = px * ty - py * tx;
                if s < 0.0 || s > graph.edge_length(e) || offset < 0.0 {
                    continue;
                }
                let slot_err = [LaneSlot::Inner, LaneSlot::Curb]
                    .iter()
                    .map(|sl| (sl.offset() - offset).abs())
                    .fold(f64::INFINITY, f64::min);
                if best.map_or(true, |(d, _)| slot_err < d) {
                    best = Some((
                        slot_err,
                        LaneCursor {
                            edge: e,
                            forward,
                            offset,
                            s,
                        },
                    ));
                }
            }
        }
        best.filter(|(d, _)| *d < 1.0).map(|(_, c)| c)
    }
}

/// Incremental route construction along lanes, lane shifts and junction arcs.
#[derive(Clone)]
pub struct RouteBuilder<'a> {
    graph: &'a RoadGraph,
    pub cursor: LaneCursor,
    points: Vec<GroundPoint>,
    piece_ends: Vec<f64>,
    junctions: Vec<JunctionEvent>,
    length: f64,
}

impl<'a> RouteBuilder<'a> {
    pub fn new(graph: &'a RoadGraph, cursor: LaneCursor) -> Self {
        let p = graph.lane_pose_offset(cursor.edge, cursor.forward, cursor.offset, cursor.s);
        Self {
            graph,
            cursor,
            points: vec![p.position()],
            piece_ends: Vec::new(),
            junctions: Vec::new(),
            length: 0.0,
        }
    }

    pub fn edge_length(&self) -> f64 {
        self.graph.edge_length(self.cursor.edge)
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    fn push(&mut self, p: GroundPoint) {
        let last = *self.points.last().unwrap();
        let d = last.dist(&p);
        if d > 1e-9 {
            self.length += d;
            self.points.push(p);
        }
    }

    fn at(&self, s: f64, offset: f64) -> GroundPoint {
        self.graph
            .lane_pose_offset(self.cursor.edge, self.cursor.forward, offset, s)
            .position()
    }

    /// Drives along the current lane up to `s`.
    pub fn straight_to(&mut self, s: f64) {
        let s0 = self.cursor.s;
        if s <= s0 {
            return;
        }
        let n = ((s - s0) / ROUTE_SPACING).ceil() as usize;
        for k in 1..=n {
            let sk = s0 + (s - s0) * k as f64 / n as f64;
            let p = self.at(sk, self.cursor.offset);
            self.push(p);
        }
        self.cursor.s = s;
    }

    /// Smooth lateral move to `offset` over `length` meters.
    pub fn shift_to(&mut self, offset: f64, length: f64) {
        let (s0, o0) = (self.cursor.s, self.cursor.offset);
        let n = (length / ROUTE_SPACING).ceil() as usize;
        for k in 1..=n {
            let t = k as f64 / n as f64;
            let blend = t * t * (3.0 - 2.0 * t);
            let p = self.at(s0 + length * t, o0 + (offset - o0) * blend);
            self.push(p);
        }
        self.cursor.s = s0 + length;
        self.cursor.offset = offset;
    }

    /// Travel-direction `s` at which a turn of `kind` leaves the current lane.
    pub fn turn_start(&self, kind: TurnKind) -> f64 {
        let (l, o) = (self.edge_length(), self.cursor.offset);
        match kind {
            TurnKind::Left => l + o - TURN_RADIUS,
            TurnKind::Right => l - o - TURN_RADIUS,
            TurnKind::Straight => l,
        }
    }

    /// Crosses the junction at the end of the current edge. Returns false
    /// when the junction has no such exit.
    pub fn cross_junction(&mut self, kind: TurnKind) -> bool {
        let Some((exit, fwd)) = self.graph.exit(self.cursor.edge, self.cursor.forward, kind) else {
            return false;
        };
        let (_, node) = self.graph.travel_nodes(self.cursor.edge, self.cursor.forward);
        let start = self.turn_start(kind);
        self.straight_to(start);
        self.junctions.push(JunctionEvent {
            junction: node,
            kind,
            s: self.length,
        });
        let o = self.cursor.offset;
        let exit_s = match kind {
            TurnKind::Straight => 0.0,
            TurnKind::Left => TURN_RADIUS - o,
            TurnKind::Right => o + TURN_RADIUS,
        };
        if kind != TurnKind::Straight {
            let a = self.at(start, o);
            let (tx, ty) = self.graph.travel_dir(self.cursor.edge, self.cursor.forward);
            let sign = if kind == TurnKind::Left { 1.0 } else { -1.0 };
            // Centre lies on the inside of the turn.
            let (nx, ny) = (-ty * sign, tx * sign);
            let c = GroundPoint::new(a.x + nx * TURN_RADIUS, a.y + ny * TURN_RADIUS);
            let phi0 = (a.y - c.y).atan2(a.x - c.x);
            let sweep = std::f64::consts::FRAC_PI_2;
            let n = (sweep * TURN_RADIUS / ROUTE_SPACING).ceil() as usize;
            for k in 1..=n {
                let phi = phi0 + sign * sweep * k as f64 / n as f64;
                self.push(GroundPoint::new(
                    c.x + TURN_RADIUS * phi.cos(),
                    c.y + TURN_RADIUS * phi.sin(),
                ));
            }
        }
        self.cursor = LaneCursor {
            edge: exit,
            forward: fwd,
            offset: o,
            s: exit_s,
        };
        true
    }

    pub fn end_piece(&mut self) {
        self.piece_ends.push(self.length);
    }

    pub fn build(self) -> Route {
        Route::new(self.points, self.piece_ends, self.junctions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::generate_map;

    #[test]
    fn turn_arcs_join_lane_centres() {
        let m = generate_map(4);
        let g = &m.road_graph;
        for kind in [TurnKind::Left, TurnKind::Right, TurnKind::Straight] {
            for slot in [LaneSlot::Inner, LaneSlot::Curb] {
                // Edge 8 runs north from node 1 into node 4, a four-way junction.
                let cursor = LaneCursor {
                    edge: 8,
                    forward: true,
                    offset: slot.offset(),
                    s: 20.0,
                };
                let mut b = RouteBuilder::new(g, cursor);
                assert!(b.cross_junction(kind));
                b.straight_to(20.0);
                let c = b.cursor;
                b.end_piece();
                let r = b.build();
                let end = g.lane_pose(c.edge, c.forward, slot, 20.0);
                assert!(r.points.last().unwrap().dist(&end.position()) < 1e-9);
                // Samples stay dense and the route is smooth.
                for w in r.points.windows(2) {
                    assert!(w[0].dist(&w[1]) <= ROUTE_SPACING + 1e-9);
                }
                let located = LaneCursor::locate(g, &end).unwrap();
                assert_eq!((located.edge, located.slot()), (c.edge, slot));
            }
        }
    }

    #[test]
    fn closest_and_pieces() {
        let pts: Vec<_> = (0..=20).map(|i| GroundPoint::new(i as f64, 0.0)).collect();
        let r = Route::new(pts, vec![5.0, 20.0], vec![]);
        let (s, d) = r.closest(&GroundPoint::new(3.3, 2.0));
        assert!((s - 3.3).abs() < 1e-12 && (d - 2.0).abs() < 1e-12);
        let (s, _) = r.closest_in(&GroundPoint::new(3.3, 2.0), 6.0, 10.0);
        assert!((s - 6.0).abs() < 1e-12);
        assert_eq!(r.piece_at(4.9), 0);
        assert_eq!(r.piece_at(5.0), 1);
        assert_eq!(r.piece_at(25.0), 1);
        assert!((r.point_at(7.25).x - 7.25).abs() < 1e-12);
    }
}
