use langnav_core::geometry::{GroundPoint, Pose2D};
use langnav_core::raster::SemanticClass;
use langnav_core::worldsim::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Winding number of `poly` around `p`.
fn winding(p: &GroundPoint, poly: &[GroundPoint]) -> i32 {
    let mut w = 0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let cross = (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y);
        if a.y <= p.y && b.y > p.y && cross > 0.0 {
            w += 1;
        } else if a.y > p.y && b.y <= p.y && cross < 0.0 {
            w -= 1;
        }
    }
    w
}

/// Region in edge-aligned coordinates `(long, lat)` measured from the edge's start junction.
fn edge_band(world: &WorldMap, e: usize, long: (f64, f64), lat: (f64, f64)) -> Vec<GroundPoint> {
    let g = &world.road_graph;
    let a = g.junctions[g.edges[e].from].center;
    let (dx, dy) = g.edge_dir(e);
    // Left normal of the canonical direction.
    let (nx, ny) = (-dy, dx);
    let at = |s: f64, l: f64| GroundPoint::new(a.x + s * dx + l * nx, a.y + s * dy + l * ny);
    vec![at(long.0, lat.0), at(long.1, lat.0), at(long.1, lat.1), at(long.0, lat.1)]
}

fn square(c: GroundPoint, half: f64) -> Vec<GroundPoint> {
    vec![
        GroundPoint::new(c.x - half, c.y - half),
        GroundPoint::new(c.x + half, c.y - half),
        GroundPoint::new(c.x + half, c.y + half),
        GroundPoint::new(c.x - half, c.y + half),
    ]
}

/// Every labelled region of the scene as (class, polygon), highest priority first.
fn regions(world: &WorldMap, actors: &[Actor]) -> Vec<(SemanticClass, Vec<GroundPoint>)> {
    let mut out = Vec::new();
    for class in [ActorClass::Pedestrian, ActorClass::Vehicle] {
        for a in actors.iter().filter(|a| a.class == class) {
            out.push((class.semantic(), a.footprint()));
        }
    }
    for lm in &world.landmarks {
        out.push((lm.class, lm.footprint.clone()));
    }
    let g = &world.road_graph;
    for e in 0..g.edges.len() {
        let len = g.edge_length(e);
        let mut s = JUNCTION_HALF;
        while s < len - JUNCTION_HALF {
            let hi = (s + DASH_LENGTH).min(len - JUNCTION_HALF);
            for sign in [-1.0, 1.0] {
                let c = sign * MARKING_OFFSET;
                out.push((
                    SemanticClass::LaneMarking,
                    edge_band(world, e, (s, hi), (c - MARKING_HALF_WIDTH, c + MARKING_HALF_WIDTH)),
                ));
            }
            s += DASH_PERIOD;
        }
    }
    for j in &g.junctions {
        out.push((SemanticClass::Road, square(j.center, JUNCTION_HALF)));
    }
    for e in 0..g.edges.len() {
        let len = g.edge_length(e);
        for sign in [-1.0, 1.0] {
            let lat = if sign > 0.0 {
                (MEDIAN_HALF_WIDTH, ROAD_HALF_WIDTH)
            } else {
                (-ROAD_HALF_WIDTH, -MEDIAN_HALF_WIDTH)
            };
            out.push((SemanticClass::Road, edge_band(world, e, (0.0, len), lat)));
        }
        let median = (-MEDIAN_HALF_WIDTH, MEDIAN_HALF_WIDTH);
        out.push((SemanticClass::Road, edge_band(world, e, (0.0, JUNCTION_HALF), median)));
        out.push((SemanticClass::Road, edge_band(world, e, (len - JUNCTION_HALF, len), median)));
    }
    for e in 0..g.edges.len() {
        let len = g.edge_length(e);
        out.push((
            SemanticClass::Sidewalk,
            edge_band(world, e, (JUNCTION_HALF, len - JUNCTION_HALF), (-MEDIAN_HALF_WIDTH, MEDIAN_HALF_WIDTH)),
        ));
        out.push((SemanticClass::Sidewalk, edge_band(world, e, (0.0, len), (ROAD_HALF_WIDTH, SIDEWALK_OUTER))));
        out.push((SemanticClass::Sidewalk, edge_band(world, e, (0.0, len), (-SIDEWALK_OUTER, -ROAD_HALF_WIDTH))));
    }
    for j in &g.junctions {
        out.push((SemanticClass::Sidewalk, square(j.center, SIDEWALK_OUTER)));
    }
    out
}

fn oracle_class(regions: &[(SemanticClass, Vec<GroundPoint>)], p: &GroundPoint) -> SemanticClass {
    regions
        .iter()
        .find(|(_, poly)| winding(p, poly) != 0)
        .map_or(SemanticClass::Void, |(c, _)| *c)
}

fn random_actors(world: &WorldMap, rng: &mut ChaCha8Rng) -> Vec<Actor> {
    let g = &world.road_graph;
    (0..40)
        .map(|i| {
            let e = rng.gen_range(0..g.edges.len());
            let s = rng.gen_range(0.0..g.edge_length(e));
            let lat = rng.gen_range(-SIDEWALK_OUTER..SIDEWALK_OUTER);
            let base = g.lane_pose_offset(e, true, lat, s);
            let pose = Pose2D::new(base.x, base.y, rng.gen_range(-3.2..3.2));
            let class = if i % 2 == 0 { ActorClass::Vehicle } else { ActorClass::Pedestrian };
            Actor::parked(i, class, pose, None)
        })
        .collect()
}

#[test]
fn semantic_sampling_matches_polygon_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut seen = [0usize; 9];
    for map_seed in [1u64, 2] {
        let world = generate_map(map_seed);
        let actors = random_actors(&world, &mut rng);
        let regions = regions(&world, &actors);
        let g = &world.road_graph;
        let xs = g.junctions.iter().map(|j| j.center.x);
        let ys = g.junctions.iter().map(|j| j.center.y);
        let (x0, x1) = (xs.clone().fold(f64::MAX, f64::min) - 30.0, xs.fold(f64::MIN, f64::max) + 30.0);
        let (y0, y1) = (ys.clone().fold(f64::MAX, f64::min) - 30.0, ys.fold(f64::MIN, f64::max) + 30.0);
        for k in 0..500 {
            let p = if k % 2 == 0 {
                GroundPoint::new(rng.gen_range(x0..x1), rng.gen_range(y0..y1))
            } else {
                let e = rng.gen_range(0..g.edges.len());
                let s = rng.gen_range(-5.0..g.edge_length(e) + 5.0);
                g.lane_pose_offset(e, true, rng.gen_range(-14.0..14.0), s).position()
            };
            let want = oracle_class(&regions, &p);
            let got = sample_semantic(&world, &actors, &p);
            assert_eq!(got, want.id(), "map {map_seed} at ({:.3}, {:.3})", p.x, p.y);
            seen[got as usize] += 1;
        }
    }
    for c in [SemanticClass::Void, SemanticClass::Road, SemanticClass::Sidewalk, SemanticClass::Building] {
        assert!(seen[c.id() as usize] > 0, "{c:?} never sampled");
    }
}

#[test]
fn map_blob_round_trips() {
    for seed in 0..5 {
        let world = generate_map(seed);
        let back = WorldMap::from_bytes(&world.to_bytes()).unwrap();
        assert_eq!(back, world);
        assert_eq!(generate_map(seed), world);
    }
    assert!(matches!(WorldMap::from_bytes(b"XMAP"), Err(MapFormatError::BadMagic)));
    let bytes = generate_map(0).to_bytes();
    assert!(WorldMap::from_bytes(&bytes[..bytes.len() / 2]).is_err());
}
