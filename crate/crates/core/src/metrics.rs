//! Path-following metrics, split evaluation and top-view plots.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::command::{EpisodeSpec, Vocabulary};
use crate::geometry::{nav_rect_corners, CameraModel, GroundPoint, Pose2D};
use crate::navctl::{inside_goal_region, run_episode, EpisodeResult, Grounder, NavConfig, StopReason};
use crate::worldsim::{generate_map, WorldMap, ROAD_HALF_WIDTH};

pub const DEFAULT_NDTW_THRESHOLD: f64 = 3.0;

/// 1 when the episode stopped inside the goal rectangle grown by `inflation`.
pub fn task_completion(result: &EpisodeResult, goal: &Pose2D, inflation: f64) -> u8 {
    let inside = inside_goal_region(&result.final_pose.position(), goal, inflation);
    u8::from(result.stop_reason == StopReason::Stopped && inside)
}

/// Discrete Frechet distance.
pub fn frechet(p: &[GroundPoint], q: &[GroundPoint]) -> f64 {
    assert!(!p.is_empty() && !q.is_empty(), "frechet needs non-empty paths");
    let m = q.len();
    let mut prev = vec![0.0; m];
    let mut cur = vec![0.0; m];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            let d = a.dist(b);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => d.max(cur[j - 1]),
                (_, 0) => d.max(prev[0]),
                _ => d.max(prev[j].min(cur[j - 1]).min(prev[j - 1])),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m - 1]
}

/// Dynamic time warping cost with Euclidean step costs.
pub fn dtw(p: &[GroundPoint], r: &[GroundPoint]) -> f64 {
    assert!(!p.is_empty() && !r.is_empty(), "dtw needs non-empty paths");
    let m = r.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for a in p {
        cur[0] = f64::INFINITY;
        for (j, b) in r.iter().enumerate() {
            cur[j + 1] = a.dist(b) + prev[j + 1].min(cur[j]).min(prev[j]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

pub fn ndtw(p: &[GroundPoint], r: &[GroundPoint], d_th: f64) -> f64 {
    (-dtw(p, r) / (r.len() as f64 * d_th)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub id: String,
    pub task_completion: u8,
    pub frechet: f64,
    pub ndtw: f64,
    pub stop_reason: StopReason,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub episodes: usize,
    pub tc_mean: f64,
    pub frechet_mean: f64,
    pub ndtw_mean: f64,
    pub tc_median: f64,
    pub frechet_median: f64,
    pub ndtw_median: f64,
}

impl Aggregates {
    pub fn from_episodes(eps: &[EpisodeMetrics]) -> Self {
        let col = |f: fn(&EpisodeMetrics) -> f64| eps.iter().map(f).collect::<Vec<_>>();
        let tc = col(|e| e.task_completion as f64);
        let fr = col(|e| e.frechet);
        let nd = col(|e| e.ndtw);
        Self {
            episodes: eps.len(),
            tc_mean: mean(&tc),
            frechet_mean: mean(&fr),
            ndtw_mean: mean(&nd),
            tc_median: median(&tc),
            frechet_median: median(&fr),
            ndtw_median: median(&nd),
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_id: String,
    pub split: String,
    pub seeds: Vec<u64>,
    pub episodes: Vec<EpisodeMetrics>,
    pub aggregate: Aggregates,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// One episode to drive live, with the reference path it is scored against.
#[derive(Debug, Clone)]
pub struct EvalEpisode {
    pub id: String,
    pub map_seed: u64,
    pub spec: EpisodeSpec,
    pub gt_path: Vec<GroundPoint>,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalConfig {
    pub nav: NavConfig,
    pub cam: CameraModel,
    pub ndtw_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            nav: NavConfig::default(),
            cam: CameraModel::model_default(),
            ndtw_threshold: DEFAULT_NDTW_THRESHOLD,
        }
    }
}

pub struct EvalOutcome {
    pub report: MetricReport,
    pub results: Vec<EpisodeResult>,
}

/// Drives every episode live and scores it. Reports keep episode order.
pub fn evaluate_split(
    model_id: &str,
    split: &str,
    episodes: &[EvalEpisode],
    grounder: &mut dyn Grounder,
    vocab: &Vocabulary,
    cfg: &EvalConfig,
) -> EvalOutcome {
    let mut worlds: HashMap<u64, WorldMap> = HashMap::new();
    let mut metrics = Vec::with_capacity(episodes.len());
    let mut results = Vec::with_capacity(episodes.len());
    for ep in episodes {
        let world = worlds
            .entry(ep.map_seed)
            .or_insert_with(|| generate_map(ep.map_seed));
        let result = run_episode(world, &ep.spec, grounder, vocab, &cfg.cam, &cfg.nav);
        metrics.push(EpisodeMetrics {
            id: ep.id.clone(),
            task_completion: task_completion(&result, &ep.spec.goal_pose, cfg.nav.goal_inflation),
            frechet: frechet(&result.driven_path, &ep.gt_path),
            ndtw: ndtw(&result.driven_path, &ep.gt_path, cfg.ndtw_threshold),
            stop_reason: result.stop_reason,
            steps: result.steps,
        });
        results.push(result);
    }
    let mut seeds: Vec<u64> = episodes.iter().map(|e| e.map_seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    EvalOutcome {
        report: MetricReport {
            model_id: model_id.to_string(),
            split: split.to_string(),
            seeds,
            aggregate: Aggregates::from_episodes(&metrics),
            episodes: metrics,
        },
        results,
    }
}

/// Top view of the map with the reference path, the driven path and the goal.
pub fn plot_svg(
    world: &WorldMap,
    gt: &[GroundPoint],
    driven: &[GroundPoint],
    goal: &Pose2D,
) -> String {
    let g = &world.road_graph;
    let pts = g.junctions.iter().map(|j| j.center);
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in pts.chain(gt.iter().copied()).chain(driven.iter().copied()) {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let pad = 25.0;
    let (x0, y0, x1, y1) = (x0 - pad, y0 - pad, x1 + pad, y1 + pad);
    // SVG y grows downwards.
    let tx = |p: &GroundPoint| (p.x - x0, y1 - p.y);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {:.1} {:.1}">"#,
        x1 - x0,
        y1 - y0
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#f4f4f0"/>"##);
    for e in &g.edges {
        let (a, b) = (tx(&g.junctions[e.from].center), tx(&g.junctions[e.to].center));
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#8a8a8a" stroke-width="{:.1}"/>"##,
            a.0,
            a.1,
            b.0,
            b.1,
            2.0 * ROAD_HALF_WIDTH
        );
    }
    for lm in &world.landmarks {
        let _ = writeln!(s, r##"<polygon points="{}" fill="#c9b38f"/>"##, svg_points(&lm.footprint, &tx));
    }
    let corners = nav_rect_corners(&goal.position(), goal.yaw);
    let _ = writeln!(
        s,
        r##"<polygon points="{}" fill="#ffd54a" fill-opacity="0.8"/>"##,
        svg_points(&corners, &tx)
    );
    for (path, color) in [(gt, "#1e9e4a"), (driven, "#d43c2f")] {
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="0.8"/>"#,
            svg_points(path, &tx)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn svg_points(pts: &[GroundPoint], tx: &dyn Fn(&GroundPoint) -> (f64, f64)) -> String {
    pts.iter()
        .map(|p| {
            let (x, y) = tx(p);
            format!("{x:.2},{y:.2}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}
