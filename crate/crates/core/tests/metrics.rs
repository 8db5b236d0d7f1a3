use langnav_core::geometry::{GroundPoint, Pose2D};
use langnav_core::metrics::*;
use langnav_core::navctl::{EpisodeResult, StopReason};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every monotone coupling from (0, 0) to (n-1, m-1), each as its list of index pairs.
fn couplings(n: usize, m: usize) -> Vec<Vec<(usize, usize)>> {
    fn walk(i: usize, j: usize, n: usize, m: usize, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        cur.push((i, j));
        if i == n - 1 && j == m - 1 {
            out.push(cur.clone());
        } else {
            for (di, dj) in [(1, 0), (0, 1), (1, 1)] {
                if i + di < n && j + dj < m {
                    walk(i + di, j + dj, n, m, cur, out);
                }
            }
        }
        cur.pop();
    }
    let mut out = Vec::new();
    walk(0, 0, n, m, &mut Vec::new(), &mut out);
    out
}

fn random_path(rng: &mut ChaCha8Rng) -> Vec<GroundPoint> {
    let n = rng.gen_range(1..=6);
    (0..n)
        .map(|_| GroundPoint::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
        .collect()
}

#[test]
fn dtw_and_frechet_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..200 {
        let p = random_path(&mut rng);
        let q = random_path(&mut rng);
        let all = couplings(p.len(), q.len());
        let costs: Vec<Vec<f64>> = all.iter().map(|c| c.iter().map(|&(i, j)| p[i].dist(&q[j])).collect()).collect();
        let dtw_ref = costs.iter().map(|c| c.iter().sum::<f64>()).fold(f64::INFINITY, f64::min);
        let fr_ref = costs.iter().map(|c| c.iter().cloned().fold(0.0, f64::max)).fold(f64::INFINITY, f64::min);
        assert!((dtw(&p, &q) - dtw_ref).abs() < 1e-9);
        assert!((frechet(&p, &q) - fr_ref).abs() < 1e-9);
        let nd_ref = (-dtw_ref / (q.len() as f64 * 3.0)).exp();
        assert!((ndtw(&p, &q, DEFAULT_NDTW_THRESHOLD) - nd_ref).abs() < 1e-9);
    }
}

#[test]
fn identical_paths_score_perfectly() {
    let p: Vec<GroundPoint> = (0..10).map(|i| GroundPoint::new(i as f64, 0.5 * i as f64)).collect();
    assert_eq!(dtw(&p, &p), 0.0);
    assert_eq!(frechet(&p, &p), 0.0);
    assert_eq!(ndtw(&p, &p, 3.0), 1.0);
}

#[test]
fn task_completion_needs_stop_inside_region() {
    let goal = Pose2D::new(10.0, 0.0, 0.0);
    let result = |x: f64, reason| EpisodeResult {
        success: false,
        driven_path: vec![],
        stop_reason: reason,
        steps: 1,
        final_pose: Pose2D::new(x, 0.0, 0.0),
    };
    assert_eq!(task_completion(&result(10.0, StopReason::Stopped), &goal, 2.0), 1);
    assert_eq!(task_completion(&result(13.9, StopReason::Stopped), &goal, 2.0), 1);
    assert_eq!(task_completion(&result(14.1, StopReason::Stopped), &goal, 2.0), 0);
    assert_eq!(task_completion(&result(10.0, StopReason::Timeout), &goal, 2.0), 0);
    assert_eq!(task_completion(&result(10.0, StopReason::HorizonFailure), &goal, 2.0), 0);
}

#[test]
fn aggregates_use_mean_and_median() {
    let ep = |tc: u8, fr: f64, nd: f64| EpisodeMetrics {
        id: String::new(),
        task_completion: tc,
        frechet: fr,
        ndtw: nd,
        stop_reason: StopReason::Stopped,
        steps: 0,
    };
    let a = Aggregates::from_episodes(&[ep(1, 1.0, 0.9), ep(0, 5.0, 0.1), ep(1, 3.0, 0.5), ep(0, 100.0, 0.3)]);
    assert_eq!(a.episodes, 4);
    assert_eq!(a.tc_mean, 0.5);
    assert_eq!(a.tc_median, 0.5);
    assert_eq!(a.frechet_mean, 27.25);
    assert_eq!(a.frechet_median, 4.0);
    assert!((a.ndtw_median - 0.4).abs() < 1e-12);
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(mean(&[]), 0.0);
}

fn path_strategy() -> impl Strategy<Value = Vec<GroundPoint>> {
    prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 1..12)
        .prop_map(|v| v.into_iter().map(|(x, y)| GroundPoint::new(x, y)).collect())
}

proptest! {
    #[test]
    fn metric_symmetry_and_bounds(p in path_strategy(), q in path_strategy()) {
        let f = frechet(&p, &q);
        prop_assert!((f - frechet(&q, &p)).abs() < 1e-9);
        prop_assert!((dtw(&p, &q) - dtw(&q, &p)).abs() < 1e-9);
        let ends = p[0].dist(&q[0]).max(p[p.len() - 1].dist(&q[q.len() - 1]));
        prop_assert!(f >= ends - 1e-12);
        prop_assert!(dtw(&p, &q) >= f - 1e-12);
        let nd = ndtw(&p, &q, 3.0);
        prop_assert!(nd > 0.0 && nd <= 1.0);
    }
}
