use langnav_core::command::*;
use langnav_core::datastore::{generate_episode, DatasetConfig};
use langnav_core::geometry::{inverse_project, project};
use langnav_core::navctl::largest_component_centroid;
use langnav_core::oracle::{oracle_ground, OracleConfig, RouteState};
use langnav_core::worldsim::{generate_map, SideTag, TurnKind, WorldMap};
use proptest::prelude::*;

fn specs(n: u64) -> Vec<(WorldMap, EpisodeSpec)> {
    let worlds: Vec<WorldMap> = (0..4).map(generate_map).collect();
    (0..n)
        .filter_map(|seed| {
            let w = &worlds[(seed % 4) as usize];
            let spawn = w.spawn_points[(seed as usize * 5) % w.spawn_points.len()];
            generate_command(w, spawn, seed).ok().map(|s| (w.clone(), s))
        })
        .collect()
}

#[test]
fn generated_commands_parse_back_without_unknown_words() {
    let vocab = Vocabulary::default();
    let all = specs(300);
    assert!(all.len() > 200, "{} feasible", all.len());
    for (_, spec) in &all {
        let text = &spec.plan.raw_text;
        assert_eq!(parse_command(text).unwrap(), spec.plan, "{text}");
        let (ids, mask) = encode_tokens(text, &vocab);
        assert!(ids.iter().zip(&mask).all(|(&id, &m)| !m || id != UNK_ID), "{text}");
        assert!(spec.plan.token_count <= MAX_TOKENS);
        assert!(spec.route.length() <= MAX_ROUTE_LENGTH + 1e-9);
    }
}

#[test]
fn turns_cross_a_junction_the_same_way() {
    let mut turns = 0;
    for (_, spec) in specs(300) {
        let kinds: Vec<TurnKind> = spec.route.junctions.iter().map(|j| j.kind).collect();
        let wanted: Vec<TurnKind> = spec
            .plan
            .maneuvers
            .iter()
            .filter(|m| m.kind == ManeuverKind::Turn)
            .map(|m| match m.direction {
                Some(SideTag::Left) => TurnKind::Left,
                _ => TurnKind::Right,
            })
            .collect();
        let crossed: Vec<TurnKind> = kinds.into_iter().filter(|k| *k != TurnKind::Straight).collect();
        assert_eq!(crossed, wanted, "{}", spec.plan.raw_text);
        turns += wanted.len();
    }
    assert!(turns > 50);
}

#[test]
fn oracle_masks_are_coherent_along_the_route() {
    let cfg = OracleConfig::default();
    let ds = DatasetConfig::default();
    let cam = ds.camera;
    for (_, spec) in specs(40).into_iter().take(10) {
        let mut rs = RouteState::new(spec.route.clone(), spec.goal_pose);
        let mut last = 0.0;
        let step = 2.0;
        let mut s = 0.0;
        while s < spec.route.length() - 1.0 {
            let ego = spec.route.pose_at(s);
            let p = rs.advance(&ego, &cfg).unwrap();
            assert!(p >= last);
            last = p;
            let out = oracle_ground(&rs, &ego, &cam, &cfg).unwrap();
            assert!(out.nav_mask.is_binary_mask() && out.traj_mask.is_binary_mask());
            // Ground closer than the mount height is outside the view.
            if spec.route.length() - s > 5.0 {
                assert!(out.traj_mask.count_on() > 0);
            }
            if out.nav_mask.count_on() > 0 {
                // The mask centroid lies near the oracle target on the ground.
                let ((u, v), _) = largest_component_centroid(&out.nav_mask).unwrap();
                if let Ok(g) = inverse_project(u, v, &ego, &cam) {
                    assert!(g.dist(&out.target.position()) < 4.0, "{}", g.dist(&out.target.position()));
                }
            }
            if !out.is_final {
                assert!(out.target.position().dist(&ego.position()) <= cfg.lookahead + 3.0);
            }
            s += step;
        }
        let end = spec.route.pose_at(spec.route.length());
        let out = oracle_ground(&rs, &end, &cam, &cfg).unwrap();
        assert!(out.is_final);
        assert!(out.target.position().dist(&spec.goal_pose.position()) < 1e-6);
    }
}

#[test]
fn recorded_episode_statistics() {
    let cfg = DatasetConfig::default();
    let worlds: Vec<_> = cfg.map_seeds().into_iter().map(|s| (s, generate_map(s))).collect();
    let (mut frames, mut clicks, mut n) = (0usize, 0usize, 0usize);
    for i in 0..100 {
        let Some(rec) = generate_episode(&cfg, &worlds, "val", i) else { continue };
        n += 1;
        frames += rec.frames.len();
        clicks += rec.manifest.clicks.len();
        let m = &rec.manifest;
        assert!(!m.clicks.is_empty() && m.clicks[0].frame == 0);
        assert!(m.clicks.windows(2).all(|w| w[0].frame < w[1].frame));
        for c in &m.clicks {
            let ego = rec.frames[c.frame].ego;
            assert!(project(&c.ground, &ego, &m.click_camera).is_some());
        }
        assert_eq!(m.gt_path.len(), rec.frames.len().div_ceil(cfg.nav.stride));
    }
    assert!(n >= 95, "{n} of 100 slots filled");
    let mean_frames = frames as f64 / n as f64;
    let mean_clicks = clicks as f64 / n as f64;
    assert!((100.0..400.0).contains(&mean_frames), "{mean_frames}");
    assert!((1.5..3.0).contains(&mean_clicks), "{mean_clicks}");
}

proptest! {
    #[test]
    fn parser_is_total(words in prop::collection::vec(prop::sample::select(vec![
        "take", "a", "right", "left", "turn", "and", "park", "stop", "near", "the", "bus", "car",
        "between", "two", "cars", "go", "straight", "until", "traffic", "light", "change", "to",
        "lane", "on", "in", "front", "of", "red", "behind", "purple", "xyzzy",
    ]), 0..25)) {
        let text = words.join(" ");
        match parse_command(&text) {
            Ok(plan) => {
                prop_assert!((1..=MAX_MANEUVERS).contains(&plan.maneuvers.len()));
                prop_assert_eq!(plan.token_count, words.len());
                prop_assert_eq!(parse_command(&plan.raw_text).unwrap(), plan);
            }
            Err(e) => prop_assert!(e.index <= words.len()),
        }
    }

    #[test]
    fn parser_survives_arbitrary_text(text in "\\PC{0,80}") {
        let _ = parse_command(&text);
        let (ids, mask) = encode_tokens(&text, &Vocabulary::default());
        prop_assert_eq!(ids.len(), MAX_TOKENS);
        prop_assert_eq!(mask.len(), MAX_TOKENS);
    }
}
