use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use langnav_core::datastore::*;
use langnav_core::raster::{SemanticRaster, MASK_ON};
use langnav_core::worldsim::{generate_map, WorldMap};

fn fixture(name: &str) -> Vec<u8> {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    fs::read(p).unwrap()
}

fn worlds(cfg: &DatasetConfig) -> Vec<(u64, WorldMap)> {
    cfg.map_seeds().into_iter().map(|s| (s, generate_map(s))).collect()
}

fn record() -> EpisodeRecord {
    let cfg = DatasetConfig::default();
    generate_episode(&cfg, &worlds(&cfg), "test", 3).unwrap()
}

#[test]
fn golden_rasters_decode_and_reencode() {
    let sem = decode_semantic(&fixture("classes_5x3.sem")).unwrap();
    assert_eq!((sem.width(), sem.height()), (5, 3));
    for r in 0..3 {
        for c in 0..5 {
            assert_eq!(sem.get(c, r) as usize, (3 * r + c) % 9);
        }
    }
    assert_eq!(encode_semantic(&sem).unwrap(), fixture("classes_5x3.sem"));

    let m = decode_mask(&fixture("diag_4x2.msk")).unwrap();
    let on: Vec<(usize, usize)> = (0..2)
        .flat_map(|r| (0..4).map(move |c| (c, r)))
        .filter(|&(c, r)| m.get(c, r) == MASK_ON)
        .collect();
    assert_eq!(on, vec![(0, 0), (2, 0), (1, 1), (3, 1)]);
    assert_eq!(encode_mask(&m).unwrap(), fixture("diag_4x2.msk"));
}

#[test]
fn malformed_rasters_are_rejected() {
    let e = decode_semantic(&fixture("bad_magic.sem")).unwrap_err();
    assert!(matches!(e, DatastoreError::Format(FormatError::BadMagic { .. })), "{e}");
    let e = decode_semantic(&fixture("truncated.sem")).unwrap_err();
    assert!(matches!(e, DatastoreError::Format(FormatError::Truncated { need: 24, have: 18 })), "{e}");
    assert!(decode_mask(&fixture("value37.msk")).unwrap_err().is_validation());
    assert!(decode_mask(&fixture("classes_5x3.sem")).unwrap_err().is_format());
    let mut long = fixture("classes_5x3.sem");
    long.push(0);
    assert!(matches!(decode_semantic(&long), Err(DatastoreError::Format(FormatError::Trailing))));
    let bad = SemanticRaster::from_data(1, 1, vec![9]).unwrap();
    assert!(encode_semantic(&bad).unwrap_err().is_validation());
}

#[test]
fn episode_round_trips_through_disk() {
    let rec = record();
    let dir = tempfile::tempdir().unwrap();
    let ep = dir.path().join("ep");
    write_episode(&rec, &ep).unwrap();
    assert_eq!(read_episode(&ep).unwrap(), rec);
    let (m, poses) = read_manifest(&ep).unwrap();
    assert_eq!(m, rec.manifest);
    assert_eq!(poses.len(), rec.frames.len());
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(ep.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert!(fs::read(frame_path(&ep, 0)).unwrap().starts_with(b"SEMR"));
    assert!(fs::read(nav_mask_path(&ep, 0)).unwrap().starts_with(b"MSK8"));
}

fn corrupt(ep: &Path, edit: impl FnOnce(&mut serde_json::Value)) {
    let p = ep.join("manifest.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
    edit(&mut v);
    fs::write(p, serde_json::to_string(&v).unwrap()).unwrap();
}

#[test]
fn corrupted_episodes_fail_with_the_right_kind() {
    let rec = record();
    let dir = tempfile::tempdir().unwrap();

    let ep = dir.path().join("click");
    write_episode(&rec, &ep).unwrap();
    corrupt(&ep, |v| {
        let x = v["clicks"][0]["ground"]["x"].as_f64().unwrap();
        v["clicks"][0]["ground"]["x"] = (x + 0.15).into();
    });
    assert!(read_episode(&ep).unwrap_err().is_validation());

    let ep = dir.path().join("magic");
    write_episode(&rec, &ep).unwrap();
    let mut bytes = fs::read(frame_path(&ep, 1)).unwrap();
    bytes[0] = b'X';
    fs::write(frame_path(&ep, 1), bytes).unwrap();
    assert!(read_episode(&ep).unwrap_err().is_format());

    let ep = dir.path().join("mask");
    write_episode(&rec, &ep).unwrap();
    let mut bytes = fs::read(nav_mask_path(&ep, 2)).unwrap();
    bytes[8] = 37;
    fs::write(nav_mask_path(&ep, 2), bytes).unwrap();
    assert!(read_episode(&ep).unwrap_err().is_validation());

    let ep = dir.path().join("schema");
    write_episode(&rec, &ep).unwrap();
    corrupt(&ep, |v| v["schema_version"] = 7.into());
    assert!(matches!(read_episode(&ep), Err(DatastoreError::Format(FormatError::SchemaVersion(7)))));

    let ep = dir.path().join("missing");
    write_episode(&rec, &ep).unwrap();
    fs::remove_file(traj_mask_path(&ep, 0)).unwrap();
    assert!(read_manifest(&ep).unwrap_err().is_validation());

    let mut bad = rec.clone();
    bad.frames[0].nav_mask.set(0, 0, 37);
    assert!(write_episode(&bad, &dir.path().join("never")).unwrap_err().is_validation());
    assert!(!dir.path().join("never").exists());
}

#[test]
fn split_seeds_never_collide() {
    let cfg = DatasetConfig::default();
    let mut seen = HashSet::new();
    for split in SPLIT_NAMES {
        for i in 0..2000 {
            assert!(seen.insert(episode_seed(cfg.seed, split, i)), "{split} {i}");
        }
    }
}

#[test]
fn small_split_generation_and_stats() {
    let cfg = DatasetConfig {
        val: 4,
        ..DatasetConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let split = generate_split(&cfg, "val", dir.path(), 2).unwrap();
    assert_eq!(split.episodes.len(), 4);
    let split_dir = dir.path().join("val");
    assert_eq!(read_split(&split_dir).unwrap(), split);
    let stats = compute_stats(&split_dir).unwrap();
    assert_eq!(stats.episodes, 4);
    let manifests: Vec<EpisodeManifest> = split
        .episodes
        .iter()
        .map(|e| read_manifest(&split_dir.join(e)).unwrap().0)
        .collect();
    assert_eq!(stats.frames, manifests.iter().map(|m| m.frame_count).sum::<usize>());
    let words: usize = manifests.iter().map(|m| m.command.split(' ').count()).sum();
    assert!((stats.mean_words - words as f64 / 4.0).abs() < 1e-12);
    assert!(stats.row().starts_with("val\t4\t"));
    // Same config, same bytes.
    let again = tempfile::tempdir().unwrap();
    generate_split(&cfg, "val", again.path(), 1).unwrap();
    let a = fs::read(split_dir.join(&split.episodes[0]).join("manifest.json")).unwrap();
    let b = fs::read(again.path().join("val").join(&split.episodes[0]).join("manifest.json")).unwrap();
    assert_eq!(a, b);
}
