//! On-disk episode format, dataset splits and dataset statistics.
//!
//! Rasters are stored as `SEMR` (class ids) or `MSK8` (binary masks): a
//! 4-byte magic, u16-LE width, u16-LE height, then row-major u8 pixels.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::command::{generate_command, EpisodeSpec, ManeuverPlan};
use crate::geometry::{inverse_project, CameraModel, GroundPoint, Pose2D};
use crate::navctl::NavConfig;
use crate::oracle::{record_episode, Click, OracleConfig, RecordedFrame};
use crate::raster::{SemanticRaster, NUM_CLASSES};
use crate::route::Route;
use crate::worldsim::{generate_map, Actor, WorldMap};

pub const SEMR_MAGIC: [u8; 4] = *b"SEMR";
pub const MSK8_MAGIC: [u8; 4] = *b"MSK8";
pub const SCHEMA_VERSION: u32 = 1;
pub const CLICK_TOLERANCE: f64 = 0.1;
pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: String, found: String },
    #[error("truncated raster: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("trailing bytes after raster payload")]
    Trailing,
    #[error("malformed json in {file}: {message}")]
    Json { file: String, message: String },
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
}

#[derive(Debug, Error)]
pub enum DatastoreError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("format: {0}")]
    Format(#[from] FormatError),
    #[error("validation: {0}")]
    Validation(String),
}

impl DatastoreError {
    pub fn is_format(&self) -> bool {
        matches!(self, DatastoreError::Format(_))
    }

    pub fn is_validation(&self) -> bool {
        matches!(self, DatastoreError::Validation(_))
    }
}

type Result<T> = std::result::Result<T, DatastoreError>;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(DatastoreError::Validation(msg.into()))
}

fn encode(magic: [u8; 4], r: &SemanticRaster) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + r.len());
    out.extend_from_slice(&magic);
    out.extend_from_slice(&(r.width() as u16).to_le_bytes());
    out.extend_from_slice(&(r.height() as u16).to_le_bytes());
    out.extend_from_slice(r.data());
    out
}

fn decode(magic: [u8; 4], bytes: &[u8]) -> std::result::Result<SemanticRaster, FormatError> {
    if bytes.len() < 8 {
        return Err(FormatError::Truncated {
            need: 8,
            have: bytes.len(),
        });
    }
    if bytes[..4] != magic {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(&magic).into_owned(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    let w = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let h = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let need = 8 + w * h;
    if bytes.len() < need {
        return Err(FormatError::Truncated {
            need,
            have: bytes.len(),
        });
    }
    if bytes.len() > need {
        return Err(FormatError::Trailing);
    }
    Ok(SemanticRaster::from_data(w, h, bytes[8..].to_vec()).expect("length checked"))
}

fn check_dims(r: &SemanticRaster) -> Result<()> {
    if r.width() > u16::MAX as usize || r.height() > u16::MAX as usize {
        return invalid(format!("raster {}x{} exceeds u16 dimensions", r.width(), r.height()));
    }
    Ok(())
}

pub fn encode_semantic(r: &SemanticRaster) -> Result<Vec<u8>> {
    check_dims(r)?;
    if let Some(&v) = r.data().iter().find(|&&v| v as usize >= NUM_CLASSES) {
        return invalid(format!("class id {v} out of range"));
    }
    Ok(encode(SEMR_MAGIC, r))
}

pub fn decode_semantic(bytes: &[u8]) -> Result<SemanticRaster> {
    let r = decode(SEMR_MAGIC, bytes)?;
    if let Some(&v) = r.data().iter().find(|&&v| v as usize >= NUM_CLASSES) {
        return invalid(format!("class id {v} out of range"));
    }
    Ok(r)
}

pub fn encode_mask(m: &SemanticRaster) -> Result<Vec<u8>> {
    check_dims(m)?;
    if !m.is_binary_mask() {
        return invalid("mask values must be 0 or 255");
    }
    Ok(encode(MSK8_MAGIC, m))
}

pub fn decode_mask(bytes: &[u8]) -> Result<SemanticRaster> {
    let m = decode(MSK8_MAGIC, bytes)?;
    if !m.is_binary_mask() {
        return invalid("mask values must be 0 or 255");
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Oracle,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeManifest {
    pub id: String,
    pub split: String,
    pub episode_seed: u64,
    pub map_seed: u64,
    pub command: String,
    pub plan: ManeuverPlan,
    pub spawn: Pose2D,
    pub lighting: String,
    pub camera: CameraModel,
    pub click_camera: CameraModel,
    pub clicks: Vec<Click>,
    pub gt_route: Route,
    /// Ego positions at the grounder query cadence.
    pub gt_path: Vec<GroundPoint>,
    pub goal_pose: Pose2D,
    pub actors: Vec<Actor>,
    pub frame_count: usize,
    pub verdict: Verdict,
    pub source: Source,
}

impl EpisodeManifest {
    pub fn spec(&self) -> EpisodeSpec {
        EpisodeSpec {
            plan: self.plan.clone(),
            spawn: self.spawn,
            route: self.gt_route.clone(),
            goal_pose: self.goal_pose,
            actors: self.actors.clone(),
            lighting: self.lighting.clone(),
        }
    }

    pub fn word_count(&self) -> usize {
        self.command.split_whitespace().count()
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    schema_version: u32,
    #[serde(flatten)]
    manifest: EpisodeManifest,
    ego_poses: Vec<Pose2D>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub manifest: EpisodeManifest,
    pub frames: Vec<RecordedFrame>,
}

pub fn frame_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("frames").join(format!("{i:06}.sem"))
}

pub fn nav_mask_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("masks").join(format!("{i:06}.nav.msk"))
}

pub fn traj_mask_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("masks").join(format!("{i:06}.trj.msk"))
}

fn check_click(c: &Click, ego: &Pose2D, cam: &CameraModel) -> Result<()> {
    let p = inverse_project(c.u, c.v, ego, cam)
        .map_err(|e| DatastoreError::Validation(format!("click at frame {}: {e}", c.frame)))?;
    let d = p.dist(&c.ground);
    if d > CLICK_TOLERANCE {
        return invalid(format!(
            "click at frame {} is {d:.3} m from its inverse projection",
            c.frame
        ));
    }
    Ok(())
}

pub fn validate_record(rec: &EpisodeRecord) -> Result<()> {
    let m = &rec.manifest;
    if m.frame_count != rec.frames.len() {
        return invalid(format!(
            "frame_count {} but {} frames",
            m.frame_count,
            rec.frames.len()
        ));
    }
    for (i, f) in rec.frames.iter().enumerate() {
        if !f.nav_mask.is_binary_mask() || !f.traj_mask.is_binary_mask() {
            return invalid(format!("frame {i}: mask values must be 0 or 255"));
        }
        if f.view.data().iter().any(|&v| v as usize >= NUM_CLASSES) {
            return invalid(format!("frame {i}: class id out of range"));
        }
    }
    for c in &m.clicks {
        let frame = rec
            .frames
            .get(c.frame)
            .ok_or_else(|| DatastoreError::Validation(format!("click frame {} out of range", c.frame)))?;
        check_click(c, &frame.ego, &m.click_camera)?;
    }
    Ok(())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)?;
    Ok(())
}

/// Validates, then writes into a sibling temp directory renamed into place.
pub fn write_episode(rec: &EpisodeRecord, dir: &Path) -> Result<()> {
    validate_record(rec)?;
    let parent = dir.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let name = dir
        .file_name()
        .ok_or_else(|| DatastoreError::Validation("episode directory has no name".into()))?
        .to_string_lossy();
    let tmp = parent.join(format!(".{name}.tmp{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(tmp.join("frames"))?;
    fs::create_dir_all(tmp.join("masks"))?;
    let file = ManifestFile {
        schema_version: SCHEMA_VERSION,
        manifest: rec.manifest.clone(),
        ego_poses: rec.frames.iter().map(|f| f.ego).collect(),
    };
    let json = serde_json::to_string_pretty(&file).expect("manifest serializes");
    write_bytes(&tmp.join("manifest.json"), json.as_bytes())?;
    for (i, f) in rec.frames.iter().enumerate() {
        write_bytes(&frame_path(&tmp, i), &encode_semantic(&f.view)?)?;
        write_bytes(&nav_mask_path(&tmp, i), &encode_mask(&f.nav_mask)?)?;
        write_bytes(&traj_mask_path(&tmp, i), &encode_mask(&f.traj_mask)?)?;
    }
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)?;
    Ok(())
}

fn read_manifest_file(dir: &Path) -> Result<ManifestFile> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let file: ManifestFile = serde_json::from_str(&text).map_err(|e| FormatError::Json {
        file: "manifest.json".into(),
        message: e.to_string(),
    })?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(FormatError::SchemaVersion(file.schema_version).into());
    }
    if file.ego_poses.len() != file.manifest.frame_count {
        return invalid(format!(
            "frame_count {} but {} ego poses",
            file.manifest.frame_count,
            file.ego_poses.len()
        ));
    }
    Ok(file)
}

fn count_files(dir: &Path, suffix: &str) -> Result<usize> {
    if !dir.exists() {
        return Ok(0);
    }
    let mut n = 0;
    for e in fs::read_dir(dir)? {
        if e?.file_name().to_string_lossy().ends_with(suffix) {
            n += 1;
        }
    }
    Ok(n)
}

/// Manifest plus per-frame ego poses, with file counts and clicks checked
/// but without decoding rasters.
pub fn read_manifest(dir: &Path) -> Result<(EpisodeManifest, Vec<Pose2D>)> {
    let file = read_manifest_file(dir)?;
    let n = file.manifest.frame_count;
    for (sub, suffix) in [("frames", ".sem"), ("masks", ".nav.msk"), ("masks", ".trj.msk")] {
        let found = count_files(&dir.join(sub), suffix)?;
        if found != n {
            return invalid(format!("frame_count {n} but {found} {suffix} files"));
        }
    }
    for c in &file.manifest.clicks {
        let ego = file
            .ego_poses
            .get(c.frame)
            .ok_or_else(|| DatastoreError::Validation(format!("click frame {} out of range", c.frame)))?;
        check_click(c, ego, &file.manifest.click_camera)?;
    }
    Ok((file.manifest, file.ego_poses))
}

pub fn read_frame(dir: &Path, i: usize) -> Result<SemanticRaster> {
    decode_semantic(&fs::read(frame_path(dir, i))?)
}

pub fn read_masks(dir: &Path, i: usize) -> Result<(SemanticRaster, SemanticRaster)> {
    Ok((
        decode_mask(&fs::read(nav_mask_path(dir, i))?)?,
        decode_mask(&fs::read(traj_mask_path(dir, i))?)?,
    ))
}

pub fn read_episode(dir: &Path) -> Result<EpisodeRecord> {
    let (manifest, poses) = read_manifest(dir)?;
    let mut frames = Vec::with_capacity(poses.len());
    for (i, ego) in poses.into_iter().enumerate() {
        let (nav_mask, traj_mask) = read_masks(dir, i)?;
        frames.push(RecordedFrame {
            view: read_frame(dir, i)?,
            nav_mask,
            traj_mask,
            ego,
        });
    }
    let rec = EpisodeRecord { manifest, frames };
    validate_record(&rec)?;
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub schema_version: u32,
    pub split: String,
    pub seed: u64,
    /// Episode directory names relative to the split directory.
    pub episodes: Vec<String>,
}

pub fn write_split(split: &SplitManifest, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(split).expect("split serializes");
    fs::write(dir.join("split.json"), json)?;
    Ok(())
}

pub fn read_split(dir: &Path) -> Result<SplitManifest> {
    let text = fs::read_to_string(dir.join("split.json"))?;
    let split: SplitManifest = serde_json::from_str(&text).map_err(|e| FormatError::Json {
        file: "split.json".into(),
        message: e.to_string(),
    })?;
    if split.schema_version != SCHEMA_VERSION {
        return Err(FormatError::SchemaVersion(split.schema_version).into());
    }
    for ep in &split.episodes {
        if !dir.join(ep).join("manifest.json").exists() {
            return invalid(format!("split {} lists missing episode {ep}", split.split));
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub split: String,
    pub episodes: usize,
    pub frames: usize,
    pub mean_words: f64,
    pub mean_clicks: f64,
}

impl DatasetStats {
    pub fn from_manifests(split: &str, manifests: &[EpisodeManifest]) -> Self {
        let n = manifests.len();
        let denom = n.max(1) as f64;
        Self {
            split: split.to_string(),
            episodes: n,
            frames: manifests.iter().map(|m| m.frame_count).sum(),
            mean_words: manifests.iter().map(|m| m.word_count()).sum::<usize>() as f64 / denom,
            mean_clicks: manifests.iter().map(|m| m.clicks.len()).sum::<usize>() as f64 / denom,
        }
    }

    pub const HEADER: &'static str = "split\tepisodes\tframes\twords\tclicks";

    pub fn row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.2}\t{:.2}",
            self.split, self.episodes, self.frames, self.mean_words, self.mean_clicks
        )
    }
}

pub fn compute_stats(split_dir: &Path) -> Result<DatasetStats> {
    let split = read_split(split_dir)?;
    let manifests = split
        .episodes
        .iter()
        .map(|e| read_manifest(&split_dir.join(e)).map(|(m, _)| m))
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetStats::from_manifests(&split.split, &manifests))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub map_pool: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub nav: NavConfig,
    pub oracle: OracleConfig,
    pub camera: CameraModel,
    pub click_camera: CameraModel,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 11,
            map_pool: 8,
            train: 500,
            val: 25,
            test: 34,
            nav: NavConfig::default(),
            oracle: OracleConfig::default(),
            camera: CameraModel::model_default(),
            click_camera: CameraModel::annotation_default(),
        }
    }
}

impl DatasetConfig {
    pub fn split_size(&self, split: &str) -> usize {
        match split {
            "train" => self.train,
            "val" => self.val,
            _ => self.test,
        }
    }

    pub fn map_seeds(&self) -> Vec<u64> {
        (0..self.map_pool as u64)
            .map(|k| mix(self.seed ^ 0x6d61_7073, k) % 1_000_000)
            .collect()
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(b)
        .wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the `i`-th episode slot of a split; split ranges never overlap.
pub fn episode_seed(global: u64, split: &str, i: usize) -> u64 {
    let k = SPLIT_NAMES.iter().position(|&s| s == split).unwrap_or(3) as u64;
    (k << 40) | (mix(global, k) & 0xff_ffff) << 16 | i as u64
}

/// Generates one accepted episode for a slot. Plans the oracle fails to
/// complete are rejected and the slot retries with a fresh seed.
pub fn generate_episode(
    cfg: &DatasetConfig,
    worlds: &[(u64, WorldMap)],
    split: &str,
    i: usize,
) -> Option<EpisodeRecord> {
    let base = episode_seed(cfg.seed, split, i);
    for attempt in 0..16u64 {
        let seed = mix(base, attempt);
        let (map_seed, world) = &worlds[(seed % worlds.len() as u64) as usize];
        let spawn = world.spawn_points[((seed >> 8) % world.spawn_points.len() as u64) as usize];
        let Ok(spec) = generate_command(world, spawn, seed) else {
            continue;
        };
        let rec = record_episode(world, &spec, &cfg.camera, &cfg.click_camera, &cfg.nav, &cfg.oracle);
        if !rec.success {
            continue;
        }
        let manifest = EpisodeManifest {
            id: format!("{split}-{i:06}"),
            split: split.to_string(),
            episode_seed: base,
            map_seed: *map_seed,
            command: spec.plan.raw_text.clone(),
            plan: spec.plan,
            spawn,
            lighting: spec.lighting,
            camera: cfg.camera,
            click_camera: cfg.click_camera,
            clicks: rec.clicks,
            gt_route: spec.route,
            gt_path: rec.gt_path,
            goal_pose: spec.goal_pose,
            actors: spec.actors,
            frame_count: rec.frames.len(),
            verdict: Verdict::Accepted,
            source: Source::Oracle,
        };
        return Some(EpisodeRecord {
            manifest,
            frames: rec.frames,
        });
    }
    None
}

pub fn episode_dir_name(i: usize) -> String {
    format!("ep_{i:06}")
}

/// Generates and writes one split, spreading episodes over `threads` workers.
pub fn generate_split(
    cfg: &DatasetConfig,
    split: &str,
    out: &Path,
    threads: usize,
) -> Result<SplitManifest> {
    let worlds: Vec<(u64, WorldMap)> = cfg
        .map_seeds()
        .into_iter()
        .map(|s| (s, generate_map(s)))
        .collect();
    let dir = out.join(split);
    fs::create_dir_all(&dir)?;
    let n = cfg.split_size(split);
    let threads = threads.clamp(1, n.max(1));
    let results: Vec<Result<Option<String>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let (worlds, dir) = (&worlds, &dir);
                scope.spawn(move || {
                    (t..n)
                        .step_by(threads)
                        .map(|i| {
                            let Some(rec) = generate_episode(cfg, worlds, split, i) else {
                                return Ok((i, None));
                            };
                            let name = episode_dir_name(i);
                            write_episode(&rec, &dir.join(&name))?;
                            Ok((i, Some(name)))
                        })
                        .collect::<Vec<Result<(usize, Option<String>)>>>()
                })
            })
            .collect();
        let mut all: Vec<Result<(usize, Option<String>)>> = handles
            .into_iter()
            .flat_map(|h| h.join().expect("generator thread panicked"))
            .collect();
        all.sort_by_key(|r| r.as_ref().map(|(i, _)| *i).unwrap_or(usize::MAX));
        all.into_iter().map(|r| r.map(|(_, name)| name)).collect()
    });
    let mut episodes = Vec::with_capacity(n);
    for r in results {
        if let Some(name) = r? {
            episodes.push(name);
        }
    }
    let manifest = SplitManifest {
        schema_version: SCHEMA_VERSION,
        split: split.to_string(),
        seed: cfg.seed,
        episodes,
    };
    write_split(&manifest, &dir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_header_layout() {
        let r = SemanticRaster::from_data(3, 2, vec![0, 1, 2, 3, 4, 8]).unwrap();
        let b = encode_semantic(&r).unwrap();
        assert_eq!(&b[..8], b"SEMR\x03\x00\x02\x00");
        assert_eq!(decode_semantic(&b).unwrap(), r);
        let m = SemanticRaster::from_data(2, 1, vec![0, 255]).unwrap();
        assert_eq!(encode_mask(&m).unwrap(), b"MSK8\x02\x00\x01\x00\x00\xff");
    }

    #[test]
    fn format_and_validation_errors_differ() {
        let bad = SemanticRaster::from_data(2, 1, vec![0, 37]).unwrap();
        assert!(encode_mask(&bad).unwrap_err().is_validation());
        let mut b = encode(MSK8_MAGIC, &bad);
        assert!(decode_mask(&b).unwrap_err().is_validation());
        b[0] = b'X';
        assert!(decode_mask(&b).unwrap_err().is_format());
        assert!(decode_mask(&b"MSK8\x04\x00\x04\x00"[..]).unwrap_err().is_format());
    }

    #[test]
    fn stats_arithmetic() {
        let world = generate_map(1);
        let spec = generate_command(&world, world.spawn_points[0], 3).unwrap();
        let make = |text: &str, clicks: usize| EpisodeManifest {
            id: "x".into(),
            split: "train".into(),
            episode_seed: 0,
            map_seed: 1,
            command: text.into(),
            plan: spec.plan.clone(),
            spawn: spec.spawn,
            lighting: spec.lighting.clone(),
            camera: CameraModel::model_default(),
            click_camera: CameraModel::annotation_default(),
            clicks: vec![
                Click {
                    frame: 0,
                    u: 0.0,
                    v: 0.0,
                    ground: GroundPoint::default()
                };
                clicks
            ],
            gt_route: spec.route.clone(),
            gt_path: vec![],
            goal_pose: spec.goal_pose,
            actors: vec![],
            frame_count: 10,
            verdict: Verdict::Accepted,
            source: Source::Oracle,
        };
        let s = DatasetStats::from_manifests(
            "train",
            &[make("go straight now", 1), make("turn left and then stop", 3)],
        );
        assert_eq!((s.episodes, s.frames), (2, 20));
        assert_eq!((s.mean_words, s.mean_clicks), (4.0, 2.0));
    }

    #[test]
    fn split_seed_ranges_are_disjoint() {
        let a: Vec<u64> = (0..600).map(|i| episode_seed(11, "train", i)).collect();
        let b: Vec<u64> = (0..600).map(|i| episode_seed(11, "val", i)).collect();
        assert!(a.iter().all(|s| !b.contains(s)));
    }
}
