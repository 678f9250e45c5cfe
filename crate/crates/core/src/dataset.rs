//! Clip-level labelling protocol.
//!
//! Clips are sorted by a human into `<root>/<habitat>/valid/<clip>` (at least
//! one fish somewhere in the clip) and `<root>/<habitat>/empty/<clip>`. Every
//! frame inherits its clip's label, and within each clip the frames at 0-based
//! indices `0, interval, 2*interval, ...` become training frames while all the
//! others are held out for testing.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_INTERVAL: usize = 10;

/// Sub-folder holding clips with at least one fish.
pub const FISH_DIR: &str = "valid";
/// Sub-folder holding clips without fish.
pub const EMPTY_DIR: &str = "empty";

const MANIFEST_FORMAT: &str = "weakfish-manifest";
const MANIFEST_VERSION: u32 = 1;
const CSV_COLUMNS: [&str; 5] = ["path", "clip_id", "habitat_id", "label", "split"];
const FRAME_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "tif"];
const VIDEO_EXTENSIONS: [&str; 6] = ["mp4", "mov", "avi", "mkv", "mts", "m4v"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipLabel {
    Fish,
    Empty,
}

impl ClipLabel {
    /// Binary class: 1 = fish, 0 = no fish.
    pub fn as_binary(self) -> u8 {
        match self {
            ClipLabel::Fish => 1,
            ClipLabel::Empty => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClipLabel::Fish => "fish",
            ClipLabel::Empty => "empty",
        }
    }
}

impl fmt::Display for ClipLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClipLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fish" => Ok(ClipLabel::Fish),
            "empty" => Ok(ClipLabel::Empty),
            other => Err(format!("expected `fish` or `empty`, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("expected `train` or `test`, got `{other}`")),
        }
    }
}

/// One labelled clip: an ordered list of extracted frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub habitat_id: String,
    pub label: ClipLabel,
    pub frame_paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRef {
    pub path: PathBuf,
    pub clip_id: String,
    pub habitat_id: String,
    pub label: ClipLabel,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub interval: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<FrameRef>,
    pub created_at: String,
    pub protocol_params: ProtocolParams,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestHeader {
    format: String,
    version: u32,
    created_at: String,
    protocol_params: ProtocolParams,
}

/// Train/test frame counts of one clip.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClipCounts {
    pub train: usize,
    pub test: usize,
}

impl DatasetManifest {
    pub fn frames(&self, split: Split) -> impl Iterator<Item = &FrameRef> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn clip_counts(&self) -> BTreeMap<String, ClipCounts> {
        let mut out: BTreeMap<String, ClipCounts> = BTreeMap::new();
        for e in &self.entries {
            let c = out.entry(e.clip_id.clone()).or_default();
            match e.split {
                Split::Train => c.train += 1,
                Split::Test => c.test += 1,
            }
        }
        out
    }

    /// Label / habitat consistency within each clip and the interval rule on
    /// the per-clip entry order.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let interval = self.protocol_params.interval;
        if interval == 0 {
            return Err("protocol interval must be >= 1".into());
        }
        let mut seen: HashMap<&str, (&str, ClipLabel, usize)> = HashMap::new();
        for (row, e) in self.entries.iter().enumerate() {
            let slot = seen
                .entry(e.clip_id.as_str())
                .or_insert((e.habitat_id.as_str(), e.label, 0));
            if slot.0 != e.habitat_id {
                return Err(format!(
                    "entry {row}: clip `{}` appears under habitats `{}` and `{}`",
                    e.clip_id, slot.0, e.habitat_id
                ));
            }
            if slot.1 != e.label {
                return Err(format!(
                    "entry {row}: clip `{}` mixes labels {} and {}",
                    e.clip_id, slot.1, e.label
                ));
            }
            let expected = if slot.2 % interval == 0 {
                Split::Train
            } else {
                Split::Test
            };
            if e.split != expected {
                return Err(format!(
                    "entry {row}: frame {} of clip `{}` should be {} at interval {interval}",
                    slot.2,
                    e.clip_id,
                    expected.as_str()
                ));
            }
            slot.2 += 1;
        }
        Ok(())
    }
}

/// Result of walking a clip tree, including the clips that were dropped.
#[derive(Debug, Default)]
pub struct ScanOutcome {
    pub clips: Vec<ClipRecord>,
    /// Clip directories without any frame image.
    pub empty_clips: Vec<PathBuf>,
    /// Video files that still need frame extraction.
    pub unextracted_videos: Vec<PathBuf>,
}

fn has_extension(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| exts.iter().any(|x| x.eq_ignore_ascii_case(e)))
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

/// Frame images directly inside `dir`, sorted by path.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.is_file() && has_extension(p, &FRAME_EXTENSIONS))
        .collect())
}

/// Whether `path` has a video container extension.
pub fn is_video_file(path: &Path) -> bool {
    has_extension(path, &VIDEO_EXTENSIONS)
}

/// Directory that receives the frames of a clip video: the video path without
/// its extension.
pub fn video_frame_dir(video: &Path) -> PathBuf {
    video.with_extension("")
}

/// Whether `path` has a frame image extension.
pub fn is_frame_file(path: &Path) -> bool {
    has_extension(path, &FRAME_EXTENSIONS)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Walk `<root>/<habitat>/{valid,empty}/<clip>/` and return one record per clip.
///
/// Habitats may hold only one of the two sub-folders. Clips without frames are
/// skipped and logged.
pub fn scan_clip_folders(root: &Path) -> Result<Vec<ClipRecord>> {
    let outcome = scan_clip_folders_detailed(root)?;
    for p in &outcome.empty_clips {
        log::warn!("skipping clip without frames: {}", p.display());
    }
    for p in &outcome.unextracted_videos {
        log::warn!(
            "skipping video file (run `weakfish extract-frames` first): {}",
            p.display()
        );
    }
    Ok(outcome.clips)
}

pub fn scan_clip_folders_detailed(root: &Path) -> Result<ScanOutcome> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "clip root is not a directory"),
        ));
    }
    let mut outcome = ScanOutcome::default();
    for habitat in sorted_entries(root)? {
        if !habitat.is_dir() {
            continue;
        }
        let habitat_id = file_name(&habitat);
        for (sub, label) in [(FISH_DIR, ClipLabel::Fish), (EMPTY_DIR, ClipLabel::Empty)] {
            let dir = habitat.join(sub);
            if !dir.is_dir() {
                continue;
            }
            for clip in sorted_entries(&dir)? {
                if clip.is_file() {
                    if is_video_file(&clip) && !video_frame_dir(&clip).is_dir() {
                        outcome.unextracted_videos.push(clip);
                    }
                    continue;
                }
                let frames = list_frames(&clip)?;
                if frames.is_empty() {
                    outcome.empty_clips.push(clip);
                    continue;
                }
                outcome.clips.push(ClipRecord {
                    clip_id: format!("{habitat_id}/{sub}/{}", file_name(&clip)),
                    habitat_id: habitat_id.clone(),
                    label,
                    frame_paths: frames,
                });
            }
        }
    }
    Ok(outcome)
}

/// Assign every `interval`-th frame of each clip (0-based) to training and the
/// rest to testing.
pub fn split_frames(clips: &[ClipRecord], interval: usize) -> Result<DatasetManifest> {
    if interval < 1 {
        return Err(Error::arg(format!("interval must be >= 1, got {interval}")));
    }
    let mut ids = std::collections::HashSet::new();
    let mut entries = Vec::new();
    for clip in clips {
        if !ids.insert(clip.clip_id.as_str()) {
            return Err(Error::arg(format!("duplicate clip id `{}`", clip.clip_id)));
        }
        if clip.frame_paths.is_empty() {
            return Err(Error::arg(format!("clip `{}` has no frames", clip.clip_id)));
        }
        for (i, path) in clip.frame_paths.iter().enumerate() {
            entries.push(FrameRef {
                path: path.clone(),
                clip_id: clip.clip_id.clone(),
                habitat_id: clip.habitat_id.clone(),
                label: clip.label,
                split: if i % interval == 0 {
                    Split::Train
                } else {
                    Split::Test
                },
            });
        }
    }
    Ok(DatasetManifest {
        entries,
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        protocol_params: ProtocolParams { interval },
    })
}

/// Serialize to the manifest text format: one `# {json header}` line followed
/// by CSV with columns `path,clip_id,habitat_id,label,split`.
pub fn manifest_to_string(m: &DatasetManifest) -> Result<String> {
    let header = ManifestHeader {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        created_at: m.created_at.clone(),
        protocol_params: m.protocol_params,
    };
    let mut out = format!("# {}\n", serde_json::to_string(&header)?);
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::arg(format!("csv: {e}"));
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for e in &m.entries {
        let path = e.path.to_string_lossy();
        w.write_record([
            path.as_ref(),
            &e.clip_id,
            &e.habitat_id,
            e.label.as_str(),
            e.split.as_str(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::arg(format!("csv: {e}")))?;
    out.push_str(&String::from_utf8_lossy(&bytes));
    Ok(out)
}

pub fn save_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    let text = manifest_to_string(m)?;
    write_atomic(path, text.as_bytes())
}

/// Read a manifest; relative frame paths are taken relative to its directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m = parse_manifest(&text, path)?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    for e in &mut m.entries {
        if e.path.is_relative() {
            e.path = base.join(&e.path);
        }
    }
    Ok(m)
}

/// Scan `root`, split at `interval` and save the manifest to `out`. Frame
/// paths under the manifest's directory are stored relative to it.
pub fn prepare_manifest(root: &Path, interval: usize, out: &Path) -> Result<DatasetManifest> {
    let clips = scan_clip_folders(root)?;
    let manifest = split_frames(&clips, interval)?;
    let base = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(base).map_err(|e| Error::io(base, e))?;
    let base = fs::canonicalize(base).map_err(|e| Error::io(base, e))?;
    let mut stored = manifest.clone();
    for e in &mut stored.entries {
        if let Ok(abs) = fs::canonicalize(&e.path) {
            e.path = abs.strip_prefix(&base).map(Path::to_path_buf).unwrap_or(abs);
        }
    }
    save_manifest(&stored, out)?;
    Ok(manifest)
}

/// Parse manifest text; `origin` is only used in error messages.
pub fn parse_manifest(text: &str, origin: &Path) -> Result<DatasetManifest> {
    let perr = |line: u64, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let header_json = first
        .strip_prefix('#')
        .ok_or_else(|| perr(1, "missing `# {...}` header line".into()))?;
    let header: ManifestHeader = serde_json::from_str(header_json.trim())
        .map_err(|e| perr(1, format!("header: {e}")))?;
    if header.format != MANIFEST_FORMAT {
        return Err(perr(1, format!("header: unknown format `{}`", header.format)));
    }
    if header.version != MANIFEST_VERSION {
        return Err(perr(1, format!("header: unsupported version {}", header.version)));
    }
    if header.protocol_params.interval == 0 {
        return Err(perr(1, "header: protocol_params.interval must be >= 1".into()));
    }

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(rest.as_bytes());
    let columns = rdr
        .headers()
        .map_err(|e| perr(2, format!("column header: {e}")))?
        .clone();
    if columns.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(perr(
            2,
            format!("expected columns `{}`", CSV_COLUMNS.join(",")),
        ));
    }

    let mut entries = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() + 1).unwrap_or(0);
            perr(line, e.to_string())
        })?;
        // +1 for the JSON header line stripped above.
        let line = record.position().map(|p| p.line() + 1).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");
        if field(0).is_empty() {
            return Err(perr(line, "field `path`: empty".into()));
        }
        let label = field(3)
            .parse::<ClipLabel>()
            .map_err(|m| perr(line, format!("field `label`: {m}")))?;
        let split = field(4)
            .parse::<Split>()
            .map_err(|m| perr(line, format!("field `split`: {m}")))?;
        entries.push(FrameRef {
            path: PathBuf::from(field(0)),
            clip_id: field(1).to_string(),
            habitat_id: field(2).to_string(),
            label,
            split,
        });
    }
    let manifest = DatasetManifest {
        entries,
        created_at: header.created_at,
        protocol_params: header.protocol_params,
    };
    manifest
        .check_invariants()
        .map_err(|m| perr(0, format!("inconsistent manifest: {m}")))?;
    Ok(manifest)
}

/// Paths referenced by the manifest that no longer exist on disk.
pub fn validate_manifest(m: &DatasetManifest) -> Vec<PathBuf> {
    m.entries
        .iter()
        .filter(|e| !e.path.exists())
        .map(|e| e.path.clone())
        .collect()
}

/// Write to a sibling temp file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Which data domain a training image came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Project,
    GeneralNegative,
    FishPositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSplit {
    Train,
    Validation,
    Test,
}

/// One image reference with its weak binary label.
///
/// External domains fix the label: general-domain images are negatives and
/// fish-domain images are positives.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameSample {
    path: PathBuf,
    label: u8,
    domain: Domain,
    split: SampleSplit,
}

impl FrameSample {
    pub fn new(path: impl Into<PathBuf>, label: u8, domain: Domain, split: SampleSplit) -> Result<Self> {
        if label > 1 {
            return Err(Error::arg(format!("label must be 0 or 1, got {label}")));
        }
        match (domain, label) {
            (Domain::GeneralNegative, 1) => {
                return Err(Error::arg("general-domain negatives must have label 0"))
            }
            (Domain::FishPositive, 0) => {
                return Err(Error::arg("fish-domain positives must have label 1"))
            }
            _ => {}
        }
        Ok(FrameSample {
            path: path.into(),
            label,
            domain,
            split,
        })
    }

    /// Project-domain sample from a manifest entry.
    pub fn from_frame(frame: &FrameRef, split: SampleSplit) -> Self {
        FrameSample {
            path: frame.path.clone(),
            label: frame.label.as_binary(),
            domain: Domain::Project,
            split,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
    pub fn label(&self) -> u8 {
        self.label
    }
    pub fn domain(&self) -> Domain {
        self.domain
    }
    pub fn split(&self) -> SampleSplit {
        self.split
    }

    pub fn with_split(mut self, split: SampleSplit) -> Self {
        self.split = split;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch_frames(dir: &Path, n: usize) {
        fs::create_dir_all(dir).unwrap();
        for i in 0..n {
            fs::write(dir.join(format!("frame_{i:06}.png")), b"").unwrap();
        }
    }

    fn clip(id: &str, n: usize, label: ClipLabel) -> ClipRecord {
        ClipRecord {
            clip_id: id.into(),
            habitat_id: "h".into(),
            label,
            frame_paths: (0..n).map(|i| PathBuf::from(format!("{id}/{i}.png"))).collect(),
        }
    }

    #[test]
    fn scan_labels_by_parent_folder() {
        let tmp = tempfile::tempdir().unwrap();
        touch_frames(&tmp.path().join("h1/valid/c1"), 30);
        touch_frames(&tmp.path().join("h1/empty/c2"), 20);
        let clips = scan_clip_folders(tmp.path()).unwrap();
        assert_eq!(clips.len(), 2);
        let c1 = clips.iter().find(|c| c.clip_id.ends_with("c1")).unwrap();
        let c2 = clips.iter().find(|c| c.clip_id.ends_with("c2")).unwrap();
        assert_eq!((c1.label, c1.frame_paths.len()), (ClipLabel::Fish, 30));
        assert_eq!((c2.label, c2.frame_paths.len()), (ClipLabel::Empty, 20));
    }

    #[test]
    fn scan_empty_root_and_missing_root() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(scan_clip_folders(tmp.path()).unwrap().is_empty());
        assert!(matches!(
            scan_clip_folders(&tmp.path().join("nope")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn scan_accepts_habitats_with_one_subfolder_and_skips_empty_clips() {
        let tmp = tempfile::tempdir().unwrap();
        for h in 0..20 {
            touch_frames(&tmp.path().join(format!("h{h:02}/valid/a")), 3);
            if h != 7 {
                touch_frames(&tmp.path().join(format!("h{h:02}/empty/b")), 2);
            }
        }
        fs::create_dir_all(tmp.path().join("h00/empty/void")).unwrap();
        fs::write(tmp.path().join("h00/valid/raw.mp4"), b"").unwrap();
        let out = scan_clip_folders_detailed(tmp.path()).unwrap();
        assert_eq!(out.clips.len(), 39);
        assert_eq!(out.empty_clips.len(), 1);
        assert_eq!(out.unextracted_videos.len(), 1);

        touch_frames(&tmp.path().join("h00/valid/raw"), 4);
        let out = scan_clip_folders_detailed(tmp.path()).unwrap();
        assert!(out.unextracted_videos.is_empty());
        assert_eq!(out.clips.len(), 40);
    }

    #[test]
    fn split_every_tenth_frame() {
        let m = split_frames(&[clip("c", 25, ClipLabel::Fish)], 10).unwrap();
        let train: Vec<usize> = m
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == Split::Train)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(train, vec![0, 10, 20]);
        assert_eq!(m.frames(Split::Test).count(), 22);
        assert_eq!(m.clip_counts()["c"], ClipCounts { train: 3, test: 22 });
    }

    #[test]
    fn split_interval_one_and_zero() {
        let m = split_frames(&[clip("c", 7, ClipLabel::Empty)], 1).unwrap();
        assert_eq!(m.frames(Split::Test).count(), 0);
        assert!(split_frames(&[clip("c", 7, ClipLabel::Empty)], 0).is_err());
    }

    #[test]
    fn split_at_project_scale() {
        // 20 habitats x 2 clips x 1000 frames.
        let clips: Vec<_> = (0..40)
            .map(|i| {
                let l = if i % 2 == 0 { ClipLabel::Fish } else { ClipLabel::Empty };
                clip(&format!("c{i}"), 1000, l)
            })
            .collect();
        let m = split_frames(&clips, 10).unwrap();
        assert_eq!(m.entries.len(), 40_000);
        assert_eq!(m.frames(Split::Train).count(), 4_000);
        assert_eq!(m.frames(Split::Test).count(), 36_000);
    }

    #[test]
    fn manifest_round_trip_and_empty() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("m.csv");
        let m = split_frames(&[clip("a,b", 2, ClipLabel::Fish)], 10).unwrap();
        save_manifest(&m, &p).unwrap();
        let mut expected = m.clone();
        for e in &mut expected.entries {
            e.path = tmp.path().join(&e.path);
        }
        assert_eq!(load_manifest(&p).unwrap(), expected);

        let empty = split_frames(&[], 10).unwrap();
        save_manifest(&empty, &p).unwrap();
        assert!(load_manifest(&p).unwrap().entries.is_empty());
    }

    #[test]
    fn parse_errors_name_line_and_field() {
        let m = split_frames(&[clip("c", 3, ClipLabel::Fish)], 10).unwrap();
        let text = manifest_to_string(&m).unwrap().replacen(",fish,test", ",fsh,test", 1);
        let err = parse_manifest(&text, Path::new("m.csv")).unwrap_err().to_string();
        assert!(err.contains("m.csv:4"), "{err}");
        assert!(err.contains("label"), "{err}");

        let err = parse_manifest("path,clip\n", Path::new("m.csv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn load_rejects_mixed_labels_within_a_clip() {
        let m = split_frames(&[clip("c", 3, ClipLabel::Fish)], 10).unwrap();
        let text = manifest_to_string(&m).unwrap();
        let bad = text.replacen(",fish,test", ",empty,test", 1);
        assert!(parse_manifest(&bad, Path::new("m")).is_err());
    }

    #[test]
    fn missing_frames_are_reported_by_validation_not_load() {
        let tmp = tempfile::tempdir().unwrap();
        touch_frames(&tmp.path().join("h/valid/c"), 2);
        let m = split_frames(&scan_clip_folders(tmp.path()).unwrap(), 10).unwrap();
        let gone = m.entries[1].path.clone();
        fs::remove_file(&gone).unwrap();
        let p = tmp.path().join("m.csv");
        save_manifest(&m, &p).unwrap();
        let loaded = load_manifest(&p).unwrap();
        assert_eq!(validate_manifest(&loaded), vec![gone]);
    }

    #[test]
    fn prepared_manifest_is_relocatable() {
        let tmp = tempfile::tempdir().unwrap();
        touch_frames(&tmp.path().join("data/h/valid/c"), 12);
        let out = tmp.path().join("data/manifest.csv");
        prepare_manifest(&tmp.path().join("data"), 10, &out).unwrap();
        let text = fs::read_to_string(&out).unwrap();
        assert!(text.contains("\nh/valid/c/"), "{text}");

        let moved = tmp.path().join("moved");
        fs::rename(tmp.path().join("data"), &moved).unwrap();
        let m = load_manifest(&moved.join("manifest.csv")).unwrap();
        assert_eq!(m.frames(Split::Train).count(), 2);
        assert!(validate_manifest(&m).is_empty());
    }

    #[test]
    fn frame_sample_enforces_domain_labels() {
        assert!(FrameSample::new("a", 1, Domain::GeneralNegative, SampleSplit::Train).is_err());
        assert!(FrameSample::new("a", 0, Domain::FishPositive, SampleSplit::Train).is_err());
        assert!(FrameSample::new("a", 2, Domain::Project, SampleSplit::Train).is_err());
        assert!(FrameSample::new("a", 1, Domain::Project, SampleSplit::Test).is_ok());
    }
}
