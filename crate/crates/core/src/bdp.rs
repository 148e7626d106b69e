//! Bidirectional training-pair manifests.
//!
//! A training triple is (source person image, background, ground truth).
//! Forward pairs take a real person photo as the source, a web-collected scene
//! as the background and a synthetic composite as the ground truth. Reverse
//! pairs take a real human-scene photo as the ground truth, its inpainted
//! person-free version as the background and a synthetic image as the source.
//! Together the two directions put real images on both the input and the
//! target side.
//!
//! Files are matched across the three directories by shared stem: `a.png`,
//! `a.jpg` and `a.webp` all belong to id `a`. Record ids are the stem
//! prefixed with `fwd-` or `rev-`, so one stem can appear in both directions.
//!
//! An optional sidecar `<stem>.dims.json` (`{"width":W,"height":H}`) next to a
//! background or ground-truth image lets `validate` check that the two share a
//! resolution. Images themselves are never decoded.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundKind {
    Web,
    Inpaint,
}

impl Direction {
    /// `(src_origin, gt_origin, bg_kind)` every record in this direction must carry.
    pub fn required_tags(self) -> (Origin, Origin, BackgroundKind) {
        match self {
            Direction::Forward => (Origin::Real, Origin::Synthetic, BackgroundKind::Web),
            Direction::Reverse => (Origin::Synthetic, Origin::Real, BackgroundKind::Inpaint),
        }
    }

    fn id_prefix(self) -> &'static str {
        match self {
            Direction::Forward => "fwd",
            Direction::Reverse => "rev",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub direction: Direction,
    #[serde(rename = "src")]
    pub src_path: PathBuf,
    #[serde(rename = "bg")]
    pub bg_path: PathBuf,
    #[serde(rename = "gt")]
    pub gt_path: PathBuf,
    pub src_origin: Origin,
    pub gt_origin: Origin,
    pub bg_kind: BackgroundKind,
}

impl PairRecord {
    fn tagged(direction: Direction, stem: &str, src: PathBuf, bg: PathBuf, gt: PathBuf) -> Self {
        let (src_origin, gt_origin, bg_kind) = direction.required_tags();
        Self {
            id: format!("{}-{stem}", direction.id_prefix()),
            direction,
            src_path: src,
            bg_path: bg,
            gt_path: gt,
            src_origin,
            gt_origin,
            bg_kind,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairManifest {
    pub records: Vec<PairRecord>,
}

impl PairManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn count(&self, direction: Direction) -> usize {
        self.records.iter().filter(|r| r.direction == direction).count()
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = PairRecord>) {
        self.records.extend(records);
    }

    /// Real-origin images appear as a source somewhere and as a ground truth
    /// somewhere.
    pub fn is_bidirectional(&self) -> bool {
        self.records.iter().any(|r| r.src_origin == Origin::Real)
            && self.records.iter().any(|r| r.gt_origin == Origin::Real)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    Background,
    GroundTruth,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Source => "source",
            Role::Background => "background",
            Role::GroundTruth => "ground truth",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnmatchedStem {
    pub stem: String,
    /// Directories the stem is absent from.
    pub missing: Vec<Role>,
    /// Directories holding more than one file with this stem.
    pub ambiguous: Vec<Role>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildOutcome {
    pub records: Vec<PairRecord>,
    pub unmatched: Vec<UnmatchedStem>,
    pub excluded: Vec<String>,
}

/// Stem to files with that stem, in lexicographic order.
fn scan(dir: &Path) -> Result<BTreeMap<String, Vec<PathBuf>>> {
    let mut out: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let file_type = entry.file_type().map_err(|e| Error::io(entry.path(), e))?;
        if !file_type.is_file() {
            continue;
        }
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if name.starts_with('.') || name.ends_with(".dims.json") {
            continue;
        }
        let stem = name.split_once('.').map_or(name, |(s, _)| s);
        out.entry(stem.to_string()).or_default().push(dir.join(name));
    }
    for files in out.values_mut() {
        files.sort();
    }
    Ok(out)
}

fn build(direction: Direction, dirs: [(&Path, Role); 3], exclude: &HashSet<String>) -> Result<BuildOutcome> {
    let scans = dirs
        .iter()
        .map(|(d, _)| scan(d))
        .collect::<Result<Vec<_>>>()?;
    let stems: BTreeSet<&String> = scans.iter().flat_map(|s| s.keys()).collect();

    let mut outcome = BuildOutcome::default();
    for stem in stems {
        if exclude.contains(stem.as_str()) {
            outcome.excluded.push(stem.clone());
            continue;
        }
        let mut missing = Vec::new();
        let mut ambiguous = Vec::new();
        let mut picked = Vec::with_capacity(3);
        for (scan, (_, role)) in scans.iter().zip(&dirs) {
            match scan.get(stem).map(Vec::as_slice) {
                None | Some([]) => missing.push(*role),
                Some([one]) => picked.push(one.clone()),
                Some(_) => ambiguous.push(*role),
            }
        }
        if missing.is_empty() && ambiguous.is_empty() {
            let mut it = picked.into_iter();
            let (a, b, c) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
            outcome.records.push(match direction {
                // a = real humans (src), b = web backgrounds, c = synthetic gt
                Direction::Forward => PairRecord::tagged(direction, stem, a, b, c),
                // a = real gt, b = inpainted backgrounds, c = synthetic src
                Direction::Reverse => PairRecord::tagged(direction, stem, c, b, a),
            });
        } else {
            outcome.unmatched.push(UnmatchedStem {
                stem: stem.clone(),
                missing,
                ambiguous,
            });
        }
    }
    Ok(outcome)
}

pub fn build_forward(
    real_humans_dir: &Path,
    web_bg_dir: &Path,
    synthetic_gt_dir: &Path,
    exclude: &HashSet<String>,
) -> Result<BuildOutcome> {
    build(
        Direction::Forward,
        [
            (real_humans_dir, Role::Source),
            (web_bg_dir, Role::Background),
            (synthetic_gt_dir, Role::GroundTruth),
        ],
        exclude,
    )
}

pub fn build_reverse(
    real_gt_dir: &Path,
    inpaint_bg_dir: &Path,
    synthetic_src_dir: &Path,
    exclude: &HashSet<String>,
) -> Result<BuildOutcome> {
    build(
        Direction::Reverse,
        [
            (real_gt_dir, Role::GroundTruth),
            (inpaint_bg_dir, Role::Background),
            (synthetic_src_dir, Role::Source),
        ],
        exclude,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    DuplicateId,
    MissingFile { role: Role, path: PathBuf },
    /// Tag fields that contradict the record's direction.
    DirectionConstraint { fields: Vec<&'static str> },
    PathsNotDistinct,
    DimensionMismatch { background: (u32, u32), ground_truth: (u32, u32) },
    BadSidecar { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub record_id: String,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.record_id)?;
        match &self.kind {
            ViolationKind::DuplicateId => write!(f, "duplicate id"),
            ViolationKind::MissingFile { role, path } => write!(f, "{role} file {} does not exist", path.display()),
            ViolationKind::DirectionConstraint { fields } => {
                write!(f, "tags contradict direction: {}", fields.join(", "))
            }
            ViolationKind::PathsNotDistinct => write!(f, "src, bg and gt paths are not distinct"),
            ViolationKind::DimensionMismatch { background, ground_truth } => write!(
                f,
                "background is {}x{} but ground truth is {}x{}",
                background.0, background.1, ground_truth.0, ground_truth.1
            ),
            ViolationKind::BadSidecar { path, message } => write!(f, "sidecar {}: {message}", path.display()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub forward: usize,
    pub reverse: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Deserialize)]
struct Dims {
    width: u32,
    height: u32,
}

fn sidecar_path(image: &Path) -> Option<PathBuf> {
    let name = image.file_name()?.to_str()?;
    let stem = name.split_once('.').map_or(name, |(s, _)| s);
    Some(image.with_file_name(format!("{stem}.dims.json")))
}

fn read_dims(image: &Path) -> std::result::Result<Option<(u32, u32)>, (PathBuf, String)> {
    let Some(path) = sidecar_path(image) else {
        return Ok(None);
    };
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| (path.clone(), e.to_string()))?;
    let dims: Dims = serde_json::from_str(&text).map_err(|e| (path.clone(), e.to_string()))?;
    Ok(Some((dims.width, dims.height)))
}

/// Checks every record; problems are collected, never raised.
///
/// Relative paths are resolved against `base`.
pub fn validate(manifest: &PairManifest, base: &Path) -> ValidationReport {
    let mut report = ValidationReport {
        forward: manifest.count(Direction::Forward),
        reverse: manifest.count(Direction::Reverse),
        violations: Vec::new(),
    };
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for r in &manifest.records {
        let mut push = |kind| {
            report.violations.push(Violation {
                record_id: r.id.clone(),
                kind,
            })
        };
        let n = seen.entry(r.id.as_str()).or_insert(0);
        *n += 1;
        if *n > 1 {
            push(ViolationKind::DuplicateId);
        }

        let (src_origin, gt_origin, bg_kind) = r.direction.required_tags();
        let mut fields = Vec::new();
        if r.src_origin != src_origin {
            fields.push("src_origin");
        }
        if r.gt_origin != gt_origin {
            fields.push("gt_origin");
        }
        if r.bg_kind != bg_kind {
            fields.push("bg_kind");
        }
        if !fields.is_empty() {
            push(ViolationKind::DirectionConstraint { fields });
        }

        if r.src_path == r.bg_path || r.src_path == r.gt_path || r.bg_path == r.gt_path {
            push(ViolationKind::PathsNotDistinct);
        }

        let mut all_exist = true;
        for (role, path) in [
            (Role::Source, &r.src_path),
            (Role::Background, &r.bg_path),
            (Role::GroundTruth, &r.gt_path),
        ] {
            if !base.join(path).is_file() {
                all_exist = false;
                push(ViolationKind::MissingFile {
                    role,
                    path: path.clone(),
                });
            }
        }
        if all_exist {
            match (read_dims(&base.join(&r.bg_path)), read_dims(&base.join(&r.gt_path))) {
                (Ok(Some(bg)), Ok(Some(gt))) if bg != gt => push(ViolationKind::DimensionMismatch {
                    background: bg,
                    ground_truth: gt,
                }),
                (Err((path, message)), _) | (_, Err((path, message))) => {
                    push(ViolationKind::BadSidecar { path, message })
                }
                _ => {}
            }
        }
    }
    report
}

/// Reads an exclusion list: one stem per line, `#` starts a comment.
pub fn read_exclusions(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn make_dir(root: &Path, name: &str, files: &[&str]) -> PathBuf {
        let d = root.join(name);
        fs::create_dir_all(&d).unwrap();
        for f in files {
            fs::write(d.join(f), b"x").unwrap();
        }
        d
    }

    #[test]
    fn forward_reports_unmatched() {
        let tmp = TempDir::new().unwrap();
        let a = make_dir(tmp.path(), "real", &["a.png", "b.png"]);
        let b = make_dir(tmp.path(), "web", &["a.jpg", "b.jpg"]);
        let c = make_dir(tmp.path(), "syn", &["a.png"]);
        let out = build_forward(&a, &b, &c, &HashSet::new()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].id, "fwd-a");
        assert_eq!(out.records[0].src_path, a.join("a.png"));
        assert_eq!(out.records[0].gt_path, c.join("a.png"));
        assert_eq!(out.unmatched.len(), 1);
        assert_eq!(out.unmatched[0].stem, "b");
        assert_eq!(out.unmatched[0].missing, vec![Role::GroundTruth]);
    }

    #[test]
    fn empty_synthetic_dir() {
        let tmp = TempDir::new().unwrap();
        let a = make_dir(tmp.path(), "real", &["a.png", "b.png"]);
        let b = make_dir(tmp.path(), "web", &["a.jpg", "b.jpg"]);
        let c = make_dir(tmp.path(), "syn", &[]);
        let out = build_forward(&a, &b, &c, &HashSet::new()).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.unmatched.iter().map(|u| u.stem.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn singleton_and_reverse_tags() {
        let tmp = TempDir::new().unwrap();
        let a = make_dir(tmp.path(), "real", &["x.png"]);
        let b = make_dir(tmp.path(), "bg", &["x.png"]);
        let c = make_dir(tmp.path(), "syn", &["x.png"]);
        let fwd = build_forward(&a, &b, &c, &HashSet::new()).unwrap();
        assert_eq!(fwd.records.len(), 1);
        let rev = build_reverse(&a, &b, &c, &HashSet::new()).unwrap();
        assert_eq!(rev.records.len(), 1);
        let r = &rev.records[0];
        assert_eq!((r.gt_origin, r.src_origin, r.bg_kind), (Origin::Real, Origin::Synthetic, BackgroundKind::Inpaint));
        assert_eq!(r.gt_path, a.join("x.png"));
        assert_eq!(r.src_path, c.join("x.png"));
    }

    #[test]
    fn exclusions_and_ambiguity() {
        let tmp = TempDir::new().unwrap();
        let a = make_dir(tmp.path(), "real", &["p.png", "p.jpg", "q.png", "r.png"]);
        let b = make_dir(tmp.path(), "bg", &["p.png", "q.png", "r.png"]);
        let c = make_dir(tmp.path(), "syn", &["p.png", "q.png", "r.png", ".hidden"]);
        let exclude: HashSet<String> = ["r".to_string()].into();
        let out = build_forward(&a, &b, &c, &exclude).unwrap();
        assert_eq!(out.records.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), vec!["fwd-q"]);
        assert_eq!(out.unmatched[0].ambiguous, vec![Role::Source]);
        assert_eq!(out.excluded, vec!["r"]);
    }

    #[test]
    fn missing_directory_is_io_error() {
        let tmp = TempDir::new().unwrap();
        let a = make_dir(tmp.path(), "a", &[]);
        let err = build_forward(&a, &tmp.path().join("nope"), &a, &HashSet::new()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn validate_catches_each_violation() {
        let tmp = TempDir::new().unwrap();
        let d = make_dir(tmp.path(), "d", &["s.png", "b.png", "g.png"]);
        let good = PairRecord::tagged(Direction::Forward, "a", d.join("s.png"), d.join("b.png"), d.join("g.png"));
        let clean = PairManifest { records: vec![good.clone(), PairRecord { id: "fwd-b".into(), ..good.clone() }] };
        assert!(validate(&clean, tmp.path()).is_clean());

        let bad_tag = PairRecord { gt_origin: Origin::Real, ..good.clone() };
        let r = validate(&PairManifest { records: vec![bad_tag] }, tmp.path());
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].kind, ViolationKind::DirectionConstraint { fields: vec!["gt_origin"] });

        let dup = PairRecord { direction: Direction::Reverse, src_origin: Origin::Synthetic, gt_origin: Origin::Real, bg_kind: BackgroundKind::Inpaint, ..good.clone() };
        let r = validate(&PairManifest { records: vec![good.clone(), dup] }, tmp.path());
        assert_eq!(r.violations, vec![Violation { record_id: "fwd-a".into(), kind: ViolationKind::DuplicateId }]);

        let same = PairRecord { bg_path: good.src_path.clone(), ..good.clone() };
        let r = validate(&PairManifest { records: vec![same] }, tmp.path());
        assert_eq!(r.violations[0].kind, ViolationKind::PathsNotDistinct);

        let gone = PairRecord { gt_path: d.join("missing.png"), ..good.clone() };
        let r = validate(&PairManifest { records: vec![gone] }, tmp.path());
        assert!(matches!(r.violations[0].kind, ViolationKind::MissingFile { role: Role::GroundTruth, .. }));
    }

    #[test]
    fn sidecar_dimensions() {
        let tmp = TempDir::new().unwrap();
        let d = make_dir(tmp.path(), "d", &["s.png", "b.png", "g.png"]);
        fs::write(d.join("b.dims.json"), r#"{"width":640,"height":480}"#).unwrap();
        fs::write(d.join("g.dims.json"), r#"{"width":640,"height":480}"#).unwrap();
        let rec = PairRecord::tagged(Direction::Forward, "a", d.join("s.png"), d.join("b.png"), d.join("g.png"));
        let m = PairManifest { records: vec![rec] };
        assert!(validate(&m, tmp.path()).is_clean());
        fs::write(d.join("g.dims.json"), r#"{"width":512,"height":480}"#).unwrap();
        let r = validate(&m, tmp.path());
        assert!(matches!(r.violations[0].kind, ViolationKind::DimensionMismatch { .. }));
        fs::write(d.join("g.dims.json"), "nope").unwrap();
        assert!(matches!(validate(&m, tmp.path()).violations[0].kind, ViolationKind::BadSidecar { .. }));
    }

    #[test]
    fn manifest_json_schema() {
        let rec = PairRecord::tagged(Direction::Forward, "a", "s.png".into(), "b.png".into(), "g.png".into());
        let json = serde_json::to_value(PairManifest { records: vec![rec] }).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"records":[{"id":"fwd-a","direction":"forward","src":"s.png","bg":"b.png","gt":"g.png","src_origin":"real","gt_origin":"synthetic","bg_kind":"web"}]})
        );
    }

    #[test]
    fn exclusion_file_parsing() {
        let tmp = TempDir::new().unwrap();
        let p = tmp.path().join("ex.txt");
        fs::write(&p, "a\n# note\n b  # bad lighting\n\n").unwrap();
        let ex = read_exclusions(&p).unwrap();
        assert_eq!(ex, ["a".to_string(), "b".to_string()].into());
    }
}
