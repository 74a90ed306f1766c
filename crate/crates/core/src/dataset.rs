//! YOLO-format labelled datasets: box type, label lines, class map, split
//! manifests and split-count validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Field;

/// Slack allowed on exported coordinates before they are rejected.
pub const COORD_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("malformed label line: {0}")]
    MalformedLine(String),
    #[error("unknown class id {id} (class map has {classes})")]
    UnknownClass { id: usize, classes: usize },
    #[error("{field} = {value} out of range")]
    OutOfRange { field: &'static str, value: f64 },
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing label file {label} for image {image}")]
    MissingLabelFile { image: PathBuf, label: PathBuf },
    #[error("{path}:{line}: {source}")]
    Label {
        path: PathBuf,
        line: usize,
        #[source]
        source: LabelError,
    },
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("{path} listed more than once in the manifest")]
    DuplicateEntry { path: PathBuf },
    #[error("invalid class map: {0}")]
    ClassMap(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Ordered class names; the id of a class is its index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    names: Vec<String>,
}

impl Default for ClassMap {
    fn default() -> Self {
        Self {
            names: vec!["crayfish".into(), "plastic".into()],
        }
    }
}

impl ClassMap {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, DatasetError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(DatasetError::ClassMap("no classes".into()));
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if n.trim().is_empty() {
                return Err(DatasetError::ClassMap("empty class name".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(DatasetError::ClassMap(format!("duplicate class {n:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, id: usize) -> bool {
        id < self.names.len()
    }
}

/// Corner-format rectangle `(x1, y1)`–`(x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect<T> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Field> Rect<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> T {
        (self.x2 - self.x1).max_of(T::zero())
    }

    pub fn height(&self) -> T {
        (self.y2 - self.y1).max_of(T::zero())
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn intersection(&self, other: &Rect<T>) -> Rect<T> {
        Rect {
            x1: self.x1.max_of(other.x1),
            y1: self.y1.max_of(other.y1),
            x2: self.x2.min_of(other.x2),
            y2: self.y2.min_of(other.y2),
        }
    }
}

/// Class-tagged box in YOLO convention: center and size as fractions of
/// the image dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedBox<T = f64> {
    pub class_id: usize,
    pub cx: T,
    pub cy: T,
    pub w: T,
    pub h: T,
}

impl<T: Field> NormalizedBox<T> {
    pub fn new(class_id: usize, cx: T, cy: T, w: T, h: T) -> Self {
        Self { class_id, cx, cy, w, h }
    }

    pub fn corners(&self) -> Rect<T> {
        let hw = self.w / T::two();
        let hh = self.h / T::two();
        Rect::new(self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)
    }

    pub fn from_corners(class_id: usize, r: Rect<T>) -> Self {
        Self {
            class_id,
            cx: (r.x1 + r.x2) / T::two(),
            cy: (r.y1 + r.y2) / T::two(),
            w: r.x2 - r.x1,
            h: r.y2 - r.y1,
        }
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    /// Clip the box extents to the unit square. `None` when nothing remains.
    pub fn clipped(&self) -> Option<Self> {
        let r = self.corners();
        let (zero, one) = (T::zero(), T::one());
        let c = Rect::new(
            r.x1.clamp_to(zero, one),
            r.y1.clamp_to(zero, one),
            r.x2.clamp_to(zero, one),
            r.y2.clamp_to(zero, one),
        );
        (c.x2 > c.x1 && c.y2 > c.y1).then(|| Self::from_corners(self.class_id, c))
    }

    /// Checks the box invariants: positive size, center and size in
    /// `[0, 1]`, extents inside the unit square (up to `tol`).
    pub fn is_valid_within(&self, tol: T) -> bool {
        let (zero, one) = (T::zero(), T::one());
        let unit = |v: T| v >= zero && v <= one;
        let r = self.corners();
        self.w > zero
            && self.h > zero
            && unit(self.cx)
            && unit(self.cy)
            && unit(self.w)
            && unit(self.h)
            && r.x1 >= zero - tol
            && r.y1 >= zero - tol
            && r.x2 <= one + tol
            && r.y2 <= one + tol
    }

    pub fn is_valid(&self) -> bool {
        self.is_valid_within(T::from_f64(1e-9).unwrap_or_else(T::zero))
    }
}

impl NormalizedBox<f64> {
    /// Format as a YOLO label line. `f64` display is shortest-roundtrip, so
    /// parsing the line back yields the same box.
    pub fn to_label_line(&self) -> String {
        format!("{} {} {} {} {}", self.class_id, self.cx, self.cy, self.w, self.h)
    }
}

impl fmt::Display for NormalizedBox<f64> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_label_line())
    }
}

fn clamp_coord(field: &'static str, v: f64) -> Result<f64, LabelError> {
    if !v.is_finite() || !(-COORD_TOLERANCE..=1.0 + COORD_TOLERANCE).contains(&v) {
        return Err(LabelError::OutOfRange { field, value: v });
    }
    Ok(v.clamp(0.0, 1.0))
}

/// Parse one `class cx cy w h` label line.
pub fn parse_label_line(line: &str, classes: &ClassMap) -> Result<NormalizedBox, LabelError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(LabelError::MalformedLine(format!(
            "expected 5 fields, found {}",
            fields.len()
        )));
    }
    let class_id: usize = fields[0]
        .parse()
        .map_err(|_| LabelError::MalformedLine(format!("class id {:?} is not an integer", fields[0])))?;
    if !classes.contains(class_id) {
        return Err(LabelError::UnknownClass {
            id: class_id,
            classes: classes.len(),
        });
    }
    let mut vals = [0.0f64; 4];
    for (i, (slot, name)) in vals.iter_mut().zip(["cx", "cy", "w", "h"]).enumerate() {
        let raw: f64 = fields[i + 1]
            .parse()
            .map_err(|_| LabelError::MalformedLine(format!("{name} {:?} is not a number", fields[i + 1])))?;
        *slot = clamp_coord(name, raw)?;
    }
    let [cx, cy, w, h] = vals;
    if w <= 0.0 {
        return Err(LabelError::OutOfRange { field: "w", value: w });
    }
    if h <= 0.0 {
        return Err(LabelError::OutOfRange { field: "h", value: h });
    }
    let b = NormalizedBox::new(class_id, cx, cy, w, h);
    let r = b.corners();
    for (field, v) in [("x1", r.x1), ("y1", r.y1), ("x2", r.x2), ("y2", r.y2)] {
        clamp_coord(field, v)?;
    }
    if r.x1 >= 0.0 && r.y1 >= 0.0 && r.x2 <= 1.0 && r.y2 <= 1.0 {
        return Ok(b);
    }
    // float dust on the extents: clip
    b.clipped().ok_or(LabelError::OutOfRange { field: "w", value: w })
}

/// Parse a whole label file body; blank lines are skipped.
pub fn parse_label_text(text: &str, classes: &ClassMap, path: &Path) -> Result<Vec<NormalizedBox>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_label_line(l, classes).map_err(|source| DatasetError::Label {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

pub fn label_path_for(image: &Path) -> PathBuf {
    image.with_extension("txt")
}

pub fn read_label_file(path: &Path, classes: &ClassMap) -> Result<Vec<NormalizedBox>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_label_text(&text, classes, path)
}

pub fn write_label_file(path: &Path, boxes: &[NormalizedBox]) -> Result<(), DatasetError> {
    let mut body = String::new();
    for b in boxes {
        body.push_str(&b.to_label_line());
        body.push('\n');
    }
    fs::write(path, body).map_err(io_err(path))
}

/// Image path plus its ground-truth boxes. Zero boxes marks a negative image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub image: PathBuf,
    pub boxes: Vec<NormalizedBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Valid,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Test, Split::Valid];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Valid => "valid",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Section-based text manifest:
///
/// ```text
/// [classes]
/// crayfish
/// plastic
/// [train]
/// images/0001.png
/// [test]
/// [valid]
/// ```
///
/// Entries are paths relative to `root` (the manifest's directory when
/// loaded from disk).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub classes: ClassMap,
    splits: BTreeMap<Split, Vec<PathBuf>>,
}

impl DatasetManifest {
    pub fn new(
        root: impl Into<PathBuf>,
        classes: ClassMap,
        train: Vec<PathBuf>,
        test: Vec<PathBuf>,
        valid: Vec<PathBuf>,
    ) -> Result<Self, DatasetError> {
        let splits = BTreeMap::from([(Split::Train, train), (Split::Test, test), (Split::Valid, valid)]);
        let mut seen = BTreeSet::new();
        for p in splits.values().flatten() {
            if !seen.insert(p) {
                return Err(DatasetError::DuplicateEntry { path: p.clone() });
            }
        }
        Ok(Self {
            root: root.into(),
            classes,
            splits,
        })
    }

    pub fn entries(&self, split: Split) -> &[PathBuf] {
        &self.splits[&split]
    }

    pub fn total(&self) -> usize {
        self.splits.values().map(Vec::len).sum()
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self, DatasetError> {
        #[derive(Clone, Copy)]
        enum Section {
            None,
            Classes,
            Split(Split),
        }
        let mut section = Section::None;
        let mut classes = Vec::new();
        let mut lists: BTreeMap<Split, Vec<PathBuf>> = Split::ALL.iter().map(|s| (*s, Vec::new())).collect();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = match name.trim() {
                    "classes" => Section::Classes,
                    "train" => Section::Split(Split::Train),
                    "test" => Section::Split(Split::Test),
                    "valid" | "validation" => Section::Split(Split::Valid),
                    other => {
                        return Err(DatasetError::Manifest {
                            line: i + 1,
                            reason: format!("unknown section [{other}]"),
                        })
                    }
                };
                continue;
            }
            match section {
                Section::None => {
                    return Err(DatasetError::Manifest {
                        line: i + 1,
                        reason: "entry before any section header".into(),
                    })
                }
                Section::Classes => classes.push(line.to_string()),
                Section::Split(s) => lists.get_mut(&s).unwrap().push(PathBuf::from(line)),
            }
        }
        let classes = if classes.is_empty() {
            ClassMap::default()
        } else {
            ClassMap::new(classes)?
        };
        let mut lists = lists.into_values();
        let (train, test, valid) = (lists.next().unwrap(), lists.next().unwrap(), lists.next().unwrap());
        Self::new(root, classes, train, test, valid)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("[classes]\n");
        for n in self.classes.names() {
            out.push_str(n);
            out.push('\n');
        }
        for s in Split::ALL {
            out.push_str(&format!("[{s}]\n"));
            for p in self.entries(s) {
                out.push_str(&p.to_string_lossy());
                out.push('\n');
            }
        }
        out
    }
}

/// A fully loaded dataset: every manifest entry paired with its boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: ClassMap,
    pub splits: BTreeMap<Split, Vec<LabeledImage>>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[LabeledImage] {
        self.splits.get(&s).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn counts(&self) -> SplitCounts {
        SplitCounts {
            train: self.split(Split::Train).len(),
            test: self.split(Split::Test).len(),
            valid: self.split(Split::Valid).len(),
        }
    }

    pub fn images(&self) -> impl Iterator<Item = &LabeledImage> {
        self.splits.values().flatten()
    }

    pub fn box_count(&self) -> usize {
        self.images().map(|li| li.boxes.len()).sum()
    }
}

fn load_entry(path: PathBuf, classes: &ClassMap) -> Result<LabeledImage, DatasetError> {
    let label = label_path_for(&path);
    if !label.is_file() {
        return Err(DatasetError::MissingLabelFile { image: path, label });
    }
    let boxes = read_label_file(&label, classes)?;
    Ok(LabeledImage { image: path, boxes })
}

/// Pair every manifest entry with its co-named label file.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Dataset, DatasetError> {
    let mut splits = BTreeMap::new();
    for s in Split::ALL {
        let images = manifest
            .entries(s)
            .par_iter()
            .map(|rel| load_entry(manifest.root.join(rel), &manifest.classes))
            .collect::<Result<Vec<_>, _>>()?;
        splits.insert(s, images);
    }
    Ok(Dataset {
        classes: manifest.classes.clone(),
        splits,
    })
}

/// Load every `*.png` in `dir` (sorted by file name) with its label file.
pub fn load_labeled_dir(dir: &Path, classes: &ClassMap) -> Result<Vec<LabeledImage>, DatasetError> {
    list_pngs(dir)?
        .into_par_iter()
        .map(|p| load_entry(p, classes))
        .collect()
}

/// Read every `*.txt` label file in `dir`, keyed by file stem.
pub fn read_label_dir(dir: &Path, classes: &ClassMap) -> Result<BTreeMap<String, Vec<NormalizedBox>>, DatasetError> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
            out.insert(stem, read_label_file(&path, classes)?);
        }
    }
    Ok(out)
}

/// Sorted list of PNG files directly inside `dir`.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
    pub valid: usize,
}

impl SplitCounts {
    /// Published crayfish dataset split.
    pub const CRAYFISH: SplitCounts = SplitCounts::new(1740, 249, 497);
    /// Published plastic dataset split.
    pub const PLASTIC: SplitCounts = SplitCounts::new(854, 122, 244);

    pub const fn new(train: usize, test: usize, valid: usize) -> Self {
        Self { train, test, valid }
    }

    pub fn total(&self) -> usize {
        self.train + self.test + self.valid
    }

    pub fn get(&self, s: Split) -> usize {
        match s {
            Split::Train => self.train,
            Split::Test => self.test,
            Split::Valid => self.valid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCheck {
    pub split: String,
    pub expected: usize,
    pub actual: usize,
    pub delta: i64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub entries: Vec<SplitCheck>,
    pub pass: bool,
    /// Manifest entries whose image file is absent.
    pub missing: Vec<PathBuf>,
}

/// Compare the number of present images per split against `expected`.
/// An entry only counts when its image file exists under the manifest root.
pub fn validate_split(manifest: &DatasetManifest, expected: SplitCounts) -> SplitReport {
    let mut entries = Vec::new();
    let mut missing = Vec::new();
    let mut total = 0;
    for s in Split::ALL {
        let mut actual = 0;
        for rel in manifest.entries(s) {
            if manifest.root.join(rel).is_file() {
                actual += 1;
            } else {
                missing.push(rel.clone());
            }
        }
        total += actual;
        entries.push(check(s.as_str(), expected.get(s), actual));
    }
    entries.push(check("total", expected.total(), total));
    SplitReport {
        pass: entries.iter().all(|e| e.pass),
        entries,
        missing,
    }
}

fn check(split: &str, expected: usize, actual: usize) -> SplitCheck {
    SplitCheck {
        split: split.to_string(),
        expected,
        actual,
        delta: actual as i64 - expected as i64,
        pass: actual == expected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm() -> ClassMap {
        ClassMap::default()
    }

    #[test]
    fn class_map_rules() {
        assert_eq!(cm().name(0), Some("crayfish"));
        assert_eq!(cm().id_of("plastic"), Some(1));
        assert!(ClassMap::new(["a", "a"]).is_err());
        assert!(ClassMap::new(["a", " "]).is_err());
        assert!(ClassMap::new(Vec::<String>::new()).is_err());
    }

    #[test]
    fn parse_label_cases() {
        let b = parse_label_line("0 0.5 0.5 0.2 0.1", &cm()).unwrap();
        assert_eq!(b, NormalizedBox::new(0, 0.5, 0.5, 0.2, 0.1));
        assert_eq!(
            parse_label_line("7 0.5 0.5 0.2 0.1", &cm()),
            Err(LabelError::UnknownClass { id: 7, classes: 2 })
        );
        assert!(matches!(
            parse_label_line("1 0.5 0.5", &cm()),
            Err(LabelError::MalformedLine(_))
        ));
        assert!(matches!(
            parse_label_line("x 0.5 0.5 0.1 0.1", &cm()),
            Err(LabelError::MalformedLine(_))
        ));
        assert!(matches!(
            parse_label_line("0 0.5 nan? 0.1 0.1", &cm()),
            Err(LabelError::MalformedLine(_))
        ));
        assert!(matches!(
            parse_label_line("0 1.2 0.5 0.1 0.1", &cm()),
            Err(LabelError::OutOfRange { field: "cx", .. })
        ));
        assert!(matches!(
            parse_label_line("0 0.5 0.5 0 0.1", &cm()),
            Err(LabelError::OutOfRange { field: "w", .. })
        ));
        // box hanging well off the left edge
        assert!(matches!(
            parse_label_line("0 0.05 0.5 0.2 0.1", &cm()),
            Err(LabelError::OutOfRange { field: "x1", .. })
        ));
    }

    #[test]
    fn float_dust_is_clamped() {
        let b = parse_label_line("1 1.0000004 0.5 0.2 0.2", &cm()).unwrap_err();
        // center clamps to 1 but then half the box hangs off: rejected
        assert!(matches!(b, LabelError::OutOfRange { .. }));
        let b = parse_label_line("1 0.5 -0.0000005 0.3 0.0000001", &cm());
        assert!(b.is_err() || b.unwrap().is_valid());
        let b = parse_label_line("1 0.9000004 0.5 0.2 0.2", &cm()).unwrap();
        assert!(b.is_valid());
        assert!(b.corners().x2 <= 1.0);
    }

    #[test]
    fn manifest_parse_and_disjointness() {
        let text = "[classes]\ncrayfish\nplastic\n[train]\na.png\nb.png\n[test]\nc.png\n[valid]\n";
        let m = DatasetManifest::parse(text, "/tmp").unwrap();
        assert_eq!(m.entries(Split::Train).len(), 2);
        assert_eq!(m.total(), 3);
        assert_eq!(DatasetManifest::parse(&m.to_text(), "/tmp").unwrap(), m);
        let dup = "[train]\na.png\n[test]\na.png\n";
        assert!(matches!(
            DatasetManifest::parse(dup, "/"),
            Err(DatasetError::DuplicateEntry { .. })
        ));
        assert!(matches!(
            DatasetManifest::parse("a.png\n", "/"),
            Err(DatasetError::Manifest { line: 1, .. })
        ));
        assert!(matches!(
            DatasetManifest::parse("[bogus]\n", "/"),
            Err(DatasetError::Manifest { .. })
        ));
    }

    fn write_fixture(dir: &Path, specs: &[(&str, &str)]) {
        for (name, labels) in specs {
            fs::write(dir.join(name), b"png").unwrap();
            fs::write(label_path_for(&dir.join(name)), labels).unwrap();
        }
    }

    #[test]
    fn load_fixture_counts() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(
            dir.path(),
            &[
                ("a.png", "0 0.5 0.5 0.2 0.2\n1 0.2 0.2 0.1 0.1\n"),
                ("b.png", "0 0.5 0.5 0.2 0.2\n0 0.7 0.7 0.1 0.1\n1 0.3 0.3 0.2 0.2\n"),
                ("c.png", ""),
            ],
        );
        let m = DatasetManifest::parse("[train]\na.png\nb.png\n[test]\nc.png\n", dir.path()).unwrap();
        let ds = load_dataset(&m).unwrap();
        assert_eq!(ds.counts(), SplitCounts::new(2, 1, 0));
        assert_eq!(ds.box_count(), 5);
        assert!(ds.split(Split::Test)[0].boxes.is_empty());

        fs::remove_file(dir.path().join("c.txt")).unwrap();
        assert!(matches!(load_dataset(&m), Err(DatasetError::MissingLabelFile { .. })));
    }

    #[test]
    fn label_errors_carry_context() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), &[("a.png", "0 0.5 0.5 0.2 0.2\n9 0.5 0.5 0.1 0.1\n")]);
        let m = DatasetManifest::parse("[train]\na.png\n", dir.path()).unwrap();
        match load_dataset(&m) {
            Err(DatasetError::Label { line, source, .. }) => {
                assert_eq!(line, 2);
                assert!(matches!(source, LabelError::UnknownClass { id: 9, .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn split_validation_detects_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let names: Vec<String> = (0..6).map(|i| format!("{i}.png")).collect();
        for n in &names {
            fs::write(dir.path().join(n), b"").unwrap();
        }
        let paths: Vec<PathBuf> = names.iter().map(PathBuf::from).collect();
        let m = DatasetManifest::new(
            dir.path(),
            cm(),
            paths[..3].to_vec(),
            paths[3..4].to_vec(),
            paths[4..].to_vec(),
        )
        .unwrap();
        let expected = SplitCounts::new(3, 1, 2);
        assert!(validate_split(&m, expected).pass);
        fs::remove_file(dir.path().join("4.png")).unwrap();
        let r = validate_split(&m, expected);
        assert!(!r.pass);
        let valid = r.entries.iter().find(|e| e.split == "valid").unwrap();
        assert_eq!(valid.delta, -1);
        assert!(r.entries.iter().find(|e| e.split == "train").unwrap().pass);
        assert_eq!(r.missing, vec![PathBuf::from("4.png")]);
        let json = serde_json::to_value(&r.entries[0]).unwrap();
        for key in ["split", "expected", "actual", "pass"] {
            assert!(json.get(key).is_some());
        }
    }

    fn arb_box() -> impl Strategy<Value = NormalizedBox> {
        (0usize..2, 0.001f64..0.999, 0.001f64..0.999, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(c, cx, cy, fw, fh)| {
            let max_w = 2.0 * cx.min(1.0 - cx);
            let max_h = 2.0 * cy.min(1.0 - cy);
            NormalizedBox::new(
                c,
                cx,
                cy,
                (fw * max_w).max(1e-4).min(max_w),
                (fh * max_h).max(1e-4).min(max_h),
            )
        })
    }

    proptest! {
        #[test]
        fn label_line_roundtrip(b in arb_box()) {
            let parsed = parse_label_line(&b.to_label_line(), &cm()).unwrap();
            prop_assert!(parsed.is_valid());
            if b.corners().x1 >= 0.0 && b.corners().x2 <= 1.0 && b.corners().y1 >= 0.0 && b.corners().y2 <= 1.0 {
                prop_assert_eq!(parsed, b);
            }
        }

        #[test]
        fn load_is_order_independent(seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let dir = tempfile::tempdir().unwrap();
            let specs: Vec<(String, String)> = (0..5)
                .map(|i| (format!("{i}.png"), format!("{} 0.5 0.5 0.{} 0.2\n", i % 2, i + 1)))
                .collect();
            let refs: Vec<(&str, &str)> = specs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            write_fixture(dir.path(), &refs);
            let mut paths: Vec<PathBuf> = specs.iter().map(|(n, _)| PathBuf::from(n)).collect();
            let base = load_dataset(&DatasetManifest::new(dir.path(), cm(), paths.clone(), vec![], vec![]).unwrap()).unwrap();
            paths.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled = load_dataset(&DatasetManifest::new(dir.path(), cm(), paths, vec![], vec![]).unwrap()).unwrap();
            let key = |d: &Dataset| {
                let mut v: Vec<String> = d.images().map(|li| format!("{:?}{:?}", li.image, li.boxes)).collect();
                v.sort();
                v
            };
            prop_assert_eq!(key(&base), key(&shuffled));
        }
    }
}
