//! Cervix93 ingestion: frame labels, train/test split, annotated nucleus
//! points and EDF frames.
//!
//! Expected layout under a dataset root (the first match wins):
//!
//! ```text
//! <root>/label.csv | <root>/labels.csv     frame id, grade letter, split digit
//! <root>/EDF/frameNNN.{png,bmp,pgm}        EDF frames (falls back to <root>)
//! <root>/points/frameNNN.csv               one "x,y" row per nucleus
//!                                          (falls back to EDF/, then <root>)
//! ```

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::image::{load_frame, GrayImage, ImageError, Point};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow { path: String, line: usize, reason: String },
    #[error("duplicate frame id {0}")]
    DuplicateFrameId(String),
    #[error("no point file for {0}")]
    MissingPointFile(String),
    #[error("no EDF image for {0}")]
    MissingImage(String),
    #[error("{frame_id}: point #{index} ({x}, {y}) lies outside the image")]
    PointOutOfBounds { frame_id: String, index: usize, x: i64, y: i64 },
    #[error("no label file (label.csv or labels.csv) under {0}")]
    MissingLabels(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io { path: path.display().to_string(), source }
}

/// Bethesda grade of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Grade {
    Negative,
    Lsil,
    Hsil,
}

impl Grade {
    pub const ALL: [Grade; 3] = [Grade::Negative, Grade::Lsil, Grade::Hsil];

    pub fn letter(self) -> char {
        match self {
            Grade::Negative => 'N',
            Grade::Lsil => 'L',
            Grade::Hsil => 'H',
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "N" | "NEGATIVE" => Some(Grade::Negative),
            "L" | "LSIL" => Some(Grade::Lsil),
            "H" | "HSIL" => Some(Grade::Hsil),
            _ => None,
        }
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grade::Negative => "Negative",
            Grade::Lsil => "LSIL",
            Grade::Hsil => "HSIL",
        })
    }
}

/// Train/test partition; `0` and `1` in the label file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Test];

    fn index(self) -> usize {
        self as usize
    }

    pub fn digit(self) -> char {
        match self {
            Split::Train => '0',
            Split::Test => '1',
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "0" => Some(Split::Train),
            "1" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" | "training" | "0" => Ok(Split::Train),
            "test" | "1" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train or test)")),
        }
    }
}

/// Canonicalizes `frame7`, `frame007.png`, `7` or `007` to `frame007`.
/// Only frame000 through frame092 are valid.
pub fn canonical_frame_id(raw: &str) -> Option<String> {
    let s = raw.trim();
    let s = s.rsplit(['/', '\\']).next().unwrap_or(s);
    let stem = s.split('.').next().unwrap_or(s);
    let lower = stem.to_ascii_lowercase();
    let digits = lower.strip_prefix("frame").unwrap_or(&lower);
    if digits.is_empty() || digits.len() > 3 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let n: u32 = digits.parse().ok()?;
    (n <= 92).then(|| format!("frame{n:03}"))
}

/// One row of the label file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRecord {
    pub frame_id: String,
    pub grade: Grade,
    pub split: Split,
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split(|c: char| c == ',' || c == ';' || c == '\t' || c.is_whitespace()).filter(|f| !f.is_empty()).collect()
}

fn parse_label_row(line: &str) -> Result<LabelRecord, String> {
    let fields = split_fields(line);
    if fields.len() < 3 {
        return Err(format!("expected 3 fields, found {}", fields.len()));
    }
    let frame_id = canonical_frame_id(fields[0]).ok_or_else(|| format!("bad frame id {:?}", fields[0]))?;
    // grade and split columns are told apart by content
    let (grade, split) = match (Grade::parse(fields[1]), Split::parse(fields[2])) {
        (Some(g), Some(s)) => (g, s),
        _ => match (Grade::parse(fields[2]), Split::parse(fields[1])) {
            (Some(g), Some(s)) => (g, s),
            _ => return Err(format!("expected grade N/L/H and split 0/1, found {:?} and {:?}", fields[1], fields[2])),
        },
    };
    Ok(LabelRecord { frame_id, grade, split })
}

/// Parses label-file text. A first row that does not parse as data is taken
/// as a header; blank lines are skipped.
pub fn parse_labels_str(text: &str, source: &str) -> Result<Vec<LabelRecord>, DatasetError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut first_data = true;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_start_matches('\u{feff}');
        if line.trim().is_empty() {
            continue;
        }
        let rec = match parse_label_row(line) {
            Ok(r) => r,
            Err(_) if first_data => {
                first_data = false;
                continue;
            }
            Err(reason) => return Err(DatasetError::MalformedRow { path: source.to_string(), line: i + 1, reason }),
        };
        first_data = false;
        if !seen.insert(rec.frame_id.clone()) {
            return Err(DatasetError::DuplicateFrameId(rec.frame_id));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn parse_labels(path: &Path) -> Result<Vec<LabelRecord>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_labels_str(&text, &path.display().to_string())
}

/// Canonical label-file text, with header.
pub fn serialize_labels(records: &[LabelRecord]) -> String {
    let mut s = String::from("frame_id,grade,split\n");
    for r in records {
        s.push_str(&format!("{},{},{}\n", r.frame_id, r.grade.letter(), r.split.digit()));
    }
    s
}

/// Parses a point file. Rows are `x,y` (commas, semicolons, tabs or spaces);
/// fractional coordinates are rounded; a non-numeric first row is a header.
/// Returns signed coordinates so the caller can report out-of-bounds rows.
pub fn parse_points_str(text: &str, source: &str) -> Result<Vec<(i64, i64)>, DatasetError> {
    let mut out = Vec::new();
    let mut first_data = true;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_start_matches('\u{feff}');
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(line);
        let parsed = (fields.len() == 2)
            .then(|| (fields[0].parse::<f64>(), fields[1].parse::<f64>()))
            .and_then(|(x, y)| Some((x.ok()?, y.ok()?)))
            .filter(|(x, y)| x.is_finite() && y.is_finite());
        match parsed {
            Some((x, y)) => out.push((x.round() as i64, y.round() as i64)),
            None if first_data => {}
            None => {
                return Err(DatasetError::MalformedRow {
                    path: source.to_string(),
                    line: i + 1,
                    reason: format!("expected \"x,y\", found {line:?}"),
                })
            }
        }
        first_data = false;
    }
    Ok(out)
}

pub fn write_points_csv(points: &[Point]) -> String {
    let mut s = String::from("x,y\n");
    for p in points {
        s.push_str(&format!("{},{}\n", p.x, p.y));
    }
    s
}

/// A labelled EDF frame with its annotated nucleus points.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub frame_id: String,
    pub grade: Grade,
    pub split: Split,
    pub edf_image: GrayImage,
    pub gt_points: Vec<Point>,
}

impl FrameRecord {
    /// Builds a record, checking every point against the image bounds.
    pub fn new(
        frame_id: &str,
        grade: Grade,
        split: Split,
        edf_image: GrayImage,
        raw_points: &[(i64, i64)],
    ) -> Result<Self, DatasetError> {
        let mut gt_points = Vec::with_capacity(raw_points.len());
        for (index, &(x, y)) in raw_points.iter().enumerate() {
            if x < 0 || y < 0 || x as usize >= edf_image.width() || y as usize >= edf_image.height() {
                return Err(DatasetError::PointOutOfBounds { frame_id: frame_id.to_string(), index, x, y });
            }
            gt_points.push(Point::new(x as u32, y as u32));
        }
        Ok(Self { frame_id: frame_id.to_string(), grade, split, edf_image, gt_points })
    }
}

/// All loaded frames, unique by id and kept in label-file order.
#[derive(Debug, Clone, Default)]
pub struct GroundTruthSet {
    frames: Vec<FrameRecord>,
}

impl GroundTruthSet {
    pub fn new(frames: Vec<FrameRecord>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for f in &frames {
            if !seen.insert(f.frame_id.as_str()) {
                return Err(DatasetError::DuplicateFrameId(f.frame_id.clone()));
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[FrameRecord] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<FrameRecord> {
        self.frames
    }

    pub fn split(&self, split: Split) -> Vec<&FrameRecord> {
        self.frames.iter().filter(|f| f.split == split).collect()
    }

    pub fn get(&self, frame_id: &str) -> Option<&FrameRecord> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "bmp", "pgm"];
const POINT_EXTENSIONS: [&str; 2] = ["csv", "txt"];

fn find_with_ext(dir: &Path, stem: &str, exts: &[&str]) -> Option<PathBuf> {
    exts.iter().map(|e| dir.join(format!("{stem}.{e}"))).find(|p| p.is_file())
}

/// Resolved file locations inside a dataset root.
#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub labels: PathBuf,
    pub images_dir: PathBuf,
    pub points_dir: PathBuf,
}

impl DatasetLayout {
    pub fn discover(root: &Path) -> Result<Self, DatasetError> {
        let labels = ["label.csv", "labels.csv"]
            .iter()
            .map(|n| root.join(n))
            .find(|p| p.is_file())
            .ok_or_else(|| DatasetError::MissingLabels(root.display().to_string()))?;
        let edf = root.join("EDF");
        let images_dir = if edf.is_dir() { edf.clone() } else { root.to_path_buf() };
        let has_points = |d: &Path| {
            std::fs::read_dir(d).into_iter().flatten().flatten().any(|e| {
                let p = e.path();
                let stem_ok = p.file_stem().and_then(|s| s.to_str()).is_some_and(|s| canonical_frame_id(s).is_some());
                let ext_ok = p.extension().and_then(|s| s.to_str()).is_some_and(|x| POINT_EXTENSIONS.contains(&x));
                stem_ok && ext_ok
            })
        };
        let points_dir = [root.join("points"), edf, root.to_path_buf()]
            .into_iter()
            .find(|d| d.is_dir() && has_points(d))
            .unwrap_or_else(|| root.join("points"));
        Ok(Self { labels, images_dir, points_dir })
    }

    pub fn image_path(&self, frame_id: &str) -> Option<PathBuf> {
        find_with_ext(&self.images_dir, frame_id, &IMAGE_EXTENSIONS)
    }

    pub fn points_path(&self, frame_id: &str) -> Option<PathBuf> {
        find_with_ext(&self.points_dir, frame_id, &POINT_EXTENSIONS)
    }
}

/// Loads every labelled frame: EDF image from `images_dir`, points from
/// `points_dir`.
pub fn load_ground_truth(
    points_dir: &Path,
    images_dir: &Path,
    labels: &[LabelRecord],
) -> Result<GroundTruthSet, DatasetError> {
    let frames = labels
        .iter()
        .map(|rec| {
            let id = rec.frame_id.as_str();
            let pts_path = find_with_ext(points_dir, id, &POINT_EXTENSIONS)
                .ok_or_else(|| DatasetError::MissingPointFile(id.to_string()))?;
            let img_path = find_with_ext(images_dir, id, &IMAGE_EXTENSIONS)
                .ok_or_else(|| DatasetError::MissingImage(id.to_string()))?;
            let text = std::fs::read_to_string(&pts_path).map_err(|e| io_err(&pts_path, e))?;
            let raw = parse_points_str(&text, &pts_path.display().to_string())?;
            let img = load_frame(&img_path)?;
            FrameRecord::new(id, rec.grade, rec.split, img, &raw)
        })
        .collect::<Result<Vec<_>, _>>()?;
    GroundTruthSet::new(frames)
}

/// Discovers the layout under `root` and loads everything.
pub fn load_dataset(root: &Path) -> Result<GroundTruthSet, DatasetError> {
    let layout = DatasetLayout::discover(root)?;
    let labels = parse_labels(&layout.labels)?;
    load_ground_truth(&layout.points_dir, &layout.images_dir, &labels)
}

/// Frame and point counts by split (rows) and grade (columns).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DatasetSummary {
    pub frames: [[usize; 3]; 2],
    pub points: [[usize; 3]; 2],
}

/// Published frame counts (train, test) x (Negative, LSIL, HSIL).
pub const PUBLISHED_FRAMES: [[usize; 3]; 2] = [[12, 34, 23], [4, 12, 8]];
/// Published nucleus counts, same layout.
pub const PUBLISHED_POINTS: [[usize; 3]; 2] = [[179, 1125, 679], [59, 411, 252]];

impl DatasetSummary {
    pub fn published() -> Self {
        Self { frames: PUBLISHED_FRAMES, points: PUBLISHED_POINTS }
    }

    pub fn row_total(table: &[[usize; 3]; 2], split: Split) -> usize {
        table[split.index()].iter().sum()
    }

    pub fn column_total(table: &[[usize; 3]; 2], grade: Grade) -> usize {
        table.iter().map(|r| r[grade.index()]).sum()
    }

    pub fn grand_total(table: &[[usize; 3]; 2]) -> usize {
        table.iter().flatten().sum()
    }

    pub fn matches_published(&self) -> bool {
        *self == Self::published()
    }

    /// CSV with one row per (table, split) plus a total row per table.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("table,split,negative,lsil,hsil,total\n");
        for (name, t) in [("frames", &self.frames), ("points", &self.points)] {
            for split in Split::ALL {
                let r = t[split.index()];
                s.push_str(&format!("{name},{split},{},{},{},{}\n", r[0], r[1], r[2], Self::row_total(t, split)));
            }
            s.push_str(&format!(
                "{name},total,{},{},{},{}\n",
                Self::column_total(t, Grade::Negative),
                Self::column_total(t, Grade::Lsil),
                Self::column_total(t, Grade::Hsil),
                Self::grand_total(t)
            ));
        }
        s
    }
}

pub fn dataset_summary(gt: &GroundTruthSet) -> DatasetSummary {
    let mut s = DatasetSummary::default();
    for f in gt.frames() {
        s.frames[f.split.index()][f.grade.index()] += 1;
        s.points[f.split.index()][f.grade.index()] += f.gt_points.len();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_row() {
        let recs = parse_labels_str("frame007,L,0\n", "t").unwrap();
        assert_eq!(recs, vec![LabelRecord { frame_id: "frame007".into(), grade: Grade::Lsil, split: Split::Train }]);
    }

    #[test]
    fn header_and_alternate_spellings() {
        let text = "Frame,Label,Test\n7,H,1\nframe008.png ; n ; 0\n";
        let recs = parse_labels_str(text, "t").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].frame_id, "frame007");
        assert_eq!(recs[1].grade, Grade::Negative);
        // split before grade is accepted too
        let r = parse_labels_str("frame001,1,H\n", "t").unwrap();
        assert_eq!((r[0].grade, r[0].split), (Grade::Hsil, Split::Test));
    }

    #[test]
    fn rejects_bad_rows_with_line_number() {
        let err = parse_labels_str("frame000,N,0\nframe001,X,0\n", "t").unwrap_err();
        assert!(matches!(err, DatasetError::MalformedRow { line: 2, .. }), "{err}");
        let err = parse_labels_str("frame000,N,0\nframe001,N,2\n", "t").unwrap_err();
        assert!(matches!(err, DatasetError::MalformedRow { line: 2, .. }));
        let err = parse_labels_str("frame000,N,0\nframe093,N,0\n", "t").unwrap_err();
        assert!(matches!(err, DatasetError::MalformedRow { line: 2, .. }));
        let err = parse_labels_str("frame000,N,0\nframe000,L,1\n", "t").unwrap_err();
        assert!(matches!(err, DatasetError::DuplicateFrameId(_)));
    }

    #[test]
    fn frame_ids() {
        assert_eq!(canonical_frame_id("frame092").as_deref(), Some("frame092"));
        assert_eq!(canonical_frame_id("EDF/frame5.bmp").as_deref(), Some("frame005"));
        assert_eq!(canonical_frame_id("frame093"), None);
        assert_eq!(canonical_frame_id("frameX"), None);
        assert_eq!(canonical_frame_id(""), None);
    }

    #[test]
    fn point_adapter_tolerates_formatting() {
        let pts = parse_points_str("x, y\n 10 ,20\n\n30\t40\n5.6;7.4\n", "t").unwrap();
        assert_eq!(pts, vec![(10, 20), (30, 40), (6, 7)]);
        assert!(parse_points_str("", "t").unwrap().is_empty());
        assert!(matches!(parse_points_str("1,2\nfoo,3\n", "t"), Err(DatasetError::MalformedRow { line: 2, .. })));
    }

    #[test]
    fn out_of_bounds_point_rejected() {
        let img = GrayImage::filled(10, 10, 200);
        let err =
            FrameRecord::new("frame000", Grade::Negative, Split::Train, img.clone(), &[(1, 1), (10, 3)]).unwrap_err();
        assert!(matches!(err, DatasetError::PointOutOfBounds { index: 1, .. }));
        assert!(FrameRecord::new("frame000", Grade::Negative, Split::Train, img, &[(-1, 0)]).is_err());
    }

    #[test]
    fn empty_summary_is_zero() {
        let s = dataset_summary(&GroundTruthSet::default());
        assert_eq!(s, DatasetSummary::default());
        assert_eq!(DatasetSummary::grand_total(&s.points), 0);
    }

    #[test]
    fn published_tables_are_consistent() {
        let p = DatasetSummary::published();
        assert_eq!(DatasetSummary::grand_total(&p.frames), 93);
        assert_eq!(DatasetSummary::row_total(&p.frames, Split::Train), 69);
        assert_eq!(DatasetSummary::row_total(&p.frames, Split::Test), 24);
        assert_eq!(DatasetSummary::grand_total(&p.points), 2705);
        assert_eq!(DatasetSummary::row_total(&p.points, Split::Train), 1983);
        assert_eq!(DatasetSummary::row_total(&p.points, Split::Test), 722);
        assert_eq!(DatasetSummary::column_total(&p.points, Grade::Negative), 238);
        assert_eq!(DatasetSummary::column_total(&p.points, Grade::Lsil), 1536);
        assert_eq!(DatasetSummary::column_total(&p.points, Grade::Hsil), 931);
        assert_eq!(DatasetSummary::column_total(&p.frames, Grade::Negative), 16);
        assert_eq!(DatasetSummary::column_total(&p.frames, Grade::Lsil), 46);
        assert_eq!(DatasetSummary::column_total(&p.frames, Grade::Hsil), 31);
    }

    fn arb_record() -> impl Strategy<Value = LabelRecord> {
        (0u32..=92, 0usize..3, 0usize..2).prop_map(|(n, g, s)| LabelRecord {
            frame_id: format!("frame{n:03}"),
            grade: Grade::ALL[g],
            split: Split::ALL[s],
        })
    }

    proptest! {
        #[test]
        fn labels_round_trip(recs in proptest::collection::vec(arb_record(), 0..40)) {
            let mut seen = HashSet::new();
            let recs: Vec<_> = recs.into_iter().filter(|r| seen.insert(r.frame_id.clone())).collect();
            let text = serialize_labels(&recs);
            prop_assert_eq!(parse_labels_str(&text, "t").unwrap(), recs);
        }

        #[test]
        fn summary_marginals(cells in proptest::collection::vec((0usize..3, 0usize..2, 0usize..50), 0..30)) {
            let frames = cells.iter().enumerate().map(|(i, &(g, s, n))| {
                let pts: Vec<(i64, i64)> = (0..n as i64).map(|k| (k % 8, k / 8)).collect();
                FrameRecord::new(&format!("frame{i:03}"), Grade::ALL[g], Split::ALL[s], GrayImage::filled(8, 8, 0), &pts).unwrap()
            }).collect();
            let s = dataset_summary(&GroundTruthSet::new(frames).unwrap());
            for t in [&s.frames, &s.points] {
                let by_rows: usize = Split::ALL.iter().map(|&sp| DatasetSummary::row_total(t, sp)).sum();
                let by_cols: usize = Grade::ALL.iter().map(|&g| DatasetSummary::column_total(t, g)).sum();
                prop_assert_eq!(by_rows, DatasetSummary::grand_total(t));
                prop_assert_eq!(by_cols, DatasetSummary::grand_total(t));
            }
            prop_assert_eq!(DatasetSummary::grand_total(&s.frames), cells.len());
        }
    }
}
