//! JSON-lines image manifests.
//!
//! One object per line:
//!
//! ```text
//! {"id": "123", "path": "img/123.jpg", "species": "Acer saccharinum", "grade": "research",
//!  "annotations": [{"class": "simple leaf", "xmin": 4, "ymin": 8, "xmax": 60, "ymax": 90}],
//!  "observations": 7}
//! ```
//!
//! `grade` is `research` or `needID`; `casual` rows are dropped at ingest.
//! `annotations` and `observations` are optional.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::augment::{BboxAnnotation, FeatureClass};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Grade {
    #[serde(rename = "research")]
    Research,
    #[serde(rename = "needID")]
    NeedId,
}

impl Grade {
    pub fn name(self) -> &'static str {
        match self {
            Grade::Research => "research",
            Grade::NeedId => "needID",
        }
    }
}

/// `Ok(None)` for casual-grade observations.
fn parse_grade(text: &str) -> std::result::Result<Option<Grade>, String> {
    match text {
        "research" => Ok(Some(Grade::Research)),
        "needID" | "needs_id" => Ok(Some(Grade::NeedId)),
        "casual" => Ok(None),
        other => Err(format!("unknown grade {other:?} (research, needID or casual)")),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    pub path: PathBuf,
    pub species: String,
    pub grade: Grade,
    /// `None` when the image was never annotated.
    pub annotations: Option<Vec<BboxAnnotation>>,
    pub observations: Option<u64>,
}

impl ManifestRecord {
    /// Annotated with at least one box.
    pub fn is_annotated(&self) -> bool {
        self.annotations.as_ref().is_some_and(|a| !a.is_empty())
    }

    /// `path` resolved against `root` unless it is absolute.
    pub fn resolve(&self, root: &Path) -> PathBuf {
        if self.path.is_absolute() {
            self.path.clone()
        } else {
            root.join(&self.path)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    class: String,
    xmin: i64,
    ymin: i64,
    xmax: i64,
    ymax: i64,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    path: String,
    species: String,
    grade: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotations: Option<Vec<RawBox>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    observations: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestReport {
    pub records: Vec<ManifestRecord>,
    pub casual_dropped: usize,
}

fn class_label(class: FeatureClass) -> &'static str {
    match class {
        FeatureClass::SimpleLeaf => "simple leaf",
        FeatureClass::CompoundedLeaf => "compounded leaf",
        FeatureClass::DryLeaf => "dry leaf",
        FeatureClass::Bark => "bark",
        FeatureClass::Trunk => "trunk",
        FeatureClass::Other => "other",
    }
}

/// Parses manifest text; `path` is only used in diagnostics.
pub fn parse_manifest(text: &str, path: &Path) -> Result<IngestReport> {
    let mut report = IngestReport::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        };
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        let Some(grade) = parse_grade(&raw.grade).map_err(fail)? else {
            report.casual_dropped += 1;
            continue;
        };
        if raw.id.is_empty() {
            return Err(fail("empty id".into()));
        }
        if raw.species.trim().is_empty() {
            return Err(fail(format!("record {:?} has an empty species", raw.id)));
        }
        if let Some(first) = seen.insert(raw.id.clone(), line_no) {
            return Err(fail(format!("duplicate id {:?} (first seen on line {first})", raw.id)));
        }
        let annotations = raw.annotations.map(|boxes| {
            boxes
                .into_iter()
                .map(|b| BboxAnnotation {
                    image_id: raw.id.clone(),
                    class: FeatureClass::from_label(&b.class),
                    xmin: b.xmin,
                    ymin: b.ymin,
                    xmax: b.xmax,
                    ymax: b.ymax,
                })
                .collect()
        });
        report.records.push(ManifestRecord {
            id: raw.id,
            path: PathBuf::from(raw.path),
            species: raw.species.trim().to_owned(),
            grade,
            annotations,
            observations: raw.observations,
        });
    }
    if report.casual_dropped > 0 {
        info!("{}: dropped {} casual-grade rows", path.display(), report.casual_dropped);
    }
    Ok(report)
}

pub fn ingest_manifest(path: &Path) -> Result<IngestReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

pub fn manifest_line(record: &ManifestRecord) -> String {
    let raw = RawRecord {
        id: record.id.clone(),
        path: record.path.to_string_lossy().into_owned(),
        species: record.species.clone(),
        grade: record.grade.name().to_owned(),
        annotations: record.annotations.as_ref().map(|boxes| {
            boxes
                .iter()
                .map(|b| RawBox {
                    class: class_label(b.class).to_owned(),
                    xmin: b.xmin,
                    ymin: b.ymin,
                    xmax: b.xmax,
                    ymax: b.ymax,
                })
                .collect()
        }),
        observations: record.observations,
    };
    serde_json::to_string(&raw).expect("manifest rows serialize")
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&manifest_line(r));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Adapter for iNaturalist CSV exports. Field mapping:
///
/// | manifest  | export column                              |
/// |-----------|--------------------------------------------|
/// | `id`      | `id`                                       |
/// | `path`    | `local_path`, else `image_url`             |
/// | `species` | `scientific_name`                          |
/// | `grade`   | `quality_grade` (`needs_id` becomes `needID`) |
///
/// Exports carry no annotations.
pub fn from_inaturalist_csv(text: &str, path: &Path) -> Result<IngestReport> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        reason: format!("missing column {name:?}"),
    };
    let id = column("id").ok_or_else(|| missing("id"))?;
    let species = column("scientific_name").ok_or_else(|| missing("scientific_name"))?;
    let grade = column("quality_grade").ok_or_else(|| missing("quality_grade"))?;
    let image = column("local_path").or_else(|| column("image_url")).ok_or_else(|| missing("image_url"))?;
    let mut lines = String::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            reason: e.to_string(),
        })?;
        let field = |c: usize| row.get(c).unwrap_or("").to_owned();
        let raw = RawRecord {
            id: field(id),
            path: field(image),
            species: field(species),
            grade: field(grade),
            annotations: None,
            observations: None,
        };
        lines.push_str(&serde_json::to_string(&raw).expect("manifest rows serialize"));
        lines.push('\n');
    }
    parse_manifest(&lines, path)
}
