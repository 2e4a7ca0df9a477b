//! Bounding-box annotations in LabelImg (VOC XML) and JSON-lines form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Annotated tree feature, as written by the annotators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureClass {
    SimpleLeaf,
    CompoundedLeaf,
    DryLeaf,
    Bark,
    Trunk,
    Other,
}

/// Target of a binary feature-recognition model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Leaves,
    Bark,
}

impl Feature {
    pub const ALL: [Feature; 2] = [Feature::Leaves, Feature::Bark];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Leaves => "leaves",
            Feature::Bark => "bark",
        }
    }
}

impl std::str::FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "leaves" | "leaf" => Ok(Feature::Leaves),
            "bark" => Ok(Feature::Bark),
            other => Err(Error::invalid(format!("unknown feature {other:?} (expected leaves or bark)"))),
        }
    }
}

impl FeatureClass {
    pub const ALL: [FeatureClass; 6] = [
        FeatureClass::SimpleLeaf,
        FeatureClass::CompoundedLeaf,
        FeatureClass::DryLeaf,
        FeatureClass::Bark,
        FeatureClass::Trunk,
        FeatureClass::Other,
    ];

    /// Accepts spellings such as `simple leaf`, `simple_leaf`, `SimpleLeaf`.
    /// Anything unrecognised is [`FeatureClass::Other`].
    pub fn from_label(label: &str) -> Self {
        let key: String = label
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "simpleleaf" => FeatureClass::SimpleLeaf,
            "compoundedleaf" | "compoundleaf" => FeatureClass::CompoundedLeaf,
            "dryleaf" => FeatureClass::DryLeaf,
            "bark" => FeatureClass::Bark,
            "trunk" => FeatureClass::Trunk,
            _ => FeatureClass::Other,
        }
    }

    /// The umbrella a class belongs to, if any.
    pub fn umbrella(self) -> Option<Feature> {
        match self {
            FeatureClass::SimpleLeaf | FeatureClass::CompoundedLeaf | FeatureClass::DryLeaf => Some(Feature::Leaves),
            FeatureClass::Bark | FeatureClass::Trunk => Some(Feature::Bark),
            FeatureClass::Other => None,
        }
    }

    pub fn is_feature(self, target: Feature) -> bool {
        self.umbrella() == Some(target)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BboxAnnotation {
    pub image_id: String,
    pub class: FeatureClass,
    pub xmin: i64,
    pub ymin: i64,
    pub xmax: i64,
    pub ymax: i64,
}

impl BboxAnnotation {
    pub fn area(&self) -> i64 {
        (self.xmax - self.xmin).max(0) * (self.ymax - self.ymin).max(0)
    }

    /// Non-empty and inside a `width x height` image.
    pub fn is_valid(&self, width: usize, height: usize) -> bool {
        self.xmin >= 0
            && self.ymin >= 0
            && self.xmin < self.xmax
            && self.ymin < self.ymax
            && self.xmax <= width as i64
            && self.ymax <= height as i64
    }
}

fn parse_coord(text: &str, path: &Path, line: usize, what: &str) -> Result<i64> {
    let v: f64 = text.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: format!("{what} is not a number: {text:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            reason: format!("{what} is not finite"),
        });
    }
    Ok(v.round() as i64)
}

/// Parses one LabelImg XML document. The image id is the stem of
/// `<filename>`; `path` is only used in diagnostics.
pub fn parse_voc_xml(text: &str, path: &Path) -> Result<Vec<BboxAnnotation>> {
    let doc = roxmltree::Document::parse(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.pos().row as usize,
        reason: e.to_string(),
    })?;
    let root = doc.root_element();
    let line_of = |n: roxmltree::Node| doc.text_pos_at(n.range().start).row as usize;
    let child_text = |n: roxmltree::Node<'_, '_>, tag: &str| -> Result<String> {
        n.children()
            .find(|c| c.has_tag_name(tag))
            .and_then(|c| c.text())
            .map(|t| t.trim().to_owned())
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: line_of(n),
                reason: format!("<{}> has no <{tag}>", n.tag_name().name()),
            })
    };
    let filename = child_text(root, "filename")?;
    let image_id = Path::new(&filename)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or(filename);
    let mut out = Vec::new();
    for obj in root.children().filter(|c| c.has_tag_name("object")) {
        let name = child_text(obj, "name")?;
        let bb = obj.children().find(|c| c.has_tag_name("bndbox")).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: line_of(obj),
            reason: "<object> has no <bndbox>".into(),
        })?;
        let line = line_of(bb);
        let coord = |tag: &str| -> Result<i64> { parse_coord(&child_text(bb, tag)?, path, line, tag) };
        out.push(BboxAnnotation {
            image_id: image_id.clone(),
            class: FeatureClass::from_label(&name),
            xmin: coord("xmin")?,
            ymin: coord("ymin")?,
            xmax: coord("xmax")?,
            ymax: coord("ymax")?,
        });
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonAnnotation {
    image_id: String,
    class: String,
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

/// One `{"image_id", "class", "xmin", "ymin", "xmax", "ymax"}` object per
/// line; blank lines are skipped.
pub fn parse_annotations_jsonl(text: &str, path: &Path) -> Result<Vec<BboxAnnotation>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let a: JsonAnnotation = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        let round = |v: f64, what: &str| parse_coord(&v.to_string(), path, i + 1, what);
        out.push(BboxAnnotation {
            image_id: a.image_id,
            class: FeatureClass::from_label(&a.class),
            xmin: round(a.xmin, "xmin")?,
            ymin: round(a.ymin, "ymin")?,
            xmax: round(a.xmax, "xmax")?,
            ymax: round(a.ymax, "ymax")?,
        });
    }
    Ok(out)
}
