//! Binary feature datasets and feature-specific species datasets.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::manifest::{Grade, ManifestRecord};
use crate::augment::annotation::Feature;
use crate::augment::BboxAnnotation;
use crate::error::Result;

pub const DONT_CARE: usize = 0;
pub const FEATURE: usize = 1;

/// Class names of a binary feature dataset, indexed by label.
pub fn feature_class_names(feature: Feature) -> Vec<String> {
    vec!["dont-care".to_owned(), feature.name().to_owned()]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelledExample {
    pub id: String,
    pub path: PathBuf,
    pub label: usize,
    /// Boxes to crop to; empty means the whole image.
    pub boxes: Vec<BboxAnnotation>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlabelledExample {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDataset {
    pub feature: Feature,
    pub labelled: Vec<LabelledExample>,
    pub unlabelled: Vec<UnlabelledExample>,
}

impl FeatureDataset {
    /// `(feature, don't-care)` counts.
    pub fn counts(&self) -> (usize, usize) {
        let f = self.labelled.iter().filter(|e| e.label == FEATURE).count();
        (f, self.labelled.len() - f)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.labelled.iter().map(|e| e.label).collect()
    }
}

/// Annotated records become feature (any box under the feature umbrella) or
/// don't-care examples; unannotated records form the unlabelled pool.
/// With `pool_includes_annotated`, annotated images also join the pool.
pub fn build_feature_dataset(records: &[ManifestRecord], feature: Feature, pool_includes_annotated: bool) -> FeatureDataset {
    let mut labelled = Vec::new();
    let mut unlabelled = Vec::new();
    for r in records {
        if r.is_annotated() {
            let boxes = r.annotations.as_deref().unwrap_or_default();
            let hits: Vec<BboxAnnotation> = boxes.iter().filter(|b| b.class.is_feature(feature)).cloned().collect();
            let (label, boxes) = if hits.is_empty() {
                (DONT_CARE, boxes.to_vec())
            } else {
                (FEATURE, hits)
            };
            labelled.push(LabelledExample {
                id: r.id.clone(),
                path: r.path.clone(),
                label,
                boxes,
            });
            if !pool_includes_annotated {
                continue;
            }
        }
        unlabelled.push(UnlabelledExample {
            id: r.id.clone(),
            path: r.path.clone(),
        });
    }
    let ds = FeatureDataset {
        feature,
        labelled,
        unlabelled,
    };
    let (f, d) = ds.counts();
    info!(
        "{} dataset: {f} feature, {d} don't-care, {} unlabelled",
        feature.name(),
        ds.unlabelled.len()
    );
    ds
}

/// Binary feature classifier used to route records.
pub trait FeaturePredictor {
    /// Probability that the image at `path` shows the feature.
    fn probability(&self, path: &Path) -> Result<f64>;
}

impl<F: Fn(&Path) -> Result<f64>> FeaturePredictor for F {
    fn probability(&self, path: &Path) -> Result<f64> {
        self(path)
    }
}

/// Species dataset for one feature: research-grade records are labelled by
/// species, need-ID records are unlabelled.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeciesDataset {
    pub labelled: Vec<(String, PathBuf, String)>,
    pub unlabelled: Vec<UnlabelledExample>,
}

impl SpeciesDataset {
    /// Sorted species names of the labelled part.
    pub fn class_names(&self) -> Vec<String> {
        let names: BTreeSet<&String> = self.labelled.iter().map(|(_, _, s)| s).collect();
        names.into_iter().cloned().collect()
    }

    /// Labelled part with class indices into `class_names`; unknown species
    /// are dropped.
    pub fn examples(&self, class_names: &[String]) -> Vec<LabelledExample> {
        self.labelled
            .iter()
            .filter_map(|(id, path, s)| {
                class_names.iter().position(|c| c == s).map(|label| LabelledExample {
                    id: id.clone(),
                    path: path.clone(),
                    label,
                    boxes: Vec::new(),
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PartitionReport {
    pub datasets: BTreeMap<Feature, SpeciesDataset>,
    pub missing_images: usize,
    /// Records no predictor claimed.
    pub excluded: usize,
}

pub const FEATURE_THRESHOLD: f64 = 0.5;

/// Routes every record with an existing image to each feature whose
/// predictor gives probability `>= 0.5`.
pub fn predict_and_partition(
    records: &[ManifestRecord],
    root: &Path,
    predictors: &[(Feature, &dyn FeaturePredictor)],
) -> Result<PartitionReport> {
    let mut report = PartitionReport::default();
    for &(f, _) in predictors {
        report.datasets.entry(f).or_default();
    }
    for r in records {
        let path = r.resolve(root);
        if !path.is_file() {
            report.missing_images += 1;
            continue;
        }
        let mut claimed = false;
        for &(feature, predictor) in predictors {
            if predictor.probability(&path)? < FEATURE_THRESHOLD {
                continue;
            }
            claimed = true;
            let ds = report.datasets.get_mut(&feature).expect("inserted above");
            match r.grade {
                Grade::Research => ds.labelled.push((r.id.clone(), r.path.clone(), r.species.clone())),
                Grade::NeedId => ds.unlabelled.push(UnlabelledExample {
                    id: r.id.clone(),
                    path: r.path.clone(),
                }),
            }
        }
        if !claimed {
            report.excluded += 1;
        }
    }
    if report.missing_images > 0 {
        warn!("skipped {} records with missing images", report.missing_images);
    }
    Ok(report)
}
