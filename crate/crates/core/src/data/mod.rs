//! Manifest ingestion, species selection and grouping, feature datasets,
//! splits, and image loading.

pub mod dataset;
pub mod features;
pub mod fixture;
pub mod manifest;
pub mod species;
pub mod splits;
pub mod synthetic;

pub use dataset::SplitDataset;
pub use features::{
    build_feature_dataset, feature_class_names, predict_and_partition, FeatureDataset, FeaturePredictor,
    LabelledExample, PartitionReport, SpeciesDataset, UnlabelledExample, FEATURE_THRESHOLD,
};
pub use manifest::{ingest_manifest, parse_manifest, write_manifest, Grade, IngestReport, ManifestRecord};
pub use species::{group_similar_species, read_confusion_edges, select_top_species, SpeciesGroupSet};
pub use splits::{make_splits, write_split_lists, SplitSize, SplitSpec, Splits};

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::augment::{crop_to_bbox, resize, CropJitter};
use crate::error::Result;
use crate::imageio::load_rgb;
use crate::nn::Tensor;
use crate::scalar::Scalar;
use crate::trainer::{stream_rng, LabelledSet};

const CROP_STREAM: u64 = 65;

/// Loads an image as `[size, size, 3]`. With boxes, the image is cropped to
/// one of them (chosen by `index`); otherwise it is resized whole.
pub fn load_example<T: Scalar>(path: &Path, boxes: &[crate::augment::BboxAnnotation], size: usize, index: u64) -> Result<Tensor<T>> {
    let image: Tensor<T> = load_rgb(path)?;
    if boxes.is_empty() {
        return resize(&image, size, size);
    }
    let (crop, _) = crop_to_bbox(&image, boxes, size, size, &CropJitter::none(), &mut stream_rng(0, CROP_STREAM, index))?;
    Ok(crop)
}

/// Loads labelled examples in parallel; paths resolve against `root`.
pub fn load_labelled<T: Scalar>(examples: &[LabelledExample], root: &Path, size: usize) -> Result<LabelledSet<T>> {
    let images = examples
        .par_iter()
        .enumerate()
        .map(|(i, e)| load_example(&resolve(root, &e.path), &e.boxes, size, i as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelledSet {
        images,
        labels: examples.iter().map(|e| e.label).collect(),
    })
}

pub fn load_unlabelled<T: Scalar>(examples: &[UnlabelledExample], root: &Path, size: usize) -> Result<Vec<Tensor<T>>> {
    examples
        .par_iter()
        .enumerate()
        .map(|(i, e)| load_example(&resolve(root, &e.path), &[], size, i as u64))
        .collect()
}

pub fn resolve(root: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        root.join(path)
    }
}
