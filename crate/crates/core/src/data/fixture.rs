//! Synthetic manifests reproducing the annotated-image counts of the twelve
//! labelled species, for testing the pipeline arithmetic without images.

use std::path::PathBuf;

use super::manifest::{Grade, ManifestRecord};
use crate::augment::annotation::Feature;
use crate::augment::{BboxAnnotation, FeatureClass};

/// `(species, leaves, leaves don't-care, bark, bark don't-care)`.
pub const ANNOTATED_COUNTS: [(&str, usize, usize, usize, usize); 12] = [
    ("Acer saccharinum", 107, 59, 60, 110),
    ("Carya ovata", 31, 132, 121, 38),
    ("Celtis occidentalis", 81, 80, 104, 61),
    ("Cornus florida", 119, 44, 34, 124),
    ("Fraxinus americana", 62, 86, 104, 46),
    ("Gleditsia triacanthos", 34, 124, 108, 56),
    ("Juglans nigra", 103, 53, 32, 132),
    ("Morus alba", 150, 3, 17, 150),
    ("Populus tremuloides", 113, 49, 62, 93),
    ("Quercus macrocarpa", 97, 71, 73, 87),
    ("Robinia pseudoacacia", 110, 52, 40, 113),
    ("Ulmus americana", 59, 101, 66, 89),
];

/// Similar-species groups among the twelve annotated species.
pub fn annotated_species_groups() -> Vec<Vec<&'static str>> {
    vec![
        vec!["Acer saccharinum", "Fraxinus americana", "Quercus macrocarpa"],
        vec!["Carya ovata"],
        vec!["Celtis occidentalis"],
        vec!["Cornus florida"],
        vec!["Gleditsia triacanthos", "Robinia pseudoacacia"],
        vec!["Juglans nigra"],
        vec!["Morus alba", "Ulmus americana"],
        vec!["Populus tremuloides"],
    ]
}

/// Confusion edges generating [`annotated_species_groups`].
pub fn annotated_species_edges() -> Vec<(String, String)> {
    annotated_species_groups()
        .into_iter()
        .flat_map(|g| g.windows(2).map(|w| (w[0].to_owned(), w[1].to_owned())).collect::<Vec<_>>())
        .collect()
}

fn slug(species: &str) -> String {
    species.to_ascii_lowercase().replace(' ', "-")
}

fn boxed(id: &str, class: FeatureClass) -> Vec<BboxAnnotation> {
    vec![BboxAnnotation {
        image_id: id.to_owned(),
        class,
        xmin: 8,
        ymin: 8,
        xmax: 56,
        ymax: 56,
    }]
}

/// Annotated manifest for one feature: per species, the listed number of
/// images with a feature box and of images whose boxes are all outside the
/// feature umbrella. `unlabelled` unannotated need-ID records are appended.
pub fn annotated_manifest(feature: Feature, unlabelled: usize) -> Vec<ManifestRecord> {
    let (hit, miss): (&[FeatureClass], &[FeatureClass]) = match feature {
        Feature::Leaves => (
            &[FeatureClass::SimpleLeaf, FeatureClass::CompoundedLeaf, FeatureClass::DryLeaf],
            &[FeatureClass::Bark, FeatureClass::Trunk, FeatureClass::Other],
        ),
        Feature::Bark => (
            &[FeatureClass::Bark, FeatureClass::Trunk],
            &[FeatureClass::SimpleLeaf, FeatureClass::DryLeaf, FeatureClass::Other],
        ),
    };
    let mut out = Vec::new();
    for &(species, leaves, leaves_dc, bark, bark_dc) in &ANNOTATED_COUNTS {
        let (pos, neg) = match feature {
            Feature::Leaves => (leaves, leaves_dc),
            Feature::Bark => (bark, bark_dc),
        };
        for i in 0..pos + neg {
            let id = format!("{}-{}-{i}", feature.name(), slug(species));
            let class = if i < pos { hit[i % hit.len()] } else { miss[i % miss.len()] };
            out.push(ManifestRecord {
                path: PathBuf::from(format!("{id}.jpg")),
                annotations: Some(boxed(&id, class)),
                id,
                species: species.to_owned(),
                grade: Grade::Research,
                observations: None,
            });
        }
    }
    for i in 0..unlabelled {
        let (species, ..) = ANNOTATED_COUNTS[i % ANNOTATED_COUNTS.len()];
        let id = format!("pool-{}-{i}", feature.name());
        out.push(ManifestRecord {
            path: PathBuf::from(format!("{id}.jpg")),
            id,
            species: species.to_owned(),
            grade: Grade::NeedId,
            annotations: None,
            observations: None,
        });
    }
    out
}
