//! A split dataset on disk: example lists for every split plus the class
//! names, serialised as JSON next to the per-split id lists.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::{LabelledExample, UnlabelledExample};
use super::splits::{write_split_lists, Splits};
use super::{load_labelled, load_unlabelled};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trainer::TrainData;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitDataset {
    pub class_names: Vec<String>,
    pub train: Vec<LabelledExample>,
    pub validation: Vec<LabelledExample>,
    pub test: Vec<LabelledExample>,
    pub unlabelled: Vec<UnlabelledExample>,
}

impl SplitDataset {
    pub fn from_splits(
        class_names: Vec<String>,
        labelled: &[LabelledExample],
        splits: &Splits,
        unlabelled: Vec<UnlabelledExample>,
    ) -> Self {
        let pick = |idx: &[usize]| idx.iter().map(|&i| labelled[i].clone()).collect();
        SplitDataset {
            class_names,
            train: pick(&splits.train),
            validation: pick(&splits.validation),
            test: pick(&splits.test),
            unlabelled,
        }
    }

    /// `name: count` lines for every split.
    pub fn summary(&self) -> String {
        format!(
            "train: {}\nvalidation: {}\ntest: {}\nunlabelled: {}",
            self.train.len(),
            self.validation.len(),
            self.test.len(),
            self.unlabelled.len()
        )
    }

    pub fn split(&self, name: &str) -> Result<&[LabelledExample]> {
        match name {
            "train" => Ok(&self.train),
            "validation" => Ok(&self.validation),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split {other:?} (train, validation, test)"))),
        }
    }

    /// Writes `dataset.json` and the id lists into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut ids: Vec<String> = Vec::new();
        let mut splits = Splits::default();
        for (examples, slot) in [
            (&self.train, &mut splits.train),
            (&self.validation, &mut splits.validation),
            (&self.test, &mut splits.test),
        ] {
            for e in examples {
                slot.push(ids.len());
                ids.push(e.id.clone());
            }
        }
        write_split_lists(dir, &ids, &splits)?;
        let unl: String = self.unlabelled.iter().map(|e| format!("{}\n", e.id)).collect();
        let unl_path = dir.join("unlabelled.txt");
        std::fs::write(&unl_path, unl).map_err(|e| Error::io(&unl_path, e))?;
        let path = dir.join("dataset.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("dataset.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let ds: SplitDataset = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        let classes = ds.class_names.len();
        if let Some(e) = ds.train.iter().chain(&ds.validation).chain(&ds.test).find(|e| e.label >= classes) {
            return Err(Error::Parse {
                path,
                line: 0,
                reason: format!("example {:?} has label {} but only {classes} classes", e.id, e.label),
            });
        }
        Ok(ds)
    }

    /// Loads every image as `[size, size, 3]`.
    pub fn load<T: Scalar>(&self, root: &Path, size: usize) -> Result<TrainData<T>> {
        Ok(TrainData {
            train: load_labelled(&self.train, root, size)?,
            unlabelled: load_unlabelled(&self.unlabelled, root, size)?,
            validation: load_labelled(&self.validation, root, size)?,
            test: Some(load_labelled(&self.test, root, size)?),
        })
    }
}
