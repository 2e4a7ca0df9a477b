//! Train / validation / test splits.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitSize {
    Count(usize),
    /// Fraction of the whole labelled set.
    Fraction(f64),
}

impl SplitSize {
    fn resolve(self, n: usize, what: &str) -> Result<usize> {
        match self {
            SplitSize::Count(c) => Ok(c),
            SplitSize::Fraction(f) if f > 0.0 && f <= 1.0 => Ok((f * n as f64).round() as usize),
            SplitSize::Fraction(f) => Err(Error::Config(format!("{what} fraction {f} outside (0, 1]"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub test: SplitSize,
    pub validation: SplitSize,
    /// Training examples as a fraction of the whole labelled set, capped at
    /// what remains after test and validation.
    pub labelled_fraction: f64,
    /// Equal per-class counts in the test split.
    pub balanced_test: bool,
    pub seed: u64,
}

impl SplitSpec {
    /// Fixed-count feature-recognition splits.
    pub fn feature_recognition(labelled_fraction: f64, seed: u64) -> Self {
        SplitSpec {
            test: SplitSize::Count(480),
            validation: SplitSize::Count(720),
            labelled_fraction,
            balanced_test: false,
            seed,
        }
    }

    /// Balanced 20% test and 10% validation.
    pub fn species_classification(labelled_fraction: f64, seed: u64) -> Self {
        SplitSpec {
            test: SplitSize::Fraction(0.2),
            validation: SplitSize::Fraction(0.1),
            labelled_fraction,
            balanced_test: true,
            seed,
        }
    }
}

/// Indices into the labelled set, each sorted ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn make_splits(labels: &[usize], spec: &SplitSpec) -> Result<Splits> {
    let n = labels.len();
    let f = spec.labelled_fraction;
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::Config(format!("labelled fraction {f} outside (0, 1]")));
    }
    let mut n_test = spec.test.resolve(n, "test")?;
    let n_val = spec.validation.resolve(n, "validation")?;
    if n_test + n_val > n {
        return Err(Error::Config(format!(
            "test {n_test} + validation {n_val} exceed the {n} labelled examples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));

    let mut test = Vec::with_capacity(n_test);
    let rest: Vec<usize>;
    if spec.balanced_test && n_test > 0 {
        let mut per_class: BTreeMap<usize, usize> = BTreeMap::new();
        for &l in labels {
            *per_class.entry(l).or_insert(0) += 1;
        }
        let classes = per_class.len();
        let quota = n_test / classes;
        if quota * classes != n_test {
            warn!("balanced test of {n_test} rounded down to {} ({quota} per class)", quota * classes);
            n_test = quota * classes;
        }
        let deficient: Vec<String> = per_class
            .iter()
            .filter(|(_, &c)| c < quota)
            .map(|(l, c)| format!("class {l} has {c}"))
            .collect();
        if !deficient.is_empty() {
            return Err(Error::Config(format!(
                "balanced test needs {quota} per class: {}",
                deficient.join(", ")
            )));
        }
        let mut taken: BTreeMap<usize, usize> = BTreeMap::new();
        let mut remaining = Vec::with_capacity(n - n_test);
        for &i in &order {
            let t = taken.entry(labels[i]).or_insert(0);
            if *t < quota {
                *t += 1;
                test.push(i);
            } else {
                remaining.push(i);
            }
        }
        rest = remaining;
    } else {
        test.extend_from_slice(&order[..n_test]);
        rest = order[n_test..].to_vec();
    }
    let validation = rest[..n_val].to_vec();
    let pool = &rest[n_val..];
    let wanted = (f * n as f64).round() as usize;
    if wanted > pool.len() {
        warn!(
            "labelled fraction {f} asks for {wanted} training examples, only {} remain",
            pool.len()
        );
    }
    let mut splits = Splits {
        train: pool[..wanted.min(pool.len())].to_vec(),
        validation,
        test,
    };
    splits.train.sort_unstable();
    splits.validation.sort_unstable();
    splits.test.sort_unstable();
    Ok(splits)
}

/// Writes `train.txt`, `validation.txt` and `test.txt` with one id per line.
pub fn write_split_lists(dir: &Path, ids: &[String], splits: &Splits) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, idx) in [("train", &splits.train), ("validation", &splits.validation), ("test", &splits.test)] {
        let path = dir.join(format!("{name}.txt"));
        let mut text = String::new();
        for &i in idx {
            text.push_str(&ids[i]);
            text.push('\n');
        }
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(|l| l.trim().to_owned()).collect())
}
