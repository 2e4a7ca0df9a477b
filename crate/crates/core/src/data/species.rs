//! Species selection and similar-species grouping.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::warn;
use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use super::manifest::{Grade, ManifestRecord};
use crate::error::{Error, Result};

/// Records per species, in lexicographic order.
pub fn species_counts(records: &[ManifestRecord]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.species.clone()).or_insert(0) += 1;
    }
    counts
}

/// The `k` most observed species after removing `exclude`, ranked by record
/// count with lexicographic tie-breaks. Returns fewer (with a warning) when
/// fewer remain.
pub fn select_top_species(records: &[ManifestRecord], k: usize, exclude: &[String]) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let excluded: BTreeSet<&str> = exclude.iter().map(|s| s.as_str()).collect();
    let mut ranked: Vec<(String, usize)> = species_counts(records)
        .into_iter()
        .filter(|(s, _)| !excluded.contains(s.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if ranked.len() < k {
        warn!("only {} species remain after exclusion; asked for {k}", ranked.len());
    }
    Ok(ranked.into_iter().take(k).map(|(s, _)| s).collect())
}

/// Records whose species is in `species`.
pub fn retain_species(records: &[ManifestRecord], species: &[String]) -> Vec<ManifestRecord> {
    let keep: BTreeSet<&str> = species.iter().map(|s| s.as_str()).collect();
    records.iter().filter(|r| keep.contains(r.species.as_str())).cloned().collect()
}

/// `(research, needID)` record counts.
pub fn grade_counts(records: &[ManifestRecord]) -> (usize, usize) {
    let research = records.iter().filter(|r| r.grade == Grade::Research).count();
    (research, records.len() - research)
}

/// Disjoint species groups. Members are sorted and groups are ordered by
/// their first member.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeciesGroupSet {
    pub groups: Vec<Vec<String>>,
}

impl SpeciesGroupSet {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group_of(&self, species: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.iter().any(|s| s == species))
    }

    /// Groups as class indices into `class_names`; species absent from
    /// `class_names` are skipped.
    pub fn class_indices(&self, class_names: &[String]) -> Vec<Vec<usize>> {
        self.groups
            .iter()
            .map(|g| g.iter().filter_map(|s| class_names.iter().position(|c| c == s)).collect::<Vec<_>>())
            .filter(|g: &Vec<usize>| !g.is_empty())
            .collect()
    }
}

/// Connected components of the confusion graph over `species`. Every edge
/// endpoint must be listed; self-loops are ignored with a warning.
pub fn group_similar_species(species: &[String], edges: &[(String, String)]) -> Result<SpeciesGroupSet> {
    let names: BTreeSet<&str> = species.iter().map(|s| s.as_str()).collect();
    let names: Vec<&str> = names.into_iter().collect();
    let index = |s: &str| {
        names
            .binary_search(&s)
            .map_err(|_| Error::invalid(format!("confusion edge references unknown species {s:?}")))
    };
    let mut uf = UnionFind::<usize>::new(names.len());
    for (a, b) in edges {
        let (ia, ib) = (index(a)?, index(b)?);
        if ia == ib {
            warn!("ignoring self-loop on {a:?}");
            continue;
        }
        uf.union(ia, ib);
    }
    let mut by_root: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, name) in names.iter().enumerate() {
        by_root.entry(uf.find(i)).or_default().push((*name).to_owned());
    }
    let mut groups: Vec<Vec<String>> = by_root.into_values().collect();
    groups.sort();
    Ok(SpeciesGroupSet { groups })
}

/// Reads `species_a,species_b` rows; a header row with exactly those names
/// is skipped.
pub fn read_confusion_edges(path: &Path) -> Result<Vec<(String, String)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        })?;
    let mut edges = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let fail = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let row = row.map_err(|e| fail(e.to_string()))?;
        if row.len() != 2 {
            return Err(fail(format!("expected 2 columns, found {}", row.len())));
        }
        if i == 0 && &row[0] == "species_a" && &row[1] == "species_b" {
            continue;
        }
        edges.push((row[0].to_owned(), row[1].to_owned()));
    }
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn records(counts: &[(&str, usize)]) -> Vec<ManifestRecord> {
        let mut out = Vec::new();
        for (s, n) in counts {
            for i in 0..*n {
                out.push(ManifestRecord {
                    id: format!("{s}{i}"),
                    path: PathBuf::from("x"),
                    species: (*s).into(),
                    grade: Grade::Research,
                    annotations: None,
                    observations: None,
                });
            }
        }
        out
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn top_species_ranking() {
        let r = records(&[("A", 3), ("B", 2)]);
        assert_eq!(select_top_species(&r, 1, &[]).unwrap(), s(&["A"]));
        assert_eq!(select_top_species(&r, 1, &s(&["A"])).unwrap(), s(&["B"]));
        let tie = records(&[("D", 2), ("C", 2), ("E", 5)]);
        assert_eq!(select_top_species(&tie, 3, &[]).unwrap(), s(&["E", "C", "D"]));
        assert_eq!(select_top_species(&tie, 9, &[]).unwrap().len(), 3);
        assert!(select_top_species(&tie, 0, &[]).is_err());
    }

    #[test]
    fn grouping_is_transitive() {
        let g = group_similar_species(&s(&["A", "B", "C", "D"]), &[("A".into(), "B".into()), ("C".into(), "B".into())]).unwrap();
        assert_eq!(g.groups, vec![s(&["A", "B", "C"]), s(&["D"])]);
        let none = group_similar_species(&s(&["B", "A"]), &[]).unwrap();
        assert_eq!(none.groups, vec![s(&["A"]), s(&["B"])]);
        let self_loop = group_similar_species(&s(&["A"]), &[("A".into(), "A".into())]).unwrap();
        assert_eq!(self_loop.len(), 1);
        assert!(group_similar_species(&s(&["A"]), &[("A".into(), "Z".into())]).is_err());
    }

    #[test]
    fn class_indices_follow_names() {
        let g = group_similar_species(&s(&["A", "B", "C"]), &[("A".into(), "C".into())]).unwrap();
        assert_eq!(g.class_indices(&s(&["C", "B", "A"])), vec![vec![2, 0], vec![1]]);
        assert_eq!(g.group_of("C"), Some(0));
    }

    #[test]
    fn edge_file_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, "species_a,species_b\nAcer a, Acer b\n").unwrap();
        assert_eq!(read_confusion_edges(&p).unwrap(), vec![("Acer a".into(), "Acer b".into())]);
        std::fs::write(&p, "a,b,c\n").unwrap();
        assert!(read_confusion_edges(&p).is_err());
    }
}
