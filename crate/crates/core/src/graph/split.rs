use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Diagnosis, Task};
use crate::rng::{rng_for, stream};

use super::subgraph::BipartiteSubgraph;

/// Disjoint train/test sample ids. Both lists are sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetPartition {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub task: Task,
}

impl DatasetPartition {
    pub fn is_train(&self, id: &str) -> bool {
        self.train.binary_search_by(|t| t.as_str().cmp(id)).is_ok()
    }

    pub fn is_test(&self, id: &str) -> bool {
        self.test.binary_search_by(|t| t.as_str().cmp(id)).is_ok()
    }

    /// Items belonging to the train partition, in input order.
    pub fn train_items<'a, T>(&self, items: &'a [T], id: impl Fn(&T) -> &str) -> Vec<&'a T> {
        items.iter().filter(|t| self.is_train(id(t))).collect()
    }

    /// Items belonging to the test partition, in input order.
    pub fn test_items<'a, T>(&self, items: &'a [T], id: impl Fn(&T) -> &str) -> Vec<&'a T> {
        items.iter().filter(|t| self.is_test(id(t))).collect()
    }

    /// Manifest CSV `sample_id,split`, train rows first.
    pub fn to_manifest(&self) -> String {
        let mut s = String::from("sample_id,split\n");
        for id in &self.train {
            let _ = writeln!(s, "{id},train");
        }
        for id in &self.test {
            let _ = writeln!(s, "{id},test");
        }
        s
    }

    pub fn save_manifest(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_manifest())?;
        Ok(())
    }

    /// Reads a manifest. Seed and task are not stored in the file and must be
    /// supplied.
    pub fn load_manifest(path: &Path, seed: u64, task: Task) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let source = path.display().to_string();
        Self::parse_manifest(&text, &source, seed, task)
    }

    pub fn parse_manifest(text: &str, source: &str, seed: u64, task: Task) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Parse {
            path: source.to_string(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        if lines.next().map(|(_, l)| l.trim()) != Some("sample_id,split") {
            return Err(err(1, "header must be `sample_id,split`"));
        }
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (line, l) in lines {
            if l.trim().is_empty() {
                continue;
            }
            match l.trim().split_once(',') {
                Some((id, "train")) => train.push(id.to_string()),
                Some((id, "test")) => test.push(id.to_string()),
                _ => return Err(err(line, "expected `<id>,train` or `<id>,test`")),
            }
        }
        train.sort();
        test.sort();
        let tr: HashSet<&String> = train.iter().collect();
        if test.iter().any(|t| tr.contains(t)) {
            return Err(err(0, "a sample appears in both partitions"));
        }
        Ok(Self {
            train,
            test,
            seed,
            task,
        })
    }
}

/// Per-class test counts: the total is `round(fraction·N)`, each class gets
/// the floor of its share and leftover slots go to the largest fractional
/// remainders (lower class index on ties).
fn test_counts(class_sizes: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = class_sizes.iter().sum();
    let target = (fraction * total as f64).round() as usize;
    let shares: Vec<f64> = class_sizes.iter().map(|&n| fraction * n as f64).collect();
    let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = target.saturating_sub(counts.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if left == 0 {
            break;
        }
        if counts[c] + 1 < class_sizes[c] {
            counts[c] += 1;
            left -= 1;
        }
    }
    counts
}

/// Stratified, seeded train/test split of `(sample_id, diagnosis)` pairs.
/// Samples outside the task's classes are dropped from both partitions.
pub fn split_ids<'a>(
    items: impl IntoIterator<Item = (&'a str, Diagnosis)>,
    seed: u64,
    task: Task,
    test_fraction: f64,
) -> Result<DatasetPartition> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::contract(format!(
            "test fraction {test_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut by_class: Vec<Vec<&str>> = vec![Vec::new(); task.n_classes()];
    for (id, d) in items {
        if let Some(c) = task.class_index(d) {
            by_class[c].push(id);
        }
    }
    for (c, ids) in by_class.iter_mut().enumerate() {
        if ids.len() < 2 {
            return Err(Error::contract(format!(
                "class {} has {} samples; a split needs at least 2",
                task.classes()[c],
                ids.len()
            )));
        }
        ids.sort_unstable();
    }
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let counts = test_counts(&sizes, test_fraction);
    let mut rng = rng_for(seed, stream::SPLIT);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (ids, &k) in by_class.iter_mut().zip(&counts) {
        ids.shuffle(&mut rng);
        test.extend(ids[..k].iter().map(|s| s.to_string()));
        train.extend(ids[k..].iter().map(|s| s.to_string()));
    }
    train.sort();
    test.sort();
    Ok(DatasetPartition {
        train,
        test,
        seed,
        task,
    })
}

/// 80/20 stratified split of subgraphs.
pub fn split_dataset(
    subgraphs: &[BipartiteSubgraph],
    seed: u64,
    task: Task,
) -> Result<DatasetPartition> {
    split_ids(
        subgraphs
            .iter()
            .map(|s| (s.sample_id.as_str(), s.diagnosis)),
        seed,
        task,
        0.2,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_rounding() {
        assert_eq!(test_counts(&[10, 10], 0.2), vec![2, 2]);
        assert_eq!(test_counts(&[26, 26], 0.2), vec![5, 5]);
        // round(0.2·52) = 10
        assert_eq!(test_counts(&[18, 17, 17], 0.2).iter().sum::<usize>(), 10);
        assert_eq!(test_counts(&[2, 2], 0.2), vec![1, 0]);
    }

    #[test]
    fn manifest_round_trip() {
        let items: Vec<(String, Diagnosis)> = (0..10)
            .map(|i| {
                (
                    format!("s{i}"),
                    if i % 2 == 0 {
                        Diagnosis::AD
                    } else {
                        Diagnosis::CN
                    },
                )
            })
            .collect();
        let p = split_ids(
            items.iter().map(|(s, d)| (s.as_str(), *d)),
            4,
            Task::AdVsCn,
            0.2,
        )
        .unwrap();
        let back =
            DatasetPartition::parse_manifest(&p.to_manifest(), "m", 4, Task::AdVsCn).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn bad_fraction_rejected() {
        let items = [("a", Diagnosis::AD), ("b", Diagnosis::AD)];
        assert!(split_ids(items, 0, Task::AdVsCn, 1.0).is_err());
    }
}
