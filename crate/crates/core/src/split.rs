//! Seeded train/test partitions.
//!
//! Each split first reserves one training triple per user and per item (chosen by a
//! seeded shuffle), so every user and item keeps at least one training rating. The
//! test set is then drawn from the remaining triples, first preferring triples whose
//! user or item is not yet represented in the test set, then uniformly.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub num_splits: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.05,
            num_splits: 5,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "test fraction {} not in (0, 1)",
                self.test_fraction
            )));
        }
        if self.num_splits == 0 {
            return Err(Error::InvalidArgument("num_splits must be >= 1".into()));
        }
        Ok(())
    }
}

/// Triple indices (into `Dataset::triples`) of one partition, both sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainTestSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Triples forced into train because their user or item has a single rating.
    pub forced_train: usize,
    pub test_users_covered: usize,
    pub test_items_covered: usize,
}

impl TrainTestSplit {
    /// Every triple in train, none in test.
    pub fn all_train(dataset: &Dataset) -> Self {
        Self {
            train: (0..dataset.triples.len()).collect(),
            test: Vec::new(),
            forced_train: 0,
            test_users_covered: 0,
            test_items_covered: 0,
        }
    }

    /// Per-user training triples, in ascending triple order.
    pub fn train_by_user(&self, dataset: &Dataset) -> Vec<Vec<usize>> {
        group_by_user(dataset, &self.train)
    }

    pub fn test_by_user(&self, dataset: &Dataset) -> Vec<Vec<usize>> {
        group_by_user(dataset, &self.test)
    }
}

fn group_by_user(dataset: &Dataset, triples: &[usize]) -> Vec<Vec<usize>> {
    let mut by_user = vec![Vec::new(); dataset.num_users];
    for &t in triples {
        by_user[dataset.triples[t].user].push(t);
    }
    by_user
}

pub fn make_splits(dataset: &Dataset, spec: &SplitSpec) -> Result<Vec<TrainTestSplit>> {
    spec.validate()?;
    if dataset.triples.is_empty() {
        return Err(Error::Empty("dataset has no triples".into()));
    }
    Ok((0..spec.num_splits)
        .map(|i| make_split(dataset, spec.test_fraction, spec.seed.wrapping_add(i as u64)))
        .collect())
}

pub fn make_split(dataset: &Dataset, test_fraction: f64, seed: u64) -> TrainTestSplit {
    let total = dataset.triples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);

    let user_counts = dataset.user_counts();
    let item_counts = dataset.item_counts();
    let forced_train = dataset
        .triples
        .iter()
        .filter(|t| user_counts[t.user] == 1 || item_counts[t.item] == 1)
        .count();

    let mut is_train = vec![false; total];
    let mut user_in_train = vec![false; dataset.num_users];
    let mut item_in_train = vec![false; dataset.num_items];
    for &t in &order {
        let triple = dataset.triples[t];
        if !user_in_train[triple.user] || !item_in_train[triple.item] {
            is_train[t] = true;
            user_in_train[triple.user] = true;
            item_in_train[triple.item] = true;
        }
    }

    let eligible: Vec<usize> = order.iter().copied().filter(|&t| !is_train[t]).collect();
    let target = ((test_fraction * total as f64).round() as usize).min(eligible.len());

    let mut is_test = vec![false; total];
    let mut user_in_test = vec![false; dataset.num_users];
    let mut item_in_test = vec![false; dataset.num_items];
    let mut taken = 0;
    for &t in &eligible {
        if taken == target {
            break;
        }
        let triple = dataset.triples[t];
        if !user_in_test[triple.user] || !item_in_test[triple.item] {
            is_test[t] = true;
            user_in_test[triple.user] = true;
            item_in_test[triple.item] = true;
            taken += 1;
        }
    }
    for &t in &eligible {
        if taken == target {
            break;
        }
        if !is_test[t] {
            let triple = dataset.triples[t];
            is_test[t] = true;
            user_in_test[triple.user] = true;
            item_in_test[triple.item] = true;
            taken += 1;
        }
    }

    let (test, train): (Vec<usize>, Vec<usize>) = (0..total).partition(|&t| is_test[t]);
    TrainTestSplit {
        train,
        test,
        forced_train,
        test_users_covered: user_in_test.iter().filter(|&&c| c).count(),
        test_items_covered: item_in_test.iter().filter(|&&c| c).count(),
    }
}

/// Writes splits as `split_id,role,triple_index` rows.
pub fn write_splits_csv<W: Write>(splits: &[TrainTestSplit], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["split_id", "role", "triple_index"])?;
    for (id, split) in splits.iter().enumerate() {
        for (role, indices) in [("train", &split.train), ("test", &split.test)] {
            for t in indices {
                w.write_record([id.to_string(), role.to_string(), t.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<split csv>", e))?;
    Ok(())
}

/// Reads splits written by [`write_splits_csv`]. Coverage statistics are recomputed
/// against `dataset`.
pub fn read_splits_csv<R: Read>(dataset: &Dataset, input: R) -> Result<Vec<TrainTestSplit>> {
    #[derive(Deserialize)]
    struct Row {
        split_id: usize,
        role: String,
        triple_index: usize,
    }
    let mut parts: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    let mut reader = csv::Reader::from_reader(input);
    for (idx, row) in reader.deserialize::<Row>().enumerate() {
        let row = row?;
        let line = idx + 2;
        if row.triple_index >= dataset.triples.len() {
            return Err(Error::parse(line, format!("triple index {} out of range", row.triple_index)));
        }
        if parts.len() <= row.split_id {
            parts.resize_with(row.split_id + 1, Default::default);
        }
        match row.role.as_str() {
            "train" => parts[row.split_id].0.push(row.triple_index),
            "test" => parts[row.split_id].1.push(row.triple_index),
            other => return Err(Error::parse(line, format!("unknown role `{other}`"))),
        }
    }
    let user_counts = dataset.user_counts();
    let item_counts = dataset.item_counts();
    let forced_train = dataset
        .triples
        .iter()
        .filter(|t| user_counts[t.user] == 1 || item_counts[t.item] == 1)
        .count();
    Ok(parts
        .into_iter()
        .map(|(mut train, mut test)| {
            train.sort_unstable();
            test.sort_unstable();
            let mut users = vec![false; dataset.num_users];
            let mut items = vec![false; dataset.num_items];
            for &t in &test {
                users[dataset.triples[t].user] = true;
                items[dataset.triples[t].item] = true;
            }
            TrainTestSplit {
                train,
                test,
                forced_train,
                test_users_covered: users.iter().filter(|&&c| c).count(),
                test_items_covered: items.iter().filter(|&&c| c).count(),
            }
        })
        .collect())
}
