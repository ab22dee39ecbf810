//! Ranking metrics and evaluation methodologies.
//!
//! Two methodologies are supported. `observed` ranks only the items a user rated in the
//! test set, which measures rating-prediction quality. `full` ranks every item the user
//! did not rate in training, so unobserved items count as irrelevant.
//!
//! NDCG uses the raw test rating as gain with a `log2(i + 1)` discount. MAP and topic
//! coverage binarize ratings at `relevance_threshold`. Users without ground truth for a
//! metric are left out of that metric's average.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, Rating};
use crate::split::TrainTestSplit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Methodology {
    Observed,
    Full,
}

impl Methodology {
    pub fn name(&self) -> &'static str {
        match self {
            Methodology::Observed => "observed",
            Methodology::Full => "full",
        }
    }
}

impl fmt::Display for Methodology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Methodology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observed" | "observed-only" => Ok(Methodology::Observed),
            "full" => Ok(Methodology::Full),
            other => Err(Error::InvalidArgument(format!("unknown methodology `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ndcg,
    Map,
    TopicCoverage,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ndcg, Metric::Map, Metric::TopicCoverage];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Ndcg => "ndcg",
            Metric::Map => "map",
            Metric::TopicCoverage => "topic_coverage",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub methodology: Methodology,
    pub ks: Vec<usize>,
    pub relevance_threshold: Rating,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            methodology: Methodology::Full,
            ks: vec![3, 5, 10, 20],
            relevance_threshold: 4,
        }
    }
}

impl EvalConfig {
    /// Sorts and deduplicates `ks`, rejecting `k = 0`.
    pub fn normalized(mut self) -> Result<Self> {
        self.ks.sort_unstable();
        self.ks.dedup();
        if self.ks.is_empty() || self.ks[0] == 0 {
            return Err(Error::InvalidArgument("k values must be positive and non-empty".into()));
        }
        Ok(self)
    }

    pub fn max_k(&self) -> usize {
        self.ks.iter().copied().max().unwrap_or(0)
    }
}

/// NDCG@k with linear gains; `None` when the user has no positive test rating.
pub fn ndcg_at_k(ranked: &[usize], test: &BTreeMap<usize, Rating>, k: usize) -> Option<f64> {
    let discount = |pos: usize| 1.0 / ((pos + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(pos, item)| f64::from(test.get(item).copied().unwrap_or(0)) * discount(pos))
        .sum();
    let mut ideal: Vec<Rating> = test.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(pos, &r)| f64::from(r) * discount(pos))
        .sum();
    (idcg > 0.0).then(|| (dcg / idcg).min(1.0))
}

/// AP@k normalized by `min(|relevant|, k)`; `None` without relevant test items.
pub fn map_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, item) in ranked.iter().take(k).enumerate() {
        if relevant.contains(item) {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Some(sum / relevant.len().min(k) as f64)
}

/// Share of the genres of a user's relevant test items that relevant recommended items
/// in the top k cover; `None` when the relevant test items carry no genres.
pub fn topic_coverage_at_k(
    ranked: &[usize],
    relevant: &HashSet<usize>,
    genres: &[BTreeSet<String>],
    k: usize,
) -> Option<f64> {
    let target: BTreeSet<&String> = relevant.iter().flat_map(|&i| &genres[i]).collect();
    if target.is_empty() {
        return None;
    }
    let covered: BTreeSet<&String> = ranked
        .iter()
        .take(k)
        .filter(|i| relevant.contains(i))
        .flat_map(|&i| &genres[i])
        .filter(|g| target.contains(g))
        .collect();
    Some(covered.len() as f64 / target.len() as f64)
}

/// Per-user ground truth for one split.
#[derive(Debug, Clone)]
pub struct SplitTruth {
    /// Test ratings per user.
    pub test: Vec<BTreeMap<usize, Rating>>,
    /// Training items per user, sorted.
    pub train_items: Vec<Vec<usize>>,
    pub num_items: usize,
}

impl SplitTruth {
    pub fn new(dataset: &Dataset, split: &TrainTestSplit) -> Self {
        let mut test = vec![BTreeMap::new(); dataset.num_users];
        for &t in &split.test {
            let triple = dataset.triples[t];
            test[triple.user].insert(triple.item, triple.rating);
        }
        let mut train_items = vec![Vec::new(); dataset.num_users];
        for &t in &split.train {
            let triple = dataset.triples[t];
            train_items[triple.user].push(triple.item);
        }
        for items in &mut train_items {
            items.sort_unstable();
        }
        Self { test, train_items, num_items: dataset.num_items }
    }

    pub fn num_users(&self) -> usize {
        self.test.len()
    }

    /// Items a user's ranking is drawn from under `methodology`.
    pub fn universe(&self, user: usize, methodology: Methodology) -> Vec<usize> {
        match methodology {
            Methodology::Observed => self.test[user].keys().copied().collect(),
            Methodology::Full => {
                let train = &self.train_items[user];
                (0..self.num_items).filter(|i| train.binary_search(i).is_err()).collect()
            }
        }
    }

    pub fn relevant(&self, user: usize, threshold: Rating) -> HashSet<usize> {
        self.test[user]
            .iter()
            .filter(|&(_, &r)| r >= threshold)
            .map(|(&i, _)| i)
            .collect()
    }

    /// Users with at least one test rating.
    pub fn evaluable_users(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.test.len()).filter(|&u| !self.test[u].is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub users: usize,
}

#[derive(Debug, Default, Clone, Copy)]
struct Accumulator {
    sum: f64,
    users: usize,
}

impl Accumulator {
    fn add(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.sum += v;
            self.users += 1;
        }
    }

    fn finish(self) -> MetricValue {
        MetricValue {
            value: if self.users == 0 { 0.0 } else { self.sum / self.users as f64 },
            users: self.users,
        }
    }
}

pub type MetricSet = BTreeMap<Metric, MetricValue>;

/// Scores one strategy's rankings on one split for every configured k.
///
/// `recommendations[u]` must hold at least `max_k` items (or the whole universe) for
/// each user with test ratings, ranked best first.
pub fn evaluate_run(
    recommendations: &BTreeMap<usize, Vec<usize>>,
    truth: &SplitTruth,
    genres: &[BTreeSet<String>],
    config: &EvalConfig,
) -> Result<BTreeMap<usize, MetricSet>> {
    let mut acc: BTreeMap<usize, [Accumulator; 3]> =
        config.ks.iter().map(|&k| (k, [Accumulator::default(); 3])).collect();
    for user in truth.evaluable_users() {
        let ranked = recommendations.get(&user).ok_or(Error::MissingRecommendations(user))?;
        let relevant = truth.relevant(user, config.relevance_threshold);
        for (&k, slots) in acc.iter_mut() {
            slots[0].add(ndcg_at_k(ranked, &truth.test[user], k));
            slots[1].add(map_at_k(ranked, &relevant, k));
            slots[2].add(topic_coverage_at_k(ranked, &relevant, genres, k));
        }
    }
    Ok(acc
        .into_iter()
        .map(|(k, slots)| {
            let set = Metric::ALL.iter().zip(slots).map(|(&m, a)| (m, a.finish())).collect();
            (k, set)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation over splits; zero for a single split.
    pub std: f64,
    pub splits: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = if n == 0 { 0.0 } else { values.iter().sum::<f64>() / n as f64 };
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std, splits: n }
    }
}

/// Metric values per split, strategy and k, with aggregates over splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub methodology: Methodology,
    pub ks: Vec<usize>,
    pub relevance_threshold: Rating,
    pub splits: BTreeMap<usize, BTreeMap<String, BTreeMap<usize, MetricSet>>>,
    pub aggregates: BTreeMap<String, BTreeMap<usize, BTreeMap<Metric, Aggregate>>>,
}

impl EvalReport {
    pub fn new(config: &EvalConfig) -> Self {
        Self {
            methodology: config.methodology,
            ks: config.ks.clone(),
            relevance_threshold: config.relevance_threshold,
            splits: BTreeMap::new(),
            aggregates: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, split: usize, strategy: &str, results: BTreeMap<usize, MetricSet>) {
        self.splits
            .entry(split)
            .or_default()
            .insert(strategy.to_string(), results);
        self.recompute_aggregates();
    }

    fn recompute_aggregates(&mut self) {
        let mut values: BTreeMap<String, BTreeMap<usize, BTreeMap<Metric, Vec<f64>>>> = BTreeMap::new();
        for per_strategy in self.splits.values() {
            for (strategy, per_k) in per_strategy {
                for (&k, metrics) in per_k {
                    for (&metric, v) in metrics {
                        values
                            .entry(strategy.clone())
                            .or_default()
                            .entry(k)
                            .or_default()
                            .entry(metric)
                            .or_default()
                            .push(v.value);
                    }
                }
            }
        }
        self.aggregates = values
            .into_iter()
            .map(|(s, per_k)| {
                let per_k = per_k
                    .into_iter()
                    .map(|(k, per_m)| (k, per_m.into_iter().map(|(m, v)| (m, Aggregate::of(&v))).collect()))
                    .collect();
                (s, per_k)
            })
            .collect();
    }

    pub fn mean(&self, strategy: &str, k: usize, metric: Metric) -> Option<f64> {
        Some(self.aggregates.get(strategy)?.get(&k)?.get(&metric)?.mean)
    }

    /// Flat rows `(split, strategy, k, metric, value)` in report order.
    pub fn rows(&self) -> Vec<(usize, &str, usize, Metric, f64)> {
        let mut rows = Vec::new();
        for (&split, per_strategy) in &self.splits {
            for (strategy, per_k) in per_strategy {
                for (&k, metrics) in per_k {
                    for (&metric, v) in metrics {
                        rows.push((split, strategy.as_str(), k, metric, v.value));
                    }
                }
            }
        }
        rows
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `split,strategy,k,metric,value` rows.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["split", "strategy", "k", "metric", "value"])?;
        for (split, strategy, k, metric, value) in self.rows() {
            w.write_record([split.to_string(), strategy.to_string(), k.to_string(), metric.name().to_string(), value.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<report csv>", e))
    }
}
