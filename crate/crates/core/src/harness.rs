//! End-to-end experiment runner: ingest → subsample → split → factorize → select → evaluate.
//!
//! An experiment is described by one JSON document ([`ExperimentConfig`]). Every field
//! has a default except the ratings path and the seed. Runs are deterministic: the same
//! data bytes and configuration produce byte-identical report JSON.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageExt};
use crate::evaluate::{evaluate_run, EvalConfig, EvalReport, Methodology, SplitTruth};
use crate::factorize::{item_means, train_wnmf, FactorModel, WnmfParams};
use crate::ingest::{self, Dataset, RatingFormat};
use crate::select::{Selection, StrategyKind, StrategySpec};
use crate::split::{make_splits, SplitSpec, TrainTestSplit};
use crate::utility::{ObservedProfile, RiskConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub ratings: PathBuf,
    #[serde(default = "default_format")]
    pub format: RatingFormat,
    #[serde(default)]
    pub genres: Option<PathBuf>,
}

fn default_format() -> RatingFormat {
    RatingFormat::MovieLens
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsampleConfig {
    pub users: usize,
    pub items: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub num_splits: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let spec = SplitSpec::default();
        Self { test_fraction: spec.test_fraction, num_splits: spec.num_splits }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FactorConfig {
    pub rank: usize,
    pub lambda: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for FactorConfig {
    fn default() -> Self {
        let p = WnmfParams::default();
        Self { rank: p.rank, lambda: p.lambda, max_iter: p.max_iter, tol: p.tol }
    }
}

impl FactorConfig {
    pub fn params(&self, seed: u64) -> WnmfParams {
        WnmfParams { rank: self.rank, lambda: self.lambda, max_iter: self.max_iter, tol: self.tol, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub name: String,
    pub strategy: StrategyKind,
}

impl StrategyConfig {
    pub fn greedy(name: &str, risk: RiskConfig) -> Self {
        Self { name: name.to_string(), strategy: StrategyKind::GreedyRisk(risk) }
    }

    pub fn pointwise(name: &str) -> Self {
        Self { name: name.to_string(), strategy: StrategyKind::PointwiseTopk }
    }

    /// Risk-seeking 3R, risk-neutral MOD, risk-averse SUB and the point-wise PMF baseline.
    pub fn standard_set() -> Vec<Self> {
        vec![
            Self::greedy("3R", RiskConfig::new(-1.0)),
            Self::greedy("MOD", RiskConfig::new(0.0)),
            Self::greedy("SUB", RiskConfig::new(1.0)),
            Self::pointwise("PMF"),
        ]
    }

    /// Table names used for the same strategies in published result tables.
    pub fn aliases(&self) -> Vec<String> {
        match self.name.as_str() {
            "3R" => vec!["RSR".into()],
            "SUB" => vec!["SCA".into()],
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    #[serde(default = "default_methodologies")]
    pub methodologies: Vec<Methodology>,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default = "default_threshold")]
    pub relevance_threshold: u8,
}

fn default_methodologies() -> Vec<Methodology> {
    vec![Methodology::Full]
}

fn default_ks() -> Vec<usize> {
    EvalConfig::default().ks
}

fn default_threshold() -> u8 {
    EvalConfig::default().relevance_threshold
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            methodologies: default_methodologies(),
            ks: default_ks(),
            relevance_threshold: default_threshold(),
        }
    }
}

impl EvaluationConfig {
    pub fn for_methodology(&self, methodology: Methodology) -> Result<EvalConfig> {
        EvalConfig {
            methodology,
            ks: self.ks.clone(),
            relevance_threshold: self.relevance_threshold,
        }
        .normalized()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub seed: u64,
    #[serde(default)]
    pub subsample: Option<SubsampleConfig>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub factorization: FactorConfig,
    #[serde(default = "StrategyConfig::standard_set")]
    pub strategies: Vec<StrategyConfig>,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    /// Directory for report, curves and recommendation dumps; nothing is written when unset.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(ratings: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            data: DataConfig { ratings: ratings.into(), format: default_format(), genres: None },
            seed,
            subsample: None,
            split: SplitConfig::default(),
            factorization: FactorConfig::default(),
            strategies: StrategyConfig::standard_set(),
            evaluation: EvaluationConfig::default(),
            output: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            test_fraction: self.split.test_fraction,
            num_splits: self.split.num_splits,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.split_spec().validate()?;
        if self.strategies.is_empty() {
            return Err(Error::InvalidArgument("no strategies configured".into()));
        }
        let mut names: Vec<&str> = self.strategies.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("strategy names must be unique".into()));
        }
        for s in &self.strategies {
            StrategySpec { kind: s.strategy, k: 1 }.validate()?;
        }
        if self.evaluation.methodologies.is_empty() {
            return Err(Error::InvalidArgument("no evaluation methodology configured".into()));
        }
        for &m in &self.evaluation.methodologies {
            self.evaluation.for_methodology(m)?;
        }
        if self.factorization.rank == 0 {
            return Err(Error::InvalidArgument("factorization rank must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loads ratings and optional genres, then applies the configured subsample.
pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    let mut dataset = ingest::parse_ratings(&config.data.ratings, config.data.format).stage("ingest")?;
    if let Some(genres) = &config.data.genres {
        ingest::parse_genres(&mut dataset, genres).stage("ingest")?;
    }
    match config.subsample {
        Some(s) => ingest::subsample(&dataset, s.users, s.items).stage("subsample"),
        None => Ok(dataset),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub users: usize,
    pub items: usize,
    pub ratings: usize,
    pub duplicates: usize,
    pub rating_histogram: Vec<usize>,
}

impl DatasetSummary {
    pub fn of(dataset: &Dataset) -> Self {
        Self {
            users: dataset.num_users,
            items: dataset.num_items,
            ratings: dataset.triples.len(),
            duplicates: dataset.duplicates,
            rating_histogram: dataset.rating_histogram().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: usize,
    pub train: usize,
    pub test: usize,
    pub forced_train: usize,
    pub test_users_covered: usize,
    pub test_items_covered: usize,
    pub factorization_iterations: usize,
    pub final_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub name: String,
    pub aliases: Vec<String>,
    pub strategy: StrategyKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub dataset: DatasetSummary,
    pub strategies: Vec<StrategySummary>,
    pub splits: Vec<SplitSummary>,
    pub reports: BTreeMap<Methodology, EvalReport>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn report(&self, methodology: Methodology) -> Option<&EvalReport> {
        self.reports.get(&methodology)
    }
}

/// Everything needed to recommend for one split.
pub struct SplitContext<'d> {
    pub dataset: &'d Dataset,
    pub split: &'d TrainTestSplit,
    pub model: FactorModel,
    pub mu: Vec<f64>,
    pub truth: SplitTruth,
    profiles: Vec<ObservedProfile>,
}

impl<'d> SplitContext<'d> {
    pub fn train(dataset: &'d Dataset, split: &'d TrainTestSplit, params: &WnmfParams) -> Result<Self> {
        let observed: Vec<_> = split.train.iter().map(|&t| dataset.triples[t]).collect();
        let model = train_wnmf(&observed, dataset.num_users, dataset.num_items, params).stage("factorize")?;
        Ok(Self::with_model(dataset, split, model))
    }

    pub fn with_model(dataset: &'d Dataset, split: &'d TrainTestSplit, model: FactorModel) -> Self {
        let observed: Vec<_> = split.train.iter().map(|&t| dataset.triples[t]).collect();
        let mu = item_means(&observed, dataset.num_items);
        let truth = SplitTruth::new(dataset, split);
        let profiles = split
            .train_by_user(dataset)
            .iter()
            .map(|triples| ObservedProfile::from_triples(dataset, triples))
            .collect();
        Self { dataset, split, model, mu, truth, profiles }
    }

    pub fn profile(&self, user: usize) -> &ObservedProfile {
        &self.profiles[user]
    }

    /// Recommendations of `strategy` for `user` over the methodology's universe.
    pub fn recommend(&self, user: usize, strategy: &StrategySpec, methodology: Methodology) -> Result<Selection> {
        let candidates = self.truth.universe(user, methodology);
        strategy.recommend(user, &self.profiles[user], &candidates, &self.model, &self.mu)
    }

    /// Recommendations for every user with test ratings, in user order.
    pub fn recommend_all(&self, strategy: &StrategySpec, methodology: Methodology) -> Result<BTreeMap<usize, Selection>> {
        self.truth
            .evaluable_users()
            .map(|u| Ok((u, self.recommend(u, strategy, methodology)?)))
            .collect()
    }
}

/// Tracks files written by a run so they can be removed if a later stage fails.
struct OutputGuard {
    written: Vec<PathBuf>,
    created_dirs: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    fn new() -> Self {
        Self { written: Vec::new(), created_dirs: Vec::new(), committed: false }
    }

    fn ensure_dir(&mut self, dir: &Path) -> Result<()> {
        if !dir.exists() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            self.created_dirs.push(dir.to_path_buf());
        }
        Ok(())
    }

    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        for d in self.created_dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate().stage("config")?;
    let dataset = load_dataset(config)?;
    run_on_dataset(config, &dataset)
}

/// Runs the configured protocol on an already loaded dataset.
pub fn run_on_dataset(config: &ExperimentConfig, dataset: &Dataset) -> Result<ExperimentReport> {
    config.validate().stage("config")?;
    let splits = make_splits(dataset, &config.split_spec()).stage("split")?;
    let eval_configs: Vec<EvalConfig> = config
        .evaluation
        .methodologies
        .iter()
        .map(|&m| config.evaluation.for_methodology(m))
        .collect::<Result<_>>()
        .stage("config")?;

    let mut guard = OutputGuard::new();
    if let Some(dir) = &config.output {
        guard.ensure_dir(dir).stage("output")?;
        guard.ensure_dir(&dir.join("recommendations")).stage("output")?;
    }

    let mut reports: BTreeMap<Methodology, EvalReport> =
        eval_configs.iter().map(|c| (c.methodology, EvalReport::new(c))).collect();
    let mut split_summaries = Vec::with_capacity(splits.len());

    for (split_id, split) in splits.iter().enumerate() {
        log::info!("split {split_id}: {} train / {} test", split.train.len(), split.test.len());
        let params = config.factorization.params(config.seed.wrapping_add(split_id as u64));
        let ctx = SplitContext::train(dataset, split, &params)?;
        split_summaries.push(SplitSummary {
            split: split_id,
            train: split.train.len(),
            test: split.test.len(),
            forced_train: split.forced_train,
            test_users_covered: split.test_users_covered,
            test_items_covered: split.test_items_covered,
            factorization_iterations: ctx.model.iterations(),
            final_objective: *ctx.model.objective_trace.last().unwrap_or(&0.0),
        });

        for eval in &eval_configs {
            for strategy in &config.strategies {
                let spec = StrategySpec { kind: strategy.strategy, k: eval.max_k() };
                let selections = ctx.recommend_all(&spec, eval.methodology).stage("select")?;
                let ranked: BTreeMap<usize, Vec<usize>> =
                    selections.iter().map(|(&u, s)| (u, s.items().to_vec())).collect();
                let results = evaluate_run(&ranked, &ctx.truth, &dataset.genres, eval).stage("evaluate")?;
                reports
                    .get_mut(&eval.methodology)
                    .expect("report per methodology")
                    .insert(split_id, &strategy.name, results);
                if let Some(dir) = &config.output {
                    let path = dir
                        .join("recommendations")
                        .join(format!("split{split_id}_{}_{}.csv", eval.methodology, strategy.name));
                    let mut buf = Vec::new();
                    write_recommendations(dataset, &selections, &mut buf).stage("output")?;
                    guard.write(path, &buf).stage("output")?;
                }
            }
        }
    }

    let report = ExperimentReport {
        seed: config.seed,
        dataset: DatasetSummary::of(dataset),
        strategies: config
            .strategies
            .iter()
            .map(|s| StrategySummary { name: s.name.clone(), aliases: s.aliases(), strategy: s.strategy })
            .collect(),
        splits: split_summaries,
        reports,
    };

    if let Some(dir) = &config.output {
        guard.write(dir.join("report.json"), report.to_json()?.as_bytes()).stage("output")?;
        for (m, r) in &report.reports {
            let mut buf = Vec::new();
            r.write_csv(&mut buf).stage("output")?;
            guard.write(dir.join(format!("curves_{m}.csv")), &buf).stage("output")?;
            let mut buf = Vec::new();
            write_summary_csv(r, &mut buf).stage("output")?;
            guard.write(dir.join(format!("summary_{m}.csv")), &buf).stage("output")?;
        }
    }
    guard.committed = true;
    Ok(report)
}

/// Writes `user,rank,item,score` rows with original user and item ids and 1-based ranks.
pub fn write_recommendations<W: Write>(
    dataset: &Dataset,
    selections: &BTreeMap<usize, Selection>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user", "rank", "item", "score"])?;
    for (&user, sel) in selections {
        let uid = dataset.users.original(user).unwrap_or(user as u64);
        for (rank, (&item, score)) in sel.items().iter().zip(&sel.scores).enumerate() {
            let iid = dataset.items.original(item).unwrap_or(item as u64);
            w.write_record([uid.to_string(), (rank + 1).to_string(), iid.to_string(), score.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<recommendations>", e))
}

/// Reads a recommendation dump back into dense-index rankings.
pub fn read_recommendations<R: std::io::Read>(dataset: &Dataset, input: R) -> Result<BTreeMap<usize, Vec<usize>>> {
    #[derive(Deserialize)]
    struct Row {
        user: u64,
        rank: usize,
        item: u64,
    }
    let mut by_user: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    let mut reader = csv::Reader::from_reader(input);
    for (idx, row) in reader.deserialize::<Row>().enumerate() {
        let row = row?;
        let line = idx + 2;
        let user = dataset
            .users
            .dense(row.user)
            .ok_or_else(|| Error::parse(line, format!("unknown user {}", row.user)))?;
        let item = dataset
            .items
            .dense(row.item)
            .ok_or_else(|| Error::parse(line, format!("unknown item {}", row.item)))?;
        by_user.entry(user).or_default().push((row.rank, item));
    }
    Ok(by_user
        .into_iter()
        .map(|(u, mut rows)| {
            rows.sort_unstable();
            (u, rows.into_iter().map(|(_, i)| i).collect())
        })
        .collect())
}

/// Writes `strategy,k,metric,mean,std` rows from the report aggregates.
pub fn write_summary_csv<W: Write>(report: &EvalReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["strategy", "k", "metric", "mean", "std"])?;
    for (strategy, per_k) in &report.aggregates {
        for (k, per_m) in per_k {
            for (metric, agg) in per_m {
                w.write_record([strategy.clone(), k.to_string(), metric.name().to_string(), agg.mean.to_string(), agg.std.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<summary csv>", e))
}
