use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use riskrank::evaluate::{evaluate_run, EvalConfig, Methodology, SplitTruth};
use riskrank::factorize::{load_model, save_model, train_wnmf, WnmfParams};
use riskrank::harness::{
    self, DatasetSummary, ExperimentConfig, ExperimentReport, SplitContext, StrategyConfig, SubsampleConfig,
};
use riskrank::ingest::{self, Dataset, RatingFormat};
use riskrank::preference::SimilarityFn;
use riskrank::select::{StrategyKind, StrategySpec};
use riskrank::split::{make_splits, read_splits_csv, write_splits_csv, SplitSpec, TrainTestSplit};
use riskrank::utility::{MuMode, RiskConfig};

#[derive(Parser)]
#[command(name = "riskrank", version, about = "Risk-aware top-k ranking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a ratings file and print a dataset summary.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate seeded train/test splits as CSV.
    Split {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the factor model on all ratings or on one split's training part.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        select: SplitSelect,
        #[command(flatten)]
        factor: FactorArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Model directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Produce top-k recommendations with a trained model.
    Recommend {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        select: SplitSelect,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        strategy: StrategyArgs,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long = "eval", default_value = "full")]
        methodology: Methodology,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a recommendation CSV against one split's test ratings.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        select: SplitSelect,
        #[arg(long)]
        recs: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "3,5,10,20")]
        ks: Vec<usize>,
        #[arg(long = "eval", default_value = "full")]
        methodology: Methodology,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full split → factorize → select → evaluate protocol.
    Experiment(ExperimentArgs),
    /// Write metric-vs-k rows from a report JSON.
    Curve {
        #[arg(long)]
        report: PathBuf,
        #[arg(long = "eval")]
        methodology: Option<Methodology>,
        /// Emit per-strategy means and standard deviations instead of per-split rows.
        #[arg(long)]
        summary: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "movielens")]
    format: RatingFormat,
    #[arg(long)]
    genres: Option<PathBuf>,
    /// Keep the top N users × top M items by rating count, e.g. 500x500.
    #[arg(long, value_parser = parse_subsample)]
    subsample: Option<SubsampleConfig>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, default_value_t = 5)]
    splits: usize,
    #[arg(long, default_value_t = 0.05)]
    test_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SplitSelect {
    /// Splits CSV written by `split`; without it all ratings count as training data.
    #[arg(long)]
    split_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    split_id: usize,
}

#[derive(Args)]
struct FactorArgs {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct StrategyArgs {
    /// Risk parameter; omit for the point-wise baseline.
    #[arg(long, allow_negative_numbers = true)]
    a: Option<f64>,
    #[arg(long, default_value = "cosine")]
    similarity: String,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value = "choice-items")]
    mu_mode: MuMode,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment config; command-line flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    format: Option<RatingFormat>,
    #[arg(long)]
    genres: Option<PathBuf>,
    #[arg(long, value_parser = parse_subsample)]
    subsample: Option<SubsampleConfig>,
    #[arg(long)]
    splits: Option<usize>,
    #[arg(long)]
    test_frac: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    factor: FactorArgs,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Single cut-off; shorthand for `--ks K`.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long = "eval", value_delimiter = ',')]
    methodologies: Option<Vec<Methodology>>,
    /// Similarity for every greedy strategy.
    #[arg(long)]
    similarity: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    mu_mode: Option<MuMode>,
    /// Run a single greedy strategy with this risk parameter instead of the standard set.
    #[arg(long, allow_negative_numbers = true)]
    a: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_subsample(s: &str) -> Result<SubsampleConfig, String> {
    let (n, m) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected NxM, got `{s}`"))?;
    let users = n.trim().parse().map_err(|_| format!("bad user count `{n}`"))?;
    let items = m.trim().parse().map_err(|_| format!("bad item count `{m}`"))?;
    Ok(SubsampleConfig { users, items })
}

fn parse_similarity(name: &str, gamma: Option<f64>) -> Result<SimilarityFn> {
    let f: SimilarityFn = name.parse()?;
    Ok(match (f, gamma) {
        (SimilarityFn::Rbf { .. }, Some(g)) => SimilarityFn::rbf(g)?,
        (f, _) => f,
    })
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    let mut ds = ingest::parse_ratings(&args.data, args.format)?;
    if let Some(g) = &args.genres {
        let matched = ingest::parse_genres(&mut ds, g)?;
        log::info!("genres attached to {matched} items");
    }
    if let Some(s) = args.subsample {
        ds = ingest::subsample(&ds, s.users, s.items)?;
    }
    Ok(ds)
}

fn load_split(ds: &Dataset, select: &SplitSelect) -> Result<TrainTestSplit> {
    let Some(path) = &select.split_file else {
        return Ok(TrainTestSplit::all_train(ds));
    };
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut splits = read_splits_csv(ds, file)?;
    if select.split_id >= splits.len() {
        bail!("split {} not found ({} splits in {})", select.split_id, splits.len(), path.display());
    }
    Ok(splits.swap_remove(select.split_id))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn factor_params(args: &FactorArgs, seed: u64) -> WnmfParams {
    let d = WnmfParams::default();
    WnmfParams {
        rank: args.d.unwrap_or(d.rank),
        lambda: args.lambda.unwrap_or(d.lambda),
        max_iter: args.max_iter.unwrap_or(d.max_iter),
        tol: args.tol.unwrap_or(d.tol),
        seed,
    }
}

fn strategy_kind(args: &StrategyArgs) -> Result<StrategyKind> {
    Ok(match args.a {
        Some(a) => StrategyKind::GreedyRisk(
            RiskConfig::new(a)
                .with_mu_mode(args.mu_mode)
                .with_similarity(parse_similarity(&args.similarity, args.gamma)?),
        ),
        None => StrategyKind::PointwiseTopk,
    })
}

fn experiment_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let data = args.data.clone().context("--data is required without --config")?;
            let seed = args.seed.context("--seed is required without --config")?;
            ExperimentConfig::new(data, seed)
        }
    };
    if let Some(d) = &args.data {
        config.data.ratings = d.clone();
    }
    if let Some(f) = args.format {
        config.data.format = f;
    }
    if let Some(g) = &args.genres {
        config.data.genres = Some(g.clone());
    }
    if let Some(s) = args.subsample {
        config.subsample = Some(s);
    }
    if let Some(n) = args.splits {
        config.split.num_splits = n;
    }
    if let Some(f) = args.test_frac {
        config.split.test_fraction = f;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let f = &mut config.factorization;
    f.rank = args.factor.d.unwrap_or(f.rank);
    f.lambda = args.factor.lambda.unwrap_or(f.lambda);
    f.max_iter = args.factor.max_iter.unwrap_or(f.max_iter);
    f.tol = args.factor.tol.unwrap_or(f.tol);
    if let Some(ks) = &args.ks {
        config.evaluation.ks = ks.clone();
    }
    if let Some(k) = args.k {
        config.evaluation.ks = vec![k];
    }
    if let Some(m) = &args.methodologies {
        config.evaluation.methodologies = m.clone();
    }
    if let Some(a) = args.a {
        config.strategies = vec![StrategyConfig::greedy(&format!("a={a}"), RiskConfig::new(a))];
    }
    for s in &mut config.strategies {
        if let StrategyKind::GreedyRisk(risk) = &mut s.strategy {
            if let Some(name) = &args.similarity {
                risk.similarity = parse_similarity(name, args.gamma)?;
            } else if let (SimilarityFn::Rbf { .. }, Some(g)) = (risk.similarity, args.gamma) {
                risk.similarity = SimilarityFn::rbf(g)?;
            }
            if let Some(m) = args.mu_mode {
                risk.mu_mode = m;
            }
        }
    }
    if let Some(out) = &args.out {
        config.output = Some(out.clone());
    }
    config.validate()?;
    Ok(config)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest { data, out } => {
            let ds = load_data(&data).context("[ingest]")?;
            let summary = DatasetSummary::of(&ds);
            let mut w = output(out.as_deref()).context("[ingest]")?;
            writeln!(w, "{}", serde_json::to_string_pretty(&summary)?)?;
        }
        Command::Split { data, split, out } => {
            let ds = load_data(&data).context("[ingest]")?;
            let spec = SplitSpec { test_fraction: split.test_frac, num_splits: split.splits, seed: split.seed };
            let splits = make_splits(&ds, &spec).context("[split]")?;
            let w = output(Some(&out)).context("[split]")?;
            write_splits_csv(&splits, w).context("[split]")?;
            for (i, s) in splits.iter().enumerate() {
                eprintln!("split {i}: {} train, {} test", s.train.len(), s.test.len());
            }
        }
        Command::Train { data, select, factor, seed, out } => {
            let ds = load_data(&data).context("[ingest]")?;
            let split = load_split(&ds, &select).context("[split]")?;
            let observed: Vec<_> = split.train.iter().map(|&t| ds.triples[t]).collect();
            let params = factor_params(&factor, seed);
            let model = train_wnmf(&observed, ds.num_users, ds.num_items, &params).context("[factorize]")?;
            save_model(&model, &out).context("[factorize]")?;
            eprintln!(
                "trained rank {} in {} sweeps, objective {:.4}",
                model.rank(),
                model.iterations(),
                model.objective_trace.last().copied().unwrap_or(0.0)
            );
        }
        Command::Recommend { data, select, model, strategy, k, methodology, out } => {
            let ds = load_data(&data).context("[ingest]")?;
            let split = load_split(&ds, &select).context("[split]")?;
            let model = load_model(&model).context("[factorize]")?;
            if model.num_users() != ds.num_users || model.num_items() != ds.num_items {
                bail!(
                    "[factorize] model is {}x{} but data is {}x{}",
                    model.num_users(),
                    model.num_items(),
                    ds.num_users,
                    ds.num_items
                );
            }
            let spec = StrategySpec { kind: strategy_kind(&strategy).context("[select]")?, k };
            spec.validate().context("[select]")?;
            let ctx = SplitContext::with_model(&ds, &split, model);
            let users: Vec<usize> = match methodology {
                Methodology::Full if split.test.is_empty() => (0..ds.num_users).collect(),
                _ => ctx.truth.evaluable_users().collect(),
            };
            let mut selections = BTreeMap::new();
            for u in users {
                selections.insert(u, ctx.recommend(u, &spec, methodology).context("[select]")?);
            }
            let w = output(out.as_deref()).context("[recommend]")?;
            harness::write_recommendations(&ds, &selections, w).context("[recommend]")?;
        }
        Command::Evaluate { data, select, recs, ks, methodology, out } => {
            let ds = load_data(&data).context("[ingest]")?;
            if select.split_file.is_none() {
                bail!("[evaluate] --split-file is required");
            }
            let split = load_split(&ds, &select).context("[split]")?;
            let truth = SplitTruth::new(&ds, &split);
            let file = File::open(&recs).with_context(|| format!("[evaluate] opening {}", recs.display()))?;
            let ranked = harness::read_recommendations(&ds, file).context("[evaluate]")?;
            let config = EvalConfig { methodology, ks, ..Default::default() }.normalized().context("[evaluate]")?;
            let results = evaluate_run(&ranked, &truth, &ds.genres, &config).context("[evaluate]")?;
            let mut w = output(out.as_deref()).context("[evaluate]")?;
            writeln!(w, "{}", serde_json::to_string_pretty(&results)?)?;
        }
        Command::Experiment(args) => {
            let config = experiment_config(&args).context("[config]")?;
            let report = harness::run_experiment(&config).context("[experiment]")?;
            print_summary(&report);
            if config.output.is_none() {
                println!("{}", report.to_json()?);
            }
        }
        Command::Curve { report, methodology, summary, out } => {
            let text = fs::read_to_string(&report).with_context(|| format!("[curve] reading {}", report.display()))?;
            let report: ExperimentReport = serde_json::from_str(&text).context("[curve] parsing report")?;
            let methodology = match methodology {
                Some(m) => m,
                None => *report.reports.keys().next().context("[curve] report has no results")?,
            };
            let eval = report
                .report(methodology)
                .with_context(|| format!("[curve] report has no `{methodology}` results"))?;
            let w = output(out.as_deref()).context("[curve]")?;
            if summary {
                harness::write_summary_csv(eval, w).context("[curve]")?;
            } else {
                eval.write_csv(w).context("[curve]")?;
            }
        }
    }
    Ok(())
}

fn print_summary(report: &ExperimentReport) {
    let d = &report.dataset;
    eprintln!("{} users, {} items, {} ratings, {} splits", d.users, d.items, d.ratings, report.splits.len());
    for (m, r) in &report.reports {
        for (strategy, per_k) in &r.aggregates {
            for (k, per_m) in per_k {
                let cells: Vec<String> = per_m
                    .iter()
                    .map(|(metric, agg)| format!("{}={:.4}±{:.4}", metric.name(), agg.mean, agg.std))
                    .collect();
                eprintln!("{m:>8} {strategy:>6} @{k:<3} {}", cells.join(" "));
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
