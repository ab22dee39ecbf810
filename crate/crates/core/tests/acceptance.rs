//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Criterion 8 needs MovieLens data. It looks in `$RISKRANK_MOVIELENS_DIR`, otherwise
//! `data/ml-1m`, then `data/ml-100k` under the workspace root. Each directory must hold
//! `ratings.dat` and `movies.dat` in `::`-separated form.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use riskrank::evaluate::{map_at_k, ndcg_at_k, topic_coverage_at_k, Methodology, Metric};
use riskrank::factorize::{train_wnmf, FactorModel, WnmfParams};
use riskrank::harness::{run_experiment, ExperimentConfig, SubsampleConfig};
use riskrank::preference::{lottery, Lottery, RankedChoice, SimilarityFn};
use riskrank::select::{brute_force_select, brute_force_select_z, greedy_select, greedy_select_z, UserProblem};
use riskrank::utility::{MuMode, ObservedProfile, RiskConfig};

const INSTANCES: u64 = 100;
const OBSERVED: usize = 6;
const CANDIDATES: usize = 8;
const DIM: usize = 4;
const BOUND: f64 = 1.0 - 1.0 / std::f64::consts::E;
const FIXTURE: &str = "tests/fixtures/known_counterexamples.json";

struct Instance {
    model: FactorModel,
    profile: ObservedProfile,
    mu: Vec<f64>,
    candidates: Vec<usize>,
}

impl Instance {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = OBSERVED + CANDIDATES;
        let model = FactorModel {
            users: Array2::from_shape_simple_fn((1, DIM), || rng.gen_range(0.0..1.0)),
            items: Array2::from_shape_simple_fn((n, DIM), || rng.gen_range(0.0f64..1.0).powi(3)),
            lambda: 0.0,
            seed,
            objective_trace: vec![],
        };
        let profile = ObservedProfile::new((0..OBSERVED).map(|i| (i, rng.gen_range(1..=5) as f64)).collect());
        let mu = (0..n).map(|_| rng.gen_range(1.0..5.0)).collect();
        Self { model, profile, mu, candidates: (OBSERVED..n).collect() }
    }

    fn problem<'a>(&'a self, cfg: &'a RiskConfig) -> UserProblem<'a> {
        UserProblem::new(&self.profile, self.candidates.iter().copied(), &self.model, cfg, &self.mu).unwrap()
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn subset(mask: u32, items: &[usize]) -> Vec<usize> {
    (0..items.len()).filter(|b| mask & (1 << b) != 0).map(|b| items[b]).collect()
}

fn curvature() -> Outcome {
    let start = Instant::now();
    let full = (1u32 << CANDIDATES) - 1;
    let mut checks = 0usize;
    let mut worst = [0.0f64; 3];
    for seed in 0..INSTANCES {
        let inst = Instance::new(seed);
        for (slot, a) in [1.0, 0.0, -1.0].into_iter().enumerate() {
            let cfg = RiskConfig::new(a);
            let p = inst.problem(&cfg);
            let z: Vec<f64> = (0..=full).map(|m| p.utility(&subset(m, &inst.candidates))).collect();
            for b in 0..=full {
                // every A ⊆ B via sub-mask enumeration
                let mut sub = b;
                loop {
                    for x in (0..CANDIDATES).filter(|x| b & (1 << x) == 0) {
                        let bit = 1u32 << x;
                        let gain_a = z[(sub | bit) as usize] - z[sub as usize];
                        let gain_b = z[(b | bit) as usize] - z[b as usize];
                        let violation = match slot {
                            0 => gain_b - gain_a,
                            1 => (gain_a - gain_b).abs(),
                            _ => gain_a - gain_b,
                        };
                        worst[slot] = worst[slot].max(violation);
                        checks += 1;
                    }
                    if sub == 0 {
                        break;
                    }
                    sub = (sub - 1) & b;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst.iter().all(|&w| w <= 1e-9) && elapsed < Duration::from_secs(60);
    Outcome::new(
        pass,
        format!(
            "{checks} A⊆B checks; max violation a=+1 {:.2e}, a=0 {:.2e}, a=-1 {:.2e} (slack 1e-9); {:.1?}",
            worst[0], worst[1], worst[2], elapsed
        ),
    )
}

fn greedy_z_bound() -> Outcome {
    let start = Instant::now();
    let mut min_ratio = f64::INFINITY;
    let mut max_neutral_gap = 0.0f64;
    for seed in 0..INSTANCES {
        let inst = Instance::new(seed);
        let averse = RiskConfig::new(1.0);
        let p = inst.problem(&averse);
        let greedy = p.utility(greedy_select_z(&p, 3).items());
        let best = brute_force_select_z(&p, 3).unwrap().value;
        min_ratio = min_ratio.min(greedy / best);

        let neutral = RiskConfig::new(0.0);
        let p = inst.problem(&neutral);
        let greedy = p.utility(greedy_select_z(&p, 3).items());
        let best = brute_force_select_z(&p, 3).unwrap().value;
        max_neutral_gap = max_neutral_gap.max((best - greedy).abs());
    }
    let elapsed = start.elapsed();
    let pass = min_ratio >= BOUND && max_neutral_gap <= 1e-9 && elapsed < Duration::from_secs(60);
    Outcome::new(
        pass,
        format!(
            "a=+1 min greedy/opt {min_ratio:.6} (bound {BOUND:.6}); a=0 max |opt-greedy| {max_neutral_gap:.2e}; {elapsed:.1?}"
        ),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Counterexample {
    a: f64,
    seed: u64,
    ratio: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CounterexampleFixture {
    k: usize,
    bound: f64,
    instances: Vec<Counterexample>,
}

fn full_objective_quality() -> Outcome {
    let k = 3;
    let mut below = Vec::new();
    let mut ratios = BTreeMap::new();
    for a in [-1.0, 0.0, 1.0] {
        let mut sum = 0.0;
        for seed in 0..INSTANCES {
            let inst = Instance::new(seed);
            let cfg = RiskConfig::new(a);
            let p = inst.problem(&cfg);
            let greedy = p.objective(&greedy_select(&p, k).choice);
            let best = brute_force_select(&p, k).unwrap().value;
            let ratio = if best > 0.0 { greedy / best } else { 1.0 };
            sum += ratio;
            if ratio < BOUND {
                below.push(Counterexample { a, seed, ratio });
            }
        }
        ratios.insert(format!("{a:+}"), sum / INSTANCES as f64);
    }
    let mean_all = ratios.values().sum::<f64>() / ratios.len() as f64;

    let fixture_path = Path::new(env!("CARGO_MANIFEST_DIR")).join(FIXTURE);
    if std::env::var_os("RISKRANK_WRITE_FIXTURES").is_some() {
        let fixture = CounterexampleFixture { k, bound: BOUND, instances: below.clone() };
        std::fs::write(&fixture_path, serde_json::to_string_pretty(&fixture).unwrap() + "\n").unwrap();
    }
    let known: Vec<Counterexample> = std::fs::read_to_string(&fixture_path)
        .ok()
        .and_then(|t| serde_json::from_str::<CounterexampleFixture>(&t).ok())
        .map(|f| f.instances)
        .unwrap_or_default();
    let key = |c: &Counterexample| (c.a.to_bits(), c.seed);
    let known_keys: BTreeSet<_> = known.iter().map(key).collect();
    let found_keys: BTreeSet<_> = below.iter().map(key).collect();
    let unexpected = found_keys.difference(&known_keys).count();

    let per_a: Vec<String> = ratios.iter().map(|(a, r)| format!("a={a} {r:.6}")).collect();
    Outcome::new(
        mean_all >= BOUND && unexpected == 0,
        format!(
            "mean greedy/opt F ratio {} (bound {BOUND:.6}); {} below bound, {} recorded in fixture, {unexpected} unrecorded",
            per_a.join(", "),
            below.len(),
            known.len()
        ),
    )
}

fn neutral_ordering() -> Outcome {
    let cfg = RiskConfig::new(0.0).with_mu_mode(MuMode::None);
    let mut mismatches = 0;
    for seed in 0..INSTANCES {
        let inst = Instance::new(seed);
        let p = inst.problem(&cfg);
        let greedy = greedy_select_z(&p, CANDIDATES).choice.into_items();
        let mut singles: Vec<(usize, f64)> = inst.candidates.iter().map(|&c| (c, p.utility(&[c]))).collect();
        singles.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        let expected: Vec<usize> = singles.into_iter().map(|(c, _)| c).collect();
        if greedy != expected {
            mismatches += 1;
        }
    }
    Outcome::new(
        mismatches == 0,
        format!("{mismatches}/{INSTANCES} instances where greedy order differs from singleton-score order"),
    )
}

fn lottery_invariants() -> Outcome {
    let mut max_sum_err = 0.0f64;
    let mut min_p = f64::INFINITY;
    let mut max_scale_err = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..INSTANCES {
        let inst = Instance::new(seed);
        let observed = inst.profile.items();
        let mut scaled = inst.model.clone();
        scaled.items.mapv_inplace(|x| x * 7.5);
        for _ in 0..10 {
            let len = rng.gen_range(1..=CANDIDATES);
            let mut items = inst.candidates.clone();
            items.shuffle(&mut rng);
            items.truncate(len);
            let choice = RankedChoice::new(items).unwrap();
            let k = rng.gen_range(len..=CANDIDATES + 2);
            for f in [SimilarityFn::Cosine, SimilarityFn::rbf(0.5).unwrap()] {
                let p = lottery(&choice, &observed, &inst.model, &f, k);
                max_sum_err = max_sum_err.max((p.p.iter().sum::<f64>() - 1.0).abs());
                min_p = p.p.iter().copied().fold(min_p, f64::min);
                let c = rng.gen_range(0.01..100.0);
                let masses: Vec<f64> = p.p.iter().map(|x| x * 3.0 + 0.1).collect();
                let a = Lottery::from_masses(&masses);
                let b = Lottery::from_masses(&masses.iter().map(|m| m * c).collect::<Vec<_>>());
                for (x, y) in a.p.iter().zip(&b.p) {
                    max_scale_err = max_scale_err.max((x - y).abs());
                }
            }
            // cosine ignores the scale of the factors
            let p = lottery(&choice, &observed, &inst.model, &SimilarityFn::Cosine, k);
            let q = lottery(&choice, &observed, &scaled, &SimilarityFn::Cosine, k);
            for (x, y) in p.p.iter().zip(&q.p) {
                max_scale_err = max_scale_err.max((x - y).abs());
            }
        }
    }
    let equal = FactorModel {
        users: Array2::ones((1, 2)),
        items: Array2::ones((5, 2)),
        lambda: 0.0,
        seed: 0,
        objective_trace: vec![],
    };
    let choice = RankedChoice::new(vec![2, 3, 4]).unwrap();
    let p = lottery(&choice, &[0, 1], &equal, &SimilarityFn::Cosine, 3).p;
    let expected = [0.1111, 0.2778, 0.6111];
    let equal_err = p.iter().zip(expected).map(|(x, e)| (x - e).abs()).fold(0.0, f64::max);
    Outcome::new(
        max_sum_err <= 1e-12 && min_p >= 0.0 && max_scale_err <= 1e-12 && equal_err <= 1e-4,
        format!(
            "max |Σp-1| {max_sum_err:.1e}, min p {min_p:.3}, max scale drift {max_scale_err:.1e}; equal-similarity k=3 [{:.4}, {:.4}, {:.4}]",
            p[0], p[1], p[2]
        ),
    )
}

fn metric_fixtures() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let test: BTreeMap<usize, u8> = [(0, 5), (1, 4), (2, 3)].into();
    check("ndcg ideal", (ndcg_at_k(&[0, 1, 2], &test, 3).unwrap() - 1.0).abs() < 1e-12);
    let single: BTreeMap<usize, u8> = [(11, 5)].into();
    let ndcg = ndcg_at_k(&[10, 11, 12], &single, 3).unwrap();
    check("ndcg [0,5,0]", (ndcg - 0.6309).abs() < 1e-4);
    check("ndcg no test items", ndcg_at_k(&[1, 2], &BTreeMap::new(), 3).is_none());

    let rel: HashSet<usize> = [4].into();
    check("ap first", (map_at_k(&[4, 1, 2], &rel, 3).unwrap() - 1.0).abs() < 1e-12);
    let rel2: HashSet<usize> = [1, 3].into();
    check("ap 1,3", (map_at_k(&[1, 2, 3], &rel2, 3).unwrap() - 5.0 / 6.0).abs() < 1e-12);
    check("ap none", map_at_k(&[7, 8, 9], &rel2, 3) == Some(0.0));

    let g = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    let genres = vec![g(&["A", "B"]), g(&["C"]), g(&["A"]), g(&[])];
    let rel3: HashSet<usize> = [0, 1, 2].into();
    check("tc full", topic_coverage_at_k(&[0, 1], &rel3, &genres, 2) == Some(1.0));
    check("tc none", topic_coverage_at_k(&[3], &rel3, &genres, 1) == Some(0.0));
    check(
        "tc 2/3",
        (topic_coverage_at_k(&[2, 1, 3], &rel3, &genres, 3).unwrap() - 2.0 / 3.0).abs() < 1e-12,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut out_of_range = 0;
    let n = 40;
    let all_genres: Vec<BTreeSet<String>> = (0..n)
        .map(|_| (0..4).filter(|_| rng.gen_bool(0.4)).map(|x| format!("g{x}")).collect())
        .collect();
    for _ in 0..10_000 {
        let mut items: Vec<usize> = (0..n).collect();
        items.shuffle(&mut rng);
        let ranked = &items[..rng.gen_range(0..n)];
        let test: BTreeMap<usize, u8> =
            (0..n).filter_map(|i| rng.gen_bool(0.2).then(|| (i, rng.gen_range(1..=5)))).collect();
        let relevant: HashSet<usize> = test.iter().filter(|(_, &r)| r >= 4).map(|(&i, _)| i).collect();
        let k = rng.gen_range(1..=25);
        for v in [
            ndcg_at_k(ranked, &test, k),
            map_at_k(ranked, &relevant, k),
            topic_coverage_at_k(ranked, &relevant, &all_genres, k),
        ]
        .into_iter()
        .flatten()
        {
            if !(0.0..=1.0).contains(&v) {
                out_of_range += 1;
            }
        }
    }
    check("fuzz range", out_of_range == 0);
    Outcome::new(
        failures.is_empty(),
        format!("NDCG([0,5,0]) = {ndcg:.4}; 10000 fuzzed rankings, {out_of_range} out of [0,1]; failed: {failures:?}"),
    )
}

fn wnmf() -> Outcome {
    let mut worst_increase = f64::NEG_INFINITY;
    let mut sweeps = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (m, n) = (60, 45);
        let obs: Vec<(usize, usize, f64)> = (0..m)
            .flat_map(|u| (0..n).map(move |i| (u, i)))
            .filter_map(|(u, i)| rng.gen_bool(0.25).then(|| (u, i, rng.gen_range(1..=5) as f64)))
            .collect();
        let params = WnmfParams { rank: 5, lambda: 0.1, max_iter: 150, tol: 0.0, seed };
        let model = train_wnmf(&obs, m, n, &params).unwrap();
        for w in model.objective_trace.windows(2) {
            worst_increase = worst_increase.max(w[1] - w[0]);
        }
        sweeps += model.iterations();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (m, n, d) = (40, 30, 3);
    let u = Array2::from_shape_simple_fn((m, d), || rng.gen_range(0.0..1.0));
    let v = Array2::from_shape_simple_fn((n, d), || rng.gen_range(0.0..1.0));
    let truth = u.dot(&v.t()) * 4.0 / d as f64;
    let obs: Vec<(usize, usize, f64)> =
        truth.indexed_iter().filter(|_| rng.gen_bool(0.7)).map(|((a, b), &x)| (a, b, x)).collect();
    let params = WnmfParams { rank: d, lambda: 0.0, max_iter: 3000, tol: 1e-12, seed: 5 };
    let model = train_wnmf(&obs, m, n, &params).unwrap();
    let rmse = (truth.indexed_iter().map(|((a, b), &x)| (x - model.predict(a, b)).powi(2)).sum::<f64>()
        / (m * n) as f64)
        .sqrt();
    Outcome::new(
        worst_increase <= 1e-8 && rmse < 0.1,
        format!(
            "10 runs / {sweeps} sweeps, max objective increase {worst_increase:.2e} (slack 1e-8); rank-{d} recovery RMSE over all entries {rmse:.4} from 70% observed"
        ),
    )
}

fn movielens_dir() -> Option<PathBuf> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let candidates = match std::env::var_os("RISKRANK_MOVIELENS_DIR") {
        Some(dir) => vec![PathBuf::from(dir)],
        None => vec![root.join("data/ml-1m"), root.join("data/ml-100k")],
    };
    candidates.into_iter().find(|d| d.join("ratings.dat").is_file())
}

fn desk_scale_config(dir: &Path) -> ExperimentConfig {
    let mut config = ExperimentConfig::new(dir.join("ratings.dat"), 0);
    let genres = dir.join("movies.dat");
    config.data.genres = genres.is_file().then_some(genres);
    config.subsample = Some(SubsampleConfig { users: 500, items: 500 });
    config.evaluation.ks = vec![5];
    // observed-items results are printed for context only
    config.evaluation.methodologies = vec![Methodology::Observed, Methodology::Full];
    config
}

/// Criteria 8 and 9 share the same runs.
fn desk_scale() -> (Outcome, Outcome) {
    let Some(dir) = movielens_dir() else {
        let msg = "SKIPPED: no MovieLens ratings.dat found (set RISKRANK_MOVIELENS_DIR)";
        return (Outcome::new(false, msg), Outcome::new(false, msg));
    };
    let config = desk_scale_config(&dir);
    let start = Instant::now();
    let first = match run_experiment(&config) {
        Ok(r) => r,
        Err(e) => {
            let msg = format!("experiment failed: {e}");
            return (Outcome::new(false, msg.clone()), Outcome::new(false, msg));
        }
    };
    let elapsed = start.elapsed();
    let report = first.report(Methodology::Full).unwrap();
    let ndcg = |s: &str| report.mean(s, 5, Metric::Ndcg).unwrap_or(f64::NAN);
    let (r3, modular, sub, pmf) = (ndcg("3R"), ndcg("MOD"), ndcg("SUB"), ndcg("PMF"));
    let observed = first.report(Methodology::Observed).unwrap();
    let context: Vec<String> = ["3R", "MOD", "SUB", "PMF"]
        .iter()
        .map(|s| format!("{s} {:.4}", observed.mean(s, 5, Metric::Ndcg).unwrap_or(f64::NAN)))
        .collect();
    let d = &first.dataset;
    let c8 = Outcome::new(
        r3 >= modular && r3 >= sub && elapsed < Duration::from_secs(600),
        format!(
            "{} ({} users x {} items, {} ratings): full-universe mean NDCG@5 3R {r3:.4}, MOD {modular:.4}, SUB {sub:.4}, PMF {pmf:.4}; {elapsed:.1?} | context: observed-items NDCG@5 {}; published full-data RSR NDCG@5 0.935 (MovieLens-1M), 0.973 (Yahoo! Movies)",
            dir.display(),
            d.users,
            d.items,
            d.ratings,
            context.join(", ")
        ),
    );

    let start = Instant::now();
    let c9 = match run_experiment(&config) {
        Ok(second) => {
            let (a, b) = (first.to_json().unwrap(), second.to_json().unwrap());
            Outcome::new(
                a == b,
                format!("report JSON {} bytes, identical: {}; second run {:.1?}", a.len(), a == b, start.elapsed()),
            )
        }
        Err(e) => Outcome::new(false, format!("second run failed: {e}")),
    };
    (c8, c9)
}

fn main() -> ExitCode {
    // honour `cargo test -- <filter>` style invocations that target other tests
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }

    let mut outcomes = vec![
        ("curvature of Z by risk regime", curvature()),
        ("greedy Z vs optimum (1-1/e)", greedy_z_bound()),
        ("greedy F vs brute force (diagnostic)", full_objective_quality()),
        ("risk-neutral greedy order", neutral_ordering()),
        ("lottery invariants", lottery_invariants()),
        ("metric fixtures and ranges", metric_fixtures()),
        ("WNMF monotonicity and recovery", wnmf()),
    ];
    let (c8, c9) = desk_scale();
    outcomes.push(("MovieLens 500x500 direction", c8));
    outcomes.push(("run determinism", c9));

    let mut failed = 0;
    for (i, (name, o)) in outcomes.iter().enumerate() {
        println!("criterion {}: {} - {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
