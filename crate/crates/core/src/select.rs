//! Top-k selection strategies.
//!
//! [`greedy_select`] grows the choice one item at a time, appending the candidate that
//! maximizes the expected utility `F` of the extended sequence. Similarities between
//! candidates and the user's observed items are computed once per user and the per-item
//! similarity masses `s(κ, S)` are updated incrementally, so one greedy step costs
//! `O(|candidates| · |E|)`. Ties go to the smallest item index.
//!
//! The brute-force oracles enumerate every ordered sequence (or every set) and are only
//! meant for small instances.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorize::FactorModel;
use crate::preference::{PositionWeights, RankedChoice};
use crate::utility::{objective_f, risk_g, utility_z, MuMode, ObservedProfile, RiskConfig};

pub const BRUTE_FORCE_MAX_CANDIDATES: usize = 12;
pub const BRUTE_FORCE_MAX_K: usize = 3;

/// A ranked choice together with the score that selected each position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    pub choice: RankedChoice,
    /// For greedy strategies the objective value after each step; for the point-wise
    /// baseline the predicted rating.
    pub scores: Vec<f64>,
}

impl Selection {
    pub fn items(&self) -> &[usize] {
        self.choice.items()
    }
}

/// One user's selection problem.
#[derive(Debug, Clone)]
pub struct UserProblem<'a> {
    profile: &'a ObservedProfile,
    observed: Vec<usize>,
    candidates: Vec<usize>,
    model: &'a FactorModel,
    cfg: &'a RiskConfig,
    mu: &'a [f64],
}

impl<'a> UserProblem<'a> {
    /// `candidates` are sorted and deduplicated; they must not overlap the profile.
    pub fn new(
        profile: &'a ObservedProfile,
        candidates: impl IntoIterator<Item = usize>,
        model: &'a FactorModel,
        cfg: &'a RiskConfig,
        mu: &'a [f64],
    ) -> Result<Self> {
        let mut candidates: Vec<usize> = candidates.into_iter().collect();
        candidates.sort_unstable();
        candidates.dedup();
        let observed = profile.items();
        let n = model.num_items();
        if let Some(&bad) = candidates.iter().chain(&observed).find(|&&i| i >= n) {
            return Err(Error::InvalidArgument(format!("item {bad} outside model with {n} items")));
        }
        if mu.len() < n {
            return Err(Error::DimensionMismatch { left: mu.len(), right: n });
        }
        let observed_set: HashSet<usize> = observed.iter().copied().collect();
        if let Some(&overlap) = candidates.iter().find(|c| observed_set.contains(c)) {
            return Err(Error::InvalidArgument(format!("candidate {overlap} is already observed")));
        }
        Ok(Self { profile, observed, candidates, model, cfg, mu })
    }

    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn profile(&self) -> &ObservedProfile {
        self.profile
    }

    pub fn config(&self) -> &RiskConfig {
        self.cfg
    }

    /// Exact `F` of an ordered choice.
    pub fn objective(&self, choice: &RankedChoice) -> f64 {
        objective_f(choice, self.profile, &self.observed, self.model, self.cfg, self.mu)
    }

    /// Exact `Z` of a set.
    pub fn utility(&self, set: &[usize]) -> f64 {
        utility_z(self.profile, set, self.model, self.cfg, self.mu)
    }
}

/// Candidate-by-observed similarity table for one user.
struct Kernel {
    width: usize,
    sims: Vec<f64>,
    /// `s(candidate, O_u)`
    mass: Vec<f64>,
    payoffs: Vec<f64>,
}

impl Kernel {
    fn build(problem: &UserProblem<'_>) -> Self {
        let f = problem.cfg.similarity;
        let width = problem.profile.len();
        let mut sims = Vec::with_capacity(problem.candidates.len() * width);
        let mut mass = Vec::with_capacity(problem.candidates.len());
        for &c in &problem.candidates {
            let vc = problem.model.item(c);
            let start = sims.len();
            sims.extend(problem.profile.pairs.iter().map(|&(k, _)| f.eval(vc, problem.model.item(k))));
            mass.push(sims[start..].iter().sum());
        }
        let payoffs = problem.profile.pairs.iter().map(|&(_, v)| v).collect();
        Self { width, sims, mass, payoffs }
    }

    fn row(&self, c: usize) -> &[f64] {
        &self.sims[c * self.width..(c + 1) * self.width]
    }
}

/// Incremental state of a growing choice.
struct GreedyState<'k> {
    kernel: &'k Kernel,
    a: f64,
    mu_mode: MuMode,
    /// `s(κ, S)` per observed item.
    set_mass: Vec<f64>,
    mu_in_choice: f64,
    mu_observed: f64,
}

impl<'k> GreedyState<'k> {
    fn new(problem: &UserProblem<'_>, kernel: &'k Kernel) -> Self {
        let mu_observed = problem.observed.iter().map(|&k| problem.mu[k]).sum();
        Self {
            kernel,
            a: problem.cfg.a,
            mu_mode: problem.cfg.mu_mode,
            set_mass: vec![0.0; kernel.width],
            mu_in_choice: 0.0,
            mu_observed,
        }
    }

    /// `Z(E, S ∪ {candidate})`.
    fn utility_with(&self, c: usize, mu_c: f64) -> f64 {
        let sim: f64 = self
            .kernel
            .row(c)
            .iter()
            .zip(&self.set_mass)
            .zip(&self.kernel.payoffs)
            .map(|((&s, &m), &v)| v * risk_g(m + s, self.a))
            .sum();
        let mu = match self.mu_mode {
            MuMode::ChoiceItems => self.mu_in_choice + mu_c,
            MuMode::ObservedItems => self.mu_observed,
            MuMode::None => 0.0,
        };
        sim + mu
    }

    fn push(&mut self, c: usize, mu_c: f64) {
        for (m, &s) in self.set_mass.iter_mut().zip(self.kernel.row(c)) {
            *m += s;
        }
        self.mu_in_choice += mu_c;
    }
}

/// Greedy maximization of `F(S ⊕ i)`, the candidate appended at the last position.
pub fn greedy_select(problem: &UserProblem<'_>, k: usize) -> Selection {
    run_greedy(problem, k, Score::Expected)
}

/// Greedy maximization of `Z(E, S ∪ {i})`, ignoring the lottery.
pub fn greedy_select_z(problem: &UserProblem<'_>, k: usize) -> Selection {
    run_greedy(problem, k, Score::Utility)
}

#[derive(Clone, Copy)]
enum Score {
    Expected,
    Utility,
}

fn run_greedy(problem: &UserProblem<'_>, k: usize, score: Score) -> Selection {
    let nc = problem.candidates.len();
    if nc == 0 {
        log::debug!("empty candidate set");
        return Selection::default();
    }
    let kernel = Kernel::build(problem);
    let mut state = GreedyState::new(problem, &kernel);
    let mut used = vec![false; nc];
    let mut items = Vec::with_capacity(k.min(nc));
    let mut scores = Vec::with_capacity(k.min(nc));
    // per chosen position: s(S_j, O_u) and Z(E, S_{1..j})
    let mut pos_mass: Vec<f64> = Vec::new();
    let mut pos_utility: Vec<f64> = Vec::new();

    for step in 0..k.min(nc) {
        let weights = PositionWeights::new(step + 1);
        let (mut den, mut num) = (0.0, 0.0);
        for (j, (&m, &z)) in pos_mass.iter().zip(&pos_utility).enumerate() {
            den += weights.at(j) * m;
            num += weights.at(j) * m * z;
        }
        let z_sum: f64 = pos_utility.iter().sum();
        let last = weights.at(step);

        let mut best: Option<(usize, f64, f64)> = None;
        for c in (0..nc).filter(|&c| !used[c]) {
            let z = state.utility_with(c, problem.mu[problem.candidates[c]]);
            let value = match score {
                Score::Utility => z,
                Score::Expected => {
                    let m = last * kernel.mass[c];
                    if den + m > 0.0 {
                        (num + m * z) / (den + m)
                    } else {
                        (z_sum + z) / (step + 1) as f64
                    }
                }
            };
            if best.is_none_or(|(_, b, _)| value > b) {
                best = Some((c, value, z));
            }
        }
        let (c, value, z) = best.expect("at least one unused candidate");
        used[c] = true;
        state.push(c, problem.mu[problem.candidates[c]]);
        pos_mass.push(kernel.mass[c]);
        pos_utility.push(z);
        items.push(problem.candidates[c]);
        scores.push(value);
    }
    Selection {
        choice: RankedChoice::from_distinct(items),
        scores,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub choice: RankedChoice,
    pub value: f64,
    pub evaluated: usize,
}

fn check_brute_force_limits(problem: &UserProblem<'_>, k: usize) -> Result<()> {
    let nc = problem.candidates.len();
    if nc > BRUTE_FORCE_MAX_CANDIDATES || k > BRUTE_FORCE_MAX_K || k == 0 || nc == 0 {
        return Err(Error::TooLarge { candidates: nc, k });
    }
    Ok(())
}

/// Exact maximizer of `F` over all ordered sequences of `min(k, |candidates|)` distinct
/// candidates; the lexicographically first sequence wins ties.
pub fn brute_force_select(problem: &UserProblem<'_>, k: usize) -> Result<BruteForceResult> {
    check_brute_force_limits(problem, k)?;
    let len = k.min(problem.candidates.len());
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut evaluated = 0;
    let mut seq = Vec::with_capacity(len);
    permutations(&problem.candidates, len, &mut seq, &mut |s| {
        evaluated += 1;
        let value = problem.objective(&RankedChoice::from_distinct(s.to_vec()));
        if best.as_ref().is_none_or(|(_, b)| value > *b) {
            best = Some((s.to_vec(), value));
        }
    });
    let (items, value) = best.expect("non-empty enumeration");
    Ok(BruteForceResult { choice: RankedChoice::from_distinct(items), value, evaluated })
}

/// Exact maximizer of `Z` over all sets of `min(k, |candidates|)` candidates.
pub fn brute_force_select_z(problem: &UserProblem<'_>, k: usize) -> Result<BruteForceResult> {
    check_brute_force_limits(problem, k)?;
    let len = k.min(problem.candidates.len());
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut evaluated = 0;
    let mut set = Vec::with_capacity(len);
    combinations(&problem.candidates, len, 0, &mut set, &mut |s| {
        evaluated += 1;
        let value = problem.utility(s);
        if best.as_ref().is_none_or(|(_, b)| value > *b) {
            best = Some((s.to_vec(), value));
        }
    });
    let (items, value) = best.expect("non-empty enumeration");
    Ok(BruteForceResult { choice: RankedChoice::from_distinct(items), value, evaluated })
}

fn permutations(pool: &[usize], len: usize, seq: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    if seq.len() == len {
        visit(seq);
        return;
    }
    for &c in pool {
        if !seq.contains(&c) {
            seq.push(c);
            permutations(pool, len, seq, visit);
            seq.pop();
        }
    }
}

fn combinations(pool: &[usize], len: usize, start: usize, set: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    if set.len() == len {
        visit(set);
        return;
    }
    for idx in start..pool.len() {
        set.push(pool[idx]);
        combinations(pool, len, idx + 1, set, visit);
        set.pop();
    }
}

/// Point-wise baseline: top-k candidates by predicted rating, ties by item index.
pub fn pointwise_topk(model: &FactorModel, user: usize, candidates: &[usize], k: usize) -> Selection {
    let mut scored: Vec<(usize, f64)> = candidates.iter().map(|&i| (i, model.predict(user, i))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.dedup_by_key(|s| s.0);
    scored.truncate(k);
    let (items, scores) = scored.into_iter().unzip();
    Selection { choice: RankedChoice::from_distinct(items), scores }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StrategyKind {
    GreedyRisk(RiskConfig),
    PointwiseTopk,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub k: usize,
}

impl StrategySpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        match &self.kind {
            StrategyKind::GreedyRisk(cfg) => cfg.validate(),
            StrategyKind::PointwiseTopk => Ok(()),
        }
    }

    pub fn recommend(
        &self,
        user: usize,
        profile: &ObservedProfile,
        candidates: &[usize],
        model: &FactorModel,
        mu: &[f64],
    ) -> Result<Selection> {
        match &self.kind {
            StrategyKind::GreedyRisk(cfg) => {
                let problem = UserProblem::new(profile, candidates.iter().copied(), model, cfg, mu)?;
                Ok(greedy_select(&problem, self.k))
            }
            StrategyKind::PointwiseTopk => Ok(pointwise_topk(model, user, candidates, self.k)),
        }
    }
}
