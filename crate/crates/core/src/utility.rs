//! Exponential risk indicator, adaptive utility `Z` and the expected-utility objective `F`.
//!
//! `Z(E, S) = Σ_{(κ, υ) ∈ E} υ · g(s(κ, S)) + M(S)` where `s` is the similarity mass of
//! an observed item against the chosen set and `M` is the item-mean term selected by
//! [`MuMode`]. Because `s` is modular in `S`, the curvature of `Z` follows the curvature
//! of `g`: concave (risk-averse, `a > 0`) gives a submodular `Z`, linear a modular one,
//! convex (risk-seeking, `a < 0`) a supermodular one.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorize::FactorModel;
use crate::ingest::{Dataset, RatingTriple};
use crate::preference::{item_set_similarity, lottery, RankedChoice, SimilarityFn};

/// `g(x) = (1 − e^{−a x}) / a`, with the linear limit `g(x) = x` at `a = 0`.
pub fn risk_g(x: f64, a: f64) -> f64 {
    if a == 0.0 {
        x
    } else {
        -(-a * x).exp_m1() / a
    }
}

/// Which item means enter `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MuMode {
    /// `Σ_{i ∈ S} μ_i`
    #[default]
    ChoiceItems,
    /// `Σ_{(κ, ·) ∈ E} μ_κ`, independent of `S`.
    ObservedItems,
    None,
}

impl FromStr for MuMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "choice-items" => Ok(MuMode::ChoiceItems),
            "observed-items" => Ok(MuMode::ObservedItems),
            "none" => Ok(MuMode::None),
            other => Err(Error::InvalidArgument(format!("unknown mu mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    /// Risk parameter: `< 0` seeking, `0` neutral, `> 0` averse.
    pub a: f64,
    #[serde(default)]
    pub mu_mode: MuMode,
    #[serde(default)]
    pub similarity: SimilarityFn,
}

impl RiskConfig {
    pub fn new(a: f64) -> Self {
        Self {
            a,
            mu_mode: MuMode::default(),
            similarity: SimilarityFn::default(),
        }
    }

    pub fn with_mu_mode(mut self, mu_mode: MuMode) -> Self {
        self.mu_mode = mu_mode;
        self
    }

    pub fn with_similarity(mut self, similarity: SimilarityFn) -> Self {
        self.similarity = similarity;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.a.is_finite() {
            return Err(Error::InvalidArgument(format!("risk parameter {} not finite", self.a)));
        }
        if let SimilarityFn::Rbf { gamma } = self.similarity {
            SimilarityFn::rbf(gamma)?;
        }
        Ok(())
    }

    pub fn g(&self, x: f64) -> f64 {
        risk_g(x, self.a)
    }
}

/// A user's observed `(item, payoff)` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservedProfile {
    pub pairs: Vec<(usize, f64)>,
}

impl ObservedProfile {
    pub fn new(pairs: Vec<(usize, f64)>) -> Self {
        Self { pairs }
    }

    /// Profile of one user from a set of training triple indices.
    pub fn from_triples(dataset: &Dataset, triples: &[usize]) -> Self {
        Self::from_ratings(triples.iter().map(|&t| dataset.triples[t]))
    }

    pub fn from_ratings(ratings: impl IntoIterator<Item = RatingTriple>) -> Self {
        Self {
            pairs: ratings
                .into_iter()
                .map(|t| (t.item, f64::from(t.rating)))
                .collect(),
        }
    }

    pub fn items(&self) -> Vec<usize> {
        self.pairs.iter().map(|&(i, _)| i).collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// The item-mean term of `Z` for `set`.
pub fn mu_term(profile: &ObservedProfile, set: &[usize], mode: MuMode, mu: &[f64]) -> f64 {
    match mode {
        MuMode::ChoiceItems => set.iter().map(|&i| mu[i]).sum(),
        MuMode::ObservedItems => profile.pairs.iter().map(|&(k, _)| mu[k]).sum(),
        MuMode::None => 0.0,
    }
}

/// Adaptive utility `Z(E, set)`; `set` is treated as an unordered set.
pub fn utility_z(
    profile: &ObservedProfile,
    set: &[usize],
    model: &FactorModel,
    cfg: &RiskConfig,
    mu: &[f64],
) -> f64 {
    let similarity_part: f64 = profile
        .pairs
        .iter()
        .map(|&(kappa, payoff)| payoff * cfg.g(item_set_similarity(kappa, set, model, &cfg.similarity)))
        .sum();
    similarity_part + mu_term(profile, set, cfg.mu_mode, mu)
}

/// Expected utility `F(S) = Σ_i p_i · Z(E, S_{1..i})` of an ordered choice.
///
/// The lottery is built over `observed` with target size `|choice|`, so a full choice
/// gets the harmonic weights of its own length.
pub fn objective_f(
    choice: &RankedChoice,
    profile: &ObservedProfile,
    observed: &[usize],
    model: &FactorModel,
    cfg: &RiskConfig,
    mu: &[f64],
) -> f64 {
    let p = lottery(choice, observed, model, &cfg.similarity, choice.len());
    p.p.iter()
        .enumerate()
        .map(|(i, &pi)| pi * utility_z(profile, choice.prefix(i + 1), model, cfg, mu))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64, n: usize, d: usize) -> FactorModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FactorModel {
            users: Array2::zeros((1, d)),
            items: Array2::from_shape_simple_fn((n, d), || rng.gen_range(0.0..1.0)),
            lambda: 0.0,
            seed,
            objective_trace: vec![],
        }
    }

    #[test]
    fn g_values() {
        for a in [-2.0, -1.0, 0.0, 0.5, 3.0] {
            assert_eq!(risk_g(0.0, a), 0.0);
        }
        assert_eq!(risk_g(2.5, 0.0), 2.5);
        assert!((risk_g(1.0, 1.0) - 0.632121).abs() < 1e-6);
        assert!((risk_g(1.0, -1.0) - 1.718282).abs() < 1e-6);
    }

    #[test]
    fn g_continuity_at_zero() {
        for x in [0.0, 0.3, 1.0, 4.0, 10.0] {
            for a in [1e-8, -1e-8] {
                assert!((risk_g(x, a) - x).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn g_shape_by_regime() {
        let grid: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        for (a, sign) in [(1.0, -1.0), (0.0, 0.0), (-1.0, 1.0), (0.3, -1.0), (-0.2, 1.0)] {
            for w in grid.windows(3) {
                let (g0, g1, g2) = (risk_g(w[0], a), risk_g(w[1], a), risk_g(w[2], a));
                assert!(g1 >= g0, "monotone");
                let second = g2 - 2.0 * g1 + g0;
                if sign == 0.0 {
                    assert!(second.abs() < 1e-12);
                } else {
                    assert!(second * sign > 0.0, "a={a} second difference {second}");
                }
            }
        }
    }

    #[test]
    fn z_cases() {
        let model = random_model(1, 6, 3);
        let mu = vec![3.0; 6];
        let cfg = RiskConfig::new(0.7);
        let profile = ObservedProfile::new(vec![(0, 5.0), (1, 3.0)]);
        assert_eq!(utility_z(&profile, &[], &model, &cfg, &mu), 0.0);
        assert_eq!(
            utility_z(&profile, &[], &model, &cfg.with_mu_mode(MuMode::None), &mu),
            0.0
        );
        assert_eq!(
            utility_z(&profile, &[], &model, &cfg.with_mu_mode(MuMode::ObservedItems), &mu),
            6.0
        );
    }

    #[test]
    fn z_zero_similarity_mass() {
        let mut model = random_model(2, 3, 2);
        model.items.row_mut(0).assign(&ndarray::array![1.0, 0.0]);
        model.items.row_mut(1).assign(&ndarray::array![0.0, 1.0]);
        let profile = ObservedProfile::new(vec![(0, 5.0)]);
        let cfg = RiskConfig::new(-1.0).with_mu_mode(MuMode::None);
        assert_eq!(utility_z(&profile, &[1], &model, &cfg, &[0.0; 3]), 0.0);
    }

    #[test]
    fn z_neutral_linear_mass() {
        // cos(60°) = 0.5
        let mut model = random_model(3, 3, 2);
        model.items.row_mut(0).assign(&ndarray::array![1.0, 0.0]);
        model.items.row_mut(1).assign(&ndarray::array![0.5, 0.75f64.sqrt()]);
        let s = item_set_similarity(0, &[1], &model, &SimilarityFn::Cosine);
        let profile = ObservedProfile::new(vec![(0, 4.0)]);
        let cfg = RiskConfig::new(0.0).with_mu_mode(MuMode::None);
        let z = utility_z(&profile, &[1], &model, &cfg, &[0.0; 3]);
        assert!((z - 4.0 * s).abs() < 1e-12);
        assert!((s - 0.5).abs() < 1e-12, "fixture similarity {s}");
        assert!((z - 2.0).abs() < 1e-12);
    }

    #[test]
    fn f_of_single_item_is_z() {
        let model = random_model(4, 6, 3);
        let mu: Vec<f64> = (0..6).map(|i| 1.0 + i as f64 * 0.5).collect();
        let profile = ObservedProfile::new(vec![(0, 5.0), (1, 2.0)]);
        let cfg = RiskConfig::new(-1.0);
        for item in 2..6 {
            let choice = RankedChoice::new(vec![item]).unwrap();
            let f = objective_f(&choice, &profile, &[0, 1], &model, &cfg, &mu);
            let z = utility_z(&profile, &[item], &model, &cfg, &mu);
            assert!((f - z).abs() < 1e-12);
        }
    }

    #[test]
    fn f_zero_payoffs() {
        let model = random_model(5, 6, 3);
        let profile = ObservedProfile::new(vec![(0, 0.0), (1, 0.0)]);
        let cfg = RiskConfig::new(1.0).with_mu_mode(MuMode::None);
        let choice = RankedChoice::new(vec![4, 2, 3]).unwrap();
        assert_eq!(objective_f(&choice, &profile, &[0, 1], &model, &cfg, &[2.0; 6]), 0.0);
    }

    #[test]
    fn z_monotone_non_decreasing() {
        let model = random_model(6, 10, 4);
        let mu: Vec<f64> = (0..10).map(|i| (i % 5) as f64).collect();
        let profile = ObservedProfile::new(vec![(0, 5.0), (1, 1.0), (2, 3.0)]);
        for a in [-1.5, 0.0, 2.0] {
            let cfg = RiskConfig::new(a);
            let mut set = vec![];
            let mut prev = utility_z(&profile, &set, &model, &cfg, &mu);
            for i in 3..10 {
                set.push(i);
                let z = utility_z(&profile, &set, &model, &cfg, &mu);
                assert!(z >= prev);
                prev = z;
            }
        }
    }

    #[test]
    fn parse_mu_mode() {
        assert_eq!("none".parse::<MuMode>().unwrap(), MuMode::None);
        assert!("bogus".parse::<MuMode>().is_err());
        let json = serde_json::to_string(&MuMode::ObservedItems).unwrap();
        assert_eq!(json, "\"observed-items\"");
    }
}
