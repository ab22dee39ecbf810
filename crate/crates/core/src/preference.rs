//! Item similarity, harmonic position weights and ranked k-lotteries.

use std::collections::HashSet;
use std::str::FromStr;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorize::FactorModel;

/// Non-negative similarity between latent feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SimilarityFn {
    #[default]
    Cosine,
    Rbf { gamma: f64 },
}

impl SimilarityFn {
    pub const DEFAULT_GAMMA: f64 = 1.0;

    pub fn rbf(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma.is_finite() {
            Ok(SimilarityFn::Rbf { gamma })
        } else {
            Err(Error::InvalidArgument(format!("rbf gamma {gamma} must be > 0")))
        }
    }

    /// Similarity of two equal-length feature vectors.
    pub fn eval(&self, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
        match *self {
            SimilarityFn::Cosine => {
                let nx = x.dot(&x).sqrt();
                let ny = y.dot(&y).sqrt();
                if nx == 0.0 || ny == 0.0 {
                    0.0
                } else {
                    // clamp rounding drift; non-negative features keep the true value in [0, 1]
                    (x.dot(&y) / (nx * ny)).clamp(0.0, 1.0)
                }
            }
            SimilarityFn::Rbf { gamma } => {
                let dist2: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * dist2).exp()
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SimilarityFn::Cosine => "cosine",
            SimilarityFn::Rbf { .. } => "rbf",
        }
    }
}

impl FromStr for SimilarityFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(SimilarityFn::Cosine),
            "rbf" => Ok(SimilarityFn::Rbf { gamma: Self::DEFAULT_GAMMA }),
            other => Err(Error::InvalidArgument(format!("unknown similarity `{other}`"))),
        }
    }
}

/// Checked similarity of two slices.
pub fn similarity(f: &SimilarityFn, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { left: x.len(), right: y.len() });
    }
    Ok(f.eval(ArrayView1::from(x), ArrayView1::from(y)))
}

/// `s(item, set) = Σ_{j ∈ set} f(V_item, V_j)`.
pub fn item_set_similarity(item: usize, set: &[usize], model: &FactorModel, f: &SimilarityFn) -> f64 {
    let v = model.item(item);
    set.iter().map(|&j| f.eval(v, model.item(j))).sum()
}

/// Cumulative harmonic weights `C_i = Σ_{l=1..i} 1/(k − l + 1)` for positions `1..=k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionWeights {
    cumulative: Vec<f64>,
}

impl PositionWeights {
    pub fn new(k: usize) -> Self {
        let mut acc = 0.0;
        let cumulative = (1..=k)
            .map(|l| {
                acc += 1.0 / (k - l + 1) as f64;
                acc
            })
            .collect();
        Self { cumulative }
    }

    pub fn k(&self) -> usize {
        self.cumulative.len()
    }

    /// Weight of the 0-based `position`.
    pub fn at(&self, position: usize) -> f64 {
        self.cumulative[position]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.cumulative
    }
}

/// An ordered selection of distinct items.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RankedChoice {
    items: Vec<usize>,
}

impl RankedChoice {
    pub fn new(items: Vec<usize>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(items.len());
        if let Some(&dup) = items.iter().find(|&&i| !seen.insert(i)) {
            return Err(Error::InvalidArgument(format!("item {dup} repeated in choice")));
        }
        Ok(Self { items })
    }

    /// Builds a choice and checks it is disjoint from the user's observed items.
    pub fn for_user(items: Vec<usize>, observed: &[usize]) -> Result<Self> {
        let choice = Self::new(items)?;
        let observed: HashSet<usize> = observed.iter().copied().collect();
        if let Some(&i) = choice.items.iter().find(|i| observed.contains(i)) {
            return Err(Error::InvalidArgument(format!("item {i} is already observed")));
        }
        Ok(choice)
    }

    pub(crate) fn from_distinct(items: Vec<usize>) -> Self {
        debug_assert!(Self::new(items.clone()).is_ok());
        Self { items }
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn prefix(&self, len: usize) -> &[usize] {
        &self.items[..len.min(self.items.len())]
    }

    pub fn into_items(self) -> Vec<usize> {
        self.items
    }
}

/// Probability of each choice position.
#[derive(Debug, Clone, PartialEq)]
pub struct Lottery {
    pub p: Vec<f64>,
}

impl Lottery {
    /// Normalizes position masses; all-zero mass falls back to the uniform lottery.
    pub fn from_masses(masses: &[f64]) -> Self {
        let total: f64 = masses.iter().sum();
        let p = if total > 0.0 {
            masses.iter().map(|m| m / total).collect()
        } else {
            vec![1.0 / masses.len() as f64; masses.len()]
        };
        Self { p }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Ranked k-lottery of `choice` for a user who observed `observed`.
///
/// Position `i` receives mass `C_i · s(choice_i, observed)` with harmonic weights for
/// target size `k`, normalized over the positions present in `choice`. `k` is raised to
/// `choice.len()` when the choice is longer.
pub fn lottery(
    choice: &RankedChoice,
    observed: &[usize],
    model: &FactorModel,
    f: &SimilarityFn,
    k: usize,
) -> Lottery {
    let weights = PositionWeights::new(k.max(choice.len()));
    let masses: Vec<f64> = choice
        .items()
        .iter()
        .enumerate()
        .map(|(pos, &item)| weights.at(pos) * item_set_similarity(item, observed, model, f))
        .collect();
    Lottery::from_masses(&masses)
}
