//! Weighted regularized non-negative matrix factorization.
//!
//! Minimizes `Σ_observed (r_ui − ⟨U_u, V_i⟩)² + λ (‖U‖²_F + ‖V‖²_F)` over `U, V ≥ 0` with
//! masked multiplicative updates: unobserved entries carry weight zero, so every sweep only
//! touches observed ratings.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RatingTriple;

const DENOM_EPS: f64 = 1e-12;

/// An observed matrix entry. Implemented for rating triples and for real-valued
/// `(row, column, value)` tuples.
pub trait Observation {
    fn user(&self) -> usize;
    fn item(&self) -> usize;
    fn value(&self) -> f64;
}

impl Observation for RatingTriple {
    fn user(&self) -> usize {
        self.user
    }
    fn item(&self) -> usize {
        self.item
    }
    fn value(&self) -> f64 {
        f64::from(self.rating)
    }
}

impl Observation for (usize, usize, f64) {
    fn user(&self) -> usize {
        self.0
    }
    fn item(&self) -> usize {
        self.1
    }
    fn value(&self) -> f64 {
        self.2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WnmfParams {
    pub rank: usize,
    pub lambda: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for WnmfParams {
    fn default() -> Self {
        Self {
            rank: 20,
            lambda: 0.1,
            max_iter: 200,
            tol: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    /// `m × d` user features.
    pub users: Array2<f64>,
    /// `n × d` item features.
    pub items: Array2<f64>,
    pub lambda: f64,
    pub seed: u64,
    /// Objective before the first sweep followed by one value per sweep.
    pub objective_trace: Vec<f64>,
}

impl FactorModel {
    pub fn rank(&self) -> usize {
        self.items.ncols()
    }

    pub fn num_users(&self) -> usize {
        self.users.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.items.nrows()
    }

    pub fn iterations(&self) -> usize {
        self.objective_trace.len().saturating_sub(1)
    }

    pub fn item(&self, item: usize) -> ArrayView1<'_, f64> {
        self.items.row(item)
    }

    pub fn user(&self, user: usize) -> ArrayView1<'_, f64> {
        self.users.row(user)
    }

    pub fn predict(&self, user: usize, item: usize) -> f64 {
        self.users.row(user).dot(&self.items.row(item))
    }

    /// Masked objective of this model on `observed`.
    pub fn objective<O: Observation>(&self, observed: &[O]) -> f64 {
        objective(&self.users, &self.items, observed, self.lambda)
    }
}

fn objective<O: Observation>(u: &Array2<f64>, v: &Array2<f64>, observed: &[O], lambda: f64) -> f64 {
    let loss: f64 = observed
        .iter()
        .map(|t| {
            let r = t.value() - u.row(t.user()).dot(&v.row(t.item()));
            r * r
        })
        .sum();
    let reg = u.iter().map(|x| x * x).sum::<f64>() + v.iter().map(|x| x * x).sum::<f64>();
    loss + lambda * reg
}

/// Observed ratings grouped by row, `(column, rating)` per entry.
fn adjacency<O: Observation>(observed: &[O], rows: usize, by_user: bool) -> Vec<Vec<(usize, f64)>> {
    let mut adj = vec![Vec::new(); rows];
    for t in observed {
        let (row, col) = if by_user { (t.user(), t.item()) } else { (t.item(), t.user()) };
        adj[row].push((col, t.value()));
    }
    adj
}

/// One multiplicative sweep over the rows of `target` with `other` held fixed.
fn update(target: &mut Array2<f64>, other: &Array2<f64>, adj: &[Vec<(usize, f64)>], lambda: f64) {
    let d = target.ncols();
    let mut num = vec![0.0; d];
    let mut den = vec![0.0; d];
    for (row, entries) in target.axis_iter_mut(Axis(0)).zip(adj) {
        let mut row = row;
        num.iter_mut().for_each(|x| *x = 0.0);
        den.iter_mut().for_each(|x| *x = 0.0);
        for &(col, rating) in entries {
            let feat = other.row(col);
            let pred = row.dot(&feat);
            for ((n, dn), &f) in num.iter_mut().zip(den.iter_mut()).zip(feat.iter()) {
                *n += rating * f;
                *dn += pred * f;
            }
        }
        for ((x, n), dn) in row.iter_mut().zip(&num).zip(&den) {
            *x *= n / (dn + lambda * *x + DENOM_EPS);
        }
    }
}

/// Trains a factor model on `observed` for `num_users × num_items` indices.
pub fn train_wnmf<O: Observation>(
    observed: &[O],
    num_users: usize,
    num_items: usize,
    params: &WnmfParams,
) -> Result<FactorModel> {
    if observed.is_empty() {
        return Err(Error::Empty("training set has no ratings".into()));
    }
    if params.rank == 0 {
        return Err(Error::InvalidArgument("rank must be >= 1".into()));
    }
    if params.lambda.is_nan() || params.lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("lambda {} must be >= 0", params.lambda)));
    }
    if let Some(t) = observed.iter().find(|t| t.user() >= num_users || t.item() >= num_items) {
        return Err(Error::InvalidArgument(format!(
            "entry ({}, {}) outside {num_users}x{num_items}",
            t.user(),
            t.item()
        )));
    }
    if params.rank > num_users.min(num_items) {
        log::warn!(
            "rank {} exceeds min(users, items) = {}",
            params.rank,
            num_users.min(num_items)
        );
    }

    let d = params.rank;
    let mean = observed.iter().map(Observation::value).sum::<f64>() / observed.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let init = Uniform::new(0.0, (mean / d as f64).sqrt());
    let mut users = Array2::from_shape_simple_fn((num_users, d), || init.sample(&mut rng));
    let mut items = Array2::from_shape_simple_fn((num_items, d), || init.sample(&mut rng));

    let by_user = adjacency(observed, num_users, true);
    let by_item = adjacency(observed, num_items, false);

    let mut trace = vec![objective(&users, &items, observed, params.lambda)];
    for _ in 0..params.max_iter {
        update(&mut users, &items, &by_user, params.lambda);
        update(&mut items, &users, &by_item, params.lambda);
        let obj = objective(&users, &items, observed, params.lambda);
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(obj);
        if prev > 0.0 && (prev - obj) / prev < params.tol {
            break;
        }
    }

    Ok(FactorModel {
        users,
        items,
        lambda: params.lambda,
        seed: params.seed,
        objective_trace: trace,
    })
}

/// Mean observed rating per item; zero for items without ratings.
pub fn item_means(observed: &[RatingTriple], num_items: usize) -> Vec<f64> {
    let mut sum = vec![0.0; num_items];
    let mut count = vec![0usize; num_items];
    for t in observed {
        sum[t.item] += f64::from(t.rating);
        count[t.item] += 1;
    }
    sum.iter()
        .zip(&count)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    rank: usize,
    lambda: f64,
    seed: u64,
    iterations: usize,
    num_users: usize,
    num_items: usize,
    objective_trace: Vec<f64>,
}

/// Saves the model as `U.csv`, `V.csv` and `meta.json` inside `dir`.
pub fn save_model(model: &FactorModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix(&model.users, &dir.join("U.csv"))?;
    write_matrix(&model.items, &dir.join("V.csv"))?;
    let meta = ModelMeta {
        rank: model.rank(),
        lambda: model.lambda,
        seed: model.seed,
        iterations: model.iterations(),
        num_users: model.num_users(),
        num_items: model.num_items(),
        objective_trace: model.objective_trace.clone(),
    };
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<FactorModel> {
    let dir = dir.as_ref();
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: ModelMeta = serde_json::from_str(&text)?;
    let users = read_matrix(&dir.join("U.csv"), meta.num_users, meta.rank)?;
    let items = read_matrix(&dir.join("V.csv"), meta.num_items, meta.rank)?;
    Ok(FactorModel {
        users,
        items,
        lambda: meta.lambda,
        seed: meta.seed,
        objective_trace: meta.objective_trace,
    })
}

fn write_matrix(m: &Array2<f64>, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for row in m.rows() {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut data = Vec::with_capacity(rows * cols);
    for (idx, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != cols {
            return Err(Error::DimensionMismatch { left: rec.len(), right: cols });
        }
        for field in rec.iter() {
            data.push(
                field
                    .parse::<f64>()
                    .map_err(|_| Error::parse(idx + 1, format!("invalid value `{field}`")))?,
            );
        }
    }
    if data.len() != rows * cols {
        return Err(Error::DimensionMismatch { left: data.len() / cols.max(1), right: rows });
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}
