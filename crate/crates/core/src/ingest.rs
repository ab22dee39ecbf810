//! Rating and item-metadata ingestion.
//!
//! Two rating formats are understood: MovieLens `UserID::MovieID::Rating::Timestamp`
//! and a generic tab-separated `user\titem\trating` file whose optional header line is
//! detected by a non-numeric first field. Original ids are mapped to dense indices in
//! first-appearance order.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rating = u8;

pub const MIN_RATING: Rating = 1;
pub const MAX_RATING: Rating = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RatingTriple {
    pub user: usize,
    pub item: usize,
    pub rating: Rating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatingFormat {
    #[serde(rename = "movielens")]
    MovieLens,
    Tsv,
}

impl FromStr for RatingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "movielens" | "movielens-dat" => Ok(RatingFormat::MovieLens),
            "tsv" => Ok(RatingFormat::Tsv),
            other => Err(Error::InvalidArgument(format!("unknown rating format `{other}`"))),
        }
    }
}

/// Bijection between original ids and dense `0..len` indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    originals: Vec<u64>,
    dense: HashMap<u64, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the dense index for `original`, assigning the next free index on first sight.
    pub fn intern(&mut self, original: u64) -> usize {
        let next = self.originals.len();
        *self.dense.entry(original).or_insert_with(|| {
            self.originals.push(original);
            next
        })
    }

    pub fn dense(&self, original: u64) -> Option<usize> {
        self.dense.get(&original).copied()
    }

    pub fn original(&self, dense: usize) -> Option<u64> {
        self.originals.get(dense).copied()
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    pub fn originals(&self) -> &[u64] {
        &self.originals
    }
}

/// An immutable rating dataset with dense user and item indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_users: usize,
    pub num_items: usize,
    pub triples: Vec<RatingTriple>,
    /// Genre labels per dense item index; empty when unknown.
    pub genres: Vec<BTreeSet<String>>,
    pub users: IdMap,
    pub items: IdMap,
    /// Number of input lines that repeated an earlier (user, item) pair.
    pub duplicates: usize,
}

impl Dataset {
    /// Builds a dataset from original-id triples, applying the same densification and
    /// keep-last duplicate rule as the file parsers.
    pub fn from_original_triples<I>(triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u64, u64, Rating)>,
    {
        let mut builder = Builder::default();
        for (line, (u, i, r)) in triples.into_iter().enumerate() {
            builder.push(line + 1, u, i, r)?;
        }
        builder.finish()
    }

    /// Ratings counts indexed by `rating - 1`.
    pub fn rating_histogram(&self) -> [usize; MAX_RATING as usize] {
        let mut hist = [0; MAX_RATING as usize];
        for t in &self.triples {
            hist[(t.rating - MIN_RATING) as usize] += 1;
        }
        hist
    }

    pub fn user_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_users];
        for t in &self.triples {
            counts[t.user] += 1;
        }
        counts
    }

    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_items];
        for t in &self.triples {
            counts[t.item] += 1;
        }
        counts
    }

    pub fn has_genres(&self) -> bool {
        self.genres.iter().any(|g| !g.is_empty())
    }
}

#[derive(Default)]
struct Builder {
    users: IdMap,
    items: IdMap,
    triples: Vec<RatingTriple>,
    position: HashMap<(usize, usize), usize>,
    duplicates: usize,
}

impl Builder {
    fn push(&mut self, line: usize, user: u64, item: u64, rating: Rating) -> Result<()> {
        if !(MIN_RATING..=MAX_RATING).contains(&rating) {
            return Err(Error::parse(
                line,
                format!("rating {rating} outside {MIN_RATING}..={MAX_RATING}"),
            ));
        }
        let user = self.users.intern(user);
        let item = self.items.intern(item);
        match self.position.get(&(user, item)) {
            Some(&at) => {
                self.triples[at].rating = rating;
                self.duplicates += 1;
            }
            None => {
                self.position.insert((user, item), self.triples.len());
                self.triples.push(RatingTriple { user, item, rating });
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<Dataset> {
        if self.triples.is_empty() {
            return Err(Error::Empty("no rating records".into()));
        }
        if self.duplicates > 0 {
            log::warn!("{} duplicate (user, item) records, kept last", self.duplicates);
        }
        Ok(Dataset {
            num_users: self.users.len(),
            num_items: self.items.len(),
            genres: vec![BTreeSet::new(); self.items.len()],
            triples: self.triples,
            users: self.users,
            items: self.items,
            duplicates: self.duplicates,
        })
    }
}

fn read_lossy(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    // MovieLens metadata is latin-1; only ids and genres are used, so lossy decoding is enough.
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn parse_field<T: FromStr>(line: usize, what: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid {what} `{raw}`")))
}

pub fn parse_ratings(path: impl AsRef<Path>, format: RatingFormat) -> Result<Dataset> {
    let text = read_lossy(path.as_ref())?;
    parse_ratings_str(&text, format)
}

pub fn parse_ratings_str(text: &str, format: RatingFormat) -> Result<Dataset> {
    let mut builder = Builder::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let (user, item, rating) = match format {
            RatingFormat::MovieLens => {
                let fields: Vec<&str> = raw.split("::").collect();
                if fields.len() != 4 {
                    return Err(Error::parse(
                        line,
                        format!("expected 4 `::`-separated fields, found {}", fields.len()),
                    ));
                }
                // timestamp is validated, then dropped
                let _: u64 = parse_field(line, "timestamp", fields[3])?;
                (fields[0], fields[1], fields[2])
            }
            RatingFormat::Tsv => {
                let fields: Vec<&str> = raw.split('\t').collect();
                if fields.len() < 3 {
                    return Err(Error::parse(
                        line,
                        format!("expected 3 tab-separated fields, found {}", fields.len()),
                    ));
                }
                let is_header = builder.triples.is_empty()
                    && builder.duplicates == 0
                    && fields[0].trim().parse::<u64>().is_err();
                if is_header {
                    continue;
                }
                (fields[0], fields[1], fields[2])
            }
        };
        let user: u64 = parse_field(line, "user id", user)?;
        let item: u64 = parse_field(line, "item id", item)?;
        let rating: f64 = parse_field(line, "rating", rating)?;
        if rating.fract() != 0.0 || rating < MIN_RATING as f64 || rating > MAX_RATING as f64 {
            return Err(Error::parse(
                line,
                format!("rating {rating} outside {MIN_RATING}..={MAX_RATING}"),
            ));
        }
        builder.push(line, user, item, rating as Rating)?;
    }
    builder.finish()
}

/// Merges `MovieID::Title::Genre1|Genre2` metadata into `dataset`.
///
/// Metadata for items that were never rated is ignored; rated items without a
/// metadata line keep an empty genre set. Returns the number of items matched.
pub fn parse_genres(dataset: &mut Dataset, path: impl AsRef<Path>) -> Result<usize> {
    let text = read_lossy(path.as_ref())?;
    parse_genres_str(dataset, &text)
}

pub fn parse_genres_str(dataset: &mut Dataset, text: &str) -> Result<usize> {
    let mut matched = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        // titles may themselves contain `::`, so take the id from the left and genres from the right
        let (id, rest) = raw
            .split_once("::")
            .ok_or_else(|| Error::parse(line, "expected `MovieID::Title::Genres`"))?;
        let (_title, genres) = rest
            .rsplit_once("::")
            .ok_or_else(|| Error::parse(line, "expected `MovieID::Title::Genres`"))?;
        let id: u64 = parse_field(line, "movie id", id)?;
        let Some(item) = dataset.items.dense(id) else {
            continue;
        };
        dataset.genres[item] = genres
            .split('|')
            .map(str::trim)
            .filter(|g| !g.is_empty())
            .map(str::to_owned)
            .collect();
        matched += 1;
    }
    Ok(matched)
}

/// Restricts a dataset to the `top_users` users and `top_items` items with the most
/// ratings (ties broken by dense index), then re-densifies ids in first-appearance order.
pub fn subsample(dataset: &Dataset, top_users: usize, top_items: usize) -> Result<Dataset> {
    if top_users > dataset.num_users || top_items > dataset.num_items {
        return Err(Error::InvalidArgument(format!(
            "subsample {top_users}x{top_items} exceeds dataset {}x{}",
            dataset.num_users, dataset.num_items
        )));
    }
    let keep_users = top_by_count(&dataset.user_counts(), top_users);
    let keep_items = top_by_count(&dataset.item_counts(), top_items);

    let mut builder = Builder::default();
    for (line, t) in dataset.triples.iter().enumerate() {
        if keep_users[t.user] && keep_items[t.item] {
            let user = dataset.users.original(t.user).expect("dense user in range");
            let item = dataset.items.original(t.item).expect("dense item in range");
            builder.push(line + 1, user, item, t.rating)?;
        }
    }
    let mut sub = builder.finish()?;
    for (dense, &original) in sub.items.originals.iter().enumerate() {
        let old = dataset.items.dense(original).expect("item came from parent");
        sub.genres[dense] = dataset.genres[old].clone();
    }
    Ok(sub)
}

fn top_by_count(counts: &[usize], keep: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut mask = vec![false; counts.len()];
    for &idx in order.iter().take(keep) {
        mask[idx] = true;
    }
    mask
}
