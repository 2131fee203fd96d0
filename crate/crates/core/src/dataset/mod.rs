//! Ratings ingestion, UE/SBS partitioning, rating matrices and per-slot
//! request generation.
//!
//! Content ids flowing out of this module into the caching stages are dense
//! catalog positions (see [`remap_to_catalog`]); position 0 is the most
//! popular content of a popularity-ranked catalog.

mod movielens;
mod requests;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use movielens::{load_movielens, normalize_stars};
pub use requests::{sample_requests, RequestBatch, RequestMode, UeRequests, ZipfSampler};

/// Ordered set of content ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentCatalog {
    ids: Vec<u32>,
    index: HashMap<u32, usize>,
}

impl ContentCatalog {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            if index.insert(id, i).is_some() {
                return Err(Error::Data(format!("duplicate content id {id} in catalog")));
            }
        }
        Ok(ContentCatalog { ids, index })
    }

    /// Catalog of ids `0..size`.
    pub fn dense(size: usize) -> Self {
        Self::new((0..size as u32).collect()).expect("dense ids are unique")
    }

    /// Contents ordered by number of ratings (descending, ties by ascending id),
    /// optionally truncated to the `top_n` most rated.
    pub fn ranked_by_popularity(interactions: &[Interaction], top_n: Option<usize>) -> Self {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for it in interactions {
            *counts.entry(it.content_id).or_default() += 1;
        }
        let mut ranked: Vec<(u32, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        if let Some(n) = top_n {
            ranked.truncate(n);
        }
        Self::new(ranked.into_iter().map(|(id, _)| id).collect()).expect("ids are unique")
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn position(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.index.contains_key(&id)
    }
}

/// One rating event; `rating` is already normalized to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: u32,
    pub content_id: u32,
    pub rating: f64,
    pub timestamp: i64,
}

/// Numeric user profile; every field is scaled into `[0, 1]`.
///
/// Column order in merged profiles is `gender, age, occupation`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    /// 1.0 for "M", 0.0 for "F".
    pub gender: f64,
    /// MovieLens age code divided by 56.
    pub age: f64,
    /// Occupation code divided by 20.
    pub occupation: f64,
}

impl Demographics {
    pub const WIDTH: usize = 3;

    pub fn to_array(self) -> [f64; 3] {
        [self.gender, self.age, self.occupation]
    }
}

/// Catalog, interactions sorted by `(user_id, timestamp)`, and user profiles.
#[derive(Debug, Clone)]
pub struct RatingsDataset {
    pub catalog: ContentCatalog,
    pub interactions: Vec<Interaction>,
    pub demographics: BTreeMap<u32, Demographics>,
}

impl RatingsDataset {
    pub fn user_count(&self) -> usize {
        self.interactions
            .iter()
            .map(|i| i.user_id)
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Restricts to a popularity-ranked catalog and rewrites content ids to
    /// dense catalog positions.
    pub fn ranked(&self, top_n: Option<usize>) -> RatingsDataset {
        let ranked = ContentCatalog::ranked_by_popularity(&self.interactions, top_n);
        RatingsDataset {
            interactions: remap_to_catalog(&self.interactions, &ranked),
            catalog: ContentCatalog::dense(ranked.len()),
            demographics: self.demographics.clone(),
        }
    }
}

/// Replaces each content id by its catalog position, dropping interactions on
/// contents outside the catalog.
pub fn remap_to_catalog(interactions: &[Interaction], catalog: &ContentCatalog) -> Vec<Interaction> {
    interactions
        .iter()
        .filter_map(|it| {
            catalog.position(it.content_id).map(|p| Interaction {
                content_id: p as u32,
                ..*it
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionConfig {
    pub n_sbs: usize,
    pub ues_per_sbs: usize,
    pub users_per_ue: usize,
    pub train_fraction: f64,
    /// When false, users are dealt to UEs in ascending id order.
    pub shuffle_users: bool,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            n_sbs: 2,
            ues_per_sbs: 2,
            users_per_ue: 50,
            train_fraction: 0.8,
            shuffle_users: true,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sbs == 0 || self.ues_per_sbs == 0 || self.users_per_ue == 0 {
            return Err(Error::Config(
                "n_sbs, ues_per_sbs and users_per_ue must all be positive".into(),
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }

    pub fn ue_count(&self) -> usize {
        self.n_sbs * self.ues_per_sbs
    }
}

/// A UE's private data. Only the owning UE reads `train`/`test`.
#[derive(Debug, Clone, PartialEq)]
pub struct UeDataset {
    pub ue_id: usize,
    pub sbs_id: usize,
    pub user_ids: Vec<u32>,
    pub train: Vec<Interaction>,
    pub test: Vec<Interaction>,
    pub demographics: BTreeMap<u32, Demographics>,
}

impl UeDataset {
    pub fn interactions(&self, split: Split) -> &[Interaction] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Deals users to UEs (disjointly) and splits each UE's interactions into
/// train and test. The first `floor(train_fraction * n)` interactions of a
/// seeded shuffle form the training split.
pub fn partition(
    interactions: &[Interaction],
    demographics: &BTreeMap<u32, Demographics>,
    cfg: &PartitionConfig,
    seed: u64,
) -> Result<Vec<UeDataset>> {
    cfg.validate()?;
    let mut users: Vec<u32> = interactions
        .iter()
        .map(|i| i.user_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let needed = cfg.ue_count() * cfg.users_per_ue;
    if users.len() < needed {
        return Err(Error::Config(format!(
            "partition needs {needed} users but the data has {}",
            users.len()
        )));
    }
    if cfg.shuffle_users {
        users.shuffle(&mut seed::stream(seed, &[seed::tag::PARTITION]));
    }

    let mut by_user: HashMap<u32, Vec<Interaction>> = HashMap::new();
    for it in interactions {
        by_user.entry(it.user_id).or_default().push(*it);
    }

    let mut out = Vec::with_capacity(cfg.ue_count());
    for ue_id in 0..cfg.ue_count() {
        let mut user_ids = users[ue_id * cfg.users_per_ue..(ue_id + 1) * cfg.users_per_ue].to_vec();
        user_ids.sort_unstable();
        let mut local: Vec<Interaction> = user_ids
            .iter()
            .flat_map(|u| by_user.get(u).into_iter().flatten().copied())
            .collect();
        local.sort_by(|a, b| {
            (a.user_id, a.timestamp, a.content_id).cmp(&(b.user_id, b.timestamp, b.content_id))
        });
        local.shuffle(&mut seed::stream(seed, &[seed::tag::SPLIT, ue_id as u64]));
        let n_train = (cfg.train_fraction * local.len() as f64).floor() as usize;
        let mut test = local.split_off(n_train);
        let mut train = local;
        let key = |i: &Interaction| (i.user_id, i.timestamp, i.content_id);
        train.sort_by_key(key);
        test.sort_by_key(key);
        let demo = user_ids
            .iter()
            .map(|u| (*u, demographics.get(u).copied().unwrap_or_default()))
            .collect();
        out.push(UeDataset {
            ue_id,
            sbs_id: ue_id / cfg.ues_per_sbs,
            user_ids,
            train,
            test,
            demographics: demo,
        });
    }
    Ok(out)
}

/// Users x contents matrix; 0 means "not rated or not interested".
#[derive(Debug, Clone, PartialEq)]
pub struct RatingMatrix {
    pub user_ids: Vec<u32>,
    pub content_ids: Vec<u32>,
    pub values: Array2<f64>,
}

impl RatingMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    /// Number of nonzero entries in each row.
    pub fn row_nonzero_counts(&self) -> Vec<usize> {
        self.values
            .rows()
            .into_iter()
            .map(|r| r.iter().filter(|&&v| v != 0.0).count())
            .collect()
    }

    pub fn row_of(&self, user_id: u32) -> Option<usize> {
        self.user_ids.iter().position(|&u| u == user_id)
    }
}

/// One row per UE user (in `user_ids` order), one column per catalog content.
/// A repeated `(user, content)` pair keeps its latest rating.
pub fn build_rating_matrix(
    ue: &UeDataset,
    split: Split,
    catalog: &ContentCatalog,
) -> Result<RatingMatrix> {
    let rows: HashMap<u32, usize> = ue.user_ids.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let mut values = Array2::zeros((ue.user_ids.len(), catalog.len()));
    let mut latest: HashMap<(usize, usize), i64> = HashMap::new();
    for it in ue.interactions(split) {
        let col = catalog.position(it.content_id).ok_or_else(|| {
            Error::Schema(format!("content {} is not in the catalog", it.content_id))
        })?;
        let row = *rows.get(&it.user_id).ok_or_else(|| {
            Error::Schema(format!("user {} does not belong to UE {}", it.user_id, ue.ue_id))
        })?;
        if !(0.0..=1.0).contains(&it.rating) {
            return Err(Error::Data(format!("rating {} outside [0, 1]", it.rating)));
        }
        let ts = latest.entry((row, col)).or_insert(i64::MIN);
        if it.timestamp >= *ts {
            *ts = it.timestamp;
            values[[row, col]] = it.rating;
        }
    }
    Ok(RatingMatrix {
        user_ids: ue.user_ids.clone(),
        content_ids: catalog.ids().to_vec(),
        values,
    })
}

/// Reproducibility record of a partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub seed: u64,
    pub config: PartitionConfig,
    pub ues: Vec<UeManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeManifest {
    pub ue_id: usize,
    pub sbs_id: usize,
    pub user_ids: Vec<u32>,
    pub train_interactions: usize,
    pub test_interactions: usize,
}

impl PartitionManifest {
    pub fn new(ues: &[UeDataset], cfg: &PartitionConfig, seed: u64) -> Self {
        PartitionManifest {
            seed,
            config: *cfg,
            ues: ues
                .iter()
                .map(|u| UeManifest {
                    ue_id: u.ue_id,
                    sbs_id: u.sbs_id,
                    user_ids: u.user_ids.clone(),
                    train_interactions: u.train.len(),
                    test_interactions: u.test.len(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests;
