//! Popular-content prediction.
//!
//! Per UE: reconstruct the test ratings with the trained AAE, append
//! demographics, pick the most active users, find each one's nearest
//! neighbors by cosine similarity, and count which contents those neighbors
//! actually rated. Per SBS: merge the UEs' top lists by vote.
//!
//! All ties break toward the smaller id.

use std::collections::BTreeMap;

use ndarray::{concatenate, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::aae::{reconstruct_batch, AaeModel};
use crate::dataset::RatingMatrix;
use crate::elastic_fl::UeClient;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictionConfig {
    /// The top `1/m` users by rating count are active.
    pub active_fraction_m: usize,
    pub neighbors_k: usize,
    /// Size of every predicted list, `F_p`.
    pub f_p: usize,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig {
            active_fraction_m: 5,
            neighbors_k: 10,
            f_p: 10,
        }
    }
}

impl PredictionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.active_fraction_m == 0 || self.neighbors_k == 0 || self.f_p == 0 {
            return Err(Error::Config("m, K and F_p must all be positive".into()));
        }
        Ok(())
    }
}

/// Row-wise AAE reconstruction of a rating matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedRatings {
    pub user_ids: Vec<u32>,
    pub values: Array2<f64>,
}

/// Reconstructed ratings followed by the demographic columns
/// `gender, age, occupation`.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedProfile {
    pub user_ids: Vec<u32>,
    pub values: Array2<f64>,
}

/// Content id to the number of neighbor rows that rated it.
pub type PopularityTable = BTreeMap<u32, usize>;

pub fn reconstruct_ratings(model: &AaeModel, test: &RatingMatrix) -> Result<ReconstructedRatings> {
    Ok(ReconstructedRatings {
        user_ids: test.user_ids.clone(),
        values: reconstruct_batch(model, test.values.view())?,
    })
}

pub fn merge_profile(ratings: &ReconstructedRatings, demographics: ArrayView2<'_, f64>) -> Result<MergedProfile> {
    if demographics.nrows() != ratings.values.nrows() {
        return Err(Error::Shape(format!(
            "{} demographic rows for {} users",
            demographics.nrows(),
            ratings.values.nrows()
        )));
    }
    let values = concatenate(Axis(1), &[ratings.values.view(), demographics])
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok(MergedProfile {
        user_ids: ratings.user_ids.clone(),
        values,
    })
}

/// The `ceil(rows / m)` users with the most nonzero ratings.
pub fn select_active_users(matrix: &RatingMatrix, m: usize) -> Result<Vec<u32>> {
    if m == 0 {
        return Err(Error::Config("m must be at least 1".into()));
    }
    if matrix.rows() == 0 {
        return Err(Error::Contract("cannot pick active users from an empty matrix".into()));
    }
    let counts = matrix.row_nonzero_counts();
    let mut order: Vec<(usize, u32)> = counts.into_iter().zip(matrix.user_ids.iter().copied()).collect();
    order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(order
        .into_iter()
        .take(matrix.rows().div_ceil(m))
        .map(|(_, u)| u)
        .collect())
}

/// Cosine of the angle between two vectors; 0 when either is all zeros.
pub fn cosine_similarity(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> f64 {
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0)
}

/// The `k` users most similar to `active`, excluding `active` itself.
pub fn k_nearest_neighbors(profile: &MergedProfile, active: u32, k: usize) -> Result<Vec<u32>> {
    let n = profile.user_ids.len();
    if k >= n {
        return Err(Error::Config(format!("K = {k} needs more than {n} users")));
    }
    let row = profile
        .user_ids
        .iter()
        .position(|&u| u == active)
        .ok_or_else(|| Error::Contract(format!("user {active} is not in the profile")))?;
    let me = profile.values.row(row);
    let mut sims: Vec<(f64, u32)> = profile
        .user_ids
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != row)
        .map(|(i, &u)| (cosine_similarity(me, profile.values.row(i)), u))
        .collect();
    sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(sims.into_iter().take(k).map(|(_, u)| u).collect())
}

/// Counts, per content, the neighbor rows (of the original matrix) rating it.
/// Neighbors are counted with multiplicity.
pub fn score_interested_contents(matrix: &RatingMatrix, neighbors: &[u32]) -> Result<PopularityTable> {
    let mut table = PopularityTable::new();
    for &u in neighbors {
        let row = matrix
            .row_of(u)
            .ok_or_else(|| Error::Contract(format!("neighbor {u} is not in the matrix")))?;
        for (col, &v) in matrix.values.row(row).iter().enumerate() {
            if v != 0.0 {
                *table.entry(matrix.content_ids[col]).or_insert(0) += 1;
            }
        }
    }
    Ok(table)
}

/// Every content of the matrix, most-rated first.
pub fn fallback_order(matrix: &RatingMatrix) -> Vec<u32> {
    let mut cols: Vec<(usize, u32)> = matrix
        .values
        .columns()
        .into_iter()
        .zip(&matrix.content_ids)
        .map(|(c, &id)| (c.iter().filter(|&&v| v != 0.0).count(), id))
        .collect();
    cols.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    cols.into_iter().map(|(_, id)| id).collect()
}

/// Top `f_p` contents by count; short tables are padded from `fallback`.
pub fn top_fp_contents(table: &PopularityTable, f_p: usize, fallback: &[u32]) -> Result<Vec<u32>> {
    let mut ranked: Vec<(usize, u32)> = table
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(&id, &c)| (c, id))
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<u32> = ranked.into_iter().take(f_p).map(|(_, id)| id).collect();
    for &id in fallback {
        if out.len() == f_p {
            break;
        }
        if !out.contains(&id) {
            out.push(id);
        }
    }
    if out.len() < f_p {
        return Err(Error::Config(format!("cannot fill {f_p} predictions from {} contents", out.len())));
    }
    Ok(out)
}

/// One vote per appearance; top `f_p` by votes.
pub fn sbs_merge_popular(per_ue: &[Vec<u32>], f_p: usize) -> Result<Vec<u32>> {
    let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
    for list in per_ue {
        for &id in list {
            *votes.entry(id).or_insert(0) += 1;
        }
    }
    if votes.len() < f_p {
        return Err(Error::Contract(format!(
            "UE lists name only {} distinct contents, {f_p} required",
            votes.len()
        )));
    }
    let mut ranked: Vec<(usize, u32)> = votes.into_iter().map(|(id, v)| (v, id)).collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(ranked.into_iter().take(f_p).map(|(_, id)| id).collect())
}

/// Full per-UE pipeline on a test matrix and its aligned demographic rows.
pub fn predict_interested(
    model: &AaeModel,
    test: &RatingMatrix,
    demographics: ArrayView2<'_, f64>,
    cfg: &PredictionConfig,
) -> Result<Vec<u32>> {
    cfg.validate()?;
    let profile = merge_profile(&reconstruct_ratings(model, test)?, demographics)?;
    let mut table = PopularityTable::new();
    for active in select_active_users(test, cfg.active_fraction_m)? {
        let neighbors = k_nearest_neighbors(&profile, active, cfg.neighbors_k)?;
        for (id, c) in score_interested_contents(test, &neighbors)? {
            *table.entry(id).or_insert(0) += c;
        }
    }
    top_fp_contents(&table, cfg.f_p, &fallback_order(test))
}

impl UeClient {
    /// Predicted interested contents using this UE's own local model.
    pub fn predict_popular(&self, cfg: &PredictionConfig) -> Result<Vec<u32>> {
        predict_interested(self.local_model(), &self.test, self.demographics.view(), cfg)
    }

    /// Same pipeline with an explicitly supplied model.
    pub fn predict_popular_with(&self, model: &AaeModel, cfg: &PredictionConfig) -> Result<Vec<u32>> {
        predict_interested(model, &self.test, self.demographics.view(), cfg)
    }
}
