//! Synthetic rating data for controlled experiments.
//!
//! Users are split into contiguous taste groups; each group perturbs a shared
//! Zipf popularity profile with log-normal noise of strength `heterogeneity`.
//! Each user rates `ratings_per_user` distinct contents drawn from the group
//! profile, so the catalog position still roughly tracks global popularity.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ContentCatalog, Demographics, Interaction, RatingsDataset};
use crate::error::{Error, Result};
use crate::seed;

const AGE_CODES: [u32; 7] = [1, 18, 25, 35, 45, 50, 56];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub users: usize,
    pub catalog_size: usize,
    pub zipf_exponent: f64,
    pub ratings_per_user: usize,
    pub groups: usize,
    pub heterogeneity: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            users: 200,
            catalog_size: 50,
            zipf_exponent: 1.0,
            ratings_per_user: 12,
            groups: 1,
            heterogeneity: 0.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.catalog_size == 0 || self.groups == 0 {
            return Err(Error::Config("synthetic users, catalog and groups must be positive".into()));
        }
        if self.ratings_per_user == 0 || self.ratings_per_user > self.catalog_size {
            return Err(Error::Config(format!(
                "ratings_per_user must lie in 1..={}",
                self.catalog_size
            )));
        }
        if self.heterogeneity < 0.0 || self.zipf_exponent < 0.0 {
            return Err(Error::Config("heterogeneity and zipf_exponent must be >= 0".into()));
        }
        Ok(())
    }
}

/// Group of a 1-based user id.
pub fn group_of(user_id: u32, cfg: &SyntheticConfig) -> usize {
    (user_id as usize - 1) * cfg.groups / cfg.users
}

pub fn generate(cfg: &SyntheticConfig, seed: u64) -> Result<RatingsDataset> {
    cfg.validate()?;
    let mut rng = seed::stream(seed, &[seed::tag::SYNTHETIC]);
    let base: Vec<f64> = (1..=cfg.catalog_size)
        .map(|k| (k as f64).powf(-cfg.zipf_exponent))
        .collect();
    let profiles: Vec<Vec<f64>> = (0..cfg.groups)
        .map(|_| {
            base.iter()
                .map(|w| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    w * (cfg.heterogeneity * z).exp()
                })
                .collect()
        })
        .collect();

    let mut interactions = Vec::with_capacity(cfg.users * cfg.ratings_per_user);
    let mut demographics = BTreeMap::new();
    for user_id in 1..=cfg.users as u32 {
        let weights = &profiles[group_of(user_id, cfg)];
        // Weighted sampling without replacement via exponential keys.
        let mut keyed: Vec<(f64, u32)> = weights
            .iter()
            .enumerate()
            .map(|(c, w)| {
                let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                (u.ln() / w, c as u32)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (t, &(_, content_id)) in keyed.iter().take(cfg.ratings_per_user).enumerate() {
            let stars = 2 + rng.random_range(0..4u8);
            interactions.push(Interaction {
                user_id,
                content_id,
                rating: f64::from(stars - 1) / 4.0,
                timestamp: t as i64,
            });
        }
        demographics.insert(
            user_id,
            Demographics {
                gender: f64::from(rng.random_range(0..2u8)),
                age: f64::from(AGE_CODES[rng.random_range(0..AGE_CODES.len())]) / 56.0,
                occupation: f64::from(rng.random_range(0..=20u8)) / 20.0,
            },
        );
    }
    Ok(RatingsDataset {
        catalog: ContentCatalog::dense(cfg.catalog_size),
        interactions,
        demographics,
    })
}

/// `users x contents` matrix `u v^T` with `u, v ~ U(0, 1)`: rank one, entries in `[0, 1]`.
pub fn rank_one_matrix(users: usize, contents: usize, seed: u64) -> Array2<f64> {
    let mut rng = seed::stream(seed, &[seed::tag::SYNTHETIC, 1]);
    let u: Vec<f64> = (0..users).map(|_| rng.random()).collect();
    let v: Vec<f64> = (0..contents).map(|_| rng.random()).collect();
    Array2::from_shape_fn((users, contents), |(i, j)| u[i] * v[j])
}
