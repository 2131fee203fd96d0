//! Comparison caching schemes. All of them implement [`Policy`] and return
//! explicit caches, so they are scored by the same environment accounting as
//! the learned policies.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::elastic_fl::{AggregationMode, FlConfig};
use crate::env::{GlobalState, StepOutcome};
use crate::error::{Error, Result};
use crate::policy::{Decision, Policy};
use crate::prediction::PopularityTable;
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    CEpsGreedy,
    Thompson,
    Bsg,
    Efnrl,
    Tfmadrl,
    Cefmr,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Random,
        PolicyKind::CEpsGreedy,
        PolicyKind::Thompson,
        PolicyKind::Bsg,
        PolicyKind::Efnrl,
        PolicyKind::Tfmadrl,
        PolicyKind::Cefmr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::CEpsGreedy => "c_eps_greedy",
            PolicyKind::Thompson => "thompson",
            PolicyKind::Bsg => "bsg",
            PolicyKind::Efnrl => "efnrl",
            PolicyKind::Tfmadrl => "tfmadrl",
            PolicyKind::Cefmr => "cefmr",
        }
    }

    /// Schemes whose caching decisions come from trained actors.
    pub fn uses_maddpg(self) -> bool {
        matches!(self, PolicyKind::Tfmadrl | PolicyKind::Cefmr)
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme '{s}'")))
    }
}

fn check_capacity(catalog_size: usize, c: usize) -> Result<()> {
    if c == 0 || c > catalog_size {
        return Err(Error::Config(format!("capacity {c} must lie in 1..={catalog_size}")));
    }
    Ok(())
}

/// Uniform `c`-subset of `0..catalog_size`, ascending.
pub fn random_policy(catalog_size: usize, c: usize, rng: &mut Rng) -> Result<Vec<u32>> {
    check_capacity(catalog_size, c)?;
    let mut out: Vec<u32> = sample(rng, catalog_size, c).into_iter().map(|i| i as u32).collect();
    out.sort_unstable();
    Ok(out)
}

/// Indices of the `c` largest scores; ties go to the lower index.
pub fn top_c_by_score(scores: &[f64], c: usize) -> Vec<u32> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.into_iter().take(c).map(|i| i as u32).collect()
}

/// Indices of the `c` largest counts; ties go to the lower index.
pub fn top_c_by_count(counts: &[u64], c: usize) -> Vec<u32> {
    let mut idx: Vec<usize> = (0..counts.len()).collect();
    idx.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    idx.into_iter().take(c).map(|i| i as u32).collect()
}

/// With probability `1 - eps` the top-`c` by request count, otherwise a
/// uniform random subset. The flag reports whether the random branch ran.
pub fn c_eps_greedy(counts: &[u64], c: usize, eps: f64, rng: &mut Rng) -> Result<(Vec<u32>, bool)> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Config(format!("epsilon {eps} outside [0, 1]")));
    }
    check_capacity(counts.len(), c)?;
    if rng.random::<f64>() < eps {
        Ok((random_policy(counts.len(), c, rng)?, true))
    } else {
        Ok((top_c_by_count(counts, c), false))
    }
}

/// Independent `Beta(a_c, b_c)` per content, starting from `Beta(1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaPosterior {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl BetaPosterior {
    pub fn uniform(catalog_size: usize) -> Self {
        BetaPosterior {
            a: vec![1.0; catalog_size],
            b: vec![1.0; catalog_size],
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn params(&self, content: u32) -> (f64, f64) {
        (self.a[content as usize], self.b[content as usize])
    }

    pub fn set(&mut self, content: u32, a: f64, b: f64) -> Result<()> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::Config(format!("Beta parameters must be positive, got ({a}, {b})")));
        }
        self.a[content as usize] = a;
        self.b[content as usize] = b;
        Ok(())
    }

    pub fn mean(&self, content: u32) -> f64 {
        let (a, b) = self.params(content);
        a / (a + b)
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.len() as u32).map(|c| self.mean(c)).collect()
    }

    pub fn update(&mut self, content: u32, successes: u64, failures: u64) {
        self.a[content as usize] += successes as f64;
        self.b[content as usize] += failures as f64;
    }

    pub fn sample_all(&self, rng: &mut Rng) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(&a, &b)| Beta::new(a, b).expect("parameters kept positive").sample(rng))
            .collect()
    }
}

/// Top-`c` contents by one posterior draw each.
pub fn thompson_policy(posterior: &BetaPosterior, c: usize, rng: &mut Rng) -> Result<Vec<u32>> {
    check_capacity(posterior.len(), c)?;
    Ok(top_c_by_score(&posterior.sample_all(rng), c))
}

/// For each content in `cached`: hits are the slot's requests for it, misses
/// the slot's other requests at the same SBS.
pub fn thompson_update(posterior: &mut BetaPosterior, cached: &[u32], requests: &[u32]) {
    let total = requests.len() as u64;
    for &c in cached {
        let hits = requests.iter().filter(|&&r| r == c).count() as u64;
        posterior.update(c, hits, total - hits);
    }
}

/// Sequential greedy allocation: SBSs ranked by the summed posterior mean of
/// the contents in their request profile (ties to the lower SBS id); the
/// first takes the `c` most popular contents, the next the following `c`, and
/// so on. Once the catalog runs out, allocation restarts from the top.
pub fn bsg_allocate(posterior: &BetaPosterior, profiles: &[Vec<u32>], c: usize) -> Result<Vec<Vec<u32>>> {
    check_capacity(posterior.len(), c)?;
    let means = posterior.means();
    let order = top_c_by_score(&means, means.len());
    let mut ranked: Vec<(f64, usize)> = profiles
        .iter()
        .enumerate()
        .map(|(b, p)| (p.iter().map(|&x| means[x as usize]).sum(), b))
        .collect();
    ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let mut out = vec![Vec::new(); profiles.len()];
    for (rank, &(_, b)) in ranked.iter().enumerate() {
        let start = (rank * c) % order.len();
        out[b] = (0..c).map(|j| order[(start + j) % order.len()]).collect();
    }
    Ok(out)
}

/// `a += requests`, `b += 1` for every content without a request this slot.
pub fn bsg_update(posterior: &mut BetaPosterior, requests: &[Vec<u32>]) {
    let mut counts = vec![0u64; posterior.len()];
    for &r in requests.iter().flatten() {
        counts[r as usize] += 1;
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            posterior.update(c as u32, n, 0);
        } else {
            posterior.update(c as u32, 0, 1);
        }
    }
}

/// Top-`c` entries of a predicted popularity table; ties to the lower id.
pub fn efnrl_policy(table: &PopularityTable, c: usize) -> Result<Vec<u32>> {
    if c == 0 || c > table.len() {
        return Err(Error::Config(format!("capacity {c} must lie in 1..={}", table.len())));
    }
    let mut ranked: Vec<(&u32, &usize)> = table.iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    Ok(ranked.into_iter().take(c).map(|(&id, _)| id).collect())
}

/// Federated pipeline without elastic blending: every UE starts each round
/// from the downloaded global model.
pub fn tfmadrl_config(cefmr: &FlConfig) -> FlConfig {
    FlConfig {
        full_download: true,
        aggregation: AggregationMode::WeightedAverage,
        ..cefmr.clone()
    }
}

#[derive(Debug, Clone)]
pub struct RandomPolicy {
    pub catalog_size: usize,
    pub capacity: usize,
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(&mut self, state: &GlobalState, rng: &mut Rng) -> Result<Decision> {
        let caches = (0..state.len())
            .map(|_| random_policy(self.catalog_size, self.capacity, rng))
            .collect::<Result<_>>()?;
        Ok(Decision::Caches(caches))
    }
}

#[derive(Debug, Clone)]
pub struct CEpsGreedyPolicy {
    pub capacity: usize,
    pub epsilon: f64,
    /// Keep counting across slots; otherwise only the previous slot counts.
    pub cumulative: bool,
    counts: Vec<Vec<u64>>,
}

impl CEpsGreedyPolicy {
    pub fn new(n_sbs: usize, catalog_size: usize, capacity: usize, epsilon: f64, cumulative: bool) -> Self {
        CEpsGreedyPolicy {
            capacity,
            epsilon,
            cumulative,
            counts: vec![vec![0; catalog_size]; n_sbs],
        }
    }

    pub fn counts(&self, sbs: usize) -> &[u64] {
        &self.counts[sbs]
    }
}

impl Policy for CEpsGreedyPolicy {
    fn name(&self) -> &str {
        "c_eps_greedy"
    }

    fn decide(&mut self, _state: &GlobalState, rng: &mut Rng) -> Result<Decision> {
        let caches = self
            .counts
            .iter()
            .map(|c| c_eps_greedy(c, self.capacity, self.epsilon, rng).map(|(cache, _)| cache))
            .collect::<Result<_>>()?;
        Ok(Decision::Caches(caches))
    }

    fn observe(&mut self, requests: &[Vec<u32>], _outcome: &StepOutcome) {
        for (counts, reqs) in self.counts.iter_mut().zip(requests) {
            if !self.cumulative {
                counts.fill(0);
            }
            for &r in reqs {
                counts[r as usize] += 1;
            }
        }
    }
}

/// One posterior per SBS.
#[derive(Debug, Clone)]
pub struct ThompsonPolicy {
    pub capacity: usize,
    pub posteriors: Vec<BetaPosterior>,
}

impl ThompsonPolicy {
    pub fn new(n_sbs: usize, catalog_size: usize, capacity: usize) -> Self {
        ThompsonPolicy {
            capacity,
            posteriors: vec![BetaPosterior::uniform(catalog_size); n_sbs],
        }
    }
}

impl Policy for ThompsonPolicy {
    fn name(&self) -> &str {
        "thompson"
    }

    fn decide(&mut self, _state: &GlobalState, rng: &mut Rng) -> Result<Decision> {
        let caches = self
            .posteriors
            .iter()
            .map(|p| thompson_policy(p, self.capacity, rng))
            .collect::<Result<_>>()?;
        Ok(Decision::Caches(caches))
    }

    fn observe(&mut self, requests: &[Vec<u32>], outcome: &StepOutcome) {
        for ((p, reqs), sbs) in self.posteriors.iter_mut().zip(requests).zip(&outcome.next.sbs) {
            thompson_update(p, &sbs.cached, reqs);
        }
    }
}

/// Shared popularity posterior; each SBS's profile is the set of contents it
/// saw requested in the previous slot.
#[derive(Debug, Clone)]
pub struct BsgPolicy {
    pub capacity: usize,
    pub posterior: BetaPosterior,
    profiles: Vec<Vec<u32>>,
}

impl BsgPolicy {
    pub fn new(n_sbs: usize, catalog_size: usize, capacity: usize) -> Self {
        BsgPolicy {
            capacity,
            posterior: BetaPosterior::uniform(catalog_size),
            profiles: vec![Vec::new(); n_sbs],
        }
    }
}

impl Policy for BsgPolicy {
    fn name(&self) -> &str {
        "bsg"
    }

    fn decide(&mut self, _state: &GlobalState, _rng: &mut Rng) -> Result<Decision> {
        Ok(Decision::Caches(bsg_allocate(&self.posterior, &self.profiles, self.capacity)?))
    }

    fn observe(&mut self, requests: &[Vec<u32>], _outcome: &StepOutcome) {
        bsg_update(&mut self.posterior, requests);
        for (p, reqs) in self.profiles.iter_mut().zip(requests) {
            let mut set: Vec<u32> = reqs.clone();
            set.sort_unstable();
            set.dedup();
            *p = set;
        }
    }
}

/// Fixed caches from predicted popularity.
#[derive(Debug, Clone)]
pub struct EfnrlPolicy {
    pub caches: Vec<Vec<u32>>,
}

impl EfnrlPolicy {
    pub fn from_tables(tables: &[PopularityTable], capacity: usize) -> Result<Self> {
        Ok(EfnrlPolicy {
            caches: tables.iter().map(|t| efnrl_policy(t, capacity)).collect::<Result<_>>()?,
        })
    }

    /// Each `p_b` is already ordered by predicted popularity.
    pub fn from_popular(popular: &[Vec<u32>], capacity: usize) -> Result<Self> {
        let caches = popular
            .iter()
            .map(|p| {
                if capacity == 0 || capacity > p.len() {
                    Err(Error::Config(format!("capacity {capacity} must lie in 1..={}", p.len())))
                } else {
                    Ok(p[..capacity].to_vec())
                }
            })
            .collect::<Result<_>>()?;
        Ok(EfnrlPolicy { caches })
    }
}

impl Policy for EfnrlPolicy {
    fn name(&self) -> &str {
        "efnrl"
    }

    fn decide(&mut self, state: &GlobalState, _rng: &mut Rng) -> Result<Decision> {
        if state.len() != self.caches.len() {
            return Err(Error::Shape(format!("{} caches for {} SBSs", self.caches.len(), state.len())));
        }
        Ok(Decision::Caches(self.caches.clone()))
    }
}

/// Table mapping each content to how often it appears, for building
/// [`PopularityTable`]s from raw lists in tests and tools.
pub fn count_table(ids: impl IntoIterator<Item = u32>) -> PopularityTable {
    let mut t = BTreeMap::new();
    for id in ids {
        *t.entry(id).or_insert(0) += 1;
    }
    t
}
