//! Multi-SBS caching environment.
//!
//! Each slot every SBS first applies its action (re-selecting its cache from
//! its predicted popular list), then serves its requests: from its own cache,
//! from a random adjacent SBS that caches the content, or from the content
//! server. Rewards are the cost saved relative to fetching everything from
//! the content server.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

/// Per-request fetch costs and the per-content replacement cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub alpha: i64,
    pub beta: i64,
    pub chi: i64,
    pub delta: i64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            alpha: 1,
            beta: 30,
            chi: 100,
            delta: 100,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.chi > self.beta && self.beta > self.alpha && self.alpha > 0 && self.delta >= 0) {
            return Err(Error::Config(format!(
                "costs must satisfy chi > beta > alpha > 0 and delta >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Symmetric SBS adjacency without self-loops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    adjacency: Vec<Vec<bool>>,
}

impl Topology {
    pub fn fully_connected(n: usize) -> Self {
        Topology {
            adjacency: (0..n).map(|i| (0..n).map(|j| i != j).collect()).collect(),
        }
    }

    pub fn isolated(n: usize) -> Self {
        Topology {
            adjacency: vec![vec![false; n]; n],
        }
    }

    pub fn from_matrix(adjacency: Vec<Vec<bool>>) -> Result<Self> {
        let n = adjacency.len();
        for (i, row) in adjacency.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Config("adjacency matrix must be square".into()));
            }
            if row[i] {
                return Err(Error::Config(format!("SBS {i} is adjacent to itself")));
            }
            for (j, &a) in row.iter().enumerate() {
                if a != adjacency[j][i] {
                    return Err(Error::Config(format!("adjacency is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Topology { adjacency })
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacency[a][b]
    }

    pub fn neighbors(&self, b: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[b].iter().enumerate().filter(|(_, &a)| a).map(|(j, _)| j)
    }
}

/// Local state of one SBS: its cache `c_b` and predicted popular list `p_b`.
///
/// A learned policy always caches from `popular`; baseline placements
/// installed through [`apply_placement`] may hold any catalog content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SbsState {
    pub sbs_id: usize,
    /// Cached content ids, in `popular` order.
    pub cached: Vec<u32>,
    pub popular: Vec<u32>,
}

impl SbsState {
    pub fn new(sbs_id: usize, cached: Vec<u32>, popular: Vec<u32>) -> Result<Self> {
        let s = SbsState {
            sbs_id,
            cached,
            popular,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let p: BTreeSet<u32> = self.popular.iter().copied().collect();
        if p.len() != self.popular.len() {
            return Err(Error::Contract(format!("SBS {} popular list has duplicates", self.sbs_id)));
        }
        let c: BTreeSet<u32> = self.cached.iter().copied().collect();
        if c.len() != self.cached.len() || !c.is_subset(&p) {
            return Err(Error::Contract(format!(
                "SBS {} cache must be a duplicate-free subset of its popular list",
                self.sbs_id
            )));
        }
        if self.cached.len() > self.popular.len() {
            return Err(Error::Contract("cache larger than the popular list".into()));
        }
        Ok(())
    }

    pub fn capacity(&self) -> usize {
        self.cached.len()
    }

    pub fn f_p(&self) -> usize {
        self.popular.len()
    }

    pub fn caches(&self, content: u32) -> bool {
        self.cached.contains(&content)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalState {
    pub sbs: Vec<SbsState>,
}

impl GlobalState {
    pub fn len(&self) -> usize {
        self.sbs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sbs.is_empty()
    }
}

/// `c_b` then `p_b`, every id divided by `catalog_size`.
pub fn encode_state(s: &SbsState, catalog_size: usize) -> Result<Vec<f64>> {
    if catalog_size == 0 {
        return Err(Error::Config("catalog size must be positive".into()));
    }
    let n = catalog_size as f64;
    Ok(s.cached.iter().chain(&s.popular).map(|&id| id as f64 / n).collect())
}

/// Concatenation of every SBS encoding, in SBS order.
pub fn encode_global(state: &GlobalState, catalog_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for s in &state.sbs {
        out.extend(encode_state(s, catalog_size)?);
    }
    Ok(out)
}

/// Continuous actor output plus its binary selection over `p_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheAction {
    pub raw_scores: Vec<f64>,
    pub binary: Vec<bool>,
}

/// Result of applying one action.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub action: CacheAction,
    pub cached: Vec<u32>,
    /// Contents in the new cache that were not in the old one.
    pub replacements: usize,
}

/// The `c` entries of `p_b` with the highest scores (ties to the lower index)
/// become the new cache.
pub fn decode_action(raw_scores: &[f64], s: &SbsState, c: usize) -> Result<Decoded> {
    if raw_scores.len() != s.f_p() {
        return Err(Error::Shape(format!(
            "{} scores for {} popular contents",
            raw_scores.len(),
            s.f_p()
        )));
    }
    if c > s.f_p() {
        return Err(Error::Config(format!("capacity {c} exceeds F_p = {}", s.f_p())));
    }
    if raw_scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("action scores must be finite".into()));
    }
    let mut order: Vec<usize> = (0..raw_scores.len()).collect();
    order.sort_by(|&a, &b| raw_scores[b].total_cmp(&raw_scores[a]).then(a.cmp(&b)));
    let mut binary = vec![false; raw_scores.len()];
    for &i in &order[..c] {
        binary[i] = true;
    }
    let cached: Vec<u32> = s
        .popular
        .iter()
        .zip(&binary)
        .filter(|(_, &on)| on)
        .map(|(&id, _)| id)
        .collect();
    let replacements = cached.iter().filter(|id| !s.cached.contains(id)).count();
    Ok(Decoded {
        action: CacheAction {
            raw_scores: raw_scores.to_vec(),
            binary,
        },
        cached,
        replacements,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    Local,
    Adjacent(usize),
    Cs,
}

/// Local cache first, then a uniformly random adjacent SBS holding the
/// content, then the content server.
pub fn route_request(
    content: u32,
    local: usize,
    state: &GlobalState,
    topology: &Topology,
    rng: &mut Rng,
) -> Route {
    if state.sbs[local].caches(content) {
        return Route::Local;
    }
    let holders: Vec<usize> = topology
        .neighbors(local)
        .filter(|&j| state.sbs[j].caches(content))
        .collect();
    match holders.len() {
        0 => Route::Cs,
        1 => Route::Adjacent(holders[0]),
        n => Route::Adjacent(holders[rng.random_range(0..n)]),
    }
}

/// One SBS's counters for one slot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchTally {
    pub local_hits: u64,
    pub adjacent_hits: u64,
    pub cs_fetches: u64,
    pub replacements: u64,
    /// Ones in the binary action vector.
    pub action_ones: u64,
}

impl FetchTally {
    pub fn requests(&self) -> u64 {
        self.local_hits + self.adjacent_hits + self.cs_fetches
    }

    pub fn cost(&self, c: &CostParams) -> i64 {
        c.alpha * self.local_hits as i64
            + c.beta * self.adjacent_hits as i64
            + c.chi * self.cs_fetches as i64
            + c.delta * self.replacements as i64
    }

    /// Saved cost `(chi - alpha) r_b + (chi - beta) r_n - delta r_e`.
    pub fn reward(&self, c: &CostParams) -> i64 {
        (c.chi - c.alpha) * self.local_hits as i64 + (c.chi - c.beta) * self.adjacent_hits as i64
            - c.delta * self.replacements as i64
    }

    /// Hits over requests; 0 without requests.
    pub fn hit_ratio(&self) -> f64 {
        let n = self.requests();
        if n == 0 {
            0.0
        } else {
            (self.local_hits + self.adjacent_hits) as f64 / n as f64
        }
    }

    pub fn add(&mut self, other: &FetchTally) {
        self.local_hits += other.local_hits;
        self.adjacent_hits += other.adjacent_hits;
        self.cs_fetches += other.cs_fetches;
        self.replacements += other.replacements;
        self.action_ones += other.action_ones;
    }
}

/// Per-SBS hit ratios and their mean.
pub fn cache_hit_ratio(tallies: &[FetchTally]) -> (Vec<f64>, f64) {
    let per: Vec<f64> = tallies.iter().map(FetchTally::hit_ratio).collect();
    let mean = if per.is_empty() {
        0.0
    } else {
        per.iter().sum::<f64>() / per.len() as f64
    };
    (per, mean)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: GlobalState,
    /// Decoded actions; empty when a placement was installed directly.
    pub actions: Vec<CacheAction>,
    pub tallies: Vec<FetchTally>,
    /// `R_b` per SBS.
    pub local_rewards: Vec<i64>,
    /// Mean of `local_rewards`.
    pub reward: f64,
    pub total_cost: i64,
}

impl StepOutcome {
    pub fn hit_ratio(&self) -> f64 {
        cache_hit_ratio(&self.tallies).1
    }
}

/// Applies every SBS's action, then routes `requests[b]` against the new caches.
pub fn step(
    state: &GlobalState,
    actions: &[Vec<f64>],
    requests: &[Vec<u32>],
    costs: &CostParams,
    topology: &Topology,
    rng: &mut Rng,
) -> Result<StepOutcome> {
    if actions.len() != state.len() {
        return Err(Error::Shape(format!("{} SBSs but {} actions", state.len(), actions.len())));
    }
    let mut caches = Vec::with_capacity(state.len());
    let mut decoded = Vec::with_capacity(state.len());
    for (s, a) in state.sbs.iter().zip(actions) {
        let d = decode_action(a, s, s.capacity())?;
        caches.push(d.cached);
        decoded.push(d.action);
    }
    let mut out = apply_placement(state, &caches, requests, costs, topology, rng)?;
    for (t, a) in out.tallies.iter_mut().zip(&decoded) {
        t.action_ones = a.binary.iter().filter(|&&x| x).count() as u64;
    }
    out.actions = decoded;
    Ok(out)
}

/// Installs `caches` (replacements counted against the old caches), then
/// routes `requests[b]`. Caches may hold any catalog content.
pub fn apply_placement(
    state: &GlobalState,
    caches: &[Vec<u32>],
    requests: &[Vec<u32>],
    costs: &CostParams,
    topology: &Topology,
    rng: &mut Rng,
) -> Result<StepOutcome> {
    let b = state.len();
    if caches.len() != b || requests.len() != b || topology.len() != b {
        return Err(Error::Shape(format!(
            "{b} SBSs but {} caches, {} request lists, topology of {}",
            caches.len(),
            requests.len(),
            topology.len()
        )));
    }
    let mut next = state.clone();
    let mut tallies = vec![FetchTally::default(); b];
    for (i, cache) in caches.iter().enumerate() {
        if cache.len() != state.sbs[i].capacity() {
            return Err(Error::Contract(format!(
                "SBS {i} placement holds {} contents, capacity is {}",
                cache.len(),
                state.sbs[i].capacity()
            )));
        }
        if cache.iter().collect::<BTreeSet<_>>().len() != cache.len() {
            return Err(Error::Contract(format!("SBS {i} placement repeats a content")));
        }
        tallies[i].replacements = cache.iter().filter(|id| !state.sbs[i].caches(**id)).count() as u64;
        next.sbs[i].cached = cache.clone();
    }
    for (i, reqs) in requests.iter().enumerate() {
        for &content in reqs {
            match route_request(content, i, &next, topology, rng) {
                Route::Local => tallies[i].local_hits += 1,
                Route::Adjacent(_) => tallies[i].adjacent_hits += 1,
                Route::Cs => tallies[i].cs_fetches += 1,
            }
        }
    }
    let local_rewards: Vec<i64> = tallies.iter().map(|t| t.reward(costs)).collect();
    let reward = if b == 0 {
        0.0
    } else {
        local_rewards.iter().sum::<i64>() as f64 / b as f64
    };
    let total_cost = tallies.iter().map(|t| t.cost(costs)).sum();
    Ok(StepOutcome {
        next,
        actions: Vec::new(),
        tallies,
        local_rewards,
        reward,
        total_cost,
    })
}

/// Random `c`-subset of each popular list, kept in list order.
pub fn reset(popular: &[Vec<u32>], c: usize, rng: &mut Rng) -> Result<GlobalState> {
    let mut sbs = Vec::with_capacity(popular.len());
    for (b, p) in popular.iter().enumerate() {
        if c > p.len() {
            return Err(Error::Config(format!("capacity {c} exceeds F_p = {}", p.len())));
        }
        let mut picked = sample(rng, p.len(), c).into_vec();
        picked.sort_unstable();
        sbs.push(SbsState::new(b, picked.iter().map(|&i| p[i]).collect(), p.clone())?);
    }
    Ok(GlobalState { sbs })
}

/// Source of per-slot request lists, one list per SBS.
pub trait Workload {
    fn requests(&self, episode: usize, slot: usize) -> Result<Vec<Vec<u32>>>;
}

impl<F> Workload for F
where
    F: Fn(usize, usize) -> Result<Vec<Vec<u32>>>,
{
    fn requests(&self, episode: usize, slot: usize) -> Result<Vec<Vec<u32>>> {
        self(episode, slot)
    }
}

/// Static environment description shared by every policy.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub costs: CostParams,
    pub topology: Topology,
    pub capacity: usize,
    pub catalog_size: usize,
    /// `p_b` per SBS.
    pub popular: Vec<Vec<u32>>,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.costs.validate()?;
        if self.popular.len() != self.topology.len() || self.popular.is_empty() {
            return Err(Error::Config(format!(
                "{} popular lists for a topology of {} SBSs",
                self.popular.len(),
                self.topology.len()
            )));
        }
        if self.capacity == 0 {
            return Err(Error::Config("cache capacity must be positive".into()));
        }
        if self.catalog_size == 0 {
            return Err(Error::Config("catalog must be nonempty".into()));
        }
        let f_p = self.popular[0].len();
        if self.popular.iter().any(|p| p.len() != f_p) {
            return Err(Error::Config("every SBS needs a popular list of the same length".into()));
        }
        if self.capacity >= f_p {
            return Err(Error::Config(format!("need C < F_p, got C = {} and F_p = {f_p}", self.capacity)));
        }
        if self.popular.iter().flatten().any(|&id| id as usize >= self.catalog_size) {
            return Err(Error::Config("popular list names a content outside the catalog".into()));
        }
        Ok(())
    }

    pub fn n_sbs(&self) -> usize {
        self.popular.len()
    }

    pub fn f_p(&self) -> usize {
        self.popular[0].len()
    }

    /// Width of one SBS state encoding, `C + F_p`.
    pub fn local_state_dim(&self) -> usize {
        self.capacity + self.f_p()
    }
}

/// Episode-scoped environment: reset draws a random initial cache from each
/// `p_b`, then every slot is one [`step`] or [`apply_placement`].
#[derive(Debug, Clone)]
pub struct CacheEnv {
    pub config: EnvConfig,
    state: GlobalState,
    rng: Rng,
}

impl CacheEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let state = GlobalState {
            sbs: config
                .popular
                .iter()
                .enumerate()
                .map(|(b, p)| SbsState {
                    sbs_id: b,
                    cached: p[..config.capacity].to_vec(),
                    popular: p.clone(),
                })
                .collect(),
        };
        Ok(CacheEnv {
            config,
            state,
            rng: crate::seed::rng(0),
        })
    }

    /// Fresh initial caches and routing stream for `episode`.
    pub fn reset(&mut self, seed: u64, episode: usize) -> Result<&GlobalState> {
        let mut r = crate::seed::stream(seed, &[crate::seed::tag::RESET, episode as u64]);
        self.state = reset(&self.config.popular, self.config.capacity, &mut r)?;
        self.rng = crate::seed::stream(seed, &[crate::seed::tag::ENV, episode as u64]);
        Ok(&self.state)
    }

    pub fn state(&self) -> &GlobalState {
        &self.state
    }

    pub fn encode(&self) -> Result<Vec<f64>> {
        encode_global(&self.state, self.config.catalog_size)
    }

    pub fn step(&mut self, actions: &[Vec<f64>], requests: &[Vec<u32>]) -> Result<StepOutcome> {
        let out = step(&self.state, actions, requests, &self.config.costs, &self.config.topology, &mut self.rng)?;
        self.state = out.next.clone();
        Ok(out)
    }

    pub fn apply_placement(&mut self, caches: &[Vec<u32>], requests: &[Vec<u32>]) -> Result<StepOutcome> {
        let out = apply_placement(
            &self.state,
            caches,
            requests,
            &self.config.costs,
            &self.config.topology,
            &mut self.rng,
        )?;
        self.state = out.next.clone();
        Ok(out)
    }
}

/// Best joint placement under a stationary request distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub caches: Vec<Vec<u32>>,
    pub expected_reward: f64,
    pub visited: usize,
}

/// Expected per-request global reward `R` of a joint placement, where
/// `probabilities[b][id]` is the chance a request at SBS `b` names content `id`.
/// Replacement costs are ignored.
pub fn expected_reward(
    caches: &[Vec<u32>],
    probabilities: &[Vec<f64>],
    costs: &CostParams,
    topology: &Topology,
) -> Result<f64> {
    let b = caches.len();
    if probabilities.len() != b || topology.len() != b {
        return Err(Error::Shape("placement, distributions and topology disagree on B".into()));
    }
    if b == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, probs) in probabilities.iter().enumerate() {
        for (id, &q) in probs.iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            let id = id as u32;
            if caches[i].contains(&id) {
                total += q * (costs.chi - costs.alpha) as f64;
            } else if topology.neighbors(i).any(|j| caches[j].contains(&id)) {
                total += q * (costs.chi - costs.beta) as f64;
            }
        }
    }
    Ok(total / b as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Lexicographic `k`-combinations of `0..n`.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Exhaustive search over every joint choice of `c` contents from each `p_b`.
/// The first placement in enumeration order wins ties.
pub fn brute_force_optimal_placement(
    popular: &[Vec<u32>],
    probabilities: &[Vec<f64>],
    c: usize,
    costs: &CostParams,
    topology: &Topology,
) -> Result<Placement> {
    if popular.iter().any(|p| c > p.len()) {
        return Err(Error::Config("capacity exceeds a popular list".into()));
    }
    let space: f64 = popular.iter().map(|p| binomial(p.len(), c)).product();
    if space > 1e6 {
        return Err(Error::Config(format!("{space} joint placements exceed the 1e6 limit")));
    }
    let per_sbs: Vec<Vec<Vec<u32>>> = popular
        .iter()
        .map(|p| {
            combinations(p.len(), c)
                .into_iter()
                .map(|ix| ix.into_iter().map(|i| p[i]).collect())
                .collect()
        })
        .collect();
    let mut cursor = vec![0usize; popular.len()];
    let mut best: Option<(Vec<Vec<u32>>, f64)> = None;
    let mut visited = 0;
    loop {
        let caches: Vec<Vec<u32>> = cursor.iter().zip(&per_sbs).map(|(&k, opts)| opts[k].clone()).collect();
        let r = expected_reward(&caches, probabilities, costs, topology)?;
        visited += 1;
        if best.as_ref().map_or(true, |(_, br)| r > *br) {
            best = Some((caches, r));
        }
        // odometer increment, last SBS fastest
        let mut i = popular.len();
        loop {
            if i == 0 {
                let (caches, expected_reward) = best.expect("at least one placement");
                return Ok(Placement {
                    caches,
                    expected_reward,
                    visited,
                });
            }
            i -= 1;
            cursor[i] += 1;
            if cursor[i] < per_sbs[i].len() {
                break;
            }
            cursor[i] = 0;
        }
    }
}

/// One row of the per-slot tally log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TallyRecord {
    pub episode: usize,
    pub slot: usize,
    pub sbs: usize,
    pub r_b: u64,
    pub r_n: u64,
    pub r_c: u64,
    pub r_e: u64,
    pub cost: i64,
    pub reward: i64,
    pub hit_ratio: f64,
}

impl TallyRecord {
    pub fn from_outcome(episode: usize, slot: usize, out: &StepOutcome, costs: &CostParams) -> Vec<Self> {
        out.tallies
            .iter()
            .enumerate()
            .map(|(b, t)| TallyRecord {
                episode,
                slot,
                sbs: b,
                r_b: t.local_hits,
                r_n: t.adjacent_hits,
                r_c: t.cs_fetches,
                r_e: t.replacements,
                cost: t.cost(costs),
                reward: t.reward(costs),
                hit_ratio: t.hit_ratio(),
            })
            .collect()
    }
}

pub fn write_tally_log(path: &Path, records: &[TallyRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    if records.is_empty() {
        w.write_record(["episode", "slot", "sbs", "r_b", "r_n", "r_c", "r_e", "cost", "reward", "hit_ratio"])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
