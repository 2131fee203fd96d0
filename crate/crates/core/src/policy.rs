//! Common interface for everything that decides cache contents, and the
//! evaluation loop that scores any of them through the same environment.

use serde::{Deserialize, Serialize};

use crate::env::{CacheEnv, GlobalState, StepOutcome, TallyRecord, Workload};
use crate::error::Result;
use crate::seed::Rng;

/// What a policy hands to the environment for one slot.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    /// Per-SBS scores over `p_b`, decoded top-C by the environment.
    Scores(Vec<Vec<f64>>),
    /// Explicit per-SBS caches.
    Caches(Vec<Vec<u32>>),
}

pub trait Policy {
    fn name(&self) -> &str;

    /// Called once at the start of every evaluation episode.
    fn begin_episode(&mut self, _episode: usize) {}

    fn decide(&mut self, state: &GlobalState, rng: &mut Rng) -> Result<Decision>;

    /// Sees the slot's requests and outcome after the environment step.
    fn observe(&mut self, _requests: &[Vec<u32>], _outcome: &StepOutcome) {}
}

/// Applies a decision to the environment.
pub fn apply(env: &mut CacheEnv, decision: &Decision, requests: &[Vec<u32>]) -> Result<StepOutcome> {
    match decision {
        Decision::Scores(s) => env.step(s, requests),
        Decision::Caches(c) => env.apply_placement(c, requests),
    }
}

/// Slot-averaged metrics of one episode. Reward is the global reward `R`
/// (mean over SBSs); cost is summed over SBSs; hit ratio is the SBS mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub mean_reward: f64,
    pub mean_cost: f64,
    pub mean_hit_ratio: f64,
}

#[derive(Debug, Default)]
pub(crate) struct MetricsAccumulator {
    reward: f64,
    cost: f64,
    hit: f64,
    slots: usize,
}

impl MetricsAccumulator {
    pub(crate) fn add(&mut self, out: &StepOutcome) {
        self.reward += out.reward;
        self.cost += out.total_cost as f64;
        self.hit += out.hit_ratio();
        self.slots += 1;
    }

    pub(crate) fn finish(&self, episode: usize) -> EpisodeMetrics {
        let n = self.slots.max(1) as f64;
        EpisodeMetrics {
            episode,
            mean_reward: self.reward / n,
            mean_cost: self.cost / n,
            mean_hit_ratio: self.hit / n,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalLog {
    pub episodes: Vec<EpisodeMetrics>,
    pub slots: Vec<TallyRecord>,
}

impl EvalLog {
    pub fn mean_reward(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.mean_reward))
    }

    pub fn mean_cost(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.mean_cost))
    }

    pub fn mean_hit_ratio(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.mean_hit_ratio))
    }
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Runs `episodes` episodes of `slots` slots each. Episode `e` resets the
/// environment with `(seed, e)` and reads `workload.requests(e, t)`.
pub fn evaluate(
    env: &mut CacheEnv,
    policy: &mut dyn Policy,
    workload: &dyn Workload,
    episodes: usize,
    slots: usize,
    seed: u64,
) -> Result<EvalLog> {
    let mut log = EvalLog::default();
    let mut rng = crate::seed::stream(seed, &[crate::seed::tag::BASELINE]);
    for e in 0..episodes {
        env.reset(seed, e)?;
        policy.begin_episode(e);
        let mut acc = MetricsAccumulator::default();
        for t in 0..slots {
            let requests = workload.requests(e, t)?;
            let decision = policy.decide(env.state(), &mut rng)?;
            let out = apply(env, &decision, &requests)?;
            policy.observe(&requests, &out);
            acc.add(&out);
            log.slots.extend(TallyRecord::from_outcome(e, t, &out, &env.config.costs));
        }
        log.episodes.push(acc.finish(e));
    }
    Ok(log)
}
