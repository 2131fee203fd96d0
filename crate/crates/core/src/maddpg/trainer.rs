use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    compute_global_target, select_action, soft_update_all, update_actor, update_global_critics, update_local_critic,
    AgentNets, Dims, GlobalCritics, ReplayBuffer, Transition,
};
use crate::env::{encode_state, CacheEnv, EnvConfig, GlobalState, Workload};
use crate::error::{Error, Result};
use crate::nn::{serialize_params, MlpNetwork};
use crate::policy::{Decision, EpisodeMetrics, MetricsAccumulator, Policy};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaddpgConfig {
    /// Training episodes `R_max`.
    pub episodes: usize,
    /// Slots per episode `T`.
    pub slots: usize,
    /// Test episodes `E'`.
    pub test_episodes: usize,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Minibatch size `M`.
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Initial exploration noise standard deviation.
    pub noise_sigma: f64,
    /// Multiplicative noise decay per episode.
    pub noise_decay: f64,
    pub hidden: Vec<usize>,
    /// Rewards are multiplied by this before entering the replay buffer.
    pub reward_scale: f64,
    /// Keep actor parameters every this many episodes (0 = never).
    pub checkpoint_every: usize,
}

impl Default for MaddpgConfig {
    fn default() -> Self {
        MaddpgConfig {
            episodes: 1000,
            slots: 100,
            test_episodes: 100,
            gamma: 0.99,
            tau: 0.001,
            actor_lr: 0.01,
            critic_lr: 0.01,
            batch_size: 256,
            buffer_capacity: 100_000,
            noise_sigma: 0.1,
            noise_decay: 0.995,
            hidden: vec![128, 64],
            reward_scale: 1e-3,
            checkpoint_every: 100,
        }
    }
}

impl MaddpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::Config("need 0 < batch_size <= buffer_capacity".into()));
        }
        if self.noise_sigma < 0.0 || !(self.noise_decay > 0.0 && self.noise_decay <= 1.0) {
            return Err(Error::Config("noise_sigma must be >= 0 and noise_decay in (0, 1]".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(Error::Config("reward_scale must be positive".into()));
        }
        crate::nn::OptimizerConfig::new(self.actor_lr)?;
        crate::nn::OptimizerConfig::new(self.critic_lr)?;
        Ok(())
    }
}

/// Losses and gradient norm of one learning update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStats {
    pub global_critic_loss: [f64; 2],
    pub local_critic_loss: Vec<f64>,
    pub actor_grad_norm: Vec<f64>,
}

/// Every network plus the replay buffer.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub dims: Dims,
    pub config: MaddpgConfig,
    pub agents: Vec<AgentNets>,
    pub globals: GlobalCritics,
    pub buffer: ReplayBuffer,
    catalog_size: usize,
    replay_rng: Rng,
}

impl Trainer {
    pub fn new(env: &EnvConfig, config: MaddpgConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        env.validate()?;
        let dims = Dims {
            agents: env.n_sbs(),
            local_state: env.local_state_dim(),
            local_action: env.f_p(),
        };
        let agents = (0..dims.agents)
            .map(|b| AgentNets::new(&dims, &config.hidden, b, seed))
            .collect::<Result<Vec<_>>>()?;
        let globals = GlobalCritics::new(&dims, &config.hidden, seed)?;
        Ok(Trainer {
            dims,
            agents,
            globals,
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            catalog_size: env.catalog_size,
            replay_rng: seed::stream(seed, &[seed::tag::REPLAY]),
            config,
        })
    }

    /// Noisy per-SBS scores for the current state.
    pub fn act(&self, state: &GlobalState, sigma: f64, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
        state
            .sbs
            .iter()
            .zip(&self.agents)
            .map(|(s, a)| select_action(&a.actor, &encode_state(s, self.catalog_size)?, sigma, rng))
            .collect()
    }

    /// One learning update on a fresh minibatch: global critics, local
    /// critics, actors, then every target network.
    pub fn update(&mut self) -> Result<UpdateStats> {
        let cfg = &self.config;
        let batch = self.buffer.sample(cfg.batch_size, &mut self.replay_rng)?;
        let y = compute_global_target(&batch, cfg.gamma, &self.agents, &self.globals, &self.dims)?;
        let (g1, g2) = update_global_critics(&mut self.globals, &batch, &y, cfg.critic_lr)?;
        let mut local = Vec::with_capacity(self.dims.agents);
        for (b, agent) in self.agents.iter_mut().enumerate() {
            local.push(update_local_critic(agent, b, &batch, cfg.gamma, cfg.critic_lr, &self.dims)?);
        }
        let mut norms = Vec::with_capacity(self.dims.agents);
        for (b, agent) in self.agents.iter_mut().enumerate() {
            norms.push(update_actor(agent, b, &batch, &self.globals.critics[0], cfg.actor_lr, &self.dims)?);
        }
        soft_update_all(&mut self.agents, &mut self.globals, cfg.tau)?;
        Ok(UpdateStats {
            global_critic_loss: [g1, g2],
            local_critic_loss: local,
            actor_grad_norm: norms,
        })
    }

    /// Noise-free policy built from the current actors.
    pub fn policy(&self) -> ActorPolicy {
        ActorPolicy {
            actors: self.agents.iter().map(|a| a.actor.clone()).collect(),
            catalog_size: self.catalog_size,
        }
    }
}

/// Deterministic actors, as used at test time.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorPolicy {
    pub actors: Vec<MlpNetwork>,
    pub catalog_size: usize,
}

impl ActorPolicy {
    pub fn to_blobs(&self) -> Vec<Vec<u8>> {
        self.actors.iter().map(serialize_params).collect()
    }

    pub fn from_blobs(blobs: &[Vec<u8>], catalog_size: usize) -> Result<Self> {
        Ok(ActorPolicy {
            actors: blobs
                .iter()
                .map(|b| crate::nn::deserialize_params(b))
                .collect::<Result<Vec<_>>>()?,
            catalog_size,
        })
    }
}

impl Policy for ActorPolicy {
    fn name(&self) -> &str {
        "maddpg"
    }

    fn decide(&mut self, state: &GlobalState, rng: &mut Rng) -> Result<Decision> {
        if state.len() != self.actors.len() {
            return Err(Error::Shape(format!("{} actors for {} SBSs", self.actors.len(), state.len())));
        }
        let scores = state
            .sbs
            .iter()
            .zip(&self.actors)
            .map(|(s, a)| select_action(a, &encode_state(s, self.catalog_size)?, 0.0, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Decision::Scores(scores))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEpisode {
    pub metrics: EpisodeMetrics,
    pub updates: usize,
    /// Mean losses of the two global critics over this episode's updates.
    pub global_critic_loss: Option<[f64; 2]>,
    /// Mean local critic loss per agent.
    pub local_critic_loss: Option<Vec<f64>>,
    /// Mean actor gradient norm over agents and updates.
    pub actor_grad_norm: Option<f64>,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub episodes: Vec<TrainEpisode>,
    /// `(episode, actor blobs)`
    pub checkpoints: Vec<(usize, Vec<Vec<u8>>)>,
}

impl TrainLog {
    /// Writes one row per episode. Columns: `episode, mean_reward, mean_cost,
    /// mean_hit_ratio, updates, global_critic_loss_1, global_critic_loss_2,
    /// local_critic_loss_<b>..., actor_grad_norm, noise_sigma`; empty cells for
    /// episodes without updates.
    pub fn write_csv(&self, path: &Path, agents: usize) -> Result<()> {
        let mut out = Vec::new();
        let locals: Vec<String> = (0..agents).map(|b| format!("local_critic_loss_{b}")).collect();
        let mut header = vec![
            "episode",
            "mean_reward",
            "mean_cost",
            "mean_hit_ratio",
            "updates",
            "global_critic_loss_1",
            "global_critic_loss_2",
        ];
        header.extend(locals.iter().map(String::as_str));
        header.extend(["actor_grad_norm", "noise_sigma"]);
        writeln!(out, "{}", header.join(",")).expect("write to memory");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.episodes {
            let mut row = vec![
                e.metrics.episode.to_string(),
                e.metrics.mean_reward.to_string(),
                e.metrics.mean_cost.to_string(),
                e.metrics.mean_hit_ratio.to_string(),
                e.updates.to_string(),
                opt(e.global_critic_loss.map(|g| g[0])),
                opt(e.global_critic_loss.map(|g| g[1])),
            ];
            for b in 0..agents {
                row.push(opt(e.local_critic_loss.as_ref().map(|l| l[b])));
            }
            row.push(opt(e.actor_grad_norm));
            row.push(e.noise_sigma.to_string());
            writeln!(out, "{}", row.join(",")).expect("write to memory");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Runs the training loop. Learning starts once the buffer holds more than
/// `batch_size` transitions and then happens once per slot.
pub fn train(env: &mut CacheEnv, workload: &dyn Workload, config: &MaddpgConfig, seed: u64) -> Result<(Trainer, TrainLog)> {
    let mut trainer = Trainer::new(&env.config, config.clone(), seed)?;
    let mut log = TrainLog::default();
    let mut explore = seed::stream(seed, &[seed::tag::EXPLORATION]);
    let mut sigma = config.noise_sigma;
    let scale = config.reward_scale;
    for episode in 0..config.episodes {
        env.reset(seed, episode)?;
        let mut acc = MetricsAccumulator::default();
        let mut updates = 0usize;
        let mut g_loss = [0.0; 2];
        let mut l_loss = vec![0.0; trainer.dims.agents];
        let mut norm = 0.0;
        for t in 0..config.slots {
            let state = env.encode()?;
            let actions = trainer.act(env.state(), sigma, &mut explore)?;
            let requests = workload.requests(episode, t)?;
            let out = env.step(&actions, &requests)?;
            acc.add(&out);
            trainer.buffer.push(Transition {
                state,
                action: actions.concat(),
                reward: out.reward * scale,
                local_rewards: out.local_rewards.iter().map(|&r| r as f64 * scale).collect(),
                next_state: env.encode()?,
            });
            if trainer.buffer.len() > config.batch_size {
                let st = trainer.update()?;
                updates += 1;
                g_loss[0] += st.global_critic_loss[0];
                g_loss[1] += st.global_critic_loss[1];
                for (acc, l) in l_loss.iter_mut().zip(&st.local_critic_loss) {
                    *acc += l;
                }
                norm += st.actor_grad_norm.iter().sum::<f64>() / st.actor_grad_norm.len() as f64;
            }
        }
        let n = updates as f64;
        log.episodes.push(TrainEpisode {
            metrics: acc.finish(episode),
            updates,
            global_critic_loss: (updates > 0).then(|| [g_loss[0] / n, g_loss[1] / n]),
            local_critic_loss: (updates > 0).then(|| l_loss.iter().map(|l| l / n).collect()),
            actor_grad_norm: (updates > 0).then(|| norm / n),
            noise_sigma: sigma,
        });
        sigma *= config.noise_decay;
        if config.checkpoint_every > 0 && (episode + 1) % config.checkpoint_every == 0 {
            log.checkpoints.push((episode + 1, trainer.policy().to_blobs()));
        }
    }
    Ok((trainer, log))
}
