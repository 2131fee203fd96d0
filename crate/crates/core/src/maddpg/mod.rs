//! Multi-agent actor-critic caching.
//!
//! Each SBS agent owns an actor (local state to scores over `p_b`) and a
//! local critic over its own state and action. Two global critics see the
//! joint state and action; their target value takes the smaller of the two
//! target estimates. An actor ascends the sum of the first global critic's
//! and its local critic's action gradients.

mod replay;
mod trainer;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sgd_step, soft_update, Activation, Gradients, MlpNetwork, OptimizerConfig};
use crate::seed::{self, Rng};

pub use replay::{Batch, ReplayBuffer, Transition};
pub use trainer::{train, ActorPolicy, MaddpgConfig, TrainEpisode, TrainLog, Trainer};

/// Widths shared by every network of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub agents: usize,
    /// `C + F_p`
    pub local_state: usize,
    /// `F_p`
    pub local_action: usize,
}

impl Dims {
    pub fn global_state(&self) -> usize {
        self.agents * self.local_state
    }

    pub fn global_action(&self) -> usize {
        self.agents * self.local_action
    }

    pub fn state_cols(&self, b: usize) -> std::ops::Range<usize> {
        b * self.local_state..(b + 1) * self.local_state
    }

    pub fn action_cols(&self, b: usize) -> std::ops::Range<usize> {
        b * self.local_action..(b + 1) * self.local_action
    }
}

fn mlp(input: usize, hidden: &[usize], output: usize, out_act: Activation, seed: u64) -> Result<MlpNetwork> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    let mut acts = vec![Activation::Relu; hidden.len()];
    acts.push(out_act);
    MlpNetwork::new(&dims, &acts, seed)
}

/// One SBS's actor and local critic with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets {
    pub actor: MlpNetwork,
    pub actor_target: MlpNetwork,
    pub critic: MlpNetwork,
    pub critic_target: MlpNetwork,
}

impl AgentNets {
    /// Actor `local_state -> hidden (relu) -> F_p (sigmoid)`; critic
    /// `local_state + F_p -> hidden (relu) -> 1`. Targets start as copies.
    pub fn new(dims: &Dims, hidden: &[usize], b: usize, seed: u64) -> Result<Self> {
        let actor = mlp(
            dims.local_state,
            hidden,
            dims.local_action,
            Activation::Sigmoid,
            seed::derive(seed, &[seed::tag::ACTOR_INIT, b as u64]),
        )?;
        let critic = mlp(
            dims.local_state + dims.local_action,
            hidden,
            1,
            Activation::Identity,
            seed::derive(seed, &[seed::tag::CRITIC_INIT, b as u64]),
        )?;
        Ok(AgentNets {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
        })
    }
}

/// The two shared global critics and their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalCritics {
    pub critics: [MlpNetwork; 2],
    pub targets: [MlpNetwork; 2],
}

impl GlobalCritics {
    pub fn new(dims: &Dims, hidden: &[usize], seed: u64) -> Result<Self> {
        let make = |x: u64| {
            mlp(
                dims.global_state() + dims.global_action(),
                hidden,
                1,
                Activation::Identity,
                seed::derive(seed, &[seed::tag::CRITIC_INIT, 1 << 32, x]),
            )
        };
        let critics = [make(0)?, make(1)?];
        Ok(GlobalCritics {
            targets: critics.clone(),
            critics,
        })
    }
}

/// Actor output plus Gaussian noise, clipped to `[0, 1]`.
pub fn select_action(actor: &MlpNetwork, state: &[f64], sigma: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    let (mut out, _) = actor.forward(state)?;
    if sigma > 0.0 {
        for v in &mut out {
            let n: f64 = StandardNormal.sample(&mut *rng);
            *v += sigma * n;
        }
    }
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

fn hstack(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    concatenate(Axis(1), &[a, b]).map_err(|e| Error::Shape(e.to_string()))
}

fn column(values: &Array2<f64>) -> Array1<f64> {
    values.column(0).to_owned()
}

/// Joint next action from every target actor on its slice of `next_states`.
pub fn target_actions(agents: &[AgentNets], dims: &Dims, next_states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((next_states.nrows(), dims.global_action()));
    for (b, agent) in agents.iter().enumerate() {
        let a = agent
            .actor_target
            .predict(next_states.slice(s![.., dims.state_cols(b)]))?;
        out.slice_mut(s![.., dims.action_cols(b)]).assign(&a);
    }
    Ok(out)
}

/// `r + gamma * min(q1, q2)`, element-wise.
pub fn global_target_from_values(rewards: &Array1<f64>, gamma: f64, q1: &Array1<f64>, q2: &Array1<f64>) -> Array1<f64> {
    let mut y = rewards.clone();
    for i in 0..y.len() {
        y[i] += gamma * q1[i].min(q2[i]);
    }
    y
}

/// `y_g = R + gamma * min_x Q'_x(s', a')` with `a'` from the target actors.
pub fn compute_global_target(
    batch: &Batch,
    gamma: f64,
    agents: &[AgentNets],
    globals: &GlobalCritics,
    dims: &Dims,
) -> Result<Array1<f64>> {
    let next_actions = target_actions(agents, dims, batch.next_states.view())?;
    let input = hstack(batch.next_states.view(), next_actions.view())?;
    let q1 = column(&globals.targets[0].predict(input.view())?);
    let q2 = column(&globals.targets[1].predict(input.view())?);
    Ok(global_target_from_values(&batch.rewards, gamma, &q1, &q2))
}

/// `(1/M) sum (y - Q(x))^2` without updating anything.
pub fn critic_loss(critic: &MlpNetwork, inputs: ArrayView2<'_, f64>, targets: &Array1<f64>) -> Result<f64> {
    let q = critic.predict(inputs)?;
    Ok(q.column(0)
        .iter()
        .zip(targets)
        .map(|(q, y)| (y - q) * (y - q))
        .sum::<f64>()
        / targets.len() as f64)
}

/// One SGD step on the critic MSE; returns the loss before the step.
pub fn critic_step(critic: &mut MlpNetwork, inputs: ArrayView2<'_, f64>, targets: &Array1<f64>, lr: f64) -> Result<f64> {
    if inputs.nrows() == 0 || inputs.nrows() != targets.len() {
        return Err(Error::Shape("critic batch and targets disagree or are empty".into()));
    }
    let opt = OptimizerConfig::new(lr)?;
    let m = targets.len() as f64;
    let cache = critic.forward_batch(inputs)?;
    let q = cache.output();
    let mut upstream = Array2::zeros((targets.len(), 1));
    let mut loss = 0.0;
    for i in 0..targets.len() {
        let diff = q[[i, 0]] - targets[i];
        loss += diff * diff;
        upstream[[i, 0]] = 2.0 * diff / m;
    }
    let (grads, _) = critic.backward(&cache, upstream.view())?;
    sgd_step(critic, &grads, &opt)?;
    Ok(loss / m)
}

/// Updates both global critics toward `y`; returns both losses.
pub fn update_global_critics(globals: &mut GlobalCritics, batch: &Batch, y: &Array1<f64>, lr: f64) -> Result<(f64, f64)> {
    let input = hstack(batch.states.view(), batch.actions.view())?;
    let l1 = critic_step(&mut globals.critics[0], input.view(), y, lr)?;
    let l2 = critic_step(&mut globals.critics[1], input.view(), y, lr)?;
    Ok((l1, l2))
}

/// `y_b = R_b + gamma * Q'_b(s'_b, pi'_b(s'_b))`.
pub fn local_critic_target(agent: &AgentNets, b: usize, batch: &Batch, gamma: f64, dims: &Dims) -> Result<Array1<f64>> {
    let next = batch.next_states.slice(s![.., dims.state_cols(b)]);
    let next_action = agent.actor_target.predict(next)?;
    let input = hstack(next, next_action.view())?;
    let q = column(&agent.critic_target.predict(input.view())?);
    Ok(batch.local_rewards.column(b).to_owned() + gamma * q)
}

/// One SGD step on agent `b`'s local critic; returns the loss.
pub fn update_local_critic(agent: &mut AgentNets, b: usize, batch: &Batch, gamma: f64, lr: f64, dims: &Dims) -> Result<f64> {
    let y = local_critic_target(agent, b, batch, gamma, dims)?;
    let input = hstack(
        batch.states.slice(s![.., dims.state_cols(b)]),
        batch.actions.slice(s![.., dims.action_cols(b)]),
    )?;
    critic_step(&mut agent.critic, input.view(), &y, lr)
}

/// Which critics contribute to the actor gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CriticTerms {
    pub global: bool,
    pub local: bool,
}

impl CriticTerms {
    pub const BOTH: CriticTerms = CriticTerms {
        global: true,
        local: true,
    };
}

/// Gradient of `J = mean_i [Q_1(s_i, a_i | a_b = pi_b(s_b,i)) + Q_b(s_b,i, pi_b(s_b,i))]`
/// with respect to agent `b`'s actor parameters. Other agents' actions come
/// from the batch.
pub fn actor_gradient(
    agent: &AgentNets,
    b: usize,
    batch: &Batch,
    global_critic: &MlpNetwork,
    dims: &Dims,
    terms: CriticTerms,
) -> Result<Gradients> {
    let m = batch.len() as f64;
    let local_state = batch.states.slice(s![.., dims.state_cols(b)]);
    let actor_pass = agent.actor.forward_batch(local_state)?;
    let action = actor_pass.output();
    let mut d_action = Array2::<f64>::zeros(action.raw_dim());
    let ones = Array2::from_elem((batch.len(), 1), 1.0 / m);

    if terms.global {
        let mut joint = batch.actions.clone();
        joint.slice_mut(s![.., dims.action_cols(b)]).assign(&action);
        let input = hstack(batch.states.view(), joint.view())?;
        let pass = global_critic.forward_batch(input.view())?;
        let d_in = global_critic.input_gradient(&pass, ones.view())?;
        let off = dims.global_state();
        let cols = dims.action_cols(b);
        d_action += &d_in.slice(s![.., off + cols.start..off + cols.end]);
    }
    if terms.local {
        let input = hstack(local_state, action)?;
        let pass = agent.critic.forward_batch(input.view())?;
        let d_in = agent.critic.input_gradient(&pass, ones.view())?;
        d_action += &d_in.slice(s![.., dims.local_state..]);
    }
    let (grads, _) = agent.actor.backward(&actor_pass, d_action.view())?;
    Ok(grads)
}

/// Mean hybrid objective `J` (see [`actor_gradient`]) at the current actor.
pub fn actor_objective(
    agent: &AgentNets,
    b: usize,
    batch: &Batch,
    global_critic: &MlpNetwork,
    dims: &Dims,
    terms: CriticTerms,
) -> Result<f64> {
    let local_state = batch.states.slice(s![.., dims.state_cols(b)]);
    let action = agent.actor.predict(local_state)?;
    let mut total = 0.0;
    if terms.global {
        let mut joint = batch.actions.clone();
        joint.slice_mut(s![.., dims.action_cols(b)]).assign(&action);
        total += global_critic.predict(hstack(batch.states.view(), joint.view())?.view())?.sum();
    }
    if terms.local {
        total += agent.critic.predict(hstack(local_state, action.view())?.view())?.sum();
    }
    Ok(total / batch.len() as f64)
}

/// Gradient ascent on `J`: `theta <- theta + lr * grad J`. Returns `|grad J|`.
pub fn update_actor(agent: &mut AgentNets, b: usize, batch: &Batch, global_critic: &MlpNetwork, lr: f64, dims: &Dims) -> Result<f64> {
    let opt = OptimizerConfig::new(lr)?;
    let mut grads = actor_gradient(agent, b, batch, global_critic, dims, CriticTerms::BOTH)?;
    let norm = grads.l2_norm();
    grads.scale(-1.0);
    sgd_step(&mut agent.actor, &grads, &opt)?;
    Ok(norm)
}

/// Soft-updates every target network toward its online network.
pub fn soft_update_all(agents: &mut [AgentNets], globals: &mut GlobalCritics, tau: f64) -> Result<()> {
    for a in agents.iter_mut() {
        soft_update(&mut a.actor_target, &a.actor, tau)?;
        soft_update(&mut a.critic_target, &a.critic, tau)?;
    }
    for x in 0..2 {
        soft_update(&mut globals.targets[x], &globals.critics[x], tau)?;
    }
    Ok(())
}
