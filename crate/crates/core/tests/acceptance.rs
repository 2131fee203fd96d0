//! Acceptance criteria. Runs as a plain binary (`harness = false`) so every
//! criterion prints one PASS/FAIL line; exits non-zero if any fails.
//!
//! `ACCEPTANCE_ONLY=2,5` restricts the run to the listed criteria.

mod common;

use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng as _;

use coopcache::aae::{
    discriminator_loss, discriminator_step_with, generator_loss, generator_step, local_train, reconstruction_loss,
    reconstruction_mse, reconstruction_step, AaeArchitecture, AaeModel, LayerGroup, LocalTrainConfig,
};
use coopcache::baselines::{
    bsg_allocate, c_eps_greedy, thompson_update, BetaPosterior, PolicyKind, RandomPolicy,
};
use coopcache::dataset::synthetic::{self, rank_one_matrix, SyntheticConfig};
use coopcache::dataset::{partition, PartitionConfig, RequestMode};
use coopcache::elastic_fl::{initial_local_model, FlConfig, FlRoundState, LocalInit, UeClient};
use coopcache::env::{brute_force_optimal_placement, expected_reward, CacheEnv, CostParams, EnvConfig, FetchTally, Topology};
use coopcache::harness::{self, ExperimentConfig, Phase, SweepAxis, ZipfWorkload};
use coopcache::maddpg::{
    actor_gradient, actor_objective, critic_loss, critic_step, train, AgentNets, Batch, CriticTerms, Dims,
    GlobalCritics, MaddpgConfig, TrainEpisode,
};
use coopcache::policy::evaluate;
use coopcache::seed;

use common::{aae_step_error, max_fd_error, spearman, step_gradient};

type Check = Result<(bool, String), Box<dyn std::error::Error>>;

struct Runner {
    only: Option<Vec<usize>>,
    failed: Vec<usize>,
    ran: usize,
}

impl Runner {
    fn wants(&self, n: usize) -> bool {
        self.only.as_ref().map_or(true, |o| o.contains(&n))
    }

    fn run(&mut self, n: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Check) {
        if !self.wants(n) {
            return;
        }
        let start = Instant::now();
        let result = f();
        let elapsed = start.elapsed();
        let (mut pass, mut detail) = match result {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if let Some(l) = limit {
            if elapsed > l {
                pass = false;
                detail.push_str(&format!("; over the {l:?} limit"));
            }
        }
        println!(
            "criterion {n:>2} {:<28} {}  {detail}  [{:.1}s]",
            name,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        self.ran += 1;
        if !pass {
            self.failed.push(n);
        }
    }
}

fn reward_cost_identity() -> Check {
    let costs = CostParams::default();
    assert_eq!((costs.alpha, costs.beta, costs.chi, costs.delta), (1, 30, 100, 100));
    let mut rng = seed::rng(1);
    let mut bad = 0;
    for _ in 0..1000 {
        let t = FetchTally {
            local_hits: rng.random_range(0..10_000),
            adjacent_hits: rng.random_range(0..10_000),
            cs_fetches: rng.random_range(0..10_000),
            replacements: rng.random_range(0..10_000),
            action_ones: 0,
        };
        let served = (t.local_hits + t.adjacent_hits + t.cs_fetches) as i64;
        if costs.chi * served - t.cost(&costs) != t.reward(&costs) {
            bad += 1;
        }
    }
    Ok((bad == 0, format!("{bad}/1000 draws violate the identity")))
}

fn toy_batch(rows: usize, cols: usize, seed_: u64) -> Array2<f64> {
    let mut rng = seed::rng(seed_);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.0..1.0))
}

fn gradient_exactness() -> Check {
    let arch = AaeArchitecture {
        catalog_size: 8,
        hidden: 6,
        latent: 3,
        discriminator_hidden: 4,
    };
    let model = AaeModel::new(&arch, 11)?;
    let batch = toy_batch(4, 8, 12);
    let draws = toy_batch(4, 3, 13) * 2.0 - 1.0;
    let mut errs = Vec::new();
    errs.push((
        "reconstruction",
        aae_step_error(
            &model,
            &[LayerGroup::Encoder, LayerGroup::Decoder],
            |m| reconstruction_loss(m, batch.view()).unwrap(),
            |m, lr| {
                reconstruction_step(m, batch.view(), lr).unwrap();
            },
        ),
    ));
    errs.push((
        "discriminator",
        aae_step_error(
            &model,
            &[LayerGroup::Discriminator],
            |m| discriminator_loss(m, batch.view(), draws.view()).unwrap(),
            |m, lr| {
                discriminator_step_with(m, batch.view(), draws.view(), lr).unwrap();
            },
        ),
    ));
    errs.push((
        "generator",
        aae_step_error(
            &model,
            &[LayerGroup::Encoder],
            |m| generator_loss(m, batch.view()).unwrap(),
            |m, lr| {
                generator_step(m, batch.view(), lr).unwrap();
            },
        ),
    ));

    let dims = Dims {
        agents: 2,
        local_state: 4,
        local_action: 3,
    };
    let hidden = [8, 6];
    let agents: Vec<AgentNets> = (0..2).map(|b| AgentNets::new(&dims, &hidden, b, 21)).collect::<Result<_, _>>()?;
    let globals = GlobalCritics::new(&dims, &hidden, 21)?;
    let m = 5;
    let batch = Batch {
        states: toy_batch(m, dims.global_state(), 22),
        actions: toy_batch(m, dims.global_action(), 23),
        rewards: toy_batch(m, 1, 24).column(0).to_owned(),
        local_rewards: toy_batch(m, 2, 25),
        next_states: toy_batch(m, dims.global_state(), 26),
    };
    let input = ndarray::concatenate(ndarray::Axis(1), &[batch.states.view(), batch.actions.view()])?;
    let y = toy_batch(m, 1, 27).column(0).to_owned();
    let critic = &globals.critics[0];
    let lr = 1e-3;
    let mut stepped = critic.clone();
    critic_step(&mut stepped, input.view(), &y, lr)?;
    errs.push((
        "critic",
        max_fd_error(&critic.flat_params(), &step_gradient(critic, &stepped, lr), 1e-6, |p| {
            let mut c = critic.clone();
            c.set_flat_params(p).unwrap();
            critic_loss(&c, input.view(), &y).unwrap()
        }),
    ));
    let mut actor_worst = 0.0f64;
    for (b, agent) in agents.iter().enumerate() {
        let g = actor_gradient(agent, b, &batch, critic, &dims, CriticTerms::BOTH)?.flatten();
        actor_worst = actor_worst.max(max_fd_error(&agent.actor.flat_params(), &g, 1e-6, |p| {
            let mut a = agent.clone();
            a.actor.set_flat_params(p).unwrap();
            actor_objective(&a, b, &batch, critic, &dims, CriticTerms::BOTH).unwrap()
        }));
    }
    errs.push(("actor", actor_worst));
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let detail = errs
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((worst < 1e-4, format!("max rel err: {detail}")))
}

fn aae_learning() -> Check {
    let mut ok = 0;
    let mut parts = Vec::new();
    for s in 1..=5u64 {
        let x = rank_one_matrix(50, 40, s);
        let m = AaeModel::new(
            &AaeArchitecture {
                catalog_size: 40,
                ..Default::default()
            },
            s,
        )?;
        let before = reconstruction_mse(&m, x.view())?;
        let cfg = LocalTrainConfig {
            iterations: 200,
            ..Default::default()
        };
        let (trained, _) = local_train(&m, x.view(), &cfg, s)?;
        let after = reconstruction_mse(&trained, x.view())?;
        let reduction = 1.0 - after / before;
        if reduction >= 0.5 {
            ok += 1;
        }
        parts.push(format!("{:.0}%", reduction * 100.0));
    }
    Ok((ok == 5, format!("{ok}/5 seeds reduce MSE by >= 50% ({})", parts.join(" "))))
}

fn elastic_fl_trend() -> Check {
    let s = 0u64;
    let data = synthetic::generate(
        &SyntheticConfig {
            users: 100,
            catalog_size: 40,
            ratings_per_user: 8,
            groups: 4,
            heterogeneity: 1.0,
            ..Default::default()
        },
        s,
    )?;
    let ues = partition(
        &data.interactions,
        &data.demographics,
        &PartitionConfig {
            n_sbs: 1,
            ues_per_sbs: 4,
            users_per_ue: 25,
            train_fraction: 0.8,
            shuffle_users: false,
        },
        s,
    )?;
    let arch = AaeArchitecture {
        catalog_size: 40,
        hidden: 32,
        latent: 8,
        discriminator_hidden: 16,
    };
    let global = AaeModel::new(&arch, s)?;
    let cfg = FlConfig {
        rounds: 50,
        local: LocalTrainConfig {
            iterations: 20,
            minibatch_size: 16,
            learning_rate: 0.01,
        },
        local_init: LocalInit::Independent,
        ..FlConfig::default()
    };
    let clients = ues
        .iter()
        .map(|u| UeClient::from_dataset(u, &data.catalog, &initial_local_model(&global, u.ue_id, cfg.local_init, s)?))
        .collect::<Result<Vec<_>, _>>()?;
    let mut state = FlRoundState::new(0, global, clients)?;
    state.run(&cfg, s)?;
    let d = state.mean_distance_by_round();
    let first = d[..10].iter().sum::<f64>() / 10.0;
    let last = d[40..].iter().sum::<f64>() / 10.0;
    let fin = &state.history[49];
    let groups: Vec<f64> = LayerGroup::ALL
        .iter()
        .map(|&g| fin.iter().map(|l| l.group_distance(g)).sum::<f64>() / fin.len() as f64)
        .collect();
    let pass = last < first && groups.iter().all(|&g| g > 0.0);
    Ok((
        pass,
        format!(
            "mean distance rounds 1-10 {first:.4}, 41-50 {last:.4}; final enc/dec/disc {:.4}/{:.4}/{:.4}",
            groups[0], groups[1], groups[2]
        ),
    ))
}

fn environment_oracle() -> Check {
    let popular = vec![vec![0, 1], vec![0, 1]];
    let probs = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
    let costs = CostParams::default();
    let topo = Topology::fully_connected(2);
    let best = brute_force_optimal_placement(&popular, &probs, 1, &costs, &topo)?;
    let dup = expected_reward(&[vec![0], vec![0]], &probs, &costs, &topo)?;
    let distinct = best.caches[0] != best.caches[1];
    Ok((
        distinct && best.expected_reward > dup && best.visited == 4,
        format!(
            "optimum {:?} reward {:.1} vs duplicated {dup:.1}",
            best.caches, best.expected_reward
        ),
    ))
}

const TOY_CATALOG: usize = 50;
const TOY_REQUESTS: usize = 20;

fn toy_maddpg_config() -> MaddpgConfig {
    MaddpgConfig {
        episodes: 300,
        slots: 50,
        test_episodes: 20,
        batch_size: 256,
        gamma: 0.99,
        tau: 0.001,
        actor_lr: 0.01,
        critic_lr: 0.01,
        hidden: vec![32, 16],
        reward_scale: 1.0 / (100.0 * TOY_REQUESTS as f64),
        ..MaddpgConfig::default()
    }
}

struct ToyRun {
    episodes: Vec<TrainEpisode>,
    test_reward: f64,
    test_hit: f64,
    random_reward: f64,
}

/// Trains on the Zipf toy workload with `b` SBSs and tests on fresh requests.
fn toy_run(b: usize, s: u64) -> Result<ToyRun, Box<dyn std::error::Error>> {
    let train_w = ZipfWorkload::shared(b, TOY_CATALOG, 1.0, TOY_REQUESTS, Phase::Train, s)?;
    let test_w = ZipfWorkload::shared(b, TOY_CATALOG, 1.0, TOY_REQUESTS, Phase::Test, s)?;
    let env_cfg = EnvConfig {
        costs: CostParams::default(),
        topology: Topology::fully_connected(b),
        capacity: 5,
        catalog_size: TOY_CATALOG,
        popular: (0..b).map(|i| train_w.top(i, 10)).collect(),
    };
    let cfg = toy_maddpg_config();
    let mut env = CacheEnv::new(env_cfg.clone())?;
    let (trainer, log) = train(&mut env, &train_w, &cfg, s)?;
    let test_seed = seed::derive(s, &[seed::tag::TEST_REQUESTS]);
    let mut policy = trainer.policy();
    let test = evaluate(&mut env, &mut policy, &test_w, cfg.test_episodes, cfg.slots, test_seed)?;
    let mut env = CacheEnv::new(env_cfg)?;
    let mut random = RandomPolicy {
        catalog_size: TOY_CATALOG,
        capacity: 5,
    };
    let r = evaluate(&mut env, &mut random, &test_w, cfg.test_episodes, cfg.slots, test_seed)?;
    Ok(ToyRun {
        episodes: log.episodes,
        test_reward: test.mean_reward(),
        test_hit: test.mean_hit_ratio(),
        random_reward: r.mean_reward(),
    })
}

/// First and last 30 episodes among those with learning updates.
fn loss_windows(episodes: &[TrainEpisode], f: impl Fn(&TrainEpisode) -> f64) -> Option<(f64, f64)> {
    let updated: Vec<&TrainEpisode> = episodes.iter().filter(|e| e.updates > 0).collect();
    if updated.len() < 60 {
        return None;
    }
    let avg = |xs: &[&TrainEpisode]| xs.iter().map(|e| f(e)).sum::<f64>() / xs.len() as f64;
    Some((avg(&updated[..30]), avg(&updated[updated.len() - 30..])))
}

fn maddpg_convergence(runs: &[ToyRun]) -> Check {
    let mut ok = 0;
    let mut parts = Vec::new();
    for run in runs {
        let mut decreasing = true;
        for k in 0..2 {
            let (a, b) = loss_windows(&run.episodes, |e| e.global_critic_loss.unwrap()[k]).ok_or("too few updates")?;
            decreasing &= b < a;
        }
        for k in 0..2 {
            let (a, b) =
                loss_windows(&run.episodes, |e| e.local_critic_loss.as_ref().unwrap()[k]).ok_or("too few updates")?;
            decreasing &= b < a;
        }
        let gain = (run.test_reward - run.random_reward) / run.random_reward.abs();
        if decreasing && gain >= 0.2 {
            ok += 1;
        }
        parts.push(format!(
            "losses {} reward {:.0} vs random {:.0}",
            if decreasing { "down" } else { "NOT down" },
            run.test_reward,
            run.random_reward
        ));
    }
    Ok((ok >= 4, format!("{ok}/5 seeds pass ({})", parts.join("; "))))
}

fn capacity_monotonicity() -> Check {
    let dir = tempfile::tempdir()?;
    let mut cfg = ExperimentConfig::toy();
    cfg.output_dir = dir.path().to_path_buf();
    cfg.schemes = vec![PolicyKind::Efnrl];
    cfg.seeds = (0..10).collect();
    cfg.dataset.synthetic = SyntheticConfig {
        users: 200,
        catalog_size: TOY_CATALOG,
        zipf_exponent: 1.0,
        ratings_per_user: 12,
        groups: 1,
        heterogeneity: 0.0,
    };
    cfg.partition.users_per_ue = 50;
    cfg.fl.rounds = 5;
    cfg.prediction.f_p = 10;
    cfg.prediction.neighbors_k = 5;
    cfg.env.request_mode = RequestMode::Zipf;
    cfg.env.zipf_exponent = 1.0;
    cfg.env.requests_per_ue = 10;
    cfg.maddpg.slots = 50;
    cfg.maddpg.test_episodes = 5;
    let values = [2usize, 4, 6, 8];
    let out = harness::sweep(&cfg, SweepAxis::CacheCapacity, &values)?;
    let hits: Vec<f64> = out.rows.iter().map(|r| r.mean_hit_ratio).collect();
    let costs: Vec<f64> = out.rows.iter().map(|r| r.mean_cost).collect();
    let hit_up = hits.windows(2).all(|w| w[1] >= w[0]);
    let cost_down = costs.windows(2).all(|w| w[1] <= w[0]);
    // Per-seed points for the rank correlation.
    let agg = harness::aggregate(&out.records, |r| r.capacity * 1000 + r.seed as usize);
    let xs: Vec<f64> = agg.iter().map(|r| (r.value / 1000) as f64).collect();
    let rho_hit = spearman(&xs, &agg.iter().map(|r| r.mean_hit_ratio).collect::<Vec<_>>());
    let rho_cost = spearman(&xs, &agg.iter().map(|r| r.mean_cost).collect::<Vec<_>>());
    Ok((
        hit_up && cost_down && rho_hit > 0.0 && rho_cost < 0.0,
        format!(
            "CH {:?} cost {:?}; spearman CH {rho_hit:.2}, cost {rho_cost:.2}",
            hits.iter().map(|h| format!("{h:.3}")).collect::<Vec<_>>(),
            costs.iter().map(|c| format!("{c:.0}")).collect::<Vec<_>>()
        ),
    ))
}

fn cooperation_benefit(pairs: &[ToyRun]) -> Check {
    let mut ok = 0;
    let mut parts = Vec::new();
    for (s, two) in pairs.iter().enumerate() {
        let one = toy_run(1, s as u64)?;
        if two.test_hit > one.test_hit {
            ok += 1;
        }
        parts.push(format!("{:.3} vs {:.3}", two.test_hit, one.test_hit));
    }
    Ok((ok >= 4, format!("{ok}/5 seeds, CH B=2 vs B=1: {}", parts.join(", "))))
}

fn baseline_units() -> Check {
    let mut detail = Vec::new();
    let mut post = BetaPosterior::uniform(4);
    thompson_update(&mut post, &[1], &[1, 1, 1, 3]);
    let thompson = post.params(1) == (4.0, 2.0) && post.params(3) == (1.0, 1.0);
    detail.push(format!("thompson {}", if thompson { "ok" } else { "wrong" }));

    let mut post = BetaPosterior::uniform(4);
    post.set(0, 9.0, 1.0)?;
    post.set(1, 2.0, 8.0)?;
    post.set(2, 6.0, 4.0)?;
    post.set(3, 4.0, 6.0)?;
    // Order 0, 2, 3, 1; SBS 1 (sum 0.9) outranks SBS 0 (sum 0.6).
    let bsg = bsg_allocate(&post, &[vec![1, 3], vec![0]], 2)? == vec![vec![3, 1], vec![0, 2]];
    detail.push(format!("bsg {}", if bsg { "ok" } else { "wrong" }));

    let counts = [5u64, 1, 8, 2, 0, 3];
    let mut rng = seed::rng(99);
    let trials = 10_000;
    let explore = (0..trials)
        .map(|_| c_eps_greedy(&counts, 2, 0.1, &mut rng).map(|r| r.1))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|&e| e)
        .count() as f64
        / trials as f64;
    let sd = (0.1f64 * 0.9 / trials as f64).sqrt();
    let eps = (explore - 0.1).abs() <= 3.0 * sd && ((1.0 - explore) - 0.9).abs() <= 3.0 * sd;
    detail.push(format!("eps branches {:.4}/{explore:.4}", 1.0 - explore));
    Ok((thompson && bsg && eps, detail.join(", ")))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir()?;
    let mut cfg = ExperimentConfig::toy();
    cfg.output_dir = dir.path().join("first");
    cfg.parallel = false;
    let first = harness::run_experiment(&cfg)?;
    let manifest = harness::Manifest::load(&first.manifest_path)?;
    let (second, same_hash) = harness::rerun(&manifest, &dir.path().join("second"))?;
    let a = std::fs::read(&first.metrics_path)?;
    let b = std::fs::read(&second.metrics_path)?;
    Ok((
        same_hash && a == b && !a.is_empty(),
        format!("{} bytes of metrics, identical: {}", a.len(), a == b),
    ))
}

fn main() {
    let only = std::env::var("ACCEPTANCE_ONLY").ok().map(|v| {
        v.split(',')
            .filter_map(|x| x.trim().parse().ok())
            .collect::<Vec<usize>>()
    });
    let mut r = Runner {
        only,
        failed: Vec::new(),
        ran: 0,
    };
    r.run(1, "reward-cost identity", Some(Duration::from_secs(1)), reward_cost_identity);
    r.run(2, "gradient exactness", Some(Duration::from_secs(30)), gradient_exactness);
    r.run(3, "AAE learning", Some(Duration::from_secs(120)), aae_learning);
    r.run(4, "elastic FL trend", Some(Duration::from_secs(300)), elastic_fl_trend);
    r.run(5, "environment oracle", Some(Duration::from_secs(1)), environment_oracle);

    let mut pairs: Vec<ToyRun> = Vec::new();
    let mut pair_error = None;
    r.run(6, "MADDPG convergence", Some(Duration::from_secs(900)), || {
        for s in 0..5u64 {
            pairs.push(toy_run(2, s)?);
        }
        maddpg_convergence(&pairs)
    });
    if r.wants(8) && pairs.is_empty() {
        for s in 0..5u64 {
            match toy_run(2, s) {
                Ok(p) => pairs.push(p),
                Err(e) => pair_error = Some(e.to_string()),
            }
        }
    }
    r.run(7, "capacity monotonicity", Some(Duration::from_secs(600)), capacity_monotonicity);
    r.run(8, "cooperation benefit", None, || match (&pair_error, pairs.len()) {
        (None, 5) => cooperation_benefit(&pairs),
        (e, _) => Err(format!("B=2 runs unavailable: {e:?}").into()),
    });
    r.run(9, "baseline units", None, baseline_units);
    r.run(10, "determinism", None, determinism);

    println!("acceptance: {}/{} criteria passed", r.ran - r.failed.len(), r.ran);
    if !r.failed.is_empty() {
        std::process::exit(1);
    }
}
