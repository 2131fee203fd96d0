use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, ExperimentConfig};
use crate::aae::AaeModel;
use crate::baselines::{
    tfmadrl_config, BsgPolicy, CEpsGreedyPolicy, EfnrlPolicy, PolicyKind, RandomPolicy, ThompsonPolicy,
};
use crate::dataset::{
    load_movielens, partition, sample_requests, synthetic, ContentCatalog, RatingsDataset, RequestMode, UeDataset,
};
use crate::elastic_fl::{initial_local_model, write_round_log_csv, FlConfig, FlRoundState, UeClient};
use crate::env::{write_tally_log, CacheEnv, EnvConfig, Workload};
use crate::error::{Error, Result};
use crate::maddpg::{train, TrainLog};
use crate::policy::{evaluate, EvalLog, Policy};
use crate::prediction::sbs_merge_popular;
use crate::seed;

/// One row of the metrics CSV: a single test episode of one scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub scheme: PolicyKind,
    pub seed: u64,
    pub capacity: usize,
    pub n_sbs: usize,
    pub episode: usize,
    pub mean_cost: f64,
    pub mean_reward: f64,
    pub mean_hit_ratio: f64,
}

pub const METRICS_HEADER: [&str; 8] = [
    "scheme",
    "seed",
    "capacity",
    "n_sbs",
    "episode",
    "mean_cost",
    "mean_reward",
    "mean_hit_ratio",
];

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(std::io::BufWriter::new(file));
    w.write_record(METRICS_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Catalog plus the interactions restricted to it.
pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<RatingsDataset> {
    let raw = match cfg.dataset.source {
        DatasetSource::Synthetic => synthetic::generate(&cfg.dataset.synthetic, seed)?,
        DatasetSource::Movielens => {
            let dir = cfg
                .dataset
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("dataset.path is required for movielens".into()))?;
            load_movielens(dir.join("ratings.dat"), dir.join("users.dat"), dir.join("movies.dat"))?
        }
    };
    let catalog = match (cfg.dataset.source, cfg.dataset.top_contents) {
        (DatasetSource::Synthetic, None) => raw.catalog.clone(),
        (_, top) => ContentCatalog::ranked_by_popularity(&raw.interactions, top),
    };
    let interactions = raw
        .interactions
        .into_iter()
        .filter(|i| catalog.contains(i.content_id))
        .collect();
    Ok(RatingsDataset {
        catalog,
        interactions,
        demographics: raw.demographics,
    })
}

/// Runs federated training independently in every SBS.
pub fn train_federated(
    cfg: &ExperimentConfig,
    fl: &FlConfig,
    catalog: &ContentCatalog,
    ues: &[UeDataset],
    seed: u64,
) -> Result<Vec<FlRoundState>> {
    let arch = cfg.aae.architecture(catalog.len());
    (0..cfg.partition.n_sbs)
        .map(|b| {
            let global = AaeModel::new(&arch, seed::derive(seed, &[seed::tag::AAE_INIT, b as u64]))?;
            let clients = ues
                .iter()
                .filter(|u| u.sbs_id == b)
                .map(|u| UeClient::from_dataset(u, catalog, &initial_local_model(&global, u.ue_id, fl.local_init, seed)?))
                .collect::<Result<Vec<_>>>()?;
            let mut state = FlRoundState::new(b, global, clients)?;
            state.run(fl, seed)?;
            Ok(state)
        })
        .collect()
}

/// Per-SBS `p_b` as content ids, most voted first.
pub fn predict_popular_lists(states: &[FlRoundState], cfg: &ExperimentConfig) -> Result<Vec<Vec<u32>>> {
    states
        .iter()
        .map(|s| {
            let lists = s
                .clients()
                .iter()
                .map(|c| c.predict_popular(&cfg.prediction))
                .collect::<Result<Vec<_>>>()?;
            sbs_merge_popular(&lists, cfg.prediction.f_p)
        })
        .collect()
}

fn to_positions(catalog: &ContentCatalog, ids: &[u32]) -> Result<Vec<u32>> {
    ids.iter()
        .map(|&id| {
            catalog
                .position(id)
                .map(|p| p as u32)
                .ok_or_else(|| Error::Data(format!("content {id} is not in the catalog")))
        })
        .collect()
}

/// Environment over catalog positions `0..catalog.len()`.
pub fn build_env(cfg: &ExperimentConfig, catalog: &ContentCatalog, popular_ids: &[Vec<u32>]) -> Result<EnvConfig> {
    let env = EnvConfig {
        costs: cfg.env.costs,
        topology: cfg.env.topology(popular_ids.len()),
        capacity: cfg.env.capacity,
        catalog_size: catalog.len(),
        popular: popular_ids
            .iter()
            .map(|p| to_positions(catalog, p))
            .collect::<Result<_>>()?,
    };
    env.validate()?;
    Ok(env)
}

/// Requests generated by the UEs of every SBS. Episode `e`, slot `t` maps to
/// the UE slot index `e * slots + t`; requests are catalog positions.
#[derive(Debug, Clone)]
pub struct UeWorkload {
    pub ues: Vec<UeDataset>,
    pub catalog: ContentCatalog,
    pub n_sbs: usize,
    pub slots: usize,
    pub requests_per_ue: usize,
    pub mode: RequestMode,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Workload for UeWorkload {
    fn requests(&self, episode: usize, slot: usize) -> Result<Vec<Vec<u32>>> {
        let index = (episode * self.slots + slot) as u64;
        let mut out = vec![Vec::new(); self.n_sbs];
        for ue in &self.ues {
            let batch = sample_requests(
                ue,
                index,
                self.requests_per_ue,
                self.mode,
                self.zipf_exponent,
                &self.catalog,
                self.seed,
            )?;
            for (b, reqs) in batch.by_sbs(self.n_sbs).into_iter().enumerate() {
                out[b].extend(to_positions(&self.catalog, &reqs)?);
            }
        }
        Ok(out)
    }
}

pub fn make_baseline(kind: PolicyKind, env: &EnvConfig, cfg: &ExperimentConfig) -> Result<Box<dyn Policy>> {
    let (b, n, c) = (env.n_sbs(), env.catalog_size, env.capacity);
    Ok(match kind {
        PolicyKind::Random => Box::new(RandomPolicy {
            catalog_size: n,
            capacity: c,
        }),
        PolicyKind::CEpsGreedy => Box::new(CEpsGreedyPolicy::new(
            b,
            n,
            c,
            cfg.baseline.epsilon,
            cfg.baseline.cumulative_counts,
        )),
        PolicyKind::Thompson => Box::new(ThompsonPolicy::new(b, n, c)),
        PolicyKind::Bsg => Box::new(BsgPolicy::new(b, n, c)),
        PolicyKind::Efnrl => Box::new(EfnrlPolicy::from_popular(&env.popular, c)?),
        PolicyKind::Tfmadrl | PolicyKind::Cefmr => {
            return Err(Error::Config(format!("{kind} is trained, not a fixed baseline")))
        }
    })
}

/// Results of one scheme under one seed.
#[derive(Debug, Clone)]
pub struct SchemeRun {
    pub scheme: PolicyKind,
    pub test: EvalLog,
    pub train: Option<TrainLog>,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    /// `p_b` per SBS as catalog positions, keyed by whether full download was used.
    pub popular: BTreeMap<bool, Vec<Vec<u32>>>,
    pub schemes: Vec<SchemeRun>,
}

impl SeedRun {
    pub fn records(&self, capacity: usize, n_sbs: usize) -> Vec<MetricsRecord> {
        self.schemes
            .iter()
            .flat_map(|s| {
                s.test.episodes.iter().map(move |e| MetricsRecord {
                    scheme: s.scheme,
                    seed: self.seed,
                    capacity,
                    n_sbs,
                    episode: e.episode,
                    mean_cost: e.mean_cost,
                    mean_reward: e.mean_reward,
                    mean_hit_ratio: e.mean_hit_ratio,
                })
            })
            .collect()
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Full pipeline for one seed: data, federated training, prediction, then
/// every configured scheme trained (if learned) and tested on fresh requests.
/// Artifacts go under `artifacts` when given.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, artifacts: Option<&Path>) -> Result<SeedRun> {
    cfg.validate()?;
    let data = load_dataset(cfg, seed)?;
    let ues = partition(&data.interactions, &data.demographics, &cfg.partition, seed)?;
    let n_sbs = cfg.partition.n_sbs;
    if let Some(dir) = artifacts {
        create_dir(dir)?;
    }

    let mut envs: BTreeMap<bool, EnvConfig> = BTreeMap::new();
    for kind in &cfg.schemes {
        let full = *kind == PolicyKind::Tfmadrl;
        if envs.contains_key(&full) {
            continue;
        }
        let fl = if full { tfmadrl_config(&cfg.fl) } else { cfg.fl };
        let states = train_federated(cfg, &fl, &data.catalog, &ues, seed)?;
        if let Some(dir) = artifacts {
            let tag = if full { "full" } else { "elastic" };
            for s in &states {
                write_round_log_csv(&dir.join(format!("fl_{tag}_sbs{}.csv", s.sbs_id)), s.sbs_id, &s.history)?;
            }
        }
        let popular = predict_popular_lists(&states, cfg)?;
        envs.insert(full, build_env(cfg, &data.catalog, &popular)?);
    }

    let workload = |phase_tag: u64, slots: usize| UeWorkload {
        ues: ues.clone(),
        catalog: data.catalog.clone(),
        n_sbs,
        slots,
        requests_per_ue: cfg.env.requests_per_ue,
        mode: cfg.env.request_mode,
        zipf_exponent: cfg.env.zipf_exponent,
        seed: seed::derive(seed, &[phase_tag]),
    };
    let train_load = workload(seed::tag::REQUESTS, cfg.maddpg.slots);
    let test_load = workload(seed::tag::TEST_REQUESTS, cfg.maddpg.slots);
    let test_seed = seed::derive(seed, &[seed::tag::TEST_REQUESTS]);

    let mut schemes = Vec::with_capacity(cfg.schemes.len());
    for &kind in &cfg.schemes {
        let env_cfg = envs[&(kind == PolicyKind::Tfmadrl)].clone();
        let mut env = CacheEnv::new(env_cfg.clone())?;
        let dir = artifacts.map(|d| d.join(kind.name()));
        if let Some(d) = &dir {
            create_dir(d)?;
        }
        let (test, train_log) = if kind.uses_maddpg() {
            let (trainer, log) = train(&mut env, &train_load, &cfg.maddpg, seed)?;
            let mut policy = trainer.policy();
            let test = evaluate(&mut env, &mut policy, &test_load, cfg.maddpg.test_episodes, cfg.maddpg.slots, test_seed)?;
            (test, Some(log))
        } else {
            let mut policy = make_baseline(kind, &env_cfg, cfg)?;
            let test = evaluate(
                &mut env,
                policy.as_mut(),
                &test_load,
                cfg.maddpg.test_episodes,
                cfg.maddpg.slots,
                test_seed,
            )?;
            (test, None)
        };
        if let Some(d) = &dir {
            write_tally_log(&d.join("test_tally.csv"), &test.slots)?;
            if let Some(log) = &train_log {
                log.write_csv(&d.join("train_log.csv"), n_sbs)?;
                let ck = d.join("checkpoints");
                create_dir(&ck)?;
                for (episode, blobs) in &log.checkpoints {
                    for (b, blob) in blobs.iter().enumerate() {
                        let p = ck.join(format!("actor_ep{episode}_sbs{b}.bin"));
                        std::fs::write(&p, blob).map_err(|e| Error::io(&p, e))?;
                    }
                }
            }
        }
        schemes.push(SchemeRun {
            scheme: kind,
            test,
            train: train_log,
        });
    }
    Ok(SeedRun {
        seed,
        popular: envs.into_iter().map(|(k, e)| (k, e.popular)).collect(),
        schemes,
    })
}

pub(crate) fn in_pool<T: Send>(parallel: bool, f: impl FnOnce() -> T + Send) -> Result<T> {
    if parallel {
        Ok(f())
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(pool.install(f))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<MetricsRecord>,
    pub runs: Vec<SeedRun>,
    pub metrics_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Runs every seed, then writes `metrics.csv` and `manifest.json` into
/// `output_dir` (per-seed artifacts go to `output_dir/seed_<s>/`).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    create_dir(out)?;
    let runs = in_pool(cfg.parallel, || {
        cfg.seeds
            .iter()
            .map(|&s| run_seed(cfg, s, Some(&out.join(format!("seed_{s}")))))
            .collect::<Result<Vec<_>>>()
    })??;
    let records: Vec<MetricsRecord> = runs
        .iter()
        .flat_map(|r| r.records(cfg.env.capacity, cfg.partition.n_sbs))
        .collect();
    let metrics_path = out.join("metrics.csv");
    write_metrics_csv(&metrics_path, &records)?;
    let manifest = super::Manifest::new(cfg, &metrics_path)?;
    let manifest_path = out.join("manifest.json");
    manifest.write(&manifest_path)?;
    Ok(ExperimentOutput {
        records,
        runs,
        metrics_path,
        manifest_path,
    })
}
