use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use coopcache::baselines::{tfmadrl_config, PolicyKind};
use coopcache::dataset::{partition, PartitionManifest};
use coopcache::elastic_fl::write_round_log_csv;
use coopcache::harness::{
    emit_plots, emit_training_plots, emit_training_series, load_dataset, predict_popular_lists, read_sweep_csv, rerun, run_experiment,
    run_seed, sweep, train_federated, training_series_from_csv, ExperimentConfig, Manifest, SweepAxis,
};
use serde_json::json;

#[derive(Parser)]
#[command(name = "coopcache", version, about = "Cooperative edge caching experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the small built-in configuration instead of the defaults.
    #[arg(long, conflicts_with = "config")]
    toy: bool,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved configuration as TOML.
    Config(Common),
    /// Load the dataset and partition it across UEs and SBSs.
    Ingest(Common),
    /// Federated AAE training in every SBS.
    TrainFl {
        #[command(flatten)]
        common: Common,
        /// Full-model download instead of the elastic update.
        #[arg(long)]
        full: bool,
    },
    /// Per-SBS popular content lists.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        full: bool,
    },
    /// Train and test one learned scheme.
    TrainMaddpg {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "cefmr")]
        scheme: PolicyKind,
    },
    /// Run every configured scheme, or re-run a manifest and compare.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with_all = ["config", "toy"])]
        manifest: Option<PathBuf>,
    },
    /// Test one heuristic scheme.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scheme: PolicyKind,
    },
    /// Sweep one axis over a list of values.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Plot a sweep CSV or a training log CSV.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match (&common.config, common.toy) {
        (Some(path), _) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        (None, true) => ExperimentConfig::toy(),
        (None, false) => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn first_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.seeds[0]
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn ingest(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    let seed = first_seed(cfg);
    let data = load_dataset(cfg, seed)?;
    let ues = partition(&data.interactions, &data.demographics, &cfg.partition, seed)?;
    create_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("partition.json"), &PartitionManifest::new(&ues, &cfg.partition, seed))?;
    write_json(&cfg.output_dir.join("catalog.json"), &data.catalog.ids())?;
    Ok(json!({
        "contents": data.catalog.len(),
        "users": data.user_count(),
        "interactions": data.interactions.len(),
        "ues": ues.len(),
    }))
}

fn train_fl(cfg: &ExperimentConfig, full: bool, predict: bool) -> Result<serde_json::Value> {
    let seed = first_seed(cfg);
    let data = load_dataset(cfg, seed)?;
    let ues = partition(&data.interactions, &data.demographics, &cfg.partition, seed)?;
    let fl = if full { tfmadrl_config(&cfg.fl) } else { cfg.fl };
    let states = train_federated(cfg, &fl, &data.catalog, &ues, seed)?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    if predict {
        let popular = predict_popular_lists(&states, cfg)?;
        write_json(&dir.join("popular.json"), &popular)?;
        return Ok(json!({ "popular": popular }));
    }
    let models = dir.join("models");
    create_dir(&models)?;
    let mut summary = Vec::new();
    for s in &states {
        write_round_log_csv(&dir.join(format!("fl_sbs{}.csv", s.sbs_id)), s.sbs_id, &s.history)?;
        let path = models.join(format!("global_sbs{}.bin", s.sbs_id));
        std::fs::write(&path, s.global.to_blob()).with_context(|| format!("writing {}", path.display()))?;
        for c in s.clients() {
            let path = models.join(format!("local_ue{}.bin", c.ue_id()));
            std::fs::write(&path, c.local_model().to_blob()).with_context(|| format!("writing {}", path.display()))?;
        }
        let last = s.history.last().map(|round| {
            let n = round.len().max(1) as f64;
            round.iter().map(|l| l.reconstruction_loss).sum::<f64>() / n
        });
        summary.push(json!({ "sbs": s.sbs_id, "ues": s.ue_count(), "final_reconstruction_loss": last }));
    }
    Ok(json!({ "sbs": summary }))
}

fn single_scheme(cfg: &ExperimentConfig, scheme: PolicyKind) -> Result<serde_json::Value> {
    let mut cfg = cfg.clone();
    cfg.schemes = vec![scheme];
    let seed = first_seed(&cfg);
    let dir = cfg.output_dir.join(format!("seed_{seed}"));
    let run = run_seed(&cfg, seed, Some(&dir))?;
    let s = &run.schemes[0];
    if let Some(log) = &s.train {
        emit_training_plots(log, &dir.join(scheme.name()).join("plots"))?;
    }
    Ok(json!({
        "scheme": scheme.name(),
        "seed": seed,
        "mean_cost": s.test.mean_cost(),
        "mean_reward": s.test.mean_reward(),
        "mean_hit_ratio": s.test.mean_hit_ratio(),
    }))
}

fn plot(input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let header = std::fs::read_to_string(input)
        .with_context(|| format!("reading {}", input.display()))?
        .lines()
        .next()
        .unwrap_or_default()
        .to_string();
    if header.starts_with("episode,") {
        let (reward, losses) = training_series_from_csv(input)?;
        Ok(emit_training_series(reward, losses, out)?)
    } else {
        let (axis, rows) = read_sweep_csv(input)?;
        Ok(emit_plots(axis, &rows, out)?)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let report = match cli.command {
        Command::Config(common) => {
            print!("{}", resolve(&common)?.to_toml_string()?);
            return Ok(());
        }
        Command::Ingest(common) => ingest(&resolve(&common)?)?,
        Command::TrainFl { common, full } => train_fl(&resolve(&common)?, full, false)?,
        Command::Predict { common, full } => train_fl(&resolve(&common)?, full, true)?,
        Command::TrainMaddpg { common, scheme } => {
            if !scheme.uses_maddpg() {
                bail!("{scheme} is not a learned scheme; use `baseline`");
            }
            single_scheme(&resolve(&common)?, scheme)?
        }
        Command::Baseline { common, scheme } => {
            if scheme.uses_maddpg() {
                bail!("{scheme} is a learned scheme; use `train-maddpg`");
            }
            single_scheme(&resolve(&common)?, scheme)?
        }
        Command::Evaluate { common, manifest } => match manifest {
            Some(path) => {
                let out = common.out.context("--out is required with --manifest")?;
                let m = Manifest::load(&path)?;
                let (run, identical) = rerun(&m, &out)?;
                if !identical {
                    bail!("metrics of the re-run differ from {}", path.display());
                }
                json!({ "metrics": run.metrics_path, "identical": identical })
            }
            None => {
                let run = run_experiment(&resolve(&common)?)?;
                json!({
                    "metrics": run.metrics_path,
                    "manifest": run.manifest_path,
                    "records": run.records.len(),
                })
            }
        },
        Command::Sweep { common, axis, values } => {
            let cfg = resolve(&common)?;
            let out = sweep(&cfg, axis, &values)?;
            let plots = emit_plots(axis, &out.rows, &cfg.output_dir.join("plots"))?;
            json!({ "rows": out.rows, "plots": plots })
        }
        Command::Plot { input, out } => json!({ "written": plot(&input, &out)? }),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
