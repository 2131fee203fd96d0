use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::pipeline::{in_pool, run_seed, write_metrics_csv, MetricsRecord};
use crate::baselines::PolicyKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    CacheCapacity,
    NSbs,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::CacheCapacity => "cache_capacity",
            SweepAxis::NSbs => "n_sbs",
        }
    }

    /// `cfg` with the axis set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: usize) -> ExperimentConfig {
        let mut c = cfg.clone();
        match self {
            SweepAxis::CacheCapacity => c.env.capacity = value,
            SweepAxis::NSbs => c.partition.n_sbs = value,
        }
        c
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cache_capacity" | "capacity" | "c" => Ok(SweepAxis::CacheCapacity),
            "n_sbs" | "b" => Ok(SweepAxis::NSbs),
            _ => Err(Error::Config(format!("unknown sweep axis '{s}'"))),
        }
    }
}

/// Mean and sample standard deviation across seeds of per-seed averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub scheme: PolicyKind,
    pub seeds: usize,
    pub mean_cost: f64,
    pub std_cost: f64,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mean_hit_ratio: f64,
    pub std_hit_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    pub records: Vec<MetricsRecord>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Aggregates per-episode records into one row per `(value, scheme)`.
/// `value_of` picks the swept quantity out of a record.
pub fn aggregate(records: &[MetricsRecord], value_of: impl Fn(&MetricsRecord) -> usize) -> Vec<SweepRow> {
    use std::collections::BTreeMap;
    // (value, scheme) -> seed -> (cost, reward, hit, n)
    let mut acc: BTreeMap<(usize, PolicyKind), BTreeMap<u64, [f64; 4]>> = BTreeMap::new();
    for r in records {
        let e = acc
            .entry((value_of(r), r.scheme))
            .or_default()
            .entry(r.seed)
            .or_insert([0.0; 4]);
        e[0] += r.mean_cost;
        e[1] += r.mean_reward;
        e[2] += r.mean_hit_ratio;
        e[3] += 1.0;
    }
    acc.into_iter()
        .map(|((value, scheme), seeds)| {
            let per = |k: usize| seeds.values().map(|s| s[k] / s[3]).collect::<Vec<_>>();
            let (mean_cost, std_cost) = mean_std(&per(0));
            let (mean_reward, std_reward) = mean_std(&per(1));
            let (mean_hit_ratio, std_hit_ratio) = mean_std(&per(2));
            SweepRow {
                value,
                scheme,
                seeds: seeds.len(),
                mean_cost,
                std_cost,
                mean_reward,
                std_reward,
                mean_hit_ratio,
                std_hit_ratio,
            }
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, axis: SweepAxis, rows: &[SweepRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(std::io::BufWriter::new(file));
    w.write_record([
        axis.name(),
        "scheme",
        "seeds",
        "mean_cost",
        "std_cost",
        "mean_reward",
        "std_reward",
        "mean_hit_ratio",
        "std_hit_ratio",
    ])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a file written by [`write_sweep_csv`]; the axis comes from the
/// first header cell.
pub fn read_sweep_csv(path: &Path) -> Result<(SweepAxis, Vec<SweepRow>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows = r.records();
    let header = rows
        .next()
        .ok_or_else(|| Error::Schema(format!("{} is empty", path.display())))??;
    let axis: SweepAxis = header
        .get(0)
        .unwrap_or_default()
        .parse()
        .map_err(|_| Error::Schema(format!("{}: unknown sweep axis column", path.display())))?;
    let mut out = Vec::new();
    for rec in rows {
        out.push(rec?.deserialize(None)?);
    }
    Ok((axis, out))
}

/// One full run per `(value, seed)`. Writes `sweep_<axis>.csv` and
/// `sweep_<axis>_metrics.csv` into `cfg.output_dir`.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[usize]) -> Result<SweepOutput> {
    if values.is_empty() {
        return Err(Error::Config("a sweep needs at least one value".into()));
    }
    let variants: Vec<ExperimentConfig> = values.iter().map(|&v| axis.apply(cfg, v)).collect();
    for v in &variants {
        v.validate()?;
    }
    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let dir = cfg.output_dir.join(format!("sweep_{}", axis.name()));
    let run = |&(i, s): &(usize, u64)| -> Result<Vec<MetricsRecord>> {
        let v = &variants[i];
        let artifacts = dir.join(format!("{}", values[i])).join(format!("seed_{s}"));
        Ok(run_seed(v, s, Some(&artifacts))?.records(v.env.capacity, v.partition.n_sbs))
    };
    let results: Vec<Result<Vec<MetricsRecord>>> = in_pool(cfg.parallel, || {
        if cfg.parallel {
            jobs.par_iter().map(run).collect()
        } else {
            jobs.iter().map(run).collect()
        }
    })?;
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    let rows = aggregate(&records, |r| match axis {
        SweepAxis::CacheCapacity => r.capacity,
        SweepAxis::NSbs => r.n_sbs,
    });
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    write_sweep_csv(&cfg.output_dir.join(format!("sweep_{}.csv", axis.name())), axis, &rows)?;
    write_metrics_csv(&cfg.output_dir.join(format!("sweep_{}_metrics.csv", axis.name())), &records)?;
    Ok(SweepOutput { axis, rows, records })
}
