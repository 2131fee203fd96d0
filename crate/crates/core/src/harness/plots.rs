use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::sweep::{SweepAxis, SweepRow};
use crate::error::{Error, Result};
use crate::maddpg::TrainLog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Cost,
    Reward,
    HitRatio,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Cost, Metric::Reward, Metric::HitRatio];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Cost => "cost",
            Metric::Reward => "reward",
            Metric::HitRatio => "hit_ratio",
        }
    }

    fn of(self, r: &SweepRow) -> f64 {
        match self {
            Metric::Cost => r.mean_cost,
            Metric::Reward => r.mean_reward,
            Metric::HitRatio => r.mean_hit_ratio,
        }
    }
}

/// One series per scheme, points ordered by swept value.
pub fn sweep_series(rows: &[SweepRow], metric: Metric) -> Vec<Series> {
    let mut out: Vec<Series> = Vec::new();
    for r in rows {
        let name = r.scheme.name();
        let idx = match out.iter().position(|s| s.name == name) {
            Some(i) => i,
            None => {
                out.push(Series {
                    name: name.to_string(),
                    points: Vec::new(),
                });
                out.len() - 1
            }
        };
        out[idx].points.push((r.value as f64, metric.of(r)));
    }
    for s in &mut out {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

/// Mean reward and critic losses against episode.
pub fn training_series(log: &TrainLog) -> (Vec<Series>, Vec<Series>) {
    let reward = Series {
        name: "mean_reward".into(),
        points: log
            .episodes
            .iter()
            .map(|e| (e.metrics.episode as f64, e.metrics.mean_reward))
            .collect(),
    };
    let mut losses = vec![
        Series {
            name: "global_critic_1".into(),
            points: Vec::new(),
        },
        Series {
            name: "global_critic_2".into(),
            points: Vec::new(),
        },
    ];
    for e in &log.episodes {
        let x = e.metrics.episode as f64;
        if let Some(g) = e.global_critic_loss {
            losses[0].points.push((x, g[0]));
            losses[1].points.push((x, g[1]));
        }
        if let Some(l) = &e.local_critic_loss {
            for (b, v) in l.iter().enumerate() {
                if losses.len() <= 2 + b {
                    losses.push(Series {
                        name: format!("local_critic_{b}"),
                        points: Vec::new(),
                    });
                }
                losses[2 + b].points.push((x, *v));
            }
        }
    }
    (vec![reward], losses)
}

/// Long format: `series,<x_label>,<y_label>`.
pub fn write_series_csv(path: &Path, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(["series", x_label, y_label])?;
    for s in series {
        for (x, y) in &s.points {
            w.write_record([s.name.clone(), x.to_string(), y.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_series_csv(path: &Path) -> Result<Vec<Series>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out: Vec<Series> = Vec::new();
    for row in r.records() {
        let row = row?;
        let parse = |i: usize| -> Result<f64> {
            row[i].parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: row.position().map_or(0, |p| p.line() as usize),
                msg: format!("bad number {:?}", &row[i]),
            })
        };
        let point = (parse(1)?, parse(2)?);
        match out.iter_mut().find(|s| s.name == row[0]) {
            Some(s) => s.points.push(point),
            None => out.push(Series {
                name: row[0].to_string(),
                points: vec![point],
            }),
        }
    }
    Ok(out)
}

fn bounds(series: &[Series]) -> ((f64, f64), (f64, f64)) {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        return ((0.0, 1.0), (0.0, 1.0));
    }
    let pad = |a: f64, b: f64| if b - a < 1e-12 { (a - 0.5, b + 0.5) } else { (a, b + (b - a) * 0.05) };
    (pad(x0, x1), pad(y0, y1))
}

pub fn render_svg(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let draw = || -> std::result::Result<(), Box<dyn std::error::Error>> {
        let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
        root.fill(&WHITE)?;
        let ((x0, x1), (y0, y1)) = bounds(series);
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, y0..y1)?;
        chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw()?;
        for (i, s) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))?
                .label(s.name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        }
        if !series.is_empty() {
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()?;
        }
        root.present()?;
        Ok(())
    };
    draw().map_err(|e| Error::Config(format!("rendering {}: {e}", path.display())))
}

/// Writes `<metric>_vs_<axis>.csv` and `.svg` for every metric; returns the
/// paths written.
pub fn emit_plots(axis: SweepAxis, rows: &[SweepRow], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for m in Metric::ALL {
        let series = sweep_series(rows, m);
        let stem = format!("{}_vs_{}", m.name(), axis.name());
        let csv = dir.join(format!("{stem}.csv"));
        write_series_csv(&csv, axis.name(), m.name(), &series)?;
        let svg = dir.join(format!("{stem}.svg"));
        render_svg(&svg, &stem.replace('_', " "), axis.name(), m.name(), &series)?;
        written.extend([csv, svg]);
    }
    Ok(written)
}

/// Reward and loss curves from a training log CSV (see
/// [`TrainLog::write_csv`]); empty loss cells are skipped.
pub fn training_series_from_csv(path: &Path) -> Result<(Vec<Series>, Vec<Series>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{}: missing column {name}", path.display())))
    };
    let (ep, reward) = (col("episode")?, col("mean_reward")?);
    let loss_cols: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            let name = h
                .strip_prefix("global_critic_loss_")
                .map(|k| format!("global_critic_{k}"))
                .or_else(|| h.strip_prefix("local_critic_loss_").map(|k| format!("local_critic_{k}")))?;
            Some((i, name))
        })
        .collect();
    let mut rewards = Series {
        name: "mean_reward".into(),
        points: Vec::new(),
    };
    let mut losses: Vec<Series> = loss_cols
        .iter()
        .map(|(_, n)| Series {
            name: n.clone(),
            points: Vec::new(),
        })
        .collect();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<Option<f64>> {
            let cell = rec.get(i).unwrap_or("");
            if cell.is_empty() {
                return Ok(None);
            }
            cell.parse().map(Some).map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: line + 2,
                msg: format!("bad number {cell:?}"),
            })
        };
        let x = num(ep)?.unwrap_or(line as f64);
        if let Some(v) = num(reward)? {
            rewards.points.push((x, v));
        }
        for (s, (i, _)) in losses.iter_mut().zip(&loss_cols) {
            if let Some(v) = num(*i)? {
                s.points.push((x, v));
            }
        }
    }
    Ok((vec![rewards], losses))
}

/// Reward and loss curves of one training log.
pub fn emit_training_plots(log: &TrainLog, dir: &Path) -> Result<Vec<PathBuf>> {
    let (reward, losses) = training_series(log);
    emit_training_series(reward, losses, dir)
}

/// Writes `reward_vs_episode` and `loss_vs_episode` as CSV and SVG.
pub fn emit_training_series(reward: Vec<Series>, losses: Vec<Series>, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (stem, y, series) in [("reward_vs_episode", "reward", reward), ("loss_vs_episode", "loss", losses)] {
        let csv = dir.join(format!("{stem}.csv"));
        write_series_csv(&csv, "episode", y, &series)?;
        let svg = dir.join(format!("{stem}.svg"));
        render_svg(&svg, &stem.replace('_', " "), "episode", y, &series)?;
        written.extend([csv, svg]);
    }
    Ok(written)
}
