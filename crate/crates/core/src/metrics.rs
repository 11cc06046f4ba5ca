//! Efficiency and safety criteria for two-agent episodes, plus aggregation.
//!
//! All three criteria are lower-is-better and only meaningful together, so
//! the summary always carries domination, conflict, finish steps and success
//! rate side by side.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{DairError, Result};

/// Domination reported for episodes where nobody manipulated anything.
pub const NEUTRAL_DOMINATION: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub success: bool,
    pub finish_steps: usize,
    pub domination_rate: f64,
    /// True when no agent manipulated anything and domination is neutral.
    pub no_manipulation: bool,
    pub conflict_rate: f64,
    /// Mean `<alpha_1, alpha_2>` over the episode's steps, if recorded.
    pub mean_overlap: Option<f64>,
    pub manipulating_steps: Vec<usize>,
}

/// Steps on which each agent was interacting. `flags[t][i]` is agent `i` at
/// step `t`.
pub fn manipulating_counts(flags: &[Vec<bool>]) -> Result<Vec<usize>> {
    let Some(first) = flags.first() else {
        return Ok(Vec::new());
    };
    let n = first.len();
    let mut counts = vec![0; n];
    for (t, row) in flags.iter().enumerate() {
        if row.len() != n {
            return Err(DairError::Layout(format!(
                "interaction flags at step {t} have {} agents, expected {n}",
                row.len()
            )));
        }
        for (c, f) in counts.iter_mut().zip(row) {
            *c += usize::from(*f);
        }
    }
    Ok(counts)
}

/// Largest per-agent share of manipulating steps, in percent.
pub fn domination_rate(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return NEUTRAL_DOMINATION;
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    100.0 * max as f64 / total as f64
}

/// Percent of steps whose gripper distance is strictly below `threshold`.
pub fn conflict_rate(distances: &[f64], threshold: f64) -> f64 {
    if distances.is_empty() {
        return 0.0;
    }
    let hits = distances.iter().filter(|d| **d < threshold).count();
    100.0 * hits as f64 / distances.len() as f64
}

/// Steps to success, or the horizon with `failed = true`.
pub fn finish_steps(success_step: Option<usize>, horizon: usize) -> (usize, bool) {
    match success_step {
        Some(s) => (s.min(horizon), false),
        None => (horizon, true),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> Result<Stat> {
    if values.is_empty() {
        return Err(DairError::Empty("metric values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(Stat { mean, std: var.sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub episodes: usize,
    pub success_rate: Stat,
    pub domination_rate: Stat,
    pub conflict_rate: Stat,
    pub finish_steps: Stat,
    pub overlap: Option<Stat>,
}

impl Summary {
    /// Long-form rows `(metric, mean, std)` in a fixed order.
    pub fn rows(&self) -> Vec<(&'static str, Stat)> {
        let mut r = vec![
            ("success_rate", self.success_rate),
            ("domination_rate", self.domination_rate),
            ("conflict_rate", self.conflict_rate),
            ("finish_steps", self.finish_steps),
        ];
        if let Some(o) = self.overlap {
            r.push(("attention_overlap", o));
        }
        r
    }
}

/// Mean and population std across episodes; success rate is in percent.
pub fn aggregate(method: &str, episodes: &[EpisodeMetrics]) -> Result<Summary> {
    if episodes.is_empty() {
        return Err(DairError::Empty("episode metrics"));
    }
    let col = |f: &dyn Fn(&EpisodeMetrics) -> f64| -> Result<Stat> {
        mean_std(&episodes.iter().map(f).collect::<Vec<_>>())
    };
    let overlaps: Vec<f64> = episodes.iter().filter_map(|e| e.mean_overlap).collect();
    Ok(Summary {
        method: method.to_string(),
        episodes: episodes.len(),
        success_rate: col(&|e| if e.success { 100.0 } else { 0.0 })?,
        domination_rate: col(&|e| e.domination_rate)?,
        conflict_rate: col(&|e| e.conflict_rate)?,
        finish_steps: col(&|e| e.finish_steps as f64)?,
        overlap: if overlaps.is_empty() { None } else { Some(mean_std(&overlaps)?) },
    })
}

/// Combines per-seed summaries: mean and population std of the per-seed means.
pub fn across_seeds(method: &str, per_seed: &[Summary]) -> Result<Summary> {
    if per_seed.is_empty() {
        return Err(DairError::Empty("seed summaries"));
    }
    let col = |f: &dyn Fn(&Summary) -> f64| mean_std(&per_seed.iter().map(f).collect::<Vec<_>>());
    let overlaps: Vec<f64> = per_seed.iter().filter_map(|s| s.overlap.map(|o| o.mean)).collect();
    Ok(Summary {
        method: method.to_string(),
        episodes: per_seed.iter().map(|s| s.episodes).sum(),
        success_rate: col(&|s| s.success_rate.mean)?,
        domination_rate: col(&|s| s.domination_rate.mean)?,
        conflict_rate: col(&|s| s.conflict_rate.mean)?,
        finish_steps: col(&|s| s.finish_steps.mean)?,
        overlap: if overlaps.len() == per_seed.len() {
            Some(mean_std(&overlaps)?)
        } else {
            None
        },
    })
}

/// Thresholds that define the criteria; written next to every summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub interaction: f64,
    pub conflict: f64,
}

/// Wide summary CSV: one row per method.
pub fn write_summary_csv(w: impl Write, summaries: &[Summary], th: Thresholds) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "method",
        "episodes",
        "success_rate_mean",
        "success_rate_std",
        "domination_rate_mean",
        "domination_rate_std",
        "conflict_rate_mean",
        "conflict_rate_std",
        "finish_steps_mean",
        "finish_steps_std",
        "attention_overlap_mean",
        "attention_overlap_std",
        "interaction_threshold",
        "conflict_threshold",
    ])
    .map_err(csv_err)?;
    for s in summaries {
        let (om, os) = s
            .overlap
            .map(|o| (o.mean.to_string(), o.std.to_string()))
            .unwrap_or_default();
        out.write_record([
            s.method.clone(),
            s.episodes.to_string(),
            s.success_rate.mean.to_string(),
            s.success_rate.std.to_string(),
            s.domination_rate.mean.to_string(),
            s.domination_rate.std.to_string(),
            s.conflict_rate.mean.to_string(),
            s.conflict_rate.std.to_string(),
            s.finish_steps.mean.to_string(),
            s.finish_steps.std.to_string(),
            om,
            os,
            th.interaction.to_string(),
            th.conflict.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Long plot-data CSV: `metric,method,mean,std`.
pub fn write_plot_data(w: impl Write, summaries: &[Summary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "method", "mean", "std"]).map_err(csv_err)?;
    for s in summaries {
        for (metric, st) in s.rows() {
            out.write_record([metric.to_string(), s.method.clone(), st.mean.to_string(), st.std.to_string()])
                .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> DairError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DairError::Io(io),
        other => DairError::Config(format!("csv: {other:?}")),
    }
}
